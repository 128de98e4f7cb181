use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smtj_ising::anneal::DeviceMode;
use smtj_ising::bench::{default_out_dir, run_experiment, ExperimentKind, ExperimentSpec};
use smtj_ising::Error;

#[derive(Parser)]
#[command(
    name = "smtj-ising",
    version,
    about = "Stochastic-spin Ising annealing experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Anneal one TSP encoding.
    SolveTsp(Common),
    /// Anneal a TSP with forced city pairs.
    SolveCtsp {
        #[command(flatten)]
        common: Common,
        /// Constrained pair as `a,b`; repeatable.
        #[arg(long = "pair", value_parser = parse_pair)]
        pairs: Vec<(usize, usize)>,
    },
    /// Partition, solve, stitch and refine a large instance.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Sliding-window passes.
        #[arg(long)]
        passes: Option<usize>,
    },
    /// Success probability against iteration count.
    SuccessCurve {
        #[command(flatten)]
        common: Common,
        /// City counts to sweep, comma separated.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
    },
    /// Telegraph traces of a single device.
    DeviceTrace {
        #[command(flatten)]
        common: Common,
        /// Bias currents in uA, comma separated.
        #[arg(long = "current", value_delimiter = ',')]
        currents: Vec<f64>,
    },
    /// Spin counts of direct versus decomposed solving.
    SpinReport {
        #[command(flatten)]
        common: Common,
        /// Further TSPLIB files.
        files: Vec<PathBuf>,
    },
    /// Fit the device sigmoid to occupancy data.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Bias currents for synthetic traces when no --input is given.
        #[arg(long = "current", value_delimiter = ',')]
        currents: Vec<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// Input file (TSPLIB, or CSV for calibrate).
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Annealing iterations (sweeps), or trace steps.
    #[arg(long)]
    iters: Option<usize>,
    /// constant:C, linear:C0:C1 or ramp:C0:C1:N
    #[arg(long)]
    schedule: Option<String>,
    /// Distance weight.
    #[arg(long)]
    w: Option<f64>,
    /// Constraint strength.
    #[arg(long)]
    theta: Option<f64>,
    /// Spin budget.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    trials: Option<usize>,
    /// ideal or faithful
    #[arg(long, default_value = "ideal")]
    mode: DeviceMode,
    /// Output directory [default: $SMTJ_ISING_OUT or ./results]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Cities of a synthetic instance.
    #[arg(long)]
    n: Option<usize>,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected a,b but got {s:?}"))?;
    let parse = |x: &str| x.trim().parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}

impl Common {
    fn spec(self, kind: ExperimentKind) -> ExperimentSpec {
        let mut spec = ExperimentSpec::new(kind, self.out.unwrap_or_else(default_out_dir));
        spec.inputs = self.input.into_iter().collect();
        spec.seed = self.seed;
        spec.n = self.n;
        spec.iterations = self.iters;
        spec.schedule = self.schedule;
        spec.w = self.w;
        spec.theta = self.theta;
        spec.budget = self.budget;
        spec.trials = self.trials;
        spec.mode = self.mode;
        spec
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let spec = match cli.command {
        Command::SolveTsp(c) => c.spec(ExperimentKind::SolveTsp),
        Command::SolveCtsp { common, pairs } => ExperimentSpec {
            pairs,
            ..common.spec(ExperimentKind::SolveCtsp)
        },
        Command::Pipeline { common, passes } => ExperimentSpec {
            passes,
            ..common.spec(ExperimentKind::Pipeline)
        },
        Command::SuccessCurve { common, sizes } => ExperimentSpec {
            sizes,
            ..common.spec(ExperimentKind::SuccessCurve)
        },
        Command::DeviceTrace { common, currents } => ExperimentSpec {
            currents,
            ..common.spec(ExperimentKind::DeviceTrace)
        },
        Command::SpinReport { common, files } => {
            let mut spec = common.spec(ExperimentKind::SpinReport);
            spec.inputs.extend(files);
            spec
        }
        Command::Calibrate { common, currents } => ExperimentSpec {
            currents,
            ..common.spec(ExperimentKind::Calibrate)
        },
    };
    match run_experiment(&spec) {
        Ok(out) => {
            for line in &out.summary {
                println!("{line}");
            }
            println!("artifact: {}", out.artifact_path.display());
            if out.success {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Contract(_)
                | Error::UnsupportedInstance(_)
                | Error::UnsupportedFormat(_)
                | Error::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
