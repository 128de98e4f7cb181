//! Experiment harness behind the command-line tool.
//!
//! Every experiment is deterministic given its seed and writes a JSON artifact
//! (plus CSV side-files) into the output directory.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::anneal::{
    run_trials, trial_seed, DeviceMode, InitialState, RunConfig, RunResult, Schedule,
};
use crate::decomposition::{pipeline_run, planned_peak_spins, PipelineConfig};
use crate::device::{calibrate_points, DeviceParams, DeviceState, OccupancyPoint, TelegraphTrace};
use crate::error::{contract, io_err, Error, Result};
use crate::tsp::{
    annealing_w, brute_force_optimum, build_ctsp, build_tsp, ctsp_theta, CtspConstraint, Decoded,
    EncodingVariant, TspEncoding, TspInstance, CTSP_ANNEAL_W_SCALE,
};
use crate::tsplib::{self, write_run_artifact, write_trajectory_side_file, RunArtifact};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "SMTJ_ISING_OUT";

pub const DEFAULT_ITERATIONS: usize = 10_000;
pub const DEFAULT_SCHEDULE: &str = "ramp:0:0.7:50";
pub const DEFAULT_CURRENTS: [f64; 3] = [3.0, 3.9, 5.0];

/// Trajectories are thinned to about this many points.
const TRAJECTORY_POINTS: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SolveTsp,
    SolveCtsp,
    Pipeline,
    SuccessCurve,
    DeviceTrace,
    SpinReport,
    Calibrate,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::SolveTsp => "solve_tsp",
            Self::SolveCtsp => "solve_ctsp",
            Self::Pipeline => "pipeline",
            Self::SuccessCurve => "success_curve",
            Self::DeviceTrace => "device_trace",
            Self::SpinReport => "spin_report",
            Self::Calibrate => "calibrate",
        }
    }
}

/// One experiment. Unset options take per-kind defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// TSPLIB files (several for the spin report) or a calibration CSV.
    pub inputs: Vec<PathBuf>,
    pub seed: u64,
    /// City count of synthetic instances.
    pub n: Option<usize>,
    /// Sizes swept by the success curve.
    pub sizes: Vec<usize>,
    pub iterations: Option<usize>,
    pub schedule: Option<String>,
    pub w: Option<f64>,
    pub theta: Option<f64>,
    pub budget: Option<usize>,
    pub trials: Option<usize>,
    pub mode: DeviceMode,
    /// Constrained city pairs for `solve_ctsp`.
    pub pairs: Vec<(usize, usize)>,
    /// Bias currents in uA for `device_trace` and synthetic calibration.
    pub currents: Vec<f64>,
    /// Window passes of the pipeline.
    pub passes: Option<usize>,
    pub out_dir: PathBuf,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            kind,
            inputs: Vec::new(),
            seed: 0,
            n: None,
            sizes: Vec::new(),
            iterations: None,
            schedule: None,
            w: None,
            theta: None,
            budget: None,
            trials: None,
            mode: DeviceMode::Ideal,
            pairs: Vec::new(),
            currents: Vec::new(),
            passes: None,
            out_dir: out_dir.into(),
        }
    }

    fn iterations(&self) -> usize {
        self.iterations.unwrap_or(DEFAULT_ITERATIONS)
    }

    fn run_config(&self, iterations: usize) -> Result<RunConfig> {
        let schedule = Schedule::parse(
            self.schedule.as_deref().unwrap_or(DEFAULT_SCHEDULE),
            iterations,
        )?;
        Ok(RunConfig {
            device_mode: self.mode,
            seed: self.seed,
            ..RunConfig::with_schedule(schedule)
        })
    }

    /// The single input instance, or a synthetic one drawn from the seed.
    fn instance(&self, default_n: usize) -> Result<TspInstance> {
        match self.inputs.as_slice() {
            [] => {
                let n = self.n.unwrap_or(default_n);
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let mut inst = TspInstance::random_uniform(n, &mut rng);
                inst.name = format!("uniform{n}-seed{}", self.seed);
                Ok(inst)
            }
            [path] => tsplib::load(path)?.to_instance(),
            _ => Err(contract("this experiment takes a single --input")),
        }
    }
}

/// What an experiment produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub artifact: RunArtifact,
    pub artifact_path: PathBuf,
    pub side_files: Vec<PathBuf>,
    /// Human-readable summary lines.
    pub summary: Vec<String>,
    /// False when the solver failed to produce what was asked for.
    pub success: bool,
}

pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("results"))
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    std::fs::create_dir_all(&spec.out_dir).map_err(io_err(&spec.out_dir))?;
    match spec.kind {
        ExperimentKind::SolveTsp => solve_tsp(spec),
        ExperimentKind::SolveCtsp => solve_ctsp(spec),
        ExperimentKind::Pipeline => pipeline(spec),
        ExperimentKind::SuccessCurve => success_curve(spec),
        ExperimentKind::DeviceTrace => device_trace(spec),
        ExperimentKind::SpinReport => spin_report(spec),
        ExperimentKind::Calibrate => calibrate(spec),
    }
}

fn finish(
    spec: &ExperimentSpec,
    artifact: RunArtifact,
    side_files: Vec<PathBuf>,
    summary: Vec<String>,
    success: bool,
) -> Result<ExperimentOutput> {
    let artifact_path = spec.out_dir.join(format!("{}.json", spec.kind.name()));
    write_run_artifact(&artifact, &artifact_path)?;
    Ok(ExperimentOutput {
        artifact,
        artifact_path,
        side_files,
        summary,
        success,
    })
}

fn describe(decoded: &Decoded) -> String {
    match decoded {
        Decoded::Tour(t) => format!("{}", t.length),
        Decoded::Violation(v) => format!(
            "invalid ({} row, {} column violations)",
            v.row_violations, v.column_violations
        ),
    }
}

fn stride(iterations: usize) -> usize {
    (iterations / TRAJECTORY_POINTS).max(1)
}

/// Runs `trials` annealing runs with trajectories and writes them as side-files.
fn traced_trials(
    spec: &ExperimentSpec,
    encoding: &TspEncoding,
    artifact: &mut RunArtifact,
    side_files: &mut Vec<PathBuf>,
) -> Result<Vec<RunResult>> {
    let iterations = spec.iterations();
    let config = RunConfig {
        record_trajectory: true,
        trajectory_stride: stride(iterations),
        ..spec.run_config(iterations)?
    };
    let trials = spec.trials.unwrap_or(1).max(1);
    let results = run_trials(&encoding.model, &InitialState::Random, trials, &config)?;
    for (k, r) in results.iter().enumerate() {
        let name = format!("{}_trajectory_{k}.csv", spec.kind.name());
        side_files.push(write_trajectory_side_file(
            artifact,
            &spec.out_dir,
            &name,
            &r.trajectory,
        )?);
    }
    Ok(results)
}

fn lowest(results: &[RunResult]) -> &RunResult {
    results
        .iter()
        .min_by(|a, b| a.solution_energy.total_cmp(&b.solution_energy))
        .expect("at least one trial")
}

fn solve_tsp(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let instance = spec.instance(9)?;
    let n = instance.len();
    let variant = match spec.budget {
        None => EncodingVariant::Full,
        Some(b) if n * n <= b => EncodingVariant::Full,
        Some(b) if (n - 1) * (n - 1) <= b => EncodingVariant::FixedStart,
        Some(b) => {
            return Err(contract(format!(
                "{n} cities need at least {} spins, budget is {b}",
                (n - 1) * (n - 1)
            )))
        }
    };
    let w = spec.w.unwrap_or_else(|| annealing_w(&instance));
    let encoding = build_tsp(&instance, variant, w)?;
    let mut artifact = RunArtifact::new("solve_tsp", spec.seed, spec)?;
    artifact.instance = Some(instance.name.clone());
    let mut side_files = Vec::new();
    let results = traced_trials(spec, &encoding, &mut artifact, &mut side_files)?;
    let best = lowest(&results);
    let final_decoded = encoding.decode(&best.final_state)?;
    let best_decoded = encoding.decode(&best.best_state)?;
    let solution = encoding.decode(best.solution_state())?;
    let mut summary = vec![
        format!(
            "{}: {n} cities, {} spins, w = {w}",
            instance.name,
            encoding.model.n()
        ),
        format!("final length: {}", describe(&final_decoded)),
        format!("best length: {}", describe(&best_decoded)),
    ];
    artifact = artifact
        .scalar("w", w)
        .scalar("spins", encoding.model.n() as f64)
        .scalar("solution_energy", best.solution_energy)
        .scalar("best_energy", best.best_energy)
        .scalar("final_energy", best.final_energy);
    let success = if let Decoded::Tour(t) = solution {
        artifact = artifact.scalar("length", t.length);
        artifact.tour = Some(t.order.clone());
        if n <= 10 {
            let opt = brute_force_optimum(&instance, &[])
                .expect("non-empty")
                .length;
            artifact = artifact.scalar("optimum", opt);
            summary.push(format!("exhaustive optimum: {opt}"));
        }
        true
    } else {
        summary.push("no valid tour found".into());
        false
    };
    finish(spec, artifact, side_files, summary, success)
}

fn solve_ctsp(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let instance = spec.instance(9)?;
    let pairs = if spec.pairs.is_empty() {
        vec![(2, 7)]
    } else {
        spec.pairs.clone()
    };
    let max_d = instance.max_distance();
    let w = spec.w.unwrap_or(CTSP_ANNEAL_W_SCALE / max_d);
    let theta = spec.theta.unwrap_or_else(|| ctsp_theta(w, max_d));
    let variant = match spec.budget {
        Some(b) if instance.len().pow(2) > b => EncodingVariant::FixedStart,
        _ => EncodingVariant::Full,
    };
    let base = build_tsp(&instance, variant, w)?;
    let mut constraint = CtspConstraint::undirected(&base, &pairs)?;
    constraint.theta = theta;
    let encoding = build_ctsp(&base, &constraint)?;
    if let Some(b) = spec.budget {
        if encoding.model.n() > b {
            return Err(contract(format!(
                "{} spins exceed the budget of {b}",
                encoding.model.n()
            )));
        }
    }
    let mut artifact = RunArtifact::new("solve_ctsp", spec.seed, spec)?;
    artifact.instance = Some(instance.name.clone());
    let mut side_files = Vec::new();
    let results = traced_trials(spec, &encoding, &mut artifact, &mut side_files)?;
    let mut best: Option<(f64, crate::tsp::Tour)> = None;
    for r in &results {
        if let Decoded::Tour(t) = encoding.decode(r.solution_state())? {
            if pairs.iter().all(|&(a, b)| t.has_edge(a, b))
                && best.as_ref().map_or(true, |(e, _)| r.solution_energy < *e)
            {
                best = Some((r.solution_energy, t));
            }
        }
    }
    let mut summary = vec![format!(
        "{}: {} cities, pairs {pairs:?}, w = {w}, theta = {theta}",
        instance.name,
        instance.len()
    )];
    artifact = artifact.scalar("w", w).scalar("theta", theta);
    let success = match best {
        Some((energy, tour)) => {
            for &(a, b) in &pairs {
                summary.push(format!("tour contains edge {a}-{b}"));
            }
            summary.push(format!("length: {}", tour.length));
            if instance.len() <= 10 {
                let opt = brute_force_optimum(&instance, &pairs).expect("non-empty");
                artifact = artifact.scalar("constrained_optimum", opt.length);
                summary.push(format!("constrained optimum: {}", opt.length));
            }
            artifact = artifact
                .scalar("length", tour.length)
                .scalar("solution_energy", energy);
            artifact.tour = Some(tour.order);
            true
        }
        None => {
            summary.push("no valid tour containing every constrained edge".into());
            false
        }
    };
    finish(spec, artifact, side_files, summary, success)
}

/// Pipeline configuration implied by the spec's overrides.
pub fn pipeline_config(spec: &ExperimentSpec) -> Result<PipelineConfig> {
    let mut config = PipelineConfig {
        seed: spec.seed,
        ..PipelineConfig::default()
    };
    if let Some(b) = spec.budget {
        config.spin_budget = b;
    }
    if let Some(p) = spec.passes {
        config.window_passes = p;
    }
    if let Some(theta) = spec.theta {
        config.theta = Some(theta);
    }
    if spec.iterations.is_some() || spec.schedule.is_some() {
        config.group_run = spec.run_config(spec.iterations())?;
    }
    for run in [
        &mut config.partition_run,
        &mut config.group_run,
        &mut config.window_run,
    ] {
        run.device_mode = spec.mode;
    }
    if let Some(w) = spec.w {
        return Err(contract(format!(
            "the pipeline sets w per sub-problem; --w {w} is not accepted"
        )));
    }
    config.validate()?;
    Ok(config)
}

fn pipeline(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let instance = spec.instance(30)?;
    let config = pipeline_config(spec)?;
    let outcome = pipeline_run(&instance, &config)?;
    let r = &outcome.report;
    let mut artifact = RunArtifact::new("pipeline", spec.seed, &config)?;
    artifact.instance = Some(instance.name.clone());
    artifact = artifact
        .scalar("stitched_length", r.stitched_length)
        .scalar("final_length", r.final_length)
        .scalar("total_iterations", r.total.iterations as f64)
        .scalar("total_spin_updates", r.total.spin_updates as f64)
        .scalar("peak_spins", r.total.peak_spins as f64);
    artifact.tour = Some(outcome.tour.order.clone());
    artifact.report = Some(serde_json::to_value(r)?);
    let summary = vec![
        format!(
            "{}: {} cities in {} groups, budget {}",
            instance.name,
            instance.len(),
            r.groups.len(),
            r.spin_budget
        ),
        format!("stitched length: {}", r.stitched_length),
        format!("pass lengths: {:?}", r.pass_lengths),
        format!("attempt lengths: {:?}", r.attempt_lengths),
        format!(
            "sweeps: {}, spin updates: {}, peak spins: {}",
            r.total.iterations, r.total.spin_updates, r.total.peak_spins
        ),
        format!("final length: {}", r.final_length),
    ];
    finish(spec, artifact, Vec::new(), summary, true)
}

/// Log-spaced iteration checkpoints ending at `total`.
pub fn checkpoints(total: usize, count: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..count)
        .map(|k| {
            let f = k as f64 / (count - 1).max(1) as f64;
            (total as f64).powf(f).round() as usize
        })
        .filter(|&t| t >= 1)
        .collect();
    out.push(total);
    out.sort_unstable();
    out.dedup();
    out
}

/// Success statistics of repeated annealing on one synthetic instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessCurve {
    pub n: usize,
    pub instance_seed: u64,
    pub optimum: f64,
    pub trials: usize,
    /// `(iteration, fraction of trials that reached the optimum by then)`.
    pub points: Vec<(usize, f64)>,
    /// Fraction of trials whose reported solution decodes to an optimal tour.
    pub success_probability: f64,
}

/// Anneals the synthetic `n`-city instance of `seed` from `trials` random starts.
pub fn measure_success(
    n: usize,
    seed: u64,
    trials: usize,
    config: &RunConfig,
) -> Result<SuccessCurve> {
    if trials == 0 {
        return Err(contract("need at least one trial"));
    }
    if !(3..=10).contains(&n) {
        return Err(Error::UnsupportedInstance(format!(
            "success curves need 3..=10 cities for the exhaustive optimum, got {n}"
        )));
    }
    let instance = TspInstance::random_uniform(n, &mut ChaCha8Rng::seed_from_u64(seed));
    let encoding = build_tsp(&instance, EncodingVariant::Full, annealing_w(&instance))?;
    let optimum = brute_force_optimum(&instance, &[]).expect("non-empty");
    let target = encoding.tour_energy(&optimum.order)?;
    let config = RunConfig {
        target_energy: Some(target),
        seed: trial_seed(seed, n),
        ..config.clone()
    };
    let results = run_trials(&encoding.model, &InitialState::Random, trials, &config)?;
    let total = config.schedule.total_iterations;
    let points = checkpoints(total, 25)
        .into_iter()
        .map(|t| {
            let hits = results
                .iter()
                .filter(|r| r.first_hit_iteration.is_some_and(|h| h <= t))
                .count();
            (t, hits as f64 / trials as f64)
        })
        .collect();
    let mut hits = 0;
    for r in &results {
        if let Decoded::Tour(t) = encoding.decode(r.solution_state())? {
            if t.length <= optimum.length + 1e-9 * optimum.length.max(1.0) {
                hits += 1;
            }
        }
    }
    Ok(SuccessCurve {
        n,
        instance_seed: seed,
        optimum: optimum.length,
        trials,
        points,
        success_probability: hits as f64 / trials as f64,
    })
}

fn success_curve(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let sizes = if !spec.sizes.is_empty() {
        spec.sizes.clone()
    } else {
        vec![spec.n.unwrap_or(9)]
    };
    let trials = spec.trials.unwrap_or(50);
    let config = spec.run_config(spec.iterations())?;
    let mut artifact = RunArtifact::new("success_curve", spec.seed, spec)?;
    let path = spec.out_dir.join("success_curve.csv");
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    let mut csv = csv::Writer::from_writer(file);
    csv.write_record(["n", "iteration", "success_probability"])?;
    let mut summary = Vec::new();
    let mut curves = Vec::new();
    for &n in &sizes {
        let curve = measure_success(n, spec.seed, trials, &config)?;
        for &(t, p) in &curve.points {
            csv.write_record([n.to_string(), t.to_string(), p.to_string()])?;
        }
        summary.push(format!(
            "n = {n}: success probability {} over {trials} trials at {} iterations (optimum {})",
            curve.success_probability, config.schedule.total_iterations, curve.optimum
        ));
        artifact = artifact.scalar(&format!("success_n{n}"), curve.success_probability);
        curves.push(curve);
    }
    csv.flush().map_err(io_err(&path))?;
    artifact.side_files.push("success_curve.csv".into());
    artifact.report = Some(serde_json::to_value(&curves)?);
    finish(spec, artifact, vec![path], summary, true)
}

fn device_trace(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let params = DeviceParams::default();
    let currents = if spec.currents.is_empty() {
        DEFAULT_CURRENTS.to_vec()
    } else {
        spec.currents.clone()
    };
    let steps = spec.iterations.unwrap_or(100_000);
    let dt = params.tau0 / 10.0;
    let mut artifact = RunArtifact::new("device_trace", spec.seed, spec)?;
    let mut side_files = Vec::new();
    let summary_path = spec.out_dir.join("device_occupancy.csv");
    let file = std::fs::File::create(&summary_path).map_err(io_err(&summary_path))?;
    let mut csv = csv::Writer::from_writer(file);
    csv.write_record(["current_ua", "p_ap", "ap_fraction"])?;
    let mut summary = Vec::new();
    for (k, &current) in currents.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(spec.seed, k));
        let trace = TelegraphTrace::record(&params, current, DeviceState::P, dt, steps, &mut rng);
        let name = format!("device_trace_{k}.csv");
        let path = spec.out_dir.join(&name);
        trace.save_csv(&path)?;
        artifact.side_files.push(name);
        side_files.push(path);
        let p = params.p_ap(current);
        let frac = trace.ap_fraction();
        csv.write_record([current.to_string(), p.to_string(), frac.to_string()])?;
        summary.push(format!("I = {current} uA: p_ap {p:.4}, observed {frac:.4}"));
        artifact = artifact.scalar(&format!("ap_fraction_{k}"), frac);
    }
    csv.flush().map_err(io_err(&summary_path))?;
    artifact.side_files.push("device_occupancy.csv".into());
    side_files.push(summary_path);
    finish(spec, artifact, side_files, summary, true)
}

/// One line of the spin-count table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinCountRow {
    pub name: String,
    pub cities: usize,
    /// `(N - 1)^2`.
    pub conventional: usize,
    /// Largest sub-problem the pipeline may anneal.
    pub ours: usize,
}

/// Spin counts from city counts alone.
pub fn spin_count_report(instances: &[(String, usize)], budget: usize) -> Vec<SpinCountRow> {
    instances
        .iter()
        .map(|(name, n)| SpinCountRow {
            name: name.clone(),
            cities: *n,
            conventional: n.saturating_sub(1).pow(2),
            ours: planned_peak_spins(*n, budget).min(budget),
        })
        .collect()
}

/// Directory of the TSPLIB files shipped with the crate.
pub fn bundled_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

pub const BUNDLED_INSTANCES: [&str; 5] = ["burma14", "berlin52", "st70", "eil76", "eil101"];

fn spin_report(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let paths: Vec<PathBuf> = if spec.inputs.is_empty() {
        BUNDLED_INSTANCES
            .iter()
            .map(|n| bundled_data_dir().join(format!("{n}.tsp")))
            .collect()
    } else {
        spec.inputs.clone()
    };
    let mut entries = Vec::new();
    for p in &paths {
        let text = std::fs::read_to_string(p).map_err(io_err(p))?;
        entries.push(tsplib::read_dimension(&text)?);
    }
    let budget = spec.budget.unwrap_or(81);
    let rows = spin_count_report(&entries, budget);
    let path = spec.out_dir.join("spin_report.csv");
    let file = std::fs::File::create(&path).map_err(io_err(&path))?;
    let mut csv = csv::Writer::from_writer(file);
    csv.write_record(["name", "cities", "conventional", "ours"])?;
    let mut summary = vec![format!(
        "{:<10} {:>6} {:>12} {:>6}",
        "name", "N", "conventional", "ours"
    )];
    let mut artifact = RunArtifact::new("spin_report", spec.seed, spec)?;
    for r in &rows {
        csv.write_record([
            r.name.clone(),
            r.cities.to_string(),
            r.conventional.to_string(),
            r.ours.to_string(),
        ])?;
        summary.push(format!(
            "{:<10} {:>6} {:>12} {:>6}",
            r.name, r.cities, r.conventional, r.ours
        ));
        artifact = artifact
            .scalar(&format!("{}_conventional", r.name), r.conventional as f64)
            .scalar(&format!("{}_ours", r.name), r.ours as f64);
    }
    csv.flush().map_err(io_err(&path))?;
    artifact.side_files.push("spin_report.csv".into());
    artifact.report = Some(serde_json::to_value(&rows)?);
    finish(spec, artifact, vec![path], summary, true)
}

/// Reads `current,ap_fraction[,weight]` rows with a header.
pub fn read_occupancy_csv(path: &Path) -> Result<Vec<OccupancyPoint>> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut points = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .ok_or_else(|| Error::Parse {
                    line: k + 2,
                    message: format!("missing column {i}"),
                })?
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Parse {
                    line: k + 2,
                    message: format!("column {i} is not a number"),
                })
        };
        points.push(OccupancyPoint {
            current: field(0)?,
            ap_fraction: field(1)?,
            weight: if record.len() > 2 { field(2)? } else { 1.0 },
        });
    }
    Ok(points)
}

fn calibrate(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let template = DeviceParams::default();
    let points = match spec.inputs.as_slice() {
        [path] => read_occupancy_csv(path)?,
        [] => {
            let currents = if spec.currents.is_empty() {
                (0..10).map(|k| 3.0 + 0.2 * k as f64).collect()
            } else {
                spec.currents.clone()
            };
            let steps = spec.iterations.unwrap_or(20_000);
            currents
                .iter()
                .enumerate()
                .map(|(k, &current)| {
                    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(spec.seed, k));
                    let trace = TelegraphTrace::record(
                        &template,
                        current,
                        DeviceState::P,
                        template.tau0,
                        steps,
                        &mut rng,
                    );
                    OccupancyPoint::from(&trace)
                })
                .collect()
        }
        _ => return Err(contract("calibrate takes at most one --input")),
    };
    let mut artifact = RunArtifact::new("calibrate", spec.seed, spec)?;
    let (summary, success) = match calibrate_points(&points, &template) {
        Ok(fit) => {
            artifact = artifact.scalar("a", fit.a).scalar("b", fit.b);
            (
                vec![format!("fitted a = {:.4} /uA, b = {:.4} uA", fit.a, fit.b)],
                true,
            )
        }
        Err(Error::FitFailure(msg)) => (vec![format!("fit failed: {msg}")], false),
        Err(e) => return Err(e),
    };
    artifact.report = Some(serde_json::to_value(&points)?);
    finish(spec, artifact, Vec::new(), summary, success)
}
