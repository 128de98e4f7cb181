//! Runs an experiment through the harness and reads its artifact back.

use smtj_ising::bench::{run_experiment, ExperimentKind, ExperimentSpec};
use smtj_ising::tsplib::read_run_artifact;

fn main() -> smtj_ising::Result<()> {
    let out = std::env::temp_dir().join("smtj-ising-example");
    let mut spec = ExperimentSpec::new(ExperimentKind::SolveTsp, &out);
    spec.n = Some(7);
    spec.seed = 42;
    spec.trials = Some(3);
    let result = run_experiment(&spec)?;
    for line in &result.summary {
        println!("{line}");
    }
    let artifact = read_run_artifact(&result.artifact_path)?;
    println!(
        "artifact {} with scalars {:?}",
        result.artifact_path.display(),
        artifact.scalars
    );
    println!("side files: {:?}", artifact.side_files);
    Ok(())
}
