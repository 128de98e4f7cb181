//! Solves st70 with at most 81 spins per annealed sub-problem.
//!
//! `cargo run --release --example pipeline_st70 [seed]`

use smtj_ising::decomposition::{pipeline_run, PipelineConfig};
use smtj_ising::tsplib;

fn main() -> smtj_ising::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/st70.tsp");
    let instance = tsplib::load(&path)?.to_instance()?;
    let config = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    let outcome = pipeline_run(&instance, &config)?;
    let r = &outcome.report;
    println!("groups: {}", r.groups.len());
    println!("stitched: {}", r.stitched_length);
    println!("after each window pass: {:?}", r.pass_lengths);
    println!("final: {} (optimum 675)", r.final_length);
    println!(
        "sweeps: {}, peak spins: {}",
        r.total.iterations, r.total.peak_spins
    );
    Ok(())
}
