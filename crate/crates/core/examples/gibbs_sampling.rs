//! Samples a small random Ising model with p-bit sweeps and compares the
//! visit histogram with the exact Boltzmann distribution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smtj_ising::anneal::{sweep, RunConfig, Schedule};
use smtj_ising::ising::{total_variation, IsingModel, SpinConfiguration};

fn main() -> smtj_ising::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 6;
    let c = 0.8;
    let model = IsingModel::random(n, 1.0, &mut rng);
    let config = RunConfig::with_schedule(Schedule::constant(c, 1));

    let sweeps = 200_000;
    let mut counts = vec![0u64; 1 << n];
    let mut s = SpinConfiguration::random(n, &mut rng);
    for _ in 0..1000 {
        s = sweep(&model, &s, c, &config, &mut rng)?;
    }
    for _ in 0..sweeps {
        s = sweep(&model, &s, c, &config, &mut rng)?;
        counts[s.to_index()] += 1;
    }
    let empirical: Vec<f64> = counts.iter().map(|&k| k as f64 / sweeps as f64).collect();
    let exact = model.gibbs_distribution(c);
    println!("{n} spins, c = {c}, {sweeps} sweeps");
    println!(
        "total variation distance: {:.4}",
        total_variation(&empirical, &exact)
    );
    Ok(())
}
