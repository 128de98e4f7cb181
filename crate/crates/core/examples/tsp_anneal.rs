//! Anneals a random 9-city tour problem and compares with the exhaustive optimum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smtj_ising::anneal::{run_trials, InitialState, RunConfig, Schedule};
use smtj_ising::tsp::{annealing_w, brute_force_optimum, build_tsp, EncodingVariant, TspInstance};

fn main() -> smtj_ising::Result<()> {
    let instance = TspInstance::random_uniform(9, &mut ChaCha8Rng::seed_from_u64(5));
    let encoding = build_tsp(&instance, EncodingVariant::Full, annealing_w(&instance))?;
    let config = RunConfig::with_schedule(Schedule::ramp_hold(0.0, 0.7, 50, 10_000)).seeded(5);
    let runs = run_trials(&encoding.model, &InitialState::Random, 10, &config)?;
    let optimum = brute_force_optimum(&instance, &[])
        .expect("non-empty")
        .length;
    println!("{} spins, optimum {optimum:.4}", encoding.model.n());
    for (k, r) in runs.iter().enumerate() {
        match encoding.decode(r.solution_state())?.tour() {
            Some(t) => println!("run {k}: {:.4} {:?}", t.length, t.order),
            None => println!("run {k}: no valid tour"),
        }
    }
    Ok(())
}
