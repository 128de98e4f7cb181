//! Probability of reaching the optimal tour against iteration count.

use smtj_ising::anneal::{RunConfig, Schedule};
use smtj_ising::bench::measure_success;

fn main() -> smtj_ising::Result<()> {
    let config = RunConfig::with_schedule(Schedule::ramp_hold(0.0, 0.7, 50, 10_000));
    for n in 5..=8 {
        let curve = measure_success(n, 7, 40, &config)?;
        let at = |t: usize| {
            curve
                .points
                .iter()
                .rev()
                .find(|p| p.0 <= t)
                .map_or(0.0, |p| p.1)
        };
        println!(
            "n = {n}: P(100) {:.2}  P(1000) {:.2}  P(10000) {:.2}",
            at(100),
            at(1000),
            curve.success_probability
        );
    }
    Ok(())
}
