//! Recovers the sigmoid parameters of a device from simulated occupancy data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smtj_ising::device::{calibrate, DeviceParams, DeviceState, TelegraphTrace};

fn main() -> smtj_ising::Result<()> {
    let truth = DeviceParams::with_sigmoid(5.2, 4.1);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let traces: Vec<TelegraphTrace> = (0..12)
        .map(|k| {
            let current = 3.2 + 0.15 * k as f64;
            TelegraphTrace::record(
                &truth,
                current,
                DeviceState::P,
                truth.tau0,
                50_000,
                &mut rng,
            )
        })
        .collect();
    let fit = calibrate(&traces, &DeviceParams::default())?;
    println!("true  a = {:.3}, b = {:.3}", truth.a, truth.b);
    println!("fitted a = {:.3}, b = {:.3}", fit.a, fit.b);
    Ok(())
}
