//! Random-telegraph traces of one superparamagnetic junction at three bias
//! currents, and the dwell-time statistics behind them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smtj_ising::device::{DeviceParams, DeviceState, TelegraphTrace};

fn main() {
    let params = DeviceParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Sample well below the mean dwell so short visits are not merged.
    let dt = params.tau0 / 50.0;
    for current in [3.0, 3.9, 5.0] {
        let trace =
            TelegraphTrace::record(&params, current, DeviceState::P, dt, 2_000_000, &mut rng);
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
        println!(
            "I = {current} uA: p_ap {:.4}, AP fraction {:.4}, mean AP dwell {:.2e} s (expected {:.2e})",
            params.p_ap(current),
            trace.ap_fraction(),
            mean(trace.dwell_times(DeviceState::Ap)),
            params.mean_dwell_ap(current),
        );
    }
}
