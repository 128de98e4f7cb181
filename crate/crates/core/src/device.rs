//! Superparamagnetic tunnel junction (SMTJ) emulation.
//!
//! The steady-state probability of finding the junction in its antiparallel (AP)
//! state follows a sigmoid in the bias current,
//! `p_AP(I) = 1 / (1 + exp(-a (I - b)))`. The annealer drives each spin through
//! this law: a local field `L` at inverse temperature `c` is converted to the
//! current `I = (2c/a) L + b`, so that `p_AP(I)` equals the Gibbs conditional
//! `1 / (1 + exp(-2cL))`. AP reads as spin `+1`, P as `-1`.
//!
//! Time dynamics are a two-state continuous-time Markov chain (random telegraph
//! noise). Rates are `P -> AP: p_AP * 2/tau0` and `AP -> P: (1 - p_AP) * 2/tau0`,
//! which keeps the stationary AP occupancy on the sigmoid and the total
//! fluctuation rate at `2/tau0` for every current.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, io_err, Error, Result};
use crate::ising::logistic;

/// Fitted sigmoid slope of the reference device, 1/uA.
pub const DEFAULT_SLOPE: f64 = 4.67;
/// Fitted sigmoid center of the reference device, uA.
pub const DEFAULT_CENTER: f64 = 3.9;
/// Mean dwell time at the sigmoid center, seconds. Matches the 0.1 ms read interval.
pub const DEFAULT_TAU0: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Sigmoid slope, 1/uA.
    pub a: f64,
    /// Sigmoid center, uA.
    pub b: f64,
    /// Mean dwell time at `I = b`, seconds.
    pub tau0: f64,
    /// AP resistance in ohms. Descriptive only.
    pub r_ap: f64,
    /// P resistance in ohms. Descriptive only.
    pub r_p: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            a: DEFAULT_SLOPE,
            b: DEFAULT_CENTER,
            tau0: DEFAULT_TAU0,
            r_ap: 2.0e4,
            r_p: 1.0e4,
        }
    }
}

impl DeviceParams {
    pub fn with_sigmoid(a: f64, b: f64) -> Self {
        Self {
            a,
            b,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) {
            return Err(contract(format!(
                "sigmoid slope must be positive, got {}",
                self.a
            )));
        }
        if !(self.tau0 > 0.0) {
            return Err(contract(format!(
                "tau0 must be positive, got {}",
                self.tau0
            )));
        }
        if !(self.r_ap > self.r_p && self.r_p > 0.0) {
            return Err(contract("resistances must satisfy r_ap > r_p > 0"));
        }
        Ok(())
    }

    /// Steady-state AP probability at `current` (uA).
    pub fn p_ap(&self, current: f64) -> f64 {
        logistic(self.a * (current - self.b))
    }

    /// Bias current (uA) that makes the AP probability equal the Gibbs
    /// conditional of a spin with local field `local_field` at inverse temperature `c`.
    pub fn current_for_field(&self, local_field: f64, c: f64) -> f64 {
        debug_assert!(c >= 0.0);
        (2.0 * c / self.a) * local_field + self.b
    }

    /// Telegraph rates `(P -> AP, AP -> P)` in 1/s at `current`.
    pub fn rates(&self, current: f64) -> (f64, f64) {
        let p = self.p_ap(current);
        let total = 2.0 / self.tau0;
        (p * total, (1.0 - p) * total)
    }

    /// Mean AP dwell time (s) at `current`.
    pub fn mean_dwell_ap(&self, current: f64) -> f64 {
        1.0 / self.rates(current).1
    }

    /// Mean P dwell time (s) at `current`.
    pub fn mean_dwell_p(&self, current: f64) -> f64 {
        1.0 / self.rates(current).0
    }
}

/// Magnetic state of a junction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceState {
    #[serde(rename = "AP")]
    Ap,
    #[serde(rename = "P")]
    P,
}

impl DeviceState {
    /// AP maps to spin `+1`.
    pub fn spin(self) -> i8 {
        match self {
            DeviceState::Ap => 1,
            DeviceState::P => -1,
        }
    }

    pub fn from_spin(s: i8) -> Self {
        if s > 0 {
            DeviceState::Ap
        } else {
            DeviceState::P
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            DeviceState::Ap => "AP",
            DeviceState::P => "P",
        }
    }
}

/// Memoryless read: AP with probability `p_ap(current)`.
pub fn sample_ideal<R: Rng + ?Sized>(
    params: &DeviceParams,
    current: f64,
    rng: &mut R,
) -> DeviceState {
    if rng.gen::<f64>() < params.p_ap(current) {
        DeviceState::Ap
    } else {
        DeviceState::P
    }
}

/// Advances the telegraph chain by `dt` seconds using the exact two-state
/// transition probabilities.
pub fn telegraph_step<R: Rng + ?Sized>(
    params: &DeviceParams,
    state: DeviceState,
    current: f64,
    dt: f64,
    rng: &mut R,
) -> DeviceState {
    debug_assert!(dt > 0.0);
    let p = params.p_ap(current);
    let decay = (-2.0 * dt / params.tau0).exp();
    let start = if state == DeviceState::Ap { 1.0 } else { 0.0 };
    let p_ap_after = p + (start - p) * decay;
    if rng.gen::<f64>() < p_ap_after {
        DeviceState::Ap
    } else {
        DeviceState::P
    }
}

/// A sampled resistance-state trace at a fixed bias current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelegraphTrace {
    /// Bias current, uA.
    pub current: f64,
    /// `(time_s, state)` with strictly increasing times.
    pub samples: Vec<(f64, DeviceState)>,
}

impl TelegraphTrace {
    /// Records `steps` samples spaced `dt` apart, starting from `initial` at `t = 0`.
    pub fn record<R: Rng + ?Sized>(
        params: &DeviceParams,
        current: f64,
        initial: DeviceState,
        dt: f64,
        steps: usize,
        rng: &mut R,
    ) -> Self {
        let mut samples = Vec::with_capacity(steps);
        let mut state = initial;
        for k in 0..steps {
            state = telegraph_step(params, state, current, dt, rng);
            samples.push(((k + 1) as f64 * dt, state));
        }
        Self { current, samples }
    }

    pub fn ap_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let ap = self
            .samples
            .iter()
            .filter(|(_, s)| *s == DeviceState::Ap)
            .count();
        ap as f64 / self.samples.len() as f64
    }

    /// Lengths (s) of maximal runs in `state`, excluding the runs cut by either end of the trace.
    pub fn dwell_times(&self, state: DeviceState) -> Vec<f64> {
        let mut out = Vec::new();
        let mut run_start: Option<f64> = None;
        let mut prev: Option<(f64, DeviceState)> = None;
        for &(t, s) in &self.samples {
            if let Some((_, ps)) = prev {
                if ps != s {
                    if ps == state {
                        if let Some(start) = run_start.take() {
                            out.push(t - start);
                        }
                    }
                    if s == state {
                        run_start = Some(t);
                    }
                }
            }
            prev = Some((t, s));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time_s", "state"])?;
        for (t, s) in &self.samples {
            w.write_record([format!("{t:.9e}"), s.label().to_string()])?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Observed AP occupancy at one bias current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyPoint {
    pub current: f64,
    pub ap_fraction: f64,
    /// Statistical weight, normally the sample count.
    pub weight: f64,
}

impl From<&TelegraphTrace> for OccupancyPoint {
    fn from(trace: &TelegraphTrace) -> Self {
        Self {
            current: trace.current,
            ap_fraction: trace.ap_fraction(),
            weight: trace.samples.len() as f64,
        }
    }
}

/// Maximum-likelihood logistic fit of AP occupancy against current, returning
/// the fitted slope and center on top of `template`'s remaining fields.
pub fn calibrate(traces: &[TelegraphTrace], template: &DeviceParams) -> Result<DeviceParams> {
    let points: Vec<OccupancyPoint> = traces.iter().map(OccupancyPoint::from).collect();
    calibrate_points(&points, template)
}

/// Weighted binomial-likelihood fit of `p = 1 / (1 + exp(-a (I - b)))`.
pub fn calibrate_points(
    points: &[OccupancyPoint],
    template: &DeviceParams,
) -> Result<DeviceParams> {
    let mut currents: Vec<f64> = points.iter().map(|p| p.current).collect();
    currents.sort_by(f64::total_cmp);
    currents.dedup();
    if currents.len() < 2 {
        return Err(Error::FitFailure(
            "need at least two distinct currents".into(),
        ));
    }
    if points.iter().all(|p| p.ap_fraction >= 1.0) || points.iter().all(|p| p.ap_fraction <= 0.0) {
        return Err(Error::FitFailure(
            "occupancy is saturated at every current".into(),
        ));
    }
    let total_weight: f64 = points.iter().map(|p| p.weight).sum();
    if !(total_weight > 0.0) {
        return Err(Error::FitFailure("no samples".into()));
    }

    // Fit p = sigma(alpha + beta * (I - mean)) by Newton's method, centered for conditioning.
    let mean = points.iter().map(|p| p.weight * p.current).sum::<f64>() / total_weight;
    let (mut alpha, mut beta) = (0.0f64, 0.0f64);
    let mut converged = false;
    for _ in 0..200 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for p in points {
            let x = p.current - mean;
            let q = logistic(alpha + beta * x);
            let r = p.weight * (p.ap_fraction - q);
            let v = p.weight * q * (1.0 - q);
            g0 += r;
            g1 += r * x;
            h00 += v;
            h01 += v * x;
            h11 += v * x * x;
        }
        let det = h00 * h11 - h01 * h01;
        if !(det.abs() > 1e-300) {
            return Err(Error::FitFailure("singular information matrix".into()));
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        // Damped step so perfectly separable data cannot blow up in a single iteration.
        let scale = 1.0f64.min(10.0 / d0.abs().max(d1.abs()).max(1e-300));
        alpha += scale * d0;
        beta += scale * d1;
        if !(alpha.is_finite() && beta.is_finite()) || beta.abs() > 1e6 {
            return Err(Error::FitFailure("fit diverged (separable data?)".into()));
        }
        if scale * d0.abs().max(d1.abs()) < 1e-13 * (1.0 + alpha.abs().max(beta.abs())) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::FitFailure(
            "Newton iteration did not converge".into(),
        ));
    }
    if !(beta > 0.0) {
        return Err(Error::FitFailure(format!(
            "fitted slope {beta} is not positive"
        )));
    }
    Ok(DeviceParams {
        a: beta,
        b: mean - alpha / beta,
        ..*template
    })
}
