//! Stochastic-spin annealing.
//!
//! One iteration is a full sweep over all spins. Each spin update reads its
//! local field, converts it to a bias current through the device law and
//! samples the device; the device state becomes the new spin value. The
//! effective inverse temperature `c` follows a [`Schedule`] across iterations.
//!
//! The run keeps two memories: the lowest-energy state seen so far and the
//! final state. The reported solution is the lower of the two.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{sample_ideal, telegraph_step, DeviceParams, DeviceState};
use crate::error::{contract, io_err, Error, Result};
use crate::ising::{IsingModel, SpinConfiguration};

/// Iterations of the fast initial ramp used by [`Schedule::ramp_hold`] by default.
pub const DEFAULT_RAMP_ITERATIONS: usize = 50;

/// Fields are recomputed from scratch this often to shed floating-point drift.
const FIELD_REFRESH_INTERVAL: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    Linear,
    Piecewise,
}

/// Effective inverse temperature as a function of the iteration index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub c_start: f64,
    pub c_end: f64,
    pub total_iterations: usize,
    /// `(iteration, c)` knots for [`ScheduleKind::Piecewise`], sorted by iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub breakpoints: Vec<(usize, f64)>,
}

impl Schedule {
    pub fn constant(c: f64, total_iterations: usize) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            c_start: c,
            c_end: c,
            total_iterations,
            breakpoints: Vec::new(),
        }
    }

    pub fn linear(c_start: f64, c_end: f64, total_iterations: usize) -> Self {
        Self {
            kind: ScheduleKind::Linear,
            c_start,
            c_end,
            total_iterations,
            breakpoints: Vec::new(),
        }
    }

    /// Piecewise-linear interpolation between knots, flat outside them.
    pub fn piecewise(breakpoints: Vec<(usize, f64)>, total_iterations: usize) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(contract("piecewise schedule needs at least one breakpoint"));
        }
        if breakpoints.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(contract(
                "breakpoints must be strictly increasing in iteration",
            ));
        }
        let schedule = Self {
            kind: ScheduleKind::Piecewise,
            c_start: breakpoints[0].1,
            c_end: breakpoints[breakpoints.len() - 1].1,
            total_iterations,
            breakpoints,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    /// Quick linear ramp from `c_start` to `c_hold` over `ramp` iterations, then constant.
    pub fn ramp_hold(c_start: f64, c_hold: f64, ramp: usize, total_iterations: usize) -> Self {
        Self {
            kind: ScheduleKind::Piecewise,
            c_start,
            c_end: c_hold,
            total_iterations,
            breakpoints: vec![(0, c_start), (ramp.max(1), c_hold)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iterations == 0 {
            return Err(contract("schedule must run at least one iteration"));
        }
        let negative = self.c_start < 0.0
            || self.c_end < 0.0
            || self.breakpoints.iter().any(|&(_, c)| c < 0.0);
        if negative || !self.c_start.is_finite() || !self.c_end.is_finite() {
            return Err(contract(
                "inverse temperatures must be finite and non-negative",
            ));
        }
        if self.breakpoints.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(contract(
                "breakpoints must be strictly increasing in iteration",
            ));
        }
        if self.kind == ScheduleKind::Piecewise && self.breakpoints.is_empty() {
            return Err(contract("piecewise schedule needs breakpoints"));
        }
        Ok(())
    }

    /// `c` at zero-based iteration `t`.
    pub fn c_at(&self, t: usize) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.c_start,
            ScheduleKind::Linear => {
                if self.total_iterations <= 1 {
                    self.c_start
                } else {
                    self.c_start
                        + (self.c_end - self.c_start) * t as f64
                            / (self.total_iterations - 1) as f64
                }
            }
            ScheduleKind::Piecewise => {
                let knots = &self.breakpoints;
                if t <= knots[0].0 {
                    return knots[0].1;
                }
                for w in knots.windows(2) {
                    let ((t0, c0), (t1, c1)) = (w[0], w[1]);
                    if t <= t1 {
                        return c0 + (c1 - c0) * (t - t0) as f64 / (t1 - t0) as f64;
                    }
                }
                knots[knots.len() - 1].1
            }
        }
    }

    /// Parses `constant:C` or `linear:C0:C1` (the command-line syntax).
    pub fn parse(text: &str, total_iterations: usize) -> Result<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| contract(format!("bad number {s:?} in schedule {text:?}")))
        };
        let schedule = match parts.as_slice() {
            ["constant", c] => Self::constant(num(c)?, total_iterations),
            ["linear", c0, c1] => Self::linear(num(c0)?, num(c1)?, total_iterations),
            ["ramp", c0, c1, ramp] => {
                let ramp = ramp
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| contract(format!("bad ramp length in {text:?}")))?;
                Self::ramp_hold(num(c0)?, num(c1)?, ramp, total_iterations)
            }
            _ => {
                return Err(contract(format!(
                    "schedule must be constant:C, linear:C0:C1 or ramp:C0:C1:ITERS, got {text:?}"
                )))
            }
        };
        schedule.validate()?;
        Ok(schedule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateOrder {
    /// Fresh random permutation each sweep.
    SequentialRandom,
    SequentialFixed,
    /// Every spin samples from the pre-sweep snapshot.
    Synchronous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceMode {
    /// Memoryless Bernoulli read per update.
    Ideal,
    /// Telegraph chain advanced by `iteration_interval` between reads.
    Faithful,
}

impl std::str::FromStr for DeviceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(Self::Ideal),
            "faithful" => Ok(Self::Faithful),
            other => Err(contract(format!("unknown device mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schedule: Schedule,
    pub update_order: UpdateOrder,
    pub device_mode: DeviceMode,
    pub device: DeviceParams,
    /// Optional per-spin device overrides; must match the model size when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_spin_devices: Option<Vec<DeviceParams>>,
    /// Simulated device time between reads in faithful mode, seconds.
    pub iteration_interval: f64,
    pub seed: u64,
    pub record_trajectory: bool,
    pub trajectory_stride: usize,
    /// When set, the first iteration whose energy reaches this value is reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_energy: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::ramp_hold(0.0, 0.5, DEFAULT_RAMP_ITERATIONS, 5000),
            update_order: UpdateOrder::SequentialRandom,
            device_mode: DeviceMode::Ideal,
            device: DeviceParams::default(),
            per_spin_devices: None,
            iteration_interval: 1e-4,
            seed: 0,
            record_trajectory: false,
            trajectory_stride: 1,
            target_energy: None,
        }
    }
}

impl RunConfig {
    pub fn with_schedule(schedule: Schedule) -> Self {
        Self {
            schedule,
            ..Self::default()
        }
    }

    pub fn seeded(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        self.schedule.validate()?;
        if self.trajectory_stride == 0 {
            return Err(contract("trajectory_stride must be at least 1"));
        }
        if self.device_mode == DeviceMode::Faithful && !(self.iteration_interval > 0.0) {
            return Err(contract(
                "faithful mode needs a positive iteration interval",
            ));
        }
        self.device.validate()?;
        if let Some(devices) = &self.per_spin_devices {
            if devices.len() != n {
                return Err(contract(format!(
                    "{} per-spin devices for a {n}-spin model",
                    devices.len()
                )));
            }
            devices.iter().try_for_each(DeviceParams::validate)?;
        }
        Ok(())
    }

    fn device_for(&self, k: usize) -> &DeviceParams {
        match &self.per_spin_devices {
            Some(devices) => &devices[k],
            None => &self.device,
        }
    }
}

/// Where a run starts.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Random,
    Given(SpinConfiguration),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub iteration: usize,
    pub c: f64,
    pub energy: f64,
    pub best_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub best_state: SpinConfiguration,
    pub best_energy: f64,
    pub final_state: SpinConfiguration,
    pub final_energy: f64,
    pub solution_energy: f64,
    pub iterations_run: usize,
    pub first_hit_iteration: Option<usize>,
    pub trajectory: Vec<TrajectoryPoint>,
    pub seed: u64,
    pub config: RunConfig,
}

impl RunResult {
    /// State of the reported solution (the lower of the two memories).
    pub fn solution_state(&self) -> &SpinConfiguration {
        if self.final_energy <= self.best_energy {
            &self.final_state
        } else {
            &self.best_state
        }
    }

    /// Writes the trajectory as `iteration,c,energy,best_energy`.
    pub fn write_trajectory_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_trajectory_csv(&self.trajectory, writer)
    }

    pub fn save_trajectory_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(io_err(path))?;
        self.write_trajectory_csv(std::io::BufWriter::new(file))
    }
}

pub fn write_trajectory_csv<W: Write>(points: &[TrajectoryPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iteration", "c", "energy", "best_energy"])?;
    for p in points {
        w.write_record([
            p.iteration.to_string(),
            p.c.to_string(),
            p.energy.to_string(),
            p.best_energy.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// Spins with cached local fields and energy.
struct Chain<'m> {
    model: &'m IsingModel,
    spins: Vec<i8>,
    fields: Vec<f64>,
    energy: f64,
    order: Vec<usize>,
    proposals: Vec<i8>,
}

impl<'m> Chain<'m> {
    fn new(model: &'m IsingModel, spins: Vec<i8>) -> Self {
        let fields = model.local_fields(&spins);
        let energy = model.energy_unchecked(&spins);
        Self {
            model,
            spins,
            fields,
            energy,
            order: (0..model.n()).collect(),
            proposals: Vec::new(),
        }
    }

    fn refresh(&mut self) {
        self.fields = self.model.local_fields(&self.spins);
        self.energy = self.model.energy_unchecked(&self.spins);
    }

    fn read_device<R: Rng>(&self, k: usize, c: f64, config: &RunConfig, rng: &mut R) -> i8 {
        let device = config.device_for(k);
        let current = device.current_for_field(self.fields[k], c);
        let state = match config.device_mode {
            DeviceMode::Ideal => sample_ideal(device, current, rng),
            DeviceMode::Faithful => telegraph_step(
                device,
                DeviceState::from_spin(self.spins[k]),
                current,
                config.iteration_interval,
                rng,
            ),
        };
        state.spin()
    }

    fn set(&mut self, k: usize, new: i8) {
        let old = self.spins[k];
        if new == old {
            return;
        }
        self.energy += 2.0 * f64::from(old) * self.fields[k];
        self.spins[k] = new;
        let delta = 2.0 * f64::from(new);
        let n = self.model.n();
        let column = self.model.couplings_flat();
        // J is symmetric, so row k doubles as column k.
        for (j, field) in self.fields.iter_mut().enumerate() {
            *field += column[k * n + j] * delta;
        }
    }

    fn sweep<R: Rng>(&mut self, c: f64, config: &RunConfig, rng: &mut R) {
        match config.update_order {
            UpdateOrder::SequentialRandom | UpdateOrder::SequentialFixed => {
                if config.update_order == UpdateOrder::SequentialRandom {
                    self.order.shuffle(rng);
                }
                for idx in 0..self.order.len() {
                    let k = self.order[idx];
                    let new = self.read_device(k, c, config, rng);
                    self.set(k, new);
                }
            }
            UpdateOrder::Synchronous => {
                let mut proposals = std::mem::take(&mut self.proposals);
                proposals.clear();
                proposals
                    .extend((0..self.spins.len()).map(|k| self.read_device(k, c, config, rng)));
                for (k, &new) in proposals.iter().enumerate() {
                    self.set(k, new);
                }
                self.proposals = proposals;
            }
        }
    }
}

/// One iteration over every spin at inverse temperature `c`.
pub fn sweep<R: Rng>(
    model: &IsingModel,
    s: &SpinConfiguration,
    c: f64,
    config: &RunConfig,
    rng: &mut R,
) -> Result<SpinConfiguration> {
    if s.len() != model.n() {
        return Err(contract(format!(
            "state has {} spins, model has {}",
            s.len(),
            model.n()
        )));
    }
    let mut chain = Chain::new(model, s.as_slice().to_vec());
    chain.sweep(c, config, rng);
    SpinConfiguration::new(chain.spins)
}

/// Runs `config.schedule.total_iterations` sweeps from `initial`.
pub fn run(model: &IsingModel, initial: &InitialState, config: &RunConfig) -> Result<RunResult> {
    config.validate(model.n())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let start = match initial {
        InitialState::Random => SpinConfiguration::random(model.n(), &mut rng),
        InitialState::Given(s) => {
            if s.len() != model.n() {
                return Err(contract(format!(
                    "initial state has {} spins, model has {}",
                    s.len(),
                    model.n()
                )));
            }
            s.clone()
        }
    };

    let mut chain = Chain::new(model, start.as_slice().to_vec());
    let mut best_spins = chain.spins.clone();
    let mut best_energy = chain.energy;
    let target = config.target_energy;
    let hit = |e: f64| target.is_some_and(|t| e <= t + 1e-9 * t.abs().max(1.0));
    let mut first_hit = if hit(chain.energy) { Some(0) } else { None };
    let total = config.schedule.total_iterations;
    let mut trajectory = Vec::new();

    for t in 0..total {
        let c = config.schedule.c_at(t);
        chain.sweep(c, config, &mut rng);
        if (t + 1) % FIELD_REFRESH_INTERVAL == 0 {
            chain.refresh();
        }
        if chain.energy < best_energy {
            best_energy = chain.energy;
            best_spins.copy_from_slice(&chain.spins);
        }
        if first_hit.is_none() && hit(chain.energy) {
            first_hit = Some(t + 1);
        }
        if config.record_trajectory && (t % config.trajectory_stride == 0 || t + 1 == total) {
            trajectory.push(TrajectoryPoint {
                iteration: t + 1,
                c,
                energy: chain.energy,
                best_energy,
            });
        }
    }

    let final_energy = chain.energy;
    Ok(RunResult {
        best_state: SpinConfiguration::new(best_spins)?,
        best_energy,
        final_state: SpinConfiguration::new(chain.spins)?,
        final_energy,
        solution_energy: best_energy.min(final_energy),
        iterations_run: total,
        first_hit_iteration: first_hit,
        trajectory,
        seed: config.seed,
        config: config.clone(),
    })
}

/// Seed of the `trial`-th independent run derived from a base seed.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = base.wrapping_add((trial as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs `trials` independently seeded runs in parallel, in trial order.
pub fn run_trials(
    model: &IsingModel,
    initial: &InitialState,
    trials: usize,
    config: &RunConfig,
) -> Result<Vec<RunResult>> {
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let cfg = config.clone().seeded(trial_seed(config.seed, trial));
            run(model, initial, &cfg)
        })
        .collect()
}

/// Fraction of independently seeded runs from random starts for which `success` holds.
pub fn success_probability<F>(
    model: &IsingModel,
    trials: usize,
    config: &RunConfig,
    success: F,
) -> Result<f64>
where
    F: Fn(&RunResult) -> bool + Sync,
{
    if trials == 0 {
        return Err(contract("need at least one trial"));
    }
    let results = run_trials(model, &InitialState::Random, trials, config)?;
    let hits = results.iter().filter(|r| success(r)).count();
    Ok(hits as f64 / trials as f64)
}

/// Success when the reported solution reaches `target` within a relative tolerance.
pub fn reaches_energy(target: f64) -> impl Fn(&RunResult) -> bool + Sync {
    move |r: &RunResult| r.solution_energy <= target + 1e-9 * target.abs().max(1.0)
}
