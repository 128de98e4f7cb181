//! Spin-budgeted decomposition of large TSP instances.
//!
//! Stages:
//! 1. recursive Ising graph partitioning into groups of at most `max_group` cities,
//! 2. an annealed TSP solve per group,
//! 3. stitching the group tours into one global tour,
//! 4. sliding-window CTSP refinement of the global tour.
//!
//! No annealed sub-problem ever holds more than `spin_budget` spins.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anneal::{run_trials, trial_seed, InitialState, RunConfig, Schedule};
use crate::error::{contract, Result};
use crate::ising::IsingModel;
use crate::tsp::{
    annealing_theta, build_ctsp, build_tsp, ConstrainedPair, CtspConstraint, EncodingVariant,
    PairDirection, Tour, TspEncoding, TspInstance, ANNEAL_W_SCALE, CTSP_ANNEAL_W_SCALE,
};

const PARTITION_SALT: u64 = 0x5041_5254;
const GROUP_SALT: u64 = 0x4752_4f55;
const WINDOW_SALT: u64 = 0x5749_4e44;
const ATTEMPT_SALT: u64 = 0x4154_5450;

/// Grid phase advance between window passes.
const PHASE_STEP: f64 = 0.618_033_988_749_895;

/// Window shrink factor applied while a sub-problem exceeds the budget.
const WINDOW_SHRINK: f64 = 0.85;

/// Largest `g` with `g * g <= budget`.
pub fn max_group_for(budget: usize) -> usize {
    let mut g = (budget as f64).sqrt() as usize;
    while (g + 1) * (g + 1) <= budget {
        g += 1;
    }
    while g * g > budget {
        g -= 1;
    }
    g
}

/// Largest sub-tour size `m` with `(m - 1)^2 <= budget`, the fixed-start window limit.
pub fn max_window_cities(budget: usize) -> usize {
    max_group_for(budget) + 1
}

/// Axis-aligned rectangle, boundaries inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn contains(&self, p: (f64, f64)) -> bool {
        p.0 >= self.x_min && p.0 <= self.x_max && p.1 >= self.y_min && p.1 <= self.y_max
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Same center, sides scaled by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let (cx, cy) = self.center();
        let hw = 0.5 * (self.x_max - self.x_min) * factor;
        let hh = 0.5 * (self.y_max - self.y_min) * factor;
        Self {
            x_min: cx - hw,
            y_min: cy - hh,
            x_max: cx + hw,
            y_max: cy + hh,
        }
    }

    /// Bounding box of all cities.
    pub fn bounding(instance: &TspInstance) -> Self {
        let mut r = Self {
            x_min: f64::INFINITY,
            y_min: f64::INFINITY,
            x_max: f64::NEG_INFINITY,
            y_max: f64::NEG_INFINITY,
        };
        for &(x, y) in instance.cities() {
            r.x_min = r.x_min.min(x);
            r.y_min = r.y_min.min(y);
            r.x_max = r.x_max.max(x);
            r.y_max = r.y_max.max(y);
        }
        r
    }
}

/// Disjoint city groups covering the instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub groups: Vec<Vec<usize>>,
    pub max_group: usize,
}

impl Partition {
    /// Checks disjointness, coverage of `0..n` and the size cap.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for g in &self.groups {
            if g.is_empty() || g.len() > self.max_group {
                return Err(contract(format!(
                    "group of {} cities, cap is {}",
                    g.len(),
                    self.max_group
                )));
            }
            for &c in g {
                if c >= n || std::mem::replace(&mut seen[c], true) {
                    return Err(contract(format!("city {c} repeated or out of range")));
                }
            }
        }
        if let Some(c) = seen.iter().position(|&s| !s) {
            return Err(contract(format!("city {c} is in no group")));
        }
        Ok(())
    }
}

/// Overlapping rectangles swept over the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub rectangles: Vec<Rect>,
    pub overlap: f64,
}

impl WindowPlan {
    /// Rectangles of a `k x k` division of the bounding box, `k` chosen so a window holds
    /// about `per_window` cities, stepped by `(1 - overlap)` of a side. Phases in `[0, 1)`
    /// shift the first window back by that fraction of a step along each axis.
    pub fn grid(
        instance: &TspInstance,
        per_window: usize,
        overlap: f64,
        phase: (f64, f64),
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&overlap) {
            return Err(contract(format!(
                "overlap must lie in [0, 1), got {overlap}"
            )));
        }
        if !(0.0..1.0).contains(&phase.0) || !(0.0..1.0).contains(&phase.1) {
            return Err(contract(format!(
                "phases must lie in [0, 1), got {phase:?}"
            )));
        }
        let bbox = Rect::bounding(instance);
        let k = ((instance.len() as f64 / per_window.max(1) as f64)
            .sqrt()
            .ceil() as usize)
            .max(1);
        let starts = |min: f64, max: f64, phase: f64| -> (Vec<f64>, f64) {
            let size = (max - min) / k as f64;
            let step = size * (1.0 - overlap);
            let pad = 1e-9 * (max - min).abs().max(1.0);
            let mut xs = vec![min - phase * step - pad];
            while step > 0.0 && xs[xs.len() - 1] + size + pad < max - pad {
                let next = xs[xs.len() - 1] + step;
                xs.push(next);
            }
            (xs, size + 2.0 * pad)
        };
        let (xs, width) = starts(bbox.x_min, bbox.x_max, phase.0);
        let (ys, height) = starts(bbox.y_min, bbox.y_max, phase.1);
        let mut rectangles = Vec::with_capacity(xs.len() * ys.len());
        for &y in &ys {
            for &x in &xs {
                rectangles.push(Rect {
                    x_min: x,
                    y_min: y,
                    x_max: x + width,
                    y_max: y + height,
                });
            }
        }
        Ok(Self {
            rectangles,
            overlap,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub spin_budget: usize,
    /// Balance penalty `A`; `None` uses `2 max W`.
    pub gp_penalty: Option<f64>,
    /// Similarity length scale; `None` uses the mean pairwise distance of each subset.
    pub sigma: Option<f64>,
    pub window_passes: usize,
    pub window_overlap: f64,
    /// Cities a window is sized to hold on average; `None` uses `2 * max_group`.
    pub window_cities: Option<usize>,
    pub partition_run: RunConfig,
    pub group_run: RunConfig,
    pub group_restarts: usize,
    pub window_run: RunConfig,
    pub window_restarts: usize,
    /// `w * max d` of the group TSP solves.
    pub w_scale: f64,
    /// `w * max d` of the window CTSP solves.
    pub window_w_scale: f64,
    /// CTSP weight of the windows; `None` uses `4 - w max d`.
    pub theta: Option<f64>,
    /// Annealed bisection attempts before the median split.
    pub max_retries: usize,
    /// Independent runs of the whole pipeline; the shortest tour is kept.
    pub attempts: usize,
    /// No further attempt starts once the previous attempt's sweep count would overrun this.
    pub iteration_budget: Option<u64>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            spin_budget: 81,
            gp_penalty: None,
            sigma: None,
            window_passes: 5,
            window_overlap: 0.75,
            window_cities: None,
            partition_run: RunConfig::with_schedule(Schedule::linear(0.05, 2.0, 1000)),
            group_run: RunConfig::with_schedule(Schedule::ramp_hold(0.0, 0.7, 50, 10_000)),
            group_restarts: 3,
            window_run: RunConfig::with_schedule(Schedule::ramp_hold(0.0, 0.7, 50, 4_000)),
            window_restarts: 2,
            w_scale: ANNEAL_W_SCALE,
            window_w_scale: CTSP_ANNEAL_W_SCALE,
            theta: None,
            max_retries: 3,
            attempts: 3,
            iteration_budget: Some(5_000_000),
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.spin_budget < 16 {
            return Err(contract(format!(
                "spin budget must be at least 16, got {}",
                self.spin_budget
            )));
        }
        if self.group_restarts == 0 || self.window_restarts == 0 || self.attempts == 0 {
            return Err(contract("restart counts must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.window_overlap) {
            return Err(contract("window overlap must lie in [0, 1)"));
        }
        if !(self.w_scale > 0.0 && self.window_w_scale > 0.0) {
            return Err(contract("w scales must be positive"));
        }
        self.partition_run.validate(0)?;
        self.group_run.validate(0)?;
        self.window_run.validate(0)
    }

    pub fn max_group(&self) -> usize {
        max_group_for(self.spin_budget)
    }
}

/// Annealing work done by a stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Effort {
    /// Full sweeps summed over every annealing run.
    pub iterations: u64,
    /// Single-spin updates, `sum(sweeps * spins)`.
    pub spin_updates: u64,
    /// Largest model annealed.
    pub peak_spins: usize,
    pub runs: u64,
}

impl Effort {
    fn record(&mut self, spins: usize, iterations: usize, runs: usize) {
        self.iterations += (iterations * runs) as u64;
        self.spin_updates += (iterations * runs * spins) as u64;
        self.peak_spins = self.peak_spins.max(spins);
        self.runs += runs as u64;
    }

    fn absorb(&mut self, other: &Effort) {
        self.iterations += other.iterations;
        self.spin_updates += other.spin_updates;
        self.peak_spins = self.peak_spins.max(other.peak_spins);
        self.runs += other.runs;
    }
}

/// Result of annealing a TSP encoding with restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct TourSearch {
    /// Lowest-energy valid tour over all restarts, if any restart produced one.
    pub tour: Option<Tour>,
    pub energy: f64,
    pub effort: Effort,
}

/// Anneals `encoding` `restarts` times and keeps the lowest-energy valid tour
/// that also contains every `required` edge.
pub fn anneal_tour(
    encoding: &TspEncoding,
    initial: &InitialState,
    config: &RunConfig,
    restarts: usize,
    required: &[(usize, usize)],
) -> Result<TourSearch> {
    let results = run_trials(&encoding.model, initial, restarts, config)?;
    let mut effort = Effort::default();
    effort.record(
        encoding.model.n(),
        config.schedule.total_iterations,
        restarts,
    );
    let mut best: Option<(f64, Tour)> = None;
    for r in &results {
        let Some(tour) = encoding.decode(r.solution_state())?.tour() else {
            continue;
        };
        if !required.iter().all(|&(a, b)| tour.has_edge(a, b)) {
            continue;
        }
        if best.as_ref().map_or(true, |(e, _)| r.solution_energy < *e) {
            best = Some((r.solution_energy, tour));
        }
    }
    Ok(match best {
        Some((energy, tour)) => TourSearch {
            tour: Some(tour),
            energy,
            effort,
        },
        None => TourSearch {
            tour: None,
            energy: f64::INFINITY,
            effort,
        },
    })
}

/// `W_ij = exp(-d_ij / sigma)` over `subset`; `sigma` defaults to the mean pairwise distance.
pub fn similarity_weights(
    instance: &TspInstance,
    subset: &[usize],
    sigma: Option<f64>,
) -> Vec<Vec<f64>> {
    let m = subset.len();
    let sigma = sigma.unwrap_or_else(|| {
        let pairs = (m * m.saturating_sub(1) / 2).max(1);
        let total: f64 = (0..m)
            .flat_map(|a| ((a + 1)..m).map(move |b| (a, b)))
            .map(|(a, b)| instance.distance(subset[a], subset[b]))
            .sum();
        total / pairs as f64
    });
    let mut w = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in (a + 1)..m {
            let d = instance.distance(subset[a], subset[b]);
            let v = if sigma > 0.0 { (-d / sigma).exp() } else { 1.0 };
            w[a][b] = v;
            w[b][a] = v;
        }
    }
    w
}

/// Balanced bisection Hamiltonian `A (sum s)^2 + sum_{i<j} W_ij (1 - s_i s_j) / 2`.
pub fn build_gp_ising(weights: &[Vec<f64>], penalty: f64) -> Result<IsingModel> {
    let m = weights.len();
    if m < 2 {
        return Err(contract("graph partitioning needs at least 2 cities"));
    }
    if weights.iter().any(|r| r.len() != m) {
        return Err(contract(format!("similarity matrix must be {m}x{m}")));
    }
    let mut model = IsingModel::new(m);
    model.add_offset(penalty * m as f64);
    for i in 0..m {
        for j in (i + 1)..m {
            let w = weights[i][j];
            model.add_coupling(i, j, 0.5 * w - 2.0 * penalty);
            model.add_offset(0.5 * w);
        }
    }
    Ok(model)
}

/// Default balance penalty, `2 max W`.
pub fn default_gp_penalty(weights: &[Vec<f64>]) -> f64 {
    2.0 * weights.iter().flatten().copied().fold(0.0, f64::max)
}

fn median_split(instance: &TspInstance, subset: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let sub = instance.subset(subset);
    let bbox = Rect::bounding(&sub);
    let by_x = bbox.x_max - bbox.x_min >= bbox.y_max - bbox.y_min;
    let mut sorted = subset.to_vec();
    sorted.sort_by(|&a, &b| {
        let (pa, pb) = (instance.city(a), instance.city(b));
        let (ka, kb) = if by_x { (pa.0, pb.0) } else { (pa.1, pb.1) };
        ka.total_cmp(&kb).then(a.cmp(&b))
    });
    let right = sorted.split_off(sorted.len() / 2);
    (sorted, right)
}

fn gp_bisect(
    instance: &TspInstance,
    subset: &[usize],
    config: &PipelineConfig,
    attempt: &mut usize,
    effort: &mut Effort,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let weights = similarity_weights(instance, subset, config.sigma);
    let penalty = config
        .gp_penalty
        .unwrap_or_else(|| default_gp_penalty(&weights));
    let model = build_gp_ising(&weights, penalty)?;
    for _ in 0..config.max_retries.max(1) {
        let cfg = config
            .partition_run
            .clone()
            .seeded(trial_seed(config.seed ^ PARTITION_SALT, *attempt));
        *attempt += 1;
        let r = crate::anneal::run(&model, &InitialState::Random, &cfg)?;
        effort.record(model.n(), cfg.schedule.total_iterations, 1);
        let s = r.solution_state();
        let (mut up, mut down) = (Vec::new(), Vec::new());
        for (k, &city) in subset.iter().enumerate() {
            if s.get(k) > 0 {
                up.push(city);
            } else {
                down.push(city);
            }
        }
        if !up.is_empty() && !down.is_empty() {
            return Ok((up, down));
        }
        log::debug!("bisection of {} cities left one side empty", subset.len());
    }
    Ok(median_split(instance, subset))
}

/// Recursively bisects until every group holds at most `max_group` cities.
/// Subsets larger than the spin budget are median-split before the Ising bisection.
pub fn recursive_partition(
    instance: &TspInstance,
    config: &PipelineConfig,
) -> Result<(Partition, Effort)> {
    config.validate()?;
    let max_group = config.max_group();
    let mut effort = Effort::default();
    let mut attempt = 0;
    let mut groups = Vec::new();
    let mut stack = vec![(0..instance.len()).collect::<Vec<_>>()];
    while let Some(subset) = stack.pop() {
        if subset.is_empty() {
            continue;
        }
        if subset.len() <= max_group {
            groups.push(subset);
            continue;
        }
        let (a, b) = if subset.len() > config.spin_budget {
            median_split(instance, &subset)
        } else {
            gp_bisect(instance, &subset, config, &mut attempt, &mut effort)?
        };
        stack.push(b);
        stack.push(a);
    }
    let partition = Partition { groups, max_group };
    partition.validate(instance.len())?;
    Ok((partition, effort))
}

fn nearest_neighbour_order(instance: &TspInstance, members: &[usize]) -> Vec<usize> {
    let mut left = members.to_vec();
    let mut order = vec![left.remove(0)];
    while !left.is_empty() {
        let last = *order.last().expect("non-empty");
        let k = (0..left.len())
            .min_by(|&x, &y| {
                instance
                    .distance(last, left[x])
                    .total_cmp(&instance.distance(last, left[y]))
            })
            .expect("non-empty");
        order.push(left.remove(k));
    }
    order
}

fn sub_w(sub: &TspInstance, w_scale: f64) -> f64 {
    let max_d = sub.max_distance();
    if max_d > 0.0 {
        w_scale / max_d
    } else {
        0.5
    }
}

/// Closed tour (global city ids) over `members`, annealed with the full encoding.
/// Falls back to a nearest-neighbour order when no restart yields a valid tour.
pub fn solve_group(
    instance: &TspInstance,
    members: &[usize],
    config: &PipelineConfig,
    seed: u64,
) -> Result<(Vec<usize>, Effort, bool)> {
    let m = members.len();
    if m * m > config.spin_budget {
        return Err(contract(format!(
            "group of {m} cities needs {} spins, budget is {}",
            m * m,
            config.spin_budget
        )));
    }
    if m <= 3 {
        return Ok((members.to_vec(), Effort::default(), false));
    }
    let sub = instance.subset(members);
    if sub.max_distance() == 0.0 {
        return Ok((members.to_vec(), Effort::default(), false));
    }
    let enc = build_tsp(&sub, EncodingVariant::Full, sub_w(&sub, config.w_scale))?;
    let cfg = config.group_run.clone().seeded(seed);
    let search = anneal_tour(
        &enc,
        &InitialState::Random,
        &cfg,
        config.group_restarts,
        &[],
    )?;
    match search.tour {
        Some(t) => Ok((
            t.order.iter().map(|&k| members[k]).collect(),
            search.effort,
            false,
        )),
        None => Ok((
            nearest_neighbour_order(instance, members),
            search.effort,
            true,
        )),
    }
}

fn centroid(instance: &TspInstance, members: &[usize]) -> (f64, f64) {
    let (sx, sy) = members.iter().fold((0.0, 0.0), |(x, y), &c| {
        let p = instance.city(c);
        (x + p.0, y + p.1)
    });
    let k = members.len().max(1) as f64;
    (sx / k, sy / k)
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Concatenates group tours into one closed tour.
///
/// Candidate group orders are nearest-neighbour cycles over the group centroids, one per
/// start group, each shortened by 2-opt. For each order, [`stitch_in_order`] picks the
/// openings exactly; the shortest resulting tour wins.
pub fn stitch_groups(
    instance: &TspInstance,
    partition: &Partition,
    group_tours: &[Vec<usize>],
) -> Result<Tour> {
    if group_tours.len() != partition.groups.len() {
        return Err(contract(format!(
            "{} group tours for {} groups",
            group_tours.len(),
            partition.groups.len()
        )));
    }
    for (g, t) in partition.groups.iter().zip(group_tours) {
        let mut a = g.clone();
        let mut b = t.clone();
        a.sort_unstable();
        b.sort_unstable();
        if a != b {
            return Err(contract("group tour does not match its group"));
        }
    }
    let k = group_tours.len();
    if k == 0 {
        return Err(contract("no groups to stitch"));
    }
    if k == 1 {
        return Tour::new(instance, group_tours[0].clone());
    }
    let centroids: Vec<(f64, f64)> = partition
        .groups
        .iter()
        .map(|g| centroid(instance, g))
        .collect();
    let dist = |a: usize, b: usize| euclid(centroids[a], centroids[b]);
    let mut best: Option<Vec<usize>> = None;
    let mut best_len = f64::INFINITY;
    for start in 0..k {
        let mut cycle = vec![start];
        let mut used = vec![false; k];
        used[start] = true;
        while cycle.len() < k {
            let last = *cycle.last().expect("non-empty");
            let next = (0..k)
                .filter(|&g| !used[g])
                .min_by(|&a, &b| dist(last, a).total_cmp(&dist(last, b)))
                .expect("unvisited group");
            used[next] = true;
            cycle.push(next);
        }
        two_opt(&mut cycle, dist);
        let order = stitch_in_order(instance, &cycle, group_tours);
        let len = instance.tour_length(&order)?;
        if len < best_len {
            best_len = len;
            best = Some(order);
        }
    }
    Tour::new(instance, best.expect("at least one start"))
}

fn two_opt(cycle: &mut [usize], dist: impl Fn(usize, usize) -> f64) {
    let k = cycle.len();
    loop {
        let mut improved = false;
        for i in 0..k.saturating_sub(1) {
            for j in (i + 2)..k {
                let (a, b) = (cycle[i], cycle[i + 1]);
                let (c, d) = (cycle[j], cycle[(j + 1) % k]);
                if d == a {
                    continue;
                }
                if dist(a, c) + dist(b, d) < dist(a, b) + dist(c, d) - 1e-12 {
                    cycle[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
        if !improved {
            return;
        }
    }
}

/// A group tour cut at edge `cut` and walked from `entry` to `exit`.
#[derive(Debug, Clone, Copy)]
struct Opening {
    entry: usize,
    exit: usize,
    cut: usize,
    reversed: bool,
    len: f64,
}

/// Opens every group tour so that the concatenation in `cycle` order is as short as
/// possible. Each group contributes an open path; dynamic programming over the cycle
/// chooses the removed edge and direction of every group exactly.
pub fn stitch_in_order(
    instance: &TspInstance,
    cycle: &[usize],
    group_tours: &[Vec<usize>],
) -> Vec<usize> {
    let openings: Vec<Vec<Opening>> = cycle
        .iter()
        .map(|&g| {
            let t = &group_tours[g];
            let l = t.len();
            if l == 1 {
                return vec![Opening {
                    entry: t[0],
                    exit: t[0],
                    cut: 0,
                    reversed: false,
                    len: 0.0,
                }];
            }
            let full = instance.cyclic_length(t);
            let mut out = Vec::with_capacity(2 * l);
            for cut in 0..l {
                let (u, v) = (t[cut], t[(cut + 1) % l]);
                let removed = if l == 2 { 0.0 } else { instance.distance(u, v) };
                let len = if l == 2 { full / 2.0 } else { full - removed };
                out.push(Opening {
                    entry: v,
                    exit: u,
                    cut,
                    reversed: false,
                    len,
                });
                out.push(Opening {
                    entry: u,
                    exit: v,
                    cut,
                    reversed: true,
                    len,
                });
            }
            out
        })
        .collect();
    let k = cycle.len();
    let mut best: (f64, Vec<usize>) = (f64::INFINITY, Vec::new());
    for first in 0..openings[0].len() {
        // cost[o] = best length of a chain ending with opening o of the current group
        let mut cost: Vec<f64> = vec![f64::INFINITY; openings[0].len()];
        cost[first] = openings[0][first].len;
        let mut back: Vec<Vec<usize>> = Vec::with_capacity(k);
        for pos in 1..k {
            let prev = &openings[pos - 1];
            let cur = &openings[pos];
            let mut next_cost = vec![f64::INFINITY; cur.len()];
            let mut choice = vec![0; cur.len()];
            for (o, op) in cur.iter().enumerate() {
                for (p, pp) in prev.iter().enumerate() {
                    let c = cost[p] + instance.distance(pp.exit, op.entry) + op.len;
                    if c < next_cost[o] {
                        next_cost[o] = c;
                        choice[o] = p;
                    }
                }
            }
            back.push(choice);
            cost = next_cost;
        }
        let entry = openings[0][first].entry;
        for (o, op) in openings[k - 1].iter().enumerate() {
            let total = cost[o] + instance.distance(op.exit, entry);
            if total < best.0 {
                let mut picks = vec![0; k];
                picks[k - 1] = o;
                for pos in (1..k).rev() {
                    picks[pos - 1] = back[pos - 1][picks[pos]];
                }
                best = (total, picks);
            }
        }
    }
    let mut order = Vec::with_capacity(instance.len());
    for (pos, &g) in cycle.iter().enumerate() {
        let t = &group_tours[g];
        let l = t.len();
        let Opening { cut, reversed, .. } = openings[pos][best.1[pos]];
        let mut path: Vec<usize> = (0..l).map(|i| t[(cut + 1 + i) % l]).collect();
        if reversed {
            path.reverse();
        }
        order.extend(path);
    }
    order
}

/// Maximal runs of consecutive tour positions whose cities lie in `window`, as city lists.
fn window_segments(instance: &TspInstance, order: &[usize], window: &Rect) -> Vec<Vec<usize>> {
    let n = order.len();
    let inside: Vec<bool> = order
        .iter()
        .map(|&c| window.contains(instance.city(c)))
        .collect();
    let Some(start) = inside.iter().position(|&b| !b) else {
        return if n > 0 {
            vec![order.to_vec()]
        } else {
            Vec::new()
        };
    };
    let mut segments = Vec::new();
    let mut current = Vec::new();
    for k in 1..=n {
        let p = (start + k) % n;
        if inside[p] {
            current.push(order[p]);
        } else if !current.is_empty() {
            segments.push(std::mem::take(&mut current));
        }
    }
    segments
}

fn path_length(instance: &TspInstance, path: &[usize]) -> f64 {
    path.windows(2).map(|w| instance.distance(w[0], w[1])).sum()
}

/// Indices of the two longest segments by path length, then city count, then lowest city id.
fn two_longest(instance: &TspInstance, segments: &[Vec<usize>]) -> (usize, usize) {
    let key = |s: &Vec<usize>| {
        (
            path_length(instance, s),
            s.len(),
            std::cmp::Reverse(*s.iter().min().expect("non-empty")),
        )
    };
    let mut idx: Vec<usize> = (0..segments.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ka, kb) = (key(&segments[a]), key(&segments[b]));
        kb.0.total_cmp(&ka.0)
            .then(kb.1.cmp(&ka.1))
            .then(kb.2.cmp(&ka.2))
    });
    (idx[0], idx[1])
}

/// What a single window refinement did.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowOutcome {
    pub sub_cities: usize,
    pub improved: bool,
    pub effort: Effort,
}

/// Re-optimizes the two longest tour segments inside `window` as one CTSP.
///
/// The segments `p1..q1` and `p2..q2` are closed into a sub-tour by the edges `q1-p2` and
/// `q2-p1`, which stand for the rest of the tour and are pinned by CTSP constraints. The
/// solved sub-tour is spliced back with those edges replaced by the original outside paths.
/// The result is never longer than `tour`.
pub fn window_refine(
    instance: &TspInstance,
    tour: &Tour,
    window: &Rect,
    config: &PipelineConfig,
    seed: u64,
) -> Result<(Tour, WindowOutcome)> {
    let unchanged = |sub_cities| WindowOutcome {
        sub_cities,
        improved: false,
        effort: Effort::default(),
    };
    let limit = max_window_cities(config.spin_budget);
    let mut rect = *window;
    let (seg1, seg2) = loop {
        let segments = window_segments(instance, &tour.order, &rect);
        if segments.len() < 2 {
            return Ok((tour.clone(), unchanged(0)));
        }
        let (a, b) = two_longest(instance, &segments);
        if segments[a].len() + segments[b].len() <= limit {
            break (segments[a].clone(), segments[b].clone());
        }
        rect = rect.scaled(WINDOW_SHRINK);
    };
    let m = seg1.len() + seg2.len();
    if m <= 3 {
        return Ok((tour.clone(), unchanged(m)));
    }

    // Rotate so seg1 starts the tour: order = seg1 X seg2 Y.
    let n = tour.order.len();
    let start = tour
        .order
        .iter()
        .position(|&c| c == seg1[0])
        .expect("segment city in tour");
    let rotated: Vec<usize> = (0..n).map(|k| tour.order[(start + k) % n]).collect();
    let s2 = rotated
        .iter()
        .position(|&c| c == seg2[0])
        .expect("segment city in tour");
    let x_path = &rotated[seg1.len()..s2];
    let y_path = &rotated[s2 + seg2.len()..];

    let cities: Vec<usize> = seg1.iter().chain(&seg2).copied().collect();
    let (p1, q1, p2, q2) = (0, seg1.len() - 1, seg1.len(), m - 1);
    let mut matrix: Vec<Vec<f64>> = (0..m)
        .map(|a| {
            (0..m)
                .map(|b| instance.distance(cities[a], cities[b]))
                .collect()
        })
        .collect();
    for (a, b) in [(q1, p2), (q2, p1)] {
        matrix[a][b] = 0.0;
        matrix[b][a] = 0.0;
    }
    let coords = cities.iter().map(|&c| instance.city(c)).collect();
    let sub = TspInstance::from_matrix(format!("{}-window", instance.name), coords, matrix)?;
    if sub.max_distance() == 0.0 {
        return Ok((tour.clone(), unchanged(m)));
    }
    let w = sub_w(&sub, config.window_w_scale);
    let enc = build_tsp(&sub, EncodingVariant::FixedStart, w)?;
    let theta = config
        .theta
        .unwrap_or_else(|| annealing_theta(w, sub.max_distance()));
    let pair = |a, b| ConstrainedPair {
        a,
        b,
        direction: PairDirection::Either,
    };
    let ctsp = build_ctsp(
        &enc,
        &CtspConstraint::new(vec![pair(q1, p2), pair(q2, p1)], theta)?,
    )?;
    if ctsp.model.n() > config.spin_budget {
        return Err(contract(format!(
            "window sub-problem of {} spins exceeds the budget",
            ctsp.model.n()
        )));
    }
    let identity: Vec<usize> = (0..m).collect();
    let initial = InitialState::Given(ctsp.encode_tour(&identity)?);
    let cfg = config.window_run.clone().seeded(seed);
    let search = anneal_tour(
        &ctsp,
        &initial,
        &cfg,
        config.window_restarts,
        &[(q1, p2), (q2, p1)],
    )?;
    let outcome = |improved| WindowOutcome {
        sub_cities: m,
        improved,
        effort: search.effort,
    };
    let Some(sub_tour) = search.tour else {
        return Ok((tour.clone(), outcome(false)));
    };

    let cyc = &sub_tour.order;
    let mut order = Vec::with_capacity(n);
    for k in 0..m {
        let (u, v) = (cyc[k], cyc[(k + 1) % m]);
        order.push(cities[u]);
        if (u, v) == (q1, p2) {
            order.extend_from_slice(x_path);
        } else if (u, v) == (p2, q1) {
            order.extend(x_path.iter().rev());
        } else if (u, v) == (q2, p1) {
            order.extend_from_slice(y_path);
        } else if (u, v) == (p1, q2) {
            order.extend(y_path.iter().rev());
        }
    }
    let candidate = Tour::new(instance, order)?;
    if candidate.length <= tour.length {
        let improved = candidate.length < tour.length;
        Ok((candidate, outcome(improved)))
    } else {
        Ok((tour.clone(), outcome(false)))
    }
}

/// Per-stage record of a pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub instance: String,
    pub cities: usize,
    pub spin_budget: usize,
    pub seed: u64,
    /// True when the instance fit in one group and was solved directly.
    pub direct: bool,
    pub groups: Vec<Vec<usize>>,
    /// Annealed visiting order of each group.
    pub group_tours: Vec<Vec<usize>>,
    pub group_lengths: Vec<f64>,
    /// Groups whose annealing produced no valid tour and used the nearest-neighbour order.
    pub group_fallbacks: usize,
    pub stitched_tour: Vec<usize>,
    pub stitched_length: f64,
    /// Tour after each sliding-window pass.
    pub pass_tours: Vec<Vec<usize>>,
    pub pass_lengths: Vec<f64>,
    pub windows_tried: usize,
    pub windows_improved: usize,
    pub final_length: f64,
    /// Final length of every attempt; the stages above describe the shortest.
    pub attempt_lengths: Vec<f64>,
    /// Efforts are summed over all attempts.
    pub partition_effort: Effort,
    pub group_effort: Effort,
    pub window_effort: Effort,
    pub total: Effort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub tour: Tour,
    pub report: StageReport,
}

/// Partition, group solves, stitching and sliding-window refinement, repeated
/// `config.attempts` times with fresh seeds while the iteration budget allows.
pub fn pipeline_run(instance: &TspInstance, config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let mut best: Option<PipelineOutcome> = None;
    let mut lengths = Vec::new();
    let (mut partition, mut group, mut window) =
        (Effort::default(), Effort::default(), Effort::default());
    for attempt in 0..config.attempts {
        let seed = if attempt == 0 {
            config.seed
        } else {
            trial_seed(config.seed ^ ATTEMPT_SALT, attempt)
        };
        let out = pipeline_attempt(
            instance,
            &PipelineConfig {
                seed,
                ..config.clone()
            },
        )?;
        let r = &out.report;
        partition.absorb(&r.partition_effort);
        group.absorb(&r.group_effort);
        window.absorb(&r.window_effort);
        lengths.push(r.final_length);
        let spent = partition.iterations + group.iterations + window.iterations;
        let last = r.total.iterations;
        let direct = r.direct;
        if best
            .as_ref()
            .map_or(true, |b| out.report.final_length < b.report.final_length)
        {
            best = Some(out);
        }
        if direct || config.iteration_budget.is_some_and(|b| spent + last > b) {
            break;
        }
    }
    let mut out = best.expect("at least one attempt");
    let mut total = Effort::default();
    for e in [&partition, &group, &window] {
        total.absorb(e);
    }
    out.report.attempt_lengths = lengths;
    out.report.partition_effort = partition;
    out.report.group_effort = group;
    out.report.window_effort = window;
    out.report.total = total;
    out.report.seed = config.seed;
    Ok(out)
}

fn pipeline_attempt(instance: &TspInstance, config: &PipelineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let n = instance.len();
    if n < 3 {
        return Err(crate::Error::UnsupportedInstance(format!(
            "pipeline needs at least 3 cities, got {n}"
        )));
    }
    let max_group = config.max_group();

    let (partition, partition_effort) = recursive_partition(instance, config)?;
    let direct = partition.groups.len() == 1;

    let solved: Vec<(Vec<usize>, Effort, bool)> = partition
        .groups
        .par_iter()
        .enumerate()
        .map(|(g, members)| {
            solve_group(
                instance,
                members,
                config,
                trial_seed(config.seed ^ GROUP_SALT, g),
            )
        })
        .collect::<Result<_>>()?;
    let mut group_effort = Effort::default();
    let mut group_tours = Vec::with_capacity(solved.len());
    let mut group_lengths = Vec::with_capacity(solved.len());
    let mut group_fallbacks = 0;
    for (order, effort, fallback) in solved {
        group_effort.absorb(&effort);
        group_fallbacks += usize::from(fallback);
        group_lengths.push(
            instance
                .subset(&order)
                .tour_length(&(0..order.len()).collect::<Vec<_>>())?,
        );
        group_tours.push(order);
    }

    let mut tour = stitch_groups(instance, &partition, &group_tours)?;
    let stitched_length = tour.length;
    log::info!(
        "{}: {} groups, stitched length {stitched_length:.2}",
        instance.name,
        partition.groups.len()
    );

    let stitched_tour = tour.order.clone();
    let mut pass_tours = Vec::new();
    let mut pass_lengths = Vec::new();
    let mut window_effort = Effort::default();
    let (mut windows_tried, mut windows_improved) = (0, 0);
    if !direct {
        let per_window = config.window_cities.unwrap_or(2 * max_group);
        let mut counter = 0;
        for pass in 0..config.window_passes {
            let phase = (
                (pass as f64 * PHASE_STEP).fract(),
                (pass as f64 * PHASE_STEP * PHASE_STEP).fract(),
            );
            let plan = WindowPlan::grid(instance, per_window, config.window_overlap, phase)?;
            for rect in &plan.rectangles {
                let seed = trial_seed(config.seed ^ WINDOW_SALT, counter);
                counter += 1;
                let (next, outcome) = window_refine(instance, &tour, rect, config, seed)?;
                debug_assert!(next.length <= tour.length);
                tour = next;
                window_effort.absorb(&outcome.effort);
                windows_tried += usize::from(outcome.sub_cities > 0);
                windows_improved += usize::from(outcome.improved);
            }
            log::info!("{}: pass {pass} length {:.2}", instance.name, tour.length);
            pass_lengths.push(tour.length);
            pass_tours.push(tour.order.clone());
        }
    }

    let mut total = Effort::default();
    total.absorb(&partition_effort);
    total.absorb(&group_effort);
    total.absorb(&window_effort);
    let report = StageReport {
        instance: instance.name.clone(),
        cities: n,
        spin_budget: config.spin_budget,
        seed: config.seed,
        direct,
        groups: partition.groups,
        group_tours,
        group_lengths,
        group_fallbacks,
        stitched_tour,
        stitched_length,
        pass_tours,
        pass_lengths,
        windows_tried,
        windows_improved,
        final_length: tour.length,
        attempt_lengths: Vec::new(),
        partition_effort,
        group_effort,
        window_effort,
        total,
    };
    Ok(PipelineOutcome { tour, report })
}

/// Largest spin count any pipeline sub-problem may use for `n` cities under `budget`.
pub fn planned_peak_spins(n: usize, budget: usize) -> usize {
    let g = max_group_for(budget);
    if n <= g {
        return n * n;
    }
    let gp = n.min(budget);
    let groups = g * g;
    let window = (max_window_cities(budget).min(n) - 1).pow(2);
    gp.max(groups).max(window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ising::SpinConfiguration;
    use crate::tsp::brute_force_optimum;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn max_group_law() {
        assert_eq!(max_group_for(81), 9);
        assert_eq!(max_group_for(80), 8);
        assert_eq!(max_group_for(16), 4);
        assert_eq!(max_window_cities(81), 10);
        assert_eq!(planned_peak_spins(70, 81), 81);
        assert_eq!(planned_peak_spins(9, 81), 81);
        assert_eq!(planned_peak_spins(5, 81), 25);
    }

    #[test]
    fn gp_energy_matches_direct_formula() {
        let inst = TspInstance::random_uniform(7, &mut ChaCha8Rng::seed_from_u64(3));
        let subset: Vec<usize> = (0..7).collect();
        let w = similarity_weights(&inst, &subset, None);
        let a = default_gp_penalty(&w);
        let model = build_gp_ising(&w, a).unwrap();
        assert_eq!(model.n(), 7);
        for idx in 0..1 << 7 {
            let s = SpinConfiguration::from_index(idx, 7);
            let sum: f64 = s.as_slice().iter().map(|&v| v as f64).sum();
            let mut direct = a * sum * sum;
            for i in 0..7 {
                for j in (i + 1)..7 {
                    direct += w[i][j] * (1.0 - (s.get(i) * s.get(j)) as f64) / 2.0;
                }
            }
            assert!((model.energy(&s).unwrap() - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn gp_splits_two_far_clusters() {
        let mut pts = vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
        pts.extend([(100.0, 100.0), (101.0, 100.0), (100.0, 101.0)]);
        let inst = TspInstance::euclidean("clusters", pts);
        let subset: Vec<usize> = (0..6).collect();
        let w = similarity_weights(&inst, &subset, None);
        let model = build_gp_ising(&w, default_gp_penalty(&w)).unwrap();
        // oracle: cheapest balanced bipartition by cut weight
        let cut = |idx: usize| -> f64 {
            let side = |i: usize| (idx >> i) & 1;
            let mut c = 0.0;
            for i in 0..6 {
                for j in (i + 1)..6 {
                    if side(i) != side(j) {
                        c += w[i][j];
                    }
                }
            }
            c
        };
        let best_balanced = (0..64usize)
            .filter(|i| i.count_ones() == 3)
            .min_by(|&a, &b| cut(a).total_cmp(&cut(b)))
            .unwrap();
        let ground = (0..64usize)
            .min_by(|&a, &b| {
                let ea = model.energy(&SpinConfiguration::from_index(a, 6)).unwrap();
                let eb = model.energy(&SpinConfiguration::from_index(b, 6)).unwrap();
                ea.total_cmp(&eb)
            })
            .unwrap();
        let normalize = |i: usize| if i & 1 == 1 { i } else { !i & 63 };
        assert_eq!(normalize(ground), normalize(best_balanced));
        assert_eq!(normalize(ground), 0b000111);
    }

    #[test]
    fn unpenalized_equal_weights_favour_uniform_states() {
        let w = vec![vec![1.0; 4]; 4];
        let w: Vec<Vec<f64>> = w
            .into_iter()
            .enumerate()
            .map(|(i, mut r)| {
                r[i] = 0.0;
                r
            })
            .collect();
        let model = build_gp_ising(&w, 0.0).unwrap();
        let energies: Vec<f64> = (0..16)
            .map(|i| model.energy(&SpinConfiguration::from_index(i, 4)).unwrap())
            .collect();
        let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(energies[0], min);
        assert_eq!(energies[15], min);
    }

    #[test]
    fn small_instance_is_one_group() {
        let inst = TspInstance::random_uniform(9, &mut ChaCha8Rng::seed_from_u64(4));
        let (p, effort) = recursive_partition(&inst, &PipelineConfig::default()).unwrap();
        assert_eq!(p.groups.len(), 1);
        assert_eq!(effort.iterations, 0);
    }

    #[test]
    fn stitch_single_group_keeps_tour() {
        let inst = TspInstance::random_uniform(5, &mut ChaCha8Rng::seed_from_u64(5));
        let p = Partition {
            groups: vec![vec![0, 1, 2, 3, 4]],
            max_group: 9,
        };
        let t = stitch_groups(&inst, &p, &[vec![3, 1, 0, 4, 2]]).unwrap();
        assert_eq!(t.order, vec![3, 1, 0, 4, 2]);
    }

    #[test]
    fn stitch_two_pairs_matches_optimum() {
        let inst = TspInstance::euclidean(
            "pairs",
            vec![(0.0, 0.0), (0.0, 1.0), (5.0, 0.2), (5.0, 1.1)],
        );
        let p = Partition {
            groups: vec![vec![0, 1], vec![2, 3]],
            max_group: 9,
        };
        let t = stitch_groups(&inst, &p, &[vec![0, 1], vec![3, 2]]).unwrap();
        let opt = brute_force_optimum(&inst, &[]).unwrap();
        assert!((t.length - opt.length).abs() < 1e-9);
    }

    #[test]
    fn window_segments_are_maximal_runs() {
        let inst = TspInstance::euclidean(
            "line",
            (0..8)
                .map(|i| (i as f64, if i % 2 == 0 { 0.0 } else { 10.0 }))
                .collect(),
        );
        let window = Rect {
            x_min: -1.0,
            y_min: -1.0,
            x_max: 20.0,
            y_max: 1.0,
        };
        let segs = window_segments(&inst, &[0, 2, 1, 3, 4, 6, 5, 7], &window);
        assert_eq!(segs, vec![vec![4, 6], vec![0, 2]]);
    }

    #[test]
    fn grid_plan_covers_bounding_box() {
        let inst = TspInstance::random_uniform(70, &mut ChaCha8Rng::seed_from_u64(6));
        let plan = WindowPlan::grid(&inst, 9, 0.5, (0.0, 0.0)).unwrap();
        assert_eq!(plan.rectangles.len(), 25);
        for &c in inst.cities() {
            assert!(plan.rectangles.iter().any(|r| r.contains(c)));
        }
        for phase in [(0.3, 0.7), (0.9, 0.1)] {
            let plan = WindowPlan::grid(&inst, 9, 0.5, phase).unwrap();
            for &c in inst.cities() {
                assert!(plan.rectangles.iter().any(|r| r.contains(c)));
            }
        }
    }
}
