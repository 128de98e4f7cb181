//! TSP and constrained-TSP (CTSP) Hamiltonians over one-hot spin matrices.
//!
//! Spin `s[i][j] = +1` means city `i` is visited at position `j`. The TSP energy is
//!
//! ```text
//! H = sum_i (sum_j s_ij + (N-2))^2 + sum_j (sum_i s_ij + (N-2))^2
//!   + w sum_j sum_{i,i'} d(i,i') x_{i,j} x_{i',j+1},      x = (s + 1) / 2
//! ```
//!
//! with positions taken modulo `N` so tours are closed. Both squares vanish
//! exactly when the matrix is a permutation. A CTSP pair `(A, B)` subtracts
//! `theta * sum_j (s_{A,j} s_{B,j+1} + s_{B,j} s_{A,j+1})`, which only touches the
//! couplings between `A` and `B` at adjacent positions.
//!
//! The fixed-start variant pins city 0 to position 0 and keeps `(N-1)^2` free
//! spins; interactions with pinned spins fold into fields and the offset.

use std::collections::HashSet;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::ising::{IsingModel, SpinConfiguration};

/// Cities with a symmetric distance matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TspInstance {
    pub name: String,
    cities: Vec<(f64, f64)>,
    /// Row-major `n x n`.
    distances: Vec<f64>,
}

impl TspInstance {
    /// Plain Euclidean distances.
    pub fn euclidean(name: impl Into<String>, cities: Vec<(f64, f64)>) -> Self {
        Self::with_metric(name, cities, |a, b| {
            ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
        })
    }

    /// Euclidean distances rounded to the nearest integer (TSPLIB `EUC_2D`).
    pub fn euclidean_rounded(name: impl Into<String>, cities: Vec<(f64, f64)>) -> Self {
        Self::with_metric(name, cities, |a, b| {
            (((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt() + 0.5).floor()
        })
    }

    fn with_metric<F: Fn((f64, f64), (f64, f64)) -> f64>(
        name: impl Into<String>,
        cities: Vec<(f64, f64)>,
        metric: F,
    ) -> Self {
        let n = cities.len();
        let mut distances = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = metric(cities[i], cities[j]);
                distances[i * n + j] = d;
                distances[j * n + i] = d;
            }
        }
        Self {
            name: name.into(),
            cities,
            distances,
        }
    }

    /// Explicit distances; coordinates are kept for window geometry.
    pub fn from_matrix(
        name: impl Into<String>,
        cities: Vec<(f64, f64)>,
        matrix: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let n = cities.len();
        if matrix.len() != n || matrix.iter().any(|r| r.len() != n) {
            return Err(contract(format!("distance matrix must be {n}x{n}")));
        }
        for i in 0..n {
            if matrix[i][i] != 0.0 {
                return Err(contract(format!("d[{i}][{i}] must be zero")));
            }
            for j in 0..n {
                if matrix[i][j] != matrix[j][i] || !(matrix[i][j] >= 0.0) {
                    return Err(contract(format!(
                        "d must be symmetric and non-negative, bad entry ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            cities,
            distances: matrix.into_iter().flatten().collect(),
        })
    }

    /// `n` cities uniform in the unit square.
    pub fn random_uniform<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let cities = (0..n)
            .map(|_| (rng.gen::<f64>(), rng.gen::<f64>()))
            .collect();
        Self::euclidean(format!("uniform{n}"), cities)
    }

    pub fn len(&self) -> usize {
        self.cities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cities.is_empty()
    }

    pub fn cities(&self) -> &[(f64, f64)] {
        &self.cities
    }

    pub fn city(&self, i: usize) -> (f64, f64) {
        self.cities[i]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.distances[i * self.cities.len() + j]
    }

    pub fn max_distance(&self) -> f64 {
        self.distances.iter().copied().fold(0.0, f64::max)
    }

    /// Sub-instance over `members` (in that order), keeping the parent's distances.
    pub fn subset(&self, members: &[usize]) -> Self {
        let m = members.len();
        let mut distances = vec![0.0; m * m];
        for (a, &i) in members.iter().enumerate() {
            for (b, &j) in members.iter().enumerate() {
                distances[a * m + b] = self.distance(i, j);
            }
        }
        Self {
            name: format!("{}-sub{m}", self.name),
            cities: members.iter().map(|&i| self.cities[i]).collect(),
            distances,
        }
    }

    /// Cyclic length of `order`; errors unless `order` is a permutation of all cities.
    pub fn tour_length(&self, order: &[usize]) -> Result<f64> {
        check_permutation(order, self.len())?;
        Ok(self.cyclic_length(order))
    }

    pub(crate) fn cyclic_length(&self, order: &[usize]) -> f64 {
        let n = order.len();
        (0..n)
            .map(|k| self.distance(order[k], order[(k + 1) % n]))
            .sum()
    }
}

pub(crate) fn check_permutation(order: &[usize], n: usize) -> Result<()> {
    if order.len() != n {
        return Err(contract(format!(
            "tour visits {} cities, expected {n}",
            order.len()
        )));
    }
    let mut seen = vec![false; n];
    for &c in order {
        if c >= n || std::mem::replace(&mut seen[c], true) {
            return Err(contract(format!("tour is not a permutation (city {c})")));
        }
    }
    Ok(())
}

/// A closed tour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    pub order: Vec<usize>,
    pub length: f64,
}

impl Tour {
    pub fn new(instance: &TspInstance, order: Vec<usize>) -> Result<Self> {
        let length = instance.tour_length(&order)?;
        Ok(Self { order, length })
    }

    /// Whether `a` and `b` are consecutive somewhere on the cycle.
    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        let n = self.order.len();
        (0..n).any(|k| {
            let (u, v) = (self.order[k], self.order[(k + 1) % n]);
            (u == a && v == b) || (u == b && v == a)
        })
    }

    /// Whether `b` directly follows `a` in this orientation.
    pub fn has_directed_edge(&self, a: usize, b: usize) -> bool {
        let n = self.order.len();
        (0..n).any(|k| self.order[k] == a && self.order[(k + 1) % n] == b)
    }

    /// Same cycle rotated to start at `city`.
    pub fn rotated_to(&self, city: usize) -> Self {
        let pos = self.order.iter().position(|&c| c == city).unwrap_or(0);
        let mut order = self.order.clone();
        order.rotate_left(pos);
        Self {
            order,
            length: self.length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodingVariant {
    /// `N^2` spins.
    Full,
    /// City 0 pinned at position 0, `(N-1)^2` spins.
    FixedStart,
}

impl EncodingVariant {
    pub fn spin_count(self, cities: usize) -> usize {
        match self {
            EncodingVariant::Full => cities * cities,
            EncodingVariant::FixedStart => cities.saturating_sub(1).pow(2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairDirection {
    /// Either `A, B` or `B, A` consecutively.
    Either,
    /// `B` immediately after `A`.
    AThenB,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConstrainedPair {
    pub a: usize,
    pub b: usize,
    pub direction: PairDirection,
}

/// Required adjacencies and their bonus strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtspConstraint {
    pub pairs: Vec<ConstrainedPair>,
    pub theta: f64,
}

impl CtspConstraint {
    pub fn new(pairs: Vec<ConstrainedPair>, theta: f64) -> Result<Self> {
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(contract(format!(
                "theta must be finite and non-negative, got {theta}"
            )));
        }
        let mut seen = HashSet::new();
        for p in &pairs {
            if p.a == p.b {
                return Err(contract(format!("constrained pair repeats city {}", p.a)));
            }
            if !seen.insert((p.a.min(p.b), p.a.max(p.b))) {
                return Err(contract(format!(
                    "duplicate constrained pair ({}, {})",
                    p.a, p.b
                )));
            }
        }
        Ok(Self { pairs, theta })
    }

    /// Undirected constraints with the default theta for `encoding`.
    pub fn undirected(encoding: &TspEncoding, pairs: &[(usize, usize)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(a, b)| ConstrainedPair {
                    a,
                    b,
                    direction: PairDirection::Either,
                })
                .collect(),
            default_theta(encoding.w, encoding.instance.max_distance()),
        )
    }
}

/// `w = 1 / (2 max d)`: one edge contributes at most 0.5 while breaking a
/// one-hot constraint costs at least 4.
pub fn default_w(instance: &TspInstance) -> f64 {
    let max_d = instance.max_distance();
    if max_d > 0.0 {
        1.0 / (2.0 * max_d)
    } else {
        0.5
    }
}

/// Exclusive upper bound on `w * max d`. Dropping a city saves at most
/// `2 w max d` of distance and costs 8 in penalty.
pub const MAX_W_SCALE: f64 = 4.0;

/// `w * max d` used by [`annealing_w`].
pub const ANNEAL_W_SCALE: f64 = 3.75;

/// Distance weight for annealed solves, just under [`MAX_W_SCALE`].
pub fn annealing_w(instance: &TspInstance) -> f64 {
    let max_d = instance.max_distance();
    if max_d > 0.0 {
        ANNEAL_W_SCALE / max_d
    } else {
        0.5
    }
}

/// `w * max d` for annealed CTSP solves, see [`annealing_theta`].
pub const CTSP_ANNEAL_W_SCALE: f64 = 3.0;

/// `theta = 4 - w max d`, for weights above the range where [`default_theta`] keeps the
/// ground state a valid tour. Pushing both constrained rows to all -1 gains `4 theta`
/// and costs 16 in penalty.
pub fn annealing_theta(w: f64, max_distance: f64) -> f64 {
    (MAX_W_SCALE - w * max_distance).max(0.0)
}

/// The smaller of [`default_theta`] and [`annealing_theta`].
pub fn ctsp_theta(w: f64, max_distance: f64) -> f64 {
    default_theta(w, max_distance).min(annealing_theta(w, max_distance))
}

/// `theta = 2 w max d + 1`.
pub fn default_theta(w: f64, max_distance: f64) -> f64 {
    2.0 * w * max_distance + 1.0
}

/// A spin variable that is either free or pinned to a constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinVar {
    Free(usize),
    Pinned(i8),
}

/// Accumulates `energy += coef * a * b` style terms into an Ising model.
struct Expander<'m> {
    model: &'m mut IsingModel,
}

impl Expander<'_> {
    fn constant(&mut self, coef: f64) {
        self.model.add_offset(coef);
    }

    fn linear(&mut self, a: SpinVar, coef: f64) {
        match a {
            SpinVar::Free(i) => self.model.add_field(i, -coef),
            SpinVar::Pinned(v) => self.model.add_offset(coef * f64::from(v)),
        }
    }

    fn product(&mut self, a: SpinVar, b: SpinVar, coef: f64) {
        match (a, b) {
            (SpinVar::Free(i), SpinVar::Free(j)) if i == j => self.model.add_offset(coef),
            (SpinVar::Free(i), SpinVar::Free(j)) => self.model.add_coupling(i, j, -coef),
            (SpinVar::Free(i), SpinVar::Pinned(v)) | (SpinVar::Pinned(v), SpinVar::Free(i)) => {
                self.model.add_field(i, -coef * f64::from(v))
            }
            (SpinVar::Pinned(u), SpinVar::Pinned(v)) => {
                self.model.add_offset(coef * f64::from(u) * f64::from(v))
            }
        }
    }

    /// `energy += (sum vars + k)^2`
    fn square(&mut self, vars: &[SpinVar], k: f64) {
        for (x, &a) in vars.iter().enumerate() {
            self.constant(1.0);
            for &b in &vars[x + 1..] {
                self.product(a, b, 2.0);
            }
            self.linear(a, 2.0 * k);
        }
        self.constant(k * k);
    }

    /// `energy += coef * (a + 1)/2 * (b + 1)/2`
    fn occupied_pair(&mut self, a: SpinVar, b: SpinVar, coef: f64) {
        let q = coef / 4.0;
        self.product(a, b, q);
        self.linear(a, q);
        self.linear(b, q);
        self.constant(q);
    }
}

/// An instance mapped to an Ising model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TspEncoding {
    pub instance: TspInstance,
    pub variant: EncodingVariant,
    pub w: f64,
    pub model: IsingModel,
    /// Applied CTSP constraints, empty for a plain TSP encoding.
    pub constraints: Vec<CtspConstraint>,
}

/// Row and column penalties and the distance term of a spin matrix, evaluated directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianTerms {
    pub row_penalty: f64,
    pub column_penalty: f64,
    pub distance: f64,
    /// `H_c` summed over constraints, each weighted by its theta.
    pub constraint_bonus: f64,
}

impl HamiltonianTerms {
    pub fn total(&self) -> f64 {
        self.row_penalty + self.column_penalty + self.distance - self.constraint_bonus
    }

    pub fn is_penalty_free(&self) -> bool {
        self.row_penalty == 0.0 && self.column_penalty == 0.0
    }
}

/// Outcome of reading a spin configuration as a tour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Decoded {
    Tour(Tour),
    Violation(ViolationReport),
}

impl Decoded {
    pub fn tour(self) -> Option<Tour> {
        match self {
            Decoded::Tour(t) => Some(t),
            Decoded::Violation(_) => None,
        }
    }
}

/// Rows (cities) and columns (positions) that are not exactly one-hot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub row_violations: usize,
    pub column_violations: usize,
}

impl TspEncoding {
    pub fn cities(&self) -> usize {
        self.instance.len()
    }

    /// Spin variable for city `i` at position `j`.
    pub fn var(&self, city: usize, position: usize) -> SpinVar {
        let n = self.cities();
        match self.variant {
            EncodingVariant::Full => SpinVar::Free(city * n + position),
            EncodingVariant::FixedStart => {
                if city == 0 || position == 0 {
                    SpinVar::Pinned(if city == 0 && position == 0 { 1 } else { -1 })
                } else {
                    SpinVar::Free((city - 1) * (n - 1) + (position - 1))
                }
            }
        }
    }

    /// `(city, position)` of a free spin index.
    pub fn city_position(&self, index: usize) -> (usize, usize) {
        let n = self.cities();
        match self.variant {
            EncodingVariant::Full => (index / n, index % n),
            EncodingVariant::FixedStart => (index / (n - 1) + 1, index % (n - 1) + 1),
        }
    }

    /// Full `N x N` matrix of spin values with pinned entries filled in.
    pub fn spin_matrix(&self, s: &SpinConfiguration) -> Vec<Vec<i8>> {
        let n = self.cities();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match self.var(i, j) {
                        SpinVar::Free(k) => s.get(k),
                        SpinVar::Pinned(v) => v,
                    })
                    .collect()
            })
            .collect()
    }

    /// Spin configuration of a tour. The fixed-start variant rotates it to begin at city 0.
    pub fn encode_tour(&self, order: &[usize]) -> Result<SpinConfiguration> {
        check_permutation(order, self.cities())?;
        let mut order = order.to_vec();
        if self.variant == EncodingVariant::FixedStart {
            let pos = order.iter().position(|&c| c == 0).unwrap_or(0);
            order.rotate_left(pos);
        }
        let mut s = SpinConfiguration::all_down(self.model.n());
        for (position, &city) in order.iter().enumerate() {
            if let SpinVar::Free(k) = self.var(city, position) {
                s.as_mut_slice()[k] = 1;
            }
        }
        Ok(s)
    }

    /// Reads a spin configuration back as a tour or a violation report.
    pub fn decode(&self, s: &SpinConfiguration) -> Result<Decoded> {
        if s.len() != self.model.n() {
            return Err(contract(format!(
                "state has {} spins, encoding has {}",
                s.len(),
                self.model.n()
            )));
        }
        let n = self.cities();
        let m = self.spin_matrix(s);
        let row_violations = (0..n)
            .filter(|&i| m[i].iter().filter(|&&v| v == 1).count() != 1)
            .count();
        let column_violations = (0..n)
            .filter(|&j| (0..n).filter(|&i| m[i][j] == 1).count() != 1)
            .count();
        if row_violations > 0 || column_violations > 0 {
            return Ok(Decoded::Violation(ViolationReport {
                row_violations,
                column_violations,
            }));
        }
        let order: Vec<usize> = (0..n)
            .map(|j| (0..n).find(|&i| m[i][j] == 1).expect("column is one-hot"))
            .collect();
        Ok(Decoded::Tour(Tour::new(&self.instance, order)?))
    }

    /// Evaluates the Hamiltonian terms directly from the spin matrix.
    pub fn terms(&self, s: &SpinConfiguration) -> HamiltonianTerms {
        let n = self.cities();
        let m = self.spin_matrix(s);
        let k = (n as f64) - 2.0;
        let row_penalty = (0..n)
            .map(|i| {
                let sum: f64 = m[i].iter().map(|&v| f64::from(v)).sum();
                (sum + k).powi(2)
            })
            .sum();
        let column_penalty = (0..n)
            .map(|j| {
                let sum: f64 = (0..n).map(|i| f64::from(m[i][j])).sum();
                (sum + k).powi(2)
            })
            .sum();
        let x = |i: usize, j: usize| (f64::from(m[i][j]) + 1.0) / 2.0;
        let mut distance = 0.0;
        for j in 0..n {
            let next = (j + 1) % n;
            for i in 0..n {
                for i2 in 0..n {
                    distance += self.instance.distance(i, i2) * x(i, j) * x(i2, next);
                }
            }
        }
        let mut constraint_bonus = 0.0;
        for c in &self.constraints {
            for p in &c.pairs {
                let mut h = 0.0;
                for j in 0..n {
                    let next = (j + 1) % n;
                    h += f64::from(m[p.a][j]) * f64::from(m[p.b][next]);
                    if p.direction == PairDirection::Either {
                        h += f64::from(m[p.b][j]) * f64::from(m[p.a][next]);
                    }
                }
                constraint_bonus += c.theta * h;
            }
        }
        HamiltonianTerms {
            row_penalty,
            column_penalty,
            distance: self.w * distance,
            constraint_bonus,
        }
    }

    /// Model energy of the tour `order`.
    pub fn tour_energy(&self, order: &[usize]) -> Result<f64> {
        self.model.energy(&self.encode_tour(order)?)
    }
}

/// Builds the TSP Hamiltonian for `instance`.
pub fn build_tsp(instance: &TspInstance, variant: EncodingVariant, w: f64) -> Result<TspEncoding> {
    let n = instance.len();
    if n < 3 {
        return Err(Error::UnsupportedInstance(format!(
            "TSP encoding needs at least 3 cities, got {n}"
        )));
    }
    let max_d = instance.max_distance();
    if !(w > 0.0) || !(w * max_d < MAX_W_SCALE) {
        return Err(contract(format!(
            "w must satisfy 0 < w and w * max_d < {MAX_W_SCALE}, got w = {w}, max_d = {max_d}"
        )));
    }
    let mut encoding = TspEncoding {
        instance: instance.clone(),
        variant,
        w,
        model: IsingModel::new(variant.spin_count(n)),
        constraints: Vec::new(),
    };
    let vars: Vec<Vec<SpinVar>> = (0..n)
        .map(|i| (0..n).map(|j| encoding.var(i, j)).collect())
        .collect();
    let mut e = Expander {
        model: &mut encoding.model,
    };
    let k = n as f64 - 2.0;
    for row in &vars {
        e.square(row, k);
    }
    for j in 0..n {
        let column: Vec<SpinVar> = (0..n).map(|i| vars[i][j]).collect();
        e.square(&column, k);
    }
    for j in 0..n {
        let next = (j + 1) % n;
        for i in 0..n {
            for i2 in 0..n {
                let d = instance.distance(i, i2);
                if i != i2 && d != 0.0 {
                    e.occupied_pair(vars[i][j], vars[i2][next], w * d);
                }
            }
        }
    }
    Ok(encoding)
}

/// Adds the CTSP adjacency bonus to an existing encoding. The spin count is unchanged.
pub fn build_ctsp(encoding: &TspEncoding, constraint: &CtspConstraint) -> Result<TspEncoding> {
    let n = encoding.cities();
    for p in &constraint.pairs {
        if p.a >= n || p.b >= n {
            return Err(contract(format!(
                "constrained pair ({}, {}) outside {n} cities",
                p.a, p.b
            )));
        }
    }
    let mut out = encoding.clone();
    let vars: Vec<Vec<SpinVar>> = (0..n)
        .map(|i| (0..n).map(|j| encoding.var(i, j)).collect())
        .collect();
    let mut e = Expander {
        model: &mut out.model,
    };
    for p in &constraint.pairs {
        for j in 0..n {
            let next = (j + 1) % n;
            e.product(vars[p.a][j], vars[p.b][next], -constraint.theta);
            if p.direction == PairDirection::Either {
                e.product(vars[p.b][j], vars[p.a][next], -constraint.theta);
            }
        }
    }
    out.constraints.push(constraint.clone());
    Ok(out)
}

/// Exhaustive optimum by enumerating every tour that starts at city 0.
/// `required` edges (undirected) restrict the search when given.
pub fn brute_force_optimum(instance: &TspInstance, required: &[(usize, usize)]) -> Option<Tour> {
    let n = instance.len();
    assert!(n <= 12, "exhaustive search limited to 12 cities");
    if n == 0 {
        return None;
    }
    let mut rest: Vec<usize> = (1..n).collect();
    let mut best: Option<Tour> = None;
    let mut order = vec![0; n];
    permute(&mut rest, 0, &mut |perm| {
        order[1..].copy_from_slice(perm);
        let length = instance.cyclic_length(&order);
        if best.as_ref().is_some_and(|b| b.length <= length) {
            return;
        }
        let tour = Tour {
            order: order.clone(),
            length,
        };
        if required.iter().all(|&(a, b)| tour.has_edge(a, b)) {
            best = Some(tour);
        }
    });
    best
}

fn permute<F: FnMut(&[usize])>(items: &mut [usize], k: usize, visit: &mut F) {
    if k == items.len() {
        visit(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        permute(items, k + 1, visit);
        items.swap(k, i);
    }
}

/// Writes every coupling entry as `row,col,value` for heatmap plotting.
pub fn write_coupling_csv<W: Write>(model: &IsingModel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["row", "col", "value"])?;
    for i in 0..model.n() {
        for j in 0..model.n() {
            w.write_record([
                i.to_string(),
                j.to_string(),
                model.coupling(i, j).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_instance(n: usize, seed: u64) -> TspInstance {
        TspInstance::random_uniform(n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Independent cyclic sum used as an oracle.
    fn oracle_length(inst: &TspInstance, order: &[usize]) -> f64 {
        let mut total = 0.0;
        for k in 0..order.len() {
            let a = inst.city(order[k]);
            let b = inst.city(order[(k + 1) % order.len()]);
            total += ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt();
        }
        total
    }

    #[test]
    fn right_triangle_tours() {
        let inst = TspInstance::euclidean("tri", vec![(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)]);
        for order in [[0, 1, 2], [0, 2, 1], [2, 1, 0], [1, 0, 2]] {
            assert_eq!(inst.tour_length(&order).unwrap(), 12.0);
        }
        assert!(inst.tour_length(&[0, 1, 1]).is_err());
        assert!(inst.tour_length(&[0, 1]).is_err());
    }

    #[test]
    fn tour_length_matches_oracle() {
        let inst = random_instance(6, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut order: Vec<usize> = (0..6).collect();
        for _ in 0..20 {
            order.shuffle(&mut rng);
            assert_relative_eq!(
                inst.tour_length(&order).unwrap(),
                oracle_length(&inst, &order),
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn spin_counts() {
        let inst3 = random_instance(3, 1);
        assert_eq!(
            build_tsp(&inst3, EncodingVariant::Full, default_w(&inst3))
                .unwrap()
                .model
                .n(),
            9
        );
        let inst9 = random_instance(9, 1);
        assert_eq!(
            build_tsp(&inst9, EncodingVariant::Full, default_w(&inst9))
                .unwrap()
                .model
                .n(),
            81
        );
        assert_eq!(
            build_tsp(&inst9, EncodingVariant::FixedStart, default_w(&inst9))
                .unwrap()
                .model
                .n(),
            64
        );
        for n in 3..12 {
            assert_eq!(EncodingVariant::Full.spin_count(n), n * n);
            assert_eq!(EncodingVariant::FixedStart.spin_count(n), (n - 1) * (n - 1));
        }
    }

    #[test]
    fn small_or_bad_weight_is_rejected() {
        let two = random_instance(2, 1);
        assert!(matches!(
            build_tsp(&two, EncodingVariant::Full, 0.1),
            Err(Error::UnsupportedInstance(_))
        ));
        let inst = random_instance(4, 1);
        assert!(build_tsp(&inst, EncodingVariant::Full, 0.0).is_err());
        assert!(build_tsp(&inst, EncodingVariant::Full, 4.0 / inst.max_distance()).is_err());
        assert!(build_tsp(&inst, EncodingVariant::Full, annealing_w(&inst)).is_ok());
    }

    #[test]
    fn valid_tours_are_penalty_free_and_rank_by_length() {
        let inst = random_instance(5, 8);
        for variant in [EncodingVariant::Full, EncodingVariant::FixedStart] {
            let enc = build_tsp(&inst, variant, default_w(&inst)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let mut order: Vec<usize> = (0..5).collect();
            for _ in 0..30 {
                order.shuffle(&mut rng);
                let s = enc.encode_tour(&order).unwrap();
                let terms = enc.terms(&s);
                assert!(terms.is_penalty_free());
                let len = inst.tour_length(&order).unwrap();
                assert_relative_eq!(terms.distance, enc.w * len, max_relative = 1e-12);
                assert_relative_eq!(
                    enc.model.energy(&s).unwrap(),
                    enc.w * len,
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn model_energy_matches_direct_terms() {
        let inst = random_instance(5, 21);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for variant in [EncodingVariant::Full, EncodingVariant::FixedStart] {
            let enc = build_tsp(&inst, variant, default_w(&inst)).unwrap();
            let ctsp =
                build_ctsp(&enc, &CtspConstraint::undirected(&enc, &[(1, 3)]).unwrap()).unwrap();
            for e in [&enc, &ctsp] {
                for _ in 0..300 {
                    let s = SpinConfiguration::random(e.model.n(), &mut rng);
                    let direct = e.terms(&s).total();
                    let model = e.model.energy(&s).unwrap();
                    assert!((direct - model).abs() <= 1e-6 * direct.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn decode_identity_and_all_down() {
        let inst = random_instance(4, 5);
        let enc = build_tsp(&inst, EncodingVariant::Full, default_w(&inst)).unwrap();
        let s = enc.encode_tour(&[0, 1, 2, 3]).unwrap();
        let tour = enc.decode(&s).unwrap().tour().unwrap();
        assert_eq!(tour.order, vec![0, 1, 2, 3]);
        match enc.decode(&SpinConfiguration::all_down(16)).unwrap() {
            Decoded::Violation(v) => {
                assert_eq!(v.row_violations, 4);
                assert_eq!(v.column_violations, 4);
            }
            Decoded::Tour(_) => panic!("all-down decoded as a tour"),
        }
        assert!(enc.decode(&SpinConfiguration::all_down(9)).is_err());
    }

    #[test]
    fn decode_random_permutations() {
        let inst = random_instance(7, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for variant in [EncodingVariant::Full, EncodingVariant::FixedStart] {
            let enc = build_tsp(&inst, variant, default_w(&inst)).unwrap();
            for _ in 0..20 {
                let mut order: Vec<usize> = (0..7).collect();
                order.shuffle(&mut rng);
                // Permutation matrix built by hand, independent of encode_tour.
                let mut spins = vec![-1i8; enc.model.n()];
                let rot = order.iter().position(|&c| c == 0).unwrap();
                for (pos, &city) in order.iter().enumerate() {
                    let (c, p) = match variant {
                        EncodingVariant::Full => (city, pos),
                        EncodingVariant::FixedStart => (city, (pos + 7 - rot) % 7),
                    };
                    match variant {
                        EncodingVariant::Full => spins[c * 7 + p] = 1,
                        EncodingVariant::FixedStart if c > 0 => spins[(c - 1) * 6 + p - 1] = 1,
                        EncodingVariant::FixedStart => {}
                    }
                }
                let s = SpinConfiguration::new(spins).unwrap();
                let tour = enc.decode(&s).unwrap().tour().unwrap();
                let expected = match variant {
                    EncodingVariant::Full => order.clone(),
                    EncodingVariant::FixedStart => {
                        let mut o = order.clone();
                        o.rotate_left(rot);
                        o
                    }
                };
                assert_eq!(tour.order, expected);
                assert_relative_eq!(
                    tour.length,
                    oracle_length(&inst, &order),
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn fixed_start_ground_state_is_optimal_tour() {
        let inst = random_instance(4, 31);
        let enc = build_tsp(&inst, EncodingVariant::FixedStart, default_w(&inst)).unwrap();
        let (mut best_e, mut best_idx) = (f64::INFINITY, 0);
        for idx in 0..1usize << 9 {
            let s = SpinConfiguration::from_index(idx, 9);
            let e = enc.terms(&s).total();
            if e < best_e {
                best_e = e;
                best_idx = idx;
            }
        }
        let tour = enc
            .decode(&SpinConfiguration::from_index(best_idx, 9))
            .unwrap()
            .tour()
            .unwrap();
        let opt = brute_force_optimum(&inst, &[]).unwrap();
        assert_relative_eq!(tour.length, opt.length, max_relative = 1e-12);
    }

    #[test]
    fn theta_zero_leaves_model_unchanged() {
        let inst = random_instance(5, 9);
        let enc = build_tsp(&inst, EncodingVariant::Full, default_w(&inst)).unwrap();
        let c = CtspConstraint::new(
            vec![ConstrainedPair {
                a: 1,
                b: 2,
                direction: PairDirection::Either,
            }],
            0.0,
        )
        .unwrap();
        assert_eq!(build_ctsp(&enc, &c).unwrap().model, enc.model);
    }

    #[test]
    fn ctsp_difference_pattern() {
        let inst = random_instance(6, 12);
        let enc = build_tsp(&inst, EncodingVariant::Full, default_w(&inst)).unwrap();
        let (a, b) = (2, 4);
        let ctsp = build_ctsp(&enc, &CtspConstraint::undirected(&enc, &[(a, b)]).unwrap()).unwrap();
        assert_eq!(ctsp.model.n(), enc.model.n());
        assert_eq!(ctsp.model.fields(), enc.model.fields());
        for p in 0..36 {
            for q in 0..36 {
                let diff = ctsp.model.coupling(p, q) - enc.model.coupling(p, q);
                let (ci, pi) = enc.city_position(p);
                let (cj, pj) = enc.city_position(q);
                let adjacent = (pi + 1) % 6 == pj || (pj + 1) % 6 == pi;
                let cities = (ci == a && cj == b) || (ci == b && cj == a);
                if adjacent && cities {
                    assert_relative_eq!(diff, ctsp.constraints[0].theta, max_relative = 1e-12);
                } else {
                    assert_eq!(diff, 0.0, "({p}, {q})");
                }
            }
        }
    }

    #[test]
    fn ctsp_rejects_unknown_city_and_bad_pairs() {
        let inst = random_instance(4, 2);
        let enc = build_tsp(&inst, EncodingVariant::Full, default_w(&inst)).unwrap();
        let c = CtspConstraint::undirected(&enc, &[(1, 9)]).unwrap();
        assert!(build_ctsp(&enc, &c).is_err());
        assert!(CtspConstraint::undirected(&enc, &[(1, 1)]).is_err());
        assert!(CtspConstraint::undirected(&enc, &[(1, 2), (2, 1)]).is_err());
    }

    #[test]
    fn directed_pair_prefers_orientation() {
        let inst = random_instance(5, 40);
        let enc = build_tsp(&inst, EncodingVariant::Full, default_w(&inst)).unwrap();
        let c = CtspConstraint::new(
            vec![ConstrainedPair {
                a: 1,
                b: 3,
                direction: PairDirection::AThenB,
            }],
            2.0,
        )
        .unwrap();
        let ctsp = build_ctsp(&enc, &c).unwrap();
        let forward = ctsp.tour_energy(&[0, 1, 3, 2, 4]).unwrap()
            - enc.tour_energy(&[0, 1, 3, 2, 4]).unwrap();
        let backward = ctsp.tour_energy(&[0, 3, 1, 2, 4]).unwrap()
            - enc.tour_energy(&[0, 3, 1, 2, 4]).unwrap();
        assert!(forward < backward);
    }

    #[test]
    fn brute_force_respects_required_edges() {
        let inst = random_instance(6, 13);
        let free = brute_force_optimum(&inst, &[]).unwrap();
        let (a, b) = (free.order[0], free.order[3]);
        let forced = brute_force_optimum(&inst, &[(a, b)]).unwrap();
        assert!(forced.has_edge(a, b));
        assert!(forced.length >= free.length);
    }

    #[test]
    fn coupling_csv_has_header_and_all_entries() {
        let inst = random_instance(3, 1);
        let enc = build_tsp(&inst, EncodingVariant::Full, default_w(&inst)).unwrap();
        let mut buf = Vec::new();
        write_coupling_csv(&enc.model, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("row,col,value\n"));
        assert_eq!(text.lines().count(), 1 + 81);
    }

    #[test]
    fn same_row_and_column_couplings_dominate() {
        let inst = random_instance(4, 17);
        let enc = build_tsp(&inst, EncodingVariant::Full, default_w(&inst)).unwrap();
        // Same row, same column: -2 from the squares; other pairs only carry distance.
        let v = |i, j| match enc.var(i, j) {
            SpinVar::Free(k) => k,
            SpinVar::Pinned(_) => unreachable!(),
        };
        assert_relative_eq!(enc.model.coupling(v(0, 0), v(0, 2)), -2.0);
        assert_relative_eq!(enc.model.coupling(v(0, 0), v(3, 0)), -2.0);
        assert!(enc.model.coupling(v(0, 0), v(1, 1)).abs() <= 0.5 / 4.0 * 2.0);
    }
}
