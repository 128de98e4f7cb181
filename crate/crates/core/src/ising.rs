//! Dense Ising energy model.
//!
//! Energies follow
//!
//! ```text
//! H(s) = offset - sum_{i<j} J[i][j] s_i s_j - sum_i h_i s_i
//! ```
//!
//! with `J` symmetric and zero on the diagonal, each pair counted once. Under
//! this convention the local field of spin `k` is `L_k = sum_{j != k} J[k][j] s_j + h_k`
//! and negating `s_k` changes the energy by exactly `2 s_k L_k`.
//!
//! All energies are dimensionless (units of kT).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Symmetric, zero-diagonal coupling matrix plus per-spin fields and a constant offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsingModel {
    n: usize,
    /// Row-major `n x n`.
    couplings: Vec<f64>,
    fields: Vec<f64>,
    offset: f64,
}

impl IsingModel {
    /// Empty Hamiltonian over `n` spins.
    pub fn new(n: usize) -> Self {
        Self {
            n,
            couplings: vec![0.0; n * n],
            fields: vec![0.0; n],
            offset: 0.0,
        }
    }

    /// Builds a model from explicit parts, checking symmetry, the zero diagonal and shapes.
    pub fn from_parts(couplings: Vec<Vec<f64>>, fields: Vec<f64>, offset: f64) -> Result<Self> {
        let n = fields.len();
        if couplings.len() != n || couplings.iter().any(|row| row.len() != n) {
            return Err(contract(format!(
                "coupling matrix must be {n}x{n} to match {n} fields"
            )));
        }
        for i in 0..n {
            if couplings[i][i] != 0.0 {
                return Err(contract(format!("J[{i}][{i}] must be zero")));
            }
            for j in (i + 1)..n {
                if couplings[i][j] != couplings[j][i] {
                    return Err(contract(format!("J is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self {
            n,
            couplings: couplings.into_iter().flatten().collect(),
            fields,
            offset,
        })
    }

    /// Random model with couplings and fields drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(n: usize, scale: f64, rng: &mut R) -> Self {
        let mut model = Self::new(n);
        for i in 0..n {
            for j in (i + 1)..n {
                model.add_coupling(i, j, rng.gen_range(-scale..=scale));
            }
            model.fields[i] = rng.gen_range(-scale..=scale);
        }
        model
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings[i * self.n + j]
    }

    pub fn field(&self, i: usize) -> f64 {
        self.fields[i]
    }

    pub fn fields(&self) -> &[f64] {
        &self.fields
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Row `i` of the coupling matrix.
    pub fn row(&self, i: usize) -> &[f64] {
        &self.couplings[i * self.n..(i + 1) * self.n]
    }

    /// Adds `value` to the symmetric pair `(i, j)`. Self-couplings are rejected by
    /// panicking since `s_i^2 = 1` belongs in the offset.
    pub fn add_coupling(&mut self, i: usize, j: usize, value: f64) {
        assert_ne!(
            i, j,
            "self-coupling J[{i}][{i}] must be folded into the offset"
        );
        self.couplings[i * self.n + j] += value;
        self.couplings[j * self.n + i] += value;
    }

    pub fn add_field(&mut self, i: usize, value: f64) {
        self.fields[i] += value;
    }

    pub fn add_offset(&mut self, value: f64) {
        self.offset += value;
    }

    pub(crate) fn couplings_flat(&self) -> &[f64] {
        &self.couplings
    }

    fn check_state(&self, s: &SpinConfiguration) -> Result<()> {
        if s.len() != self.n {
            return Err(contract(format!(
                "state has {} spins, model has {}",
                s.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// Total energy of `s`.
    pub fn energy(&self, s: &SpinConfiguration) -> Result<f64> {
        self.check_state(s)?;
        Ok(self.energy_unchecked(s.as_slice()))
    }

    pub(crate) fn energy_unchecked(&self, s: &[i8]) -> f64 {
        let mut pair = 0.0;
        let mut field = 0.0;
        for i in 0..self.n {
            let si = f64::from(s[i]);
            let row = self.row(i);
            let mut acc = 0.0;
            for j in (i + 1)..self.n {
                acc += row[j] * f64::from(s[j]);
            }
            pair += si * acc;
            field += self.fields[i] * si;
        }
        self.offset - pair - field
    }

    /// Local field `L_k = sum_{j != k} J[k][j] s_j + h_k`.
    pub fn local_field(&self, s: &SpinConfiguration, k: usize) -> Result<f64> {
        self.check_state(s)?;
        if k >= self.n {
            return Err(contract(format!(
                "spin index {k} out of range for {} spins",
                self.n
            )));
        }
        Ok(self.local_field_unchecked(s.as_slice(), k))
    }

    pub(crate) fn local_field_unchecked(&self, s: &[i8], k: usize) -> f64 {
        let row = self.row(k);
        let acc: f64 = row.iter().zip(s).map(|(&j, &sj)| j * f64::from(sj)).sum();
        acc + self.fields[k]
    }

    /// All local fields at once.
    pub(crate) fn local_fields(&self, s: &[i8]) -> Vec<f64> {
        (0..self.n)
            .map(|k| self.local_field_unchecked(s, k))
            .collect()
    }

    /// Exhaustive Boltzmann distribution at inverse temperature `c`, indexed by
    /// [`SpinConfiguration::from_index`]. Intended for test-sized models.
    pub fn gibbs_distribution(&self, c: f64) -> Vec<f64> {
        assert!(self.n <= 24, "enumeration limited to 24 spins");
        let energies: Vec<f64> = (0..1usize << self.n)
            .map(|idx| self.energy_unchecked(SpinConfiguration::from_index(idx, self.n).as_slice()))
            .collect();
        let e_min = energies.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = energies.iter().map(|e| (-c * (e - e_min)).exp()).collect();
        let z: f64 = weights.iter().sum();
        weights.into_iter().map(|w| w / z).collect()
    }
}

/// Conditional probability that a spin with local field `local_field` is `+1`
/// at effective inverse temperature `c`: `1 / (1 + exp(-2 c L))`.
pub fn flip_probability_up(local_field: f64, c: f64) -> f64 {
    logistic(2.0 * c * local_field)
}

/// Numerically stable `1 / (1 + exp(-x))`.
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A configuration of `n` spins, each exactly `-1` or `+1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct SpinConfiguration(Vec<i8>);

impl SpinConfiguration {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(pos) = spins.iter().position(|&s| s != 1 && s != -1) {
            return Err(contract(format!(
                "spin {pos} has value {}, expected -1 or +1",
                spins[pos]
            )));
        }
        Ok(Self(spins))
    }

    pub fn all_down(n: usize) -> Self {
        Self(vec![-1; n])
    }

    pub fn all_up(n: usize) -> Self {
        Self(vec![1; n])
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self(
            (0..n)
                .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
                .collect(),
        )
    }

    /// Bit `i` of `index` set means spin `i` is `+1`.
    pub fn from_index(index: usize, n: usize) -> Self {
        Self(
            (0..n)
                .map(|i| if index >> i & 1 == 1 { 1 } else { -1 })
                .collect(),
        )
    }

    /// Inverse of [`SpinConfiguration::from_index`].
    pub fn to_index(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &s)| s == 1)
            .fold(0, |acc, (i, _)| acc | 1 << i)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> i8 {
        self.0[i]
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] = -self.0[i];
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [i8] {
        &mut self.0
    }

    /// Every spin negated.
    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|s| -s).collect())
    }
}

impl TryFrom<Vec<i8>> for SpinConfiguration {
    type Error = crate::error::Error;

    fn try_from(value: Vec<i8>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<SpinConfiguration> for Vec<i8> {
    fn from(value: SpinConfiguration) -> Self {
        value.0
    }
}

/// Total-variation distance between two distributions over the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Double sum over ordered pairs with every coupling halved.
    fn double_sum_energy(model: &IsingModel, s: &[i8]) -> f64 {
        let n = model.n();
        let mut e = model.offset();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    e -= 0.5 * model.coupling(i, j) * f64::from(s[i]) * f64::from(s[j]);
                }
            }
            e -= model.field(i) * f64::from(s[i]);
        }
        e
    }

    #[test]
    fn empty_hamiltonian_is_zero() {
        let model = IsingModel::new(5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = SpinConfiguration::random(5, &mut rng);
        assert_eq!(model.energy(&s).unwrap(), 0.0);
    }

    #[test]
    fn aligned_pair_energy() {
        let mut model = IsingModel::new(2);
        model.add_coupling(0, 1, 1.0);
        let s = SpinConfiguration::all_up(2);
        assert_eq!(model.energy(&s).unwrap(), -1.0);
    }

    #[test]
    fn energy_matches_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..20 {
            let mut model = IsingModel::random(6, 1.5, &mut rng);
            model.add_offset(rng.gen_range(-3.0..3.0));
            let s = SpinConfiguration::random(6, &mut rng);
            assert_relative_eq!(
                model.energy(&s).unwrap(),
                double_sum_energy(&model, s.as_slice()),
                max_relative = 1e-12,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let model = IsingModel::new(3);
        let s = SpinConfiguration::all_up(4);
        assert!(matches!(model.energy(&s), Err(crate::Error::Contract(_))));
        let s3 = SpinConfiguration::all_up(3);
        assert!(model.local_field(&s3, 3).is_err());
    }

    #[test]
    fn from_parts_validates() {
        assert!(
            IsingModel::from_parts(vec![vec![0.0, 1.0], vec![2.0, 0.0]], vec![0.0; 2], 0.0)
                .is_err()
        );
        assert!(
            IsingModel::from_parts(vec![vec![1.0, 0.0], vec![0.0, 0.0]], vec![0.0; 2], 0.0)
                .is_err()
        );
        assert!(IsingModel::from_parts(vec![vec![0.0, 1.0]], vec![0.0; 2], 0.0).is_err());
        let ok = IsingModel::from_parts(vec![vec![0.0, 1.0], vec![1.0, 0.0]], vec![0.5, 0.0], 1.0)
            .unwrap();
        assert_eq!(ok.coupling(1, 0), 1.0);
    }

    #[test]
    fn local_field_examples() {
        let mut model = IsingModel::new(3);
        model.add_field(1, 0.7);
        let s = SpinConfiguration::all_down(3);
        assert_eq!(model.local_field(&s, 1).unwrap(), 0.7);

        let mut pair = IsingModel::new(2);
        pair.add_coupling(0, 1, 1.0);
        let s = SpinConfiguration::new(vec![1, -1]).unwrap();
        assert_eq!(pair.local_field(&s, 0).unwrap(), -1.0);
    }

    #[test]
    fn flip_energy_identity_on_random_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = IsingModel::random(8, 2.0, &mut rng);
        let s = SpinConfiguration::random(8, &mut rng);
        let e0 = model.energy(&s).unwrap();
        for k in 0..8 {
            let mut t = s.clone();
            t.flip(k);
            let delta = model.energy(&t).unwrap() - e0;
            let predicted = 2.0 * f64::from(s.get(k)) * model.local_field(&s, k).unwrap();
            assert_relative_eq!(delta, predicted, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn flip_probability_examples() {
        assert_eq!(flip_probability_up(0.0, 3.0), 0.5);
        assert_eq!(flip_probability_up(12.0, 0.0), 0.5);
        // One spin with h = 0.5 at c = 1, by enumeration of its two states.
        let mut model = IsingModel::new(1);
        model.add_field(0, 0.5);
        let p = model.gibbs_distribution(1.0);
        let p_up = p[SpinConfiguration::all_up(1).to_index()];
        assert_relative_eq!(flip_probability_up(0.5, 1.0), p_up, max_relative = 1e-12);
        assert_relative_eq!(p_up, 0.731_058_578_630_004_9, max_relative = 1e-12);
    }

    #[test]
    fn logistic_is_stable_at_extremes() {
        assert_eq!(logistic(1000.0), 1.0);
        assert_eq!(logistic(-1000.0), 0.0);
        assert!(logistic(-700.0) > 0.0);
    }

    #[test]
    fn spin_configuration_rejects_zero() {
        assert!(SpinConfiguration::new(vec![1, 0, -1]).is_err());
        let json = serde_json::to_string(&SpinConfiguration::all_up(2)).unwrap();
        assert_eq!(json, "[1,1]");
        assert!(serde_json::from_str::<SpinConfiguration>("[1,2]").is_err());
    }

    #[test]
    fn index_round_trip() {
        for idx in 0..64 {
            assert_eq!(SpinConfiguration::from_index(idx, 6).to_index(), idx);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn model_and_state() -> impl Strategy<Value = (IsingModel, SpinConfiguration)> {
            (2usize..10, any::<u64>()).prop_map(|(n, seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut model = IsingModel::random(n, 3.0, &mut rng);
                model.add_offset(rng.gen_range(-5.0..5.0));
                let s = SpinConfiguration::random(n, &mut rng);
                (model, s)
            })
        }

        proptest! {
            #[test]
            fn flip_energy_identity((model, s) in model_and_state()) {
                let e0 = model.energy(&s).unwrap();
                for k in 0..model.n() {
                    let mut t = s.clone();
                    t.flip(k);
                    let delta = model.energy(&t).unwrap() - e0;
                    let predicted = 2.0 * f64::from(s.get(k)) * model.local_field(&s, k).unwrap();
                    let scale = delta.abs().max(predicted.abs()).max(1.0);
                    prop_assert!((delta - predicted).abs() <= 1e-9 * scale);
                }
            }

            #[test]
            fn z2_symmetry_without_fields(seed in any::<u64>(), n in 2usize..10) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut model = IsingModel::new(n);
                for i in 0..n {
                    for j in (i + 1)..n {
                        model.add_coupling(i, j, rng.gen_range(-2.0..2.0));
                    }
                }
                let s = SpinConfiguration::random(n, &mut rng);
                let a = model.energy(&s).unwrap();
                let b = model.energy(&s.negated()).unwrap();
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }

            #[test]
            fn flip_probability_bounded_and_monotone(l in -50.0f64..50.0, dl in 0.0f64..5.0, c in 0.0f64..5.0) {
                let p = flip_probability_up(l, c);
                prop_assert!((0.0..=1.0).contains(&p));
                prop_assert!(flip_probability_up(l + dl, c) >= p);
            }
        }
    }
}
