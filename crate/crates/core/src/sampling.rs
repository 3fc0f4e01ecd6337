//! Seeded simulation of projective measurement samples.
//!
//! A sample of size m is split as evenly as possible over the bases of a
//! strategy; within each basis, outcome counts follow the multinomial of
//! the Born probabilities. Everything is deterministic given the seed, and
//! replication j of a batch uses seed base + j.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::measurement::{born_probabilities, BasisSet};
use crate::rng::{Rng, RngSeed};
use crate::state::DensityMatrix;

/// One recorded measurement: which basis was used and which outcome
/// occurred. `basis` is zero-based; `outcome` is one-based (1..=N).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObservationRecord {
    pub basis: usize,
    pub outcome: usize,
}

/// A full sample: outcome counts per basis, plus the basis set they were
/// drawn with. Individual records are derived on demand in basis-major
/// order (outcomes grouped within a basis), which leaves the likelihood
/// unchanged because observations are exchangeable.
#[derive(Debug, Clone)]
pub struct Sample {
    bases: BasisSet,
    counts: Vec<Vec<u64>>,
}

impl Sample {
    pub fn new(bases: BasisSet, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != bases.count() {
            return Err(Error::DimensionMismatch {
                expected: bases.count(),
                got: counts.len(),
            });
        }
        for row in &counts {
            if row.len() != bases.n() {
                return Err(Error::DimensionMismatch {
                    expected: bases.n(),
                    got: row.len(),
                });
            }
        }
        let sample = Sample { bases, counts };
        if sample.m() == 0 {
            return Err(Error::EmptySample);
        }
        Ok(sample)
    }

    /// Hilbert-space dimension N.
    pub fn n(&self) -> usize {
        self.bases.n()
    }

    pub fn basis_set(&self) -> &BasisSet {
        &self.bases
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    /// Count c_{r,i} with zero-based outcome i.
    pub fn count(&self, r: usize, i: usize) -> u64 {
        self.counts[r][i]
    }

    /// Observations allotted to basis r.
    pub fn basis_total(&self, r: usize) -> u64 {
        self.counts[r].iter().sum()
    }

    /// Total sample size m.
    pub fn m(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// The m individual records in basis-major order.
    pub fn records(&self) -> Vec<ObservationRecord> {
        let mut out = Vec::with_capacity(self.m() as usize);
        for (r, row) in self.counts.iter().enumerate() {
            for (i, &c) in row.iter().enumerate() {
                for _ in 0..c {
                    out.push(ObservationRecord {
                        basis: r,
                        outcome: i + 1,
                    });
                }
            }
        }
        out
    }
}

/// Splits m observations over n_bases as evenly as possible: floor
/// division, with the remainder going one each to the lowest indices.
pub fn allocate_counts(m: u64, n_bases: usize) -> Result<Vec<u64>> {
    if n_bases == 0 || m < n_bases as u64 {
        return Err(Error::InsufficientData);
    }
    let base = m / n_bases as u64;
    let rem = (m % n_bases as u64) as usize;
    Ok((0..n_bases)
        .map(|r| base + u64::from(r < rem))
        .collect())
}

fn validate_probabilities(p: &[f64]) -> Result<Vec<f64>> {
    let mut clean = Vec::with_capacity(p.len());
    let mut total = 0.0;
    for &v in p {
        if v < -1e-12 || !v.is_finite() {
            return Err(Error::InvalidProbabilities);
        }
        let v = if v > 0.0 { v } else { 0.0 };
        total += v;
        clean.push(v);
    }
    if math::abs(total - 1.0) > 1e-10 {
        return Err(Error::InvalidProbabilities);
    }
    Ok(clean)
}

/// Exact Binomial(n, p) draw by counting Bernoulli successes.
fn binomial_draw(rng: &mut Rng, n: u64, p: f64) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    let mut successes = 0;
    for _ in 0..n {
        if rng.uniform() < p {
            successes += 1;
        }
    }
    successes
}

/// Multinomial draw through sequential conditional binomials: outcome i
/// receives Binomial(remaining, p_i / tail) where tail is the unassigned
/// probability mass. Exact for any N.
pub(crate) fn multinomial_draw_with(rng: &mut Rng, p: &[f64], n: u64) -> Result<Vec<u64>> {
    let p = validate_probabilities(p)?;
    let k = p.len();
    let mut counts = vec![0u64; k];
    let mut remaining = n;
    let mut tail = 1.0f64;
    for i in 0..k {
        if remaining == 0 {
            break;
        }
        if i == k - 1 || tail <= 0.0 {
            counts[i] = remaining;
            break;
        }
        let cond = p[i] / tail;
        let c = binomial_draw(rng, remaining, if cond < 1.0 { cond } else { 1.0 });
        counts[i] = c;
        remaining -= c;
        tail -= p[i];
    }
    // Any residual mass lands on the final outcome.
    if counts.iter().sum::<u64>() < n {
        let missing = n - counts.iter().sum::<u64>();
        counts[k - 1] += missing;
    }
    Ok(counts)
}

/// Seeded multinomial draw; counts always sum to n.
pub fn multinomial_draw(p: &[f64], n: u64, seed: RngSeed) -> Result<Vec<u64>> {
    let mut rng = Rng::from_seed(seed);
    multinomial_draw_with(&mut rng, p, n)
}

/// Simulates a full sample: observations split evenly over the bases,
/// outcomes multinomial under the Born probabilities of `rho0`.
/// Deterministic given the seed.
pub fn simulate_sample(
    rho0: &DensityMatrix,
    bases: &BasisSet,
    m: u64,
    seed: RngSeed,
) -> Result<Sample> {
    if rho0.n() != bases.n() {
        return Err(Error::DimensionMismatch {
            expected: bases.n(),
            got: rho0.n(),
        });
    }
    if !rho0.is_physical()? {
        return Err(Error::NegativeEigenvalue);
    }
    let alloc = allocate_counts(m, bases.count())?;
    let mut rng = Rng::from_seed(seed);
    let mut counts = Vec::with_capacity(bases.count());
    for (r, &m_r) in alloc.iter().enumerate() {
        let p = born_probabilities(rho0, bases.get(r))?;
        counts.push(multinomial_draw_with(&mut rng, &p, m_r)?);
    }
    Sample::new(bases.clone(), counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::build_generators;
    use crate::measurement::mub_bases;
    use crate::state::{bloch_to_density, BlochVector};

    fn spin_half_state() -> DensityMatrix {
        let gens = build_generators(2).unwrap();
        let theta = BlochVector::new(2, alloc::vec![-0.44, -0.02, 0.19]).unwrap();
        bloch_to_density(&gens, &theta).unwrap()
    }

    #[test]
    fn allocation_rules() {
        assert_eq!(allocate_counts(99, 3).unwrap(), alloc::vec![33, 33, 33]);
        assert_eq!(allocate_counts(100, 3).unwrap(), alloc::vec![34, 33, 33]);
        assert_eq!(allocate_counts(100, 4).unwrap(), alloc::vec![25, 25, 25, 25]);
        assert_eq!(allocate_counts(7, 3).unwrap(), alloc::vec![3, 2, 2]);
        assert_eq!(allocate_counts(2, 3).unwrap_err(), Error::InsufficientData);
    }

    #[test]
    fn multinomial_degenerate_and_empty() {
        assert_eq!(
            multinomial_draw(&[1.0, 0.0], 10, RngSeed(1)).unwrap(),
            alloc::vec![10, 0]
        );
        assert_eq!(
            multinomial_draw(&[0.25, 0.25, 0.5], 0, RngSeed(1)).unwrap(),
            alloc::vec![0, 0, 0]
        );
    }

    #[test]
    fn multinomial_rejects_unnormalized() {
        assert_eq!(
            multinomial_draw(&[0.5, 0.4], 10, RngSeed(1)).unwrap_err(),
            Error::InvalidProbabilities
        );
        assert_eq!(
            multinomial_draw(&[1.5, -0.5], 10, RngSeed(1)).unwrap_err(),
            Error::InvalidProbabilities
        );
    }

    #[test]
    fn multinomial_counts_conserved_and_within_clt_bound() {
        let n = 1_000_000u64;
        let counts = multinomial_draw(&[0.5, 0.5], n, RngSeed(99)).unwrap();
        assert_eq!(counts.iter().sum::<u64>(), n);
        let sigma = (n as f64 * 0.25).sqrt();
        for &c in &counts {
            assert!((c as f64 - 500_000.0).abs() < 4.0 * sigma, "count {}", c);
        }
    }

    #[test]
    fn simulate_pure_state_in_its_own_basis() {
        let gens = build_generators(2).unwrap();
        let theta = BlochVector::new(2, alloc::vec![0.0, 0.0, 1.0]).unwrap();
        let rho = bloch_to_density(&gens, &theta).unwrap();
        let bases = mub_bases(2).unwrap();
        let sample = simulate_sample(&rho, &bases, 99, RngSeed(3)).unwrap();
        // Basis 0 measures the populations: outcome 1 always.
        assert_eq!(sample.count(0, 0), 33);
        assert_eq!(sample.count(0, 1), 0);
        assert_eq!(sample.m(), 99);
    }

    #[test]
    fn simulate_allocation_and_determinism() {
        let rho = spin_half_state();
        let bases = mub_bases(2).unwrap();
        let a = simulate_sample(&rho, &bases, 100, RngSeed(7)).unwrap();
        assert_eq!(a.basis_total(0), 34);
        assert_eq!(a.basis_total(1), 33);
        assert_eq!(a.basis_total(2), 33);
        let b = simulate_sample(&rho, &bases, 100, RngSeed(7)).unwrap();
        assert_eq!(a.counts(), b.counts());
        let c = simulate_sample(&rho, &bases, 100, RngSeed(8)).unwrap();
        assert!(a.counts() != c.counts());
    }

    #[test]
    fn simulate_rejects_unphysical_state() {
        let gens = build_generators(2).unwrap();
        let theta = BlochVector::new(2, alloc::vec![0.0, 0.0, 1.2]).unwrap();
        let rho = bloch_to_density(&gens, &theta).unwrap();
        let bases = mub_bases(2).unwrap();
        assert_eq!(
            simulate_sample(&rho, &bases, 100, RngSeed(1)).unwrap_err(),
            Error::NegativeEigenvalue
        );
    }

    #[test]
    fn records_are_basis_major_and_match_counts() {
        let rho = spin_half_state();
        let bases = mub_bases(2).unwrap();
        let sample = simulate_sample(&rho, &bases, 50, RngSeed(11)).unwrap();
        let records = sample.records();
        assert_eq!(records.len(), 50);
        let mut recount = alloc::vec![alloc::vec![0u64; 2]; 3];
        let mut last_basis = 0usize;
        for rec in &records {
            assert!(rec.basis >= last_basis, "records must be basis-major");
            last_basis = rec.basis;
            assert!(rec.outcome >= 1 && rec.outcome <= 2);
            recount[rec.basis][rec.outcome - 1] += 1;
        }
        assert_eq!(recount, sample.counts());
    }

    #[test]
    fn empirical_frequencies_match_born_probabilities() {
        let rho = spin_half_state();
        let bases = mub_bases(2).unwrap();
        let m = 999_999u64; // 333333 per basis
        let sample = simulate_sample(&rho, &bases, m, RngSeed(123)).unwrap();
        for r in 0..3 {
            let p = born_probabilities(&rho, bases.get(r)).unwrap();
            let m_r = sample.basis_total(r) as f64;
            for i in 0..2 {
                let freq = sample.count(r, i) as f64 / m_r;
                let bound = 4.0 * (p[i] * (1.0 - p[i]) / m_r).sqrt();
                assert!(
                    (freq - p[i]).abs() <= bound,
                    "basis {} outcome {}: freq {} vs p {}",
                    r,
                    i,
                    freq,
                    p[i]
                );
            }
        }
    }

    #[test]
    fn aggregate_chi_squared_goodness_of_fit() {
        // Pearson chi-squared of simulated counts against the Born
        // probabilities, pooled over 100 independent seeds. Each seed
        // contributes 3 bases x (2-1) df = 3, so the pooled statistic is
        // chi-squared with 300 df; its 0.999 quantile is about 381.4
        // (Wilson-Hilferty). A correct sampler stays below it.
        let rho = spin_half_state();
        let bases = mub_bases(2).unwrap();
        let mut pooled = 0.0f64;
        for seed in 0..100u64 {
            let sample = simulate_sample(&rho, &bases, 600, RngSeed(1000 + seed)).unwrap();
            for r in 0..3 {
                let p = born_probabilities(&rho, bases.get(r)).unwrap();
                let m_r = sample.basis_total(r) as f64;
                for i in 0..2 {
                    let expected = m_r * p[i];
                    let diff = sample.count(r, i) as f64 - expected;
                    pooled += diff * diff / expected;
                }
            }
        }
        assert!(pooled < 381.4, "pooled chi-squared {}", pooled);
        // Guard against a degenerate (all-exact) sampler as well.
        assert!(pooled > 150.0, "pooled chi-squared suspiciously small: {}", pooled);
    }
}
