//! Measurement bases and Born-rule probabilities.
//!
//! A complete projective strategy for an N-dimensional system uses N+1
//! orthonormal bases. Mutually unbiased bases (MUB) have every cross-basis
//! eigenvector overlap equal to 1/sqrt(N) in modulus; deliberately biased
//! sets (MBB) are produced by rotating the MUB until some overlap reaches
//! alpha/sqrt(N) with alpha > 1. A fixed reference MBB set for N = 3
//! (generated with alpha = 1.2, stored to three decimals, re-unitarized by
//! polar projection) ships as a fixture.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::algebra::GeneratorSet;
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::math;
use crate::rng::{Rng, RngSeed};
use crate::state::DensityMatrix;

/// Unitarity slack accepted when wrapping a matrix as a basis.
const UNITARY_TOLERANCE: f64 = 1e-8;
/// Slack used when testing the biased-overlap condition, so exact-boundary
/// cases (alpha = 1 on an exact MUB) count as satisfied.
const OVERLAP_SLACK: f64 = 1e-12;
/// Sweep budget for self-consistent biased-basis generation.
const MBB_MAX_SWEEPS: usize = 50;
/// Cap on the rotation magnitude per basis before giving up.
const MBB_MAX_S: f64 = 40.0;

/// One orthonormal measurement basis: the columns of a unitary matrix.
#[derive(Debug, Clone)]
pub struct MeasurementBasis {
    v: CMat,
}

impl MeasurementBasis {
    pub fn new(v: CMat) -> Result<Self> {
        if v.unitarity_residual() > UNITARY_TOLERANCE {
            return Err(Error::NotUnitary);
        }
        Ok(MeasurementBasis { v })
    }

    pub fn n(&self) -> usize {
        self.v.n()
    }

    pub fn matrix(&self) -> &CMat {
        &self.v
    }

    /// Outcome eigenvector i (column i).
    pub fn vector(&self, i: usize) -> Vec<Complex64> {
        self.v.column(i)
    }
}

/// Provenance tag of a basis set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Mub,
    Mbb,
    Custom,
}

impl BasisKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BasisKind::Mub => "mub",
            BasisKind::Mbb => "mbb",
            BasisKind::Custom => "custom",
        }
    }
}

/// A complete measurement strategy: at least N+1 bases of dimension N.
#[derive(Debug, Clone)]
pub struct BasisSet {
    n: usize,
    kind: BasisKind,
    bases: Vec<MeasurementBasis>,
}

impl BasisSet {
    pub fn new(n: usize, kind: BasisKind, bases: Vec<MeasurementBasis>) -> Result<Self> {
        if n < 2 {
            return Err(Error::UnsupportedDimension(n));
        }
        for b in &bases {
            if b.n() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: b.n(),
                });
            }
        }
        if bases.len() < n + 1 {
            return Err(Error::InvalidConfig(
                "a complete basis set needs at least N+1 bases",
            ));
        }
        Ok(BasisSet { n, kind, bases })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn count(&self) -> usize {
        self.bases.len()
    }

    pub fn get(&self, r: usize) -> &MeasurementBasis {
        &self.bases[r]
    }

    pub fn bases(&self) -> &[MeasurementBasis] {
        &self.bases
    }
}

/// Mutually unbiased bases for N = 2 (identity, Hadamard-type, and the
/// (1,1;i,-i)/sqrt(2) matrix) or N = 3 (identity plus
/// V^(r)_pq = exp[(2 pi i/3)(r p^2 + p q)]/sqrt(3), r = 1..3).
pub fn mub_bases(n: usize) -> Result<BasisSet> {
    let bases = match n {
        2 => {
            let inv = 1.0 / math::sqrt(2.0);
            let h = CMat::from_fn(2, |i, j| {
                let sign = if (i, j) == (1, 1) { -1.0 } else { 1.0 };
                Complex64::new(sign * inv, 0.0)
            });
            let k = CMat::from_fn(2, |i, j| match (i, j) {
                (0, _) => Complex64::new(inv, 0.0),
                (1, 0) => Complex64::new(0.0, inv),
                _ => Complex64::new(0.0, -inv),
            });
            vec![
                MeasurementBasis::new(CMat::identity(2))?,
                MeasurementBasis::new(h)?,
                MeasurementBasis::new(k)?,
            ]
        }
        3 => {
            let inv = 1.0 / math::sqrt(3.0);
            let mut out = vec![MeasurementBasis::new(CMat::identity(3))?];
            for r in 1..=3usize {
                let v = CMat::from_fn(3, |p, q| {
                    let phase =
                        2.0 * core::f64::consts::PI / 3.0 * ((r * p * p + p * q) % 3) as f64;
                    Complex64::new(inv * math::cos(phase), inv * math::sin(phase))
                });
                out.push(MeasurementBasis::new(v)?);
            }
            out
        }
        other => return Err(Error::UnsupportedDimension(other)),
    };
    BasisSet::new(n, BasisKind::Mub, bases)
}

fn overlap_modulus(a: &MeasurementBasis, i: usize, b: &MeasurementBasis, j: usize) -> f64 {
    let n = a.n();
    let mut acc = Complex64::new(0.0, 0.0);
    for k in 0..n {
        acc += a.matrix().at(k, i).conj() * b.matrix().at(k, j);
    }
    acc.norm()
}

/// Maximum deviation of the cross-basis overlap moduli from 1/sqrt(N):
/// max over bases r != r' and outcomes i, j of | |<v_i, v_j>| - 1/sqrt(N) |.
/// Zero (to round-off) exactly when the set is mutually unbiased.
pub fn verify_mub(set: &BasisSet) -> f64 {
    let target = 1.0 / math::sqrt(set.n() as f64);
    let mut worst = 0.0f64;
    for r in 0..set.count() {
        for rp in (r + 1)..set.count() {
            for i in 0..set.n() {
                for j in 0..set.n() {
                    let dev = math::abs(overlap_modulus(set.get(r), i, set.get(rp), j) - target);
                    if dev > worst {
                        worst = dev;
                    }
                }
            }
        }
    }
    worst
}

/// Conjugates a basis by the rotation U(s) = exp(iAs):
/// V -> U(s) V U(s)^dagger. A must be Hermitian.
pub fn rotate_basis(v: &MeasurementBasis, a: &CMat, s: f64) -> Result<MeasurementBasis> {
    if a.hermitian_residual() > UNITARY_TOLERANCE {
        return Err(Error::NotHermitian);
    }
    let u = linalg::exp_i_hermitian(a, s)?;
    let rotated = u.matmul(v.matrix()).matmul(&u.dagger());
    MeasurementBasis::new(rotated)
}

/// Random Hermitian direction (B + B^dagger)/2 with standard normal
/// entries, scaled to unit spectral norm.
fn random_hermitian_direction(n: usize, rng: &mut Rng) -> Result<CMat> {
    let b = CMat::from_fn(n, |_, _| Complex64::new(rng.normal(), rng.normal()));
    let sym = b.add(&b.dagger()).scale_re(0.5);
    let eig = linalg::hermitian_eigen(&sym)?;
    let norm = eig
        .values
        .iter()
        .fold(0.0f64, |m, &v| if math::abs(v) > m { math::abs(v) } else { m });
    if norm == 0.0 {
        return Err(Error::SingularSystem);
    }
    Ok(sym.scale_re(1.0 / norm))
}

/// True when basis r of the set overlaps some eigenvector of some other
/// basis with modulus at least alpha/sqrt(N) (up to a tiny slack).
fn biased_enough(set: &[MeasurementBasis], r: usize, threshold: f64) -> bool {
    let n = set[r].n();
    for (rp, other) in set.iter().enumerate() {
        if rp == r {
            continue;
        }
        for i in 0..n {
            for j in 0..n {
                if overlap_modulus(&set[r], i, other, j) >= threshold - OVERLAP_SLACK {
                    return true;
                }
            }
        }
    }
    false
}

/// Generates a mutually biased set from a MUB set: basis 0 is held fixed;
/// every other basis r gets a seeded random Hermitian rotation axis A^(r)
/// and its rotation magnitude s_r grows in increments of `step` until the
/// basis overlaps some other basis by at least alpha/sqrt(N). Because
/// rotating one basis can invalidate another's overlap condition, sweeps
/// repeat until all conditions hold simultaneously (at most 50 sweeps).
/// Deterministic given the seed.
pub fn generate_mbb(mub: &BasisSet, alpha: f64, step: f64, seed: RngSeed) -> Result<BasisSet> {
    let n = mub.n();
    let threshold = alpha / math::sqrt(n as f64);
    if threshold > 1.0 {
        return Err(Error::InvalidConfig("alpha/sqrt(N) must not exceed 1"));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidConfig("rotation step must be positive"));
    }
    let mut rng = Rng::from_seed(seed);
    let axes: Vec<CMat> = (1..mub.count())
        .map(|_| random_hermitian_direction(n, &mut rng))
        .collect::<Result<_>>()?;

    let mut current: Vec<MeasurementBasis> = mub.bases().to_vec();
    let mut magnitudes = vec![0.0f64; mub.count()];

    for _sweep in 0..MBB_MAX_SWEEPS {
        let mut changed = false;
        for r in 1..mub.count() {
            while !biased_enough(&current, r, threshold) {
                magnitudes[r] += step;
                if magnitudes[r] > MBB_MAX_S {
                    return Err(Error::MbbNoConvergence);
                }
                current[r] = rotate_basis(mub.get(r), &axes[r - 1], magnitudes[r])?;
                changed = true;
            }
        }
        if !changed {
            return BasisSet::new(n, BasisKind::Mbb, current);
        }
    }
    // Last sweep may have finished in a consistent state.
    if (1..mub.count()).all(|r| biased_enough(&current, r, threshold)) {
        return BasisSet::new(n, BasisKind::Mbb, current);
    }
    Err(Error::MbbNoConvergence)
}

/// The four reference biased bases for N = 3, stored to three decimals.
/// Row-major (re, im) entries.
const REFERENCE_MBB: [[[(f64, f64); 3]; 3]; 4] = [
    [
        [(0.732, 0.350), (-0.078, -0.223), (-0.163, -0.507)],
        [(-0.078, -0.223), (0.705, -0.649), (-0.152, -0.036)],
        [(-0.163, -0.507), (-0.152, -0.036), (0.460, -0.693)],
    ],
    [
        [(0.571, 0.016), (-0.738, -0.337), (-0.122, -0.024)],
        [(0.074, 0.144), (-0.089, -0.001), (0.790, 0.584)],
        [(0.796, -0.115), (0.563, 0.130), (-0.075, 0.114)],
    ],
    [
        [(0.301, 0.387), (-0.095, -0.697), (-0.168, -0.487)],
        [(0.538, 0.003), (0.281, -0.336), (0.197, 0.693)],
        [(0.674, 0.124), (0.119, 0.548), (0.264, -0.382)],
    ],
    [
        [(-0.115, 0.952), (0.009, 0.214), (-0.129, -0.132)],
        [(0.009, 0.214), (0.290, -0.391), (0.841, 0.097)],
        [(-0.129, -0.132), (0.841, 0.097), (-0.156, -0.474)],
    ],
];

/// Raw three-decimal matrix r of the reference MBB fixture, before
/// re-unitarization. Exposed for fixture verification.
pub fn appendix_mbb_raw(r: usize) -> CMat {
    CMat::from_fn(3, |i, j| {
        let (re, im) = REFERENCE_MBB[r][i][j];
        Complex64::new(re, im)
    })
}

/// The fixed reference MBB set for N = 3 (generated with alpha = 1.2).
/// The stored three-decimal entries are not exactly unitary, so each
/// matrix is replaced by its polar factor (nearest unitary), which moves
/// entries by less than 0.01. The four bases alone form a complete set;
/// `include_identity` additionally prepends the computational basis,
/// giving a redundant five-basis strategy.
pub fn appendix_mbb(include_identity: bool) -> Result<BasisSet> {
    let mut bases = Vec::new();
    if include_identity {
        bases.push(MeasurementBasis::new(CMat::identity(3))?);
    }
    for r in 0..4 {
        let unitary = linalg::polar_unitary(&appendix_mbb_raw(r))?;
        bases.push(MeasurementBasis::new(unitary)?);
    }
    BasisSet::new(3, BasisKind::Mbb, bases)
}

/// One projective observable F = |v><v|.
#[derive(Debug, Clone)]
pub struct Observable {
    f: CMat,
}

impl Observable {
    pub fn matrix(&self) -> &CMat {
        &self.f
    }

    /// Coefficients d_j = Tr(lambda_j F)/2, so the Born probability is
    /// the affine function p(theta) = 1/N + d . theta.
    pub fn bloch_coefficients(&self, gens: &GeneratorSet) -> Vec<f64> {
        gens.iter()
            .map(|lambda| 0.5 * lambda.matmul(&self.f).trace().re)
            .collect()
    }
}

/// All N outcome projectors V|i><i|V^dagger of a basis.
pub fn observables_from_basis(basis: &MeasurementBasis) -> Vec<Observable> {
    let n = basis.n();
    (0..n)
        .map(|i| {
            let v = basis.vector(i);
            let f = CMat::from_fn(n, |r, c| v[r] * v[c].conj());
            Observable { f }
        })
        .collect()
}

/// Born probabilities p_i = <v_i| rho |v_i> for every outcome of a basis.
/// Values below -1e-12 mean rho is indefinite enough that the multinomial
/// model is meaningless, which is an error; tiny negatives are clamped.
pub fn born_probabilities(rho: &DensityMatrix, basis: &MeasurementBasis) -> Result<Vec<f64>> {
    if rho.n() != basis.n() {
        return Err(Error::DimensionMismatch {
            expected: basis.n(),
            got: rho.n(),
        });
    }
    let n = rho.n();
    let mut probs = Vec::with_capacity(n);
    let mut total = 0.0;
    for i in 0..n {
        let v = basis.vector(i);
        let rv = rho.matrix().apply(&v);
        let mut p = 0.0;
        for k in 0..n {
            p += (v[k].conj() * rv[k]).re;
        }
        if p < -1e-12 {
            return Err(Error::InvalidProbabilities);
        }
        let p = if p > 0.0 { p } else { 0.0 };
        total += p;
        probs.push(p);
    }
    if math::abs(total - 1.0) > 1e-9 {
        return Err(Error::InvalidProbabilities);
    }
    Ok(probs)
}
