//! Asymptotic inference on the reconstructed Bloch vector: observed
//! Fisher information (Hessian and outer-product routes), covariance and
//! standard errors, delta-method variances for derived quantities,
//! confidence intervals, and t / Wald hypothesis tests.
//!
//! Covariance convention. `asymptotic_covariance` returns
//! Sigma = (m^2 I_obs)^{-1}, where I_obs is the per-observation observed
//! information; its square-rooted diagonal reproduces the tabulated
//! asymptotic standard errors this library targets, which shrink like
//! 1/m relative to the sampling spread of the estimator.
//! `sampling_covariance` returns (m I_obs)^{-1}, the standard asymptotic
//! approximation to Var(theta_hat); use it when comparing against Monte
//! Carlo variability.

#[cfg(test)]
use alloc::vec;
use alloc::vec::Vec;

use crate::algebra::{build_generators, compute_structure_constants};
use crate::error::{Error, Result};
use crate::estimator::LikelihoodModel;
use crate::linalg::{self, CMat};
use crate::math;
use crate::sampling::Sample;
use crate::state::{bloch_to_density, char_poly_coefficients, BlochVector};
use crate::Complex64;

/// A constraint within this distance of zero counts as active, which
/// invalidates the interior-point information matrix.
pub const ACTIVE_CONSTRAINT_TOLERANCE: f64 = 1e-8;

/// Two eigenvalues closer than this make the spectrum gradient undefined.
pub const SPECTRUM_GAP_TOLERANCE: f64 = 1e-8;

/// Fixed critical value for the two-sided t test at the 5% level.
pub const T_CRITICAL: f64 = 1.96;

/// Upper 5% chi-square critical values for 1 through 8 degrees of freedom.
pub const CHI_SQUARE_CRITICAL_95: [f64; 8] =
    [3.84, 5.99, 7.81, 9.49, 11.07, 12.59, 14.07, 15.51];

/// Which estimator produced an information matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FisherKind {
    Hessian,
    Opg,
}

impl FisherKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FisherKind::Hessian => "hessian",
            FisherKind::Opg => "opg",
        }
    }
}

/// Per-observation observed information matrix, row-major dim x dim.
#[derive(Debug, Clone)]
pub struct FisherEstimate {
    pub matrix: Vec<f64>,
    pub kind: FisherKind,
    pub dim: usize,
    pub m: f64,
}

/// A covariance matrix for theta_hat, row-major dim x dim.
#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub matrix: Vec<f64>,
    pub dim: usize,
}

impl CovarianceEstimate {
    /// Square roots of the diagonal.
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|j| math::sqrt(self.matrix[j * self.dim + j].max(0.0)))
            .collect()
    }
}

fn refuse_active_boundary(theta: &BlochVector) -> Result<()> {
    let gens = build_generators(theta.n())?;
    let sc = compute_structure_constants(&gens);
    let coeffs = char_poly_coefficients(theta, &sc)?;
    if coeffs
        .scaled
        .iter()
        .any(|a| a.abs() <= ACTIVE_CONSTRAINT_TOLERANCE)
    {
        return Err(Error::ActiveConstraint);
    }
    Ok(())
}

/// Observed per-observation information from the exact likelihood
/// Hessian: I_obs = -(d^2 l / d theta^2) with l the scaled log-likelihood.
/// Refuses estimates sitting on the positivity boundary.
pub fn observed_fisher_hessian(theta: &BlochVector, sample: &Sample) -> Result<FisherEstimate> {
    refuse_active_boundary(theta)?;
    let gens = build_generators(sample.n())?;
    let model = LikelihoodModel::new(&gens, sample)?;
    let hess = model.hessian(theta.theta())?;
    Ok(FisherEstimate {
        matrix: hess.iter().map(|v| -v).collect(),
        kind: FisherKind::Hessian,
        dim: model.dim(),
        m: model.m(),
    })
}

/// Observed per-observation information from the averaged outer product
/// of single-observation scores. Numerically identical to the Hessian
/// route here (the model is affine in theta) but computed independently.
pub fn observed_fisher_opg(theta: &BlochVector, sample: &Sample) -> Result<FisherEstimate> {
    refuse_active_boundary(theta)?;
    let gens = build_generators(sample.n())?;
    let model = LikelihoodModel::new(&gens, sample)?;
    let opg = model.opg_per_observation(theta.theta())?;
    Ok(FisherEstimate {
        matrix: opg,
        kind: FisherKind::Opg,
        dim: model.dim(),
        m: model.m(),
    })
}

/// Inverts a symmetric positive definite information matrix after a
/// conditioning check (smallest eigenvalue positive, condition number
/// below 1e12).
fn checked_inverse(matrix: &[f64], dim: usize) -> Result<Vec<f64>> {
    let m = CMat::from_fn(dim, |i, j| Complex64::new(matrix[i * dim + j], 0.0));
    let eig = linalg::hermitian_eigen(&m)?;
    let max = eig.values[0];
    let min = eig.values[dim - 1];
    if !(min > 0.0) || max / min >= 1e12 {
        return Err(Error::SingularSystem);
    }
    linalg::invert_real(dim, matrix)
}

/// Covariance whose diagonal gives the tabulated asymptotic standard
/// errors: Sigma = (m^2 I_obs)^{-1}.
pub fn asymptotic_covariance(fisher: &FisherEstimate) -> Result<CovarianceEstimate> {
    let inv = checked_inverse(&fisher.matrix, fisher.dim)?;
    let scale = 1.0 / (fisher.m * fisher.m);
    Ok(CovarianceEstimate {
        matrix: inv.iter().map(|v| v * scale).collect(),
        dim: fisher.dim,
    })
}

/// Standard first-order approximation to Var(theta_hat):
/// (m I_obs)^{-1} = m x asymptotic_covariance.
pub fn sampling_covariance(fisher: &FisherEstimate) -> Result<CovarianceEstimate> {
    let inv = checked_inverse(&fisher.matrix, fisher.dim)?;
    let scale = 1.0 / fisher.m;
    Ok(CovarianceEstimate {
        matrix: inv.iter().map(|v| v * scale).collect(),
        dim: fisher.dim,
    })
}

/// Variance of a scalar function of theta by the delta method:
/// grad^T Sigma grad.
pub fn delta_method_variance(grad: &[f64], cov: &CovarianceEstimate) -> Result<f64> {
    if grad.len() != cov.dim {
        return Err(Error::DimensionMismatch {
            expected: cov.dim,
            got: grad.len(),
        });
    }
    let d = cov.dim;
    let mut acc = 0.0;
    for j in 0..d {
        for k in 0..d {
            acc += grad[j] * cov.matrix[j * d + k] * grad[k];
        }
    }
    Ok(acc)
}

/// Gradients of the (descending) eigenvalues of rho with respect to
/// theta by first-order perturbation theory:
/// d delta_i / d theta_k = <x_i| lambda_k / 2 |x_i>.
/// Requires a non-degenerate spectrum (pairwise gaps above 1e-8).
pub fn eigenvalue_gradient(theta: &BlochVector) -> Result<Vec<Vec<f64>>> {
    let n = theta.n();
    let gens = build_generators(n)?;
    let rho = bloch_to_density(&gens, theta)?;
    let eig = rho.eigen()?;
    for w in eig.values.windows(2) {
        if (w[0] - w[1]).abs() <= SPECTRUM_GAP_TOLERANCE {
            return Err(Error::DegenerateSpectrum);
        }
    }
    let d = gens.count();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x = eig.vectors.column(i);
        let mut row = Vec::with_capacity(d);
        for k in 0..d {
            let gx = gens.get(k).apply(&x);
            let mut acc = Complex64::new(0.0, 0.0);
            for (xi, gxi) in x.iter().zip(gx.iter()) {
                acc += xi.conj() * gxi;
            }
            row.push(0.5 * acc.re);
        }
        out.push(row);
    }
    Ok(out)
}

/// Quantile of the standard normal distribution (Wichura's PPND16
/// rational approximations, accurate to about 1e-16 in the argument).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidConfig("quantile probability must lie in (0, 1)"));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        const A: [f64; 8] = [
            3.387_132_872_796_366_608_0,
            1.331_416_678_917_843_774_5e2,
            1.971_590_950_306_551_442_7e3,
            1.373_169_376_550_946_112_5e4,
            4.592_195_393_154_987_145_7e4,
            6.726_577_092_700_870_085_3e4,
            3.343_057_558_358_812_810_5e4,
            2.509_080_928_730_122_672_7e3,
        ];
        const B: [f64; 8] = [
            1.0,
            4.231_333_070_160_091_125_2e1,
            6.871_870_074_920_579_083_0e2,
            5.394_196_021_424_751_107_7e3,
            2.121_379_430_158_659_586_7e4,
            3.930_789_580_009_271_061_0e4,
            2.872_908_573_572_194_267_4e4,
            5.226_495_278_852_854_561_0e3,
        ];
        let r = 0.180625 - q * q;
        return Ok(q * horner(&A, r) / horner(&B, r));
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = math::sqrt(-math::ln(r));
    let value = if r <= 5.0 {
        const C: [f64; 8] = [
            1.423_437_110_749_683_577_34,
            4.630_337_846_156_545_295_90,
            5.769_497_221_460_691_405_50,
            3.647_848_324_763_204_605_04,
            1.270_458_252_452_368_382_58,
            2.417_807_251_774_506_117_70e-1,
            2.272_384_498_926_918_458_33e-2,
            7.745_450_142_783_414_076_40e-4,
        ];
        const D: [f64; 8] = [
            1.0,
            2.053_191_626_637_758_821_87,
            1.676_384_830_183_803_849_40,
            6.897_673_349_851_000_045_50e-1,
            1.481_039_764_274_800_745_90e-1,
            1.519_866_656_361_645_719_66e-2,
            5.475_938_084_995_344_946_00e-4,
            1.050_750_071_644_416_843_24e-9,
        ];
        let x = r - 1.6;
        horner(&C, x) / horner(&D, x)
    } else {
        const E: [f64; 8] = [
            6.657_904_643_501_103_777_20,
            5.463_784_911_164_114_369_90,
            1.784_826_539_917_291_335_80,
            2.965_605_718_285_048_912_30e-1,
            2.653_218_952_657_612_309_30e-2,
            1.242_660_947_388_078_438_60e-3,
            2.711_555_568_743_487_578_15e-5,
            2.010_334_399_292_288_132_65e-7,
        ];
        const F: [f64; 8] = [
            1.0,
            5.998_322_065_558_879_376_90e-1,
            1.369_298_809_227_358_053_10e-1,
            1.487_536_129_085_061_485_25e-2,
            7.868_691_311_456_132_591_00e-4,
            1.846_318_317_510_054_681_80e-5,
            1.421_511_758_316_445_888_70e-7,
            2.044_263_103_389_939_785_64e-15,
        ];
        let x = r - 5.0;
        horner(&E, x) / horner(&F, x)
    };
    Ok(if q < 0.0 { -value } else { value })
}

fn horner(coeffs: &[f64; 8], x: f64) -> f64 {
    let mut acc = coeffs[7];
    for c in coeffs[..7].iter().rev() {
        acc = acc * x + c;
    }
    acc
}

/// Two-sided normal confidence interval value -/+ z_{(1+level)/2} se.
pub fn confidence_interval(value: f64, se: f64, level: f64) -> Result<(f64, f64)> {
    if !(se > 0.0) {
        return Err(Error::ZeroSpread);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig("confidence level must lie in (0, 1)"));
    }
    let z = normal_quantile(0.5 * (1.0 + level))?;
    Ok((value - z * se, value + z * se))
}

/// Family of a test statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestKind {
    T,
    Wald,
}

impl TestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TestKind::T => "t",
            TestKind::Wald => "wald",
        }
    }
}

/// A computed test statistic with its fixed critical value and decision.
#[derive(Debug, Clone)]
pub struct TestReport {
    pub statistic: f64,
    pub kind: TestKind,
    pub df: Option<usize>,
    pub critical: f64,
    pub reject: bool,
}

/// t = (value - target) / se, rejected when |t| > 1.96.
pub fn t_statistic(value: f64, target: f64, se: f64) -> Result<TestReport> {
    if !(se > 0.0) {
        return Err(Error::ZeroSpread);
    }
    let t = (value - target) / se;
    if !t.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(TestReport {
        statistic: t,
        kind: TestKind::T,
        df: None,
        critical: T_CRITICAL,
        reject: t.abs() > T_CRITICAL,
    })
}

/// Upper 5% chi-square critical value for df between 1 and 8.
pub fn chi_square_critical(df: usize) -> Result<f64> {
    if df == 0 || df > CHI_SQUARE_CRITICAL_95.len() {
        return Err(Error::InvalidConfig("chi-square table covers 1 to 8 degrees of freedom"));
    }
    Ok(CHI_SQUARE_CRITICAL_95[df - 1])
}

/// Wald statistic W = v^T Sigma^{-1} v for a deviation vector v with
/// covariance Sigma, df = len(v), rejected above the chi-square critical
/// value.
pub fn wald_statistic(v: &[f64], cov: &CovarianceEstimate) -> Result<TestReport> {
    if v.len() != cov.dim {
        return Err(Error::DimensionMismatch {
            expected: cov.dim,
            got: v.len(),
        });
    }
    let d = cov.dim;
    let mut mat = cov.matrix.clone();
    let mut rhs = v.to_vec();
    let x = linalg::solve_real(d, &mut mat, &mut rhs)?;
    let w: f64 = v.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    if !w.is_finite() {
        return Err(Error::NonFinite);
    }
    let critical = chi_square_critical(d)?;
    Ok(TestReport {
        statistic: w,
        kind: TestKind::Wald,
        df: Some(d),
        critical,
        reject: w > critical,
    })
}
