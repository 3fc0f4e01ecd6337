//! Constrained maximum-likelihood estimation of the Bloch vector from
//! measurement counts, plus the linear-inversion (method-of-moments)
//! baseline.
//!
//! The scaled objective is l(theta) = (1/m) sum_{r,i} c_{r,i} ln p_i^r,
//! with p affine in theta, so l is concave where all observed-outcome
//! probabilities are positive. Positivity of rho is imposed through the
//! characteristic-coefficient constraints a_j(theta) >= 0 (j = 2..N) via a
//! Lagrangian with squared slacks:
//!
//!   H(t) = [ dl/dtheta + sum_j lambda_j da_j/dtheta ;
//!            a_j(theta) - gamma_j^2 ;
//!            2 lambda_j gamma_j ]          t = (theta, lambda, gamma)
//!
//! Roots of H are found by damped Newton iteration; when that fails
//! (singular Jacobian, stalled line search) a BFGS minimizer of
//! h(t) = H.H with Metropolis annealing restarts takes over.

use alloc::vec;
use alloc::vec::Vec;

use crate::algebra::{build_generators, compute_structure_constants, GeneratorSet, StructureConstants};
use crate::error::{Error, Result};
use crate::linalg;
use crate::math;
use crate::measurement::observables_from_basis;
use crate::rng::{Rng, RngSeed};
use crate::sampling::Sample;
use crate::state::{
    bloch_to_density, char_poly_coefficients, constraint_gradients, constraint_hessians,
    is_admissible, BlochVector, DensityMatrix,
};

/// Probability floor applied inside logs during iteration. Convergence is
/// only declared at points that need no clipping.
const P_FLOOR: f64 = 1e-12;

/// How the reported estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimationMethod {
    Newton,
    BfgsSa,
    Mm,
}

impl EstimationMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimationMethod::Newton => "newton",
            EstimationMethod::BfgsSa => "bfgs_sa",
            EstimationMethod::Mm => "mm",
        }
    }
}

/// Solver configuration. `residual_tolerance` bounds ||H|| at convergence
/// (so h = H.H must fall below its square) and `likelihood_tolerance`
/// bounds h directly; the two coincide when calibrated. Annealing
/// temperature starts at `annealing_initial_temp_factor` times the current
/// h and decays geometrically.
#[derive(Debug, Clone)]
pub struct EstimationConfig {
    pub residual_tolerance: f64,
    pub likelihood_tolerance: f64,
    pub max_newton_iters: usize,
    pub max_backtracks: usize,
    pub bfgs_max_iters: usize,
    pub annealing_steps: usize,
    pub annealing_initial_temp_factor: f64,
    pub annealing_decay: f64,
    pub annealing_rounds: usize,
    pub annealing_sigma: f64,
    pub multistart_count: usize,
    pub seed: RngSeed,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        EstimationConfig {
            residual_tolerance: 1e-6,
            likelihood_tolerance: 1e-12,
            max_newton_iters: 200,
            max_backtracks: 40,
            bfgs_max_iters: 2000,
            annealing_steps: 50,
            annealing_initial_temp_factor: 0.1,
            annealing_decay: 0.95,
            annealing_rounds: 4,
            annealing_sigma: 0.1,
            multistart_count: 5,
            seed: RngSeed(0),
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0)
            || !(self.likelihood_tolerance > 0.0)
            || !(self.annealing_initial_temp_factor > 0.0)
            || !(self.annealing_decay > 0.0 && self.annealing_decay < 1.0)
            || !(self.annealing_sigma > 0.0)
        {
            return Err(Error::InvalidConfig("tolerances and schedule must be positive"));
        }
        if self.max_newton_iters == 0
            || self.max_backtracks == 0
            || self.bfgs_max_iters == 0
            || self.multistart_count == 0
        {
            return Err(Error::InvalidConfig("iteration budgets must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one estimation run.
#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub theta_hat: BlochVector,
    pub rho_hat: DensityMatrix,
    pub converged: bool,
    /// Minimum eigenvalue of rho_hat at least -1e-9.
    pub physical: bool,
    pub method: EstimationMethod,
    pub scaled_loglik: f64,
    pub residual_norm: f64,
    pub iterations: usize,
}

/// Precomputed affine model of all Born probabilities for one sample:
/// p_{r,i}(theta) = 1/N + d_{r,i} . theta, with the observation counts.
#[derive(Debug, Clone)]
pub struct LikelihoodModel {
    n: usize,
    dim: usize,
    m: f64,
    /// (count, d) per basis/outcome cell; cells with zero count dropped.
    cells: Vec<(f64, Vec<f64>)>,
}

impl LikelihoodModel {
    pub fn new(gens: &GeneratorSet, sample: &Sample) -> Result<Self> {
        if gens.n() != sample.n() {
            return Err(Error::DimensionMismatch {
                expected: sample.n(),
                got: gens.n(),
            });
        }
        let m = sample.m();
        if m == 0 {
            return Err(Error::EmptySample);
        }
        let mut cells = Vec::new();
        let set = sample.basis_set();
        for r in 0..set.count() {
            let obs = observables_from_basis(set.get(r));
            for (i, o) in obs.iter().enumerate() {
                let c = sample.count(r, i);
                if c > 0 {
                    cells.push((c as f64, o.bloch_coefficients(gens)));
                }
            }
        }
        Ok(LikelihoodModel {
            n: gens.n(),
            dim: gens.count(),
            m: m as f64,
            cells,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    #[inline]
    fn prob(&self, d: &[f64], theta: &[f64]) -> f64 {
        let mut p = 1.0 / self.n as f64;
        for (dj, tj) in d.iter().zip(theta.iter()) {
            p += dj * tj;
        }
        p
    }

    /// Smallest model probability over observed cells.
    pub fn min_observed_probability(&self, theta: &[f64]) -> f64 {
        self.cells
            .iter()
            .map(|(_, d)| self.prob(d, theta))
            .fold(f64::INFINITY, f64::min)
    }

    /// Scaled log-likelihood; errors when an observed outcome has
    /// non-positive probability.
    pub fn log_likelihood(&self, theta: &[f64]) -> Result<f64> {
        let mut acc = 0.0;
        for (c, d) in &self.cells {
            let p = self.prob(d, theta);
            if p <= 0.0 {
                return Err(Error::NonPositiveLikelihood);
            }
            acc += c * math::ln(p);
        }
        Ok(acc / self.m)
    }

    /// Scaled log-likelihood with probabilities floored at 1e-12, defined
    /// everywhere; used inside solvers to survive boundary crossings.
    pub fn log_likelihood_floored(&self, theta: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (c, d) in &self.cells {
            let p = self.prob(d, theta).max(P_FLOOR);
            acc += c * math::ln(p);
        }
        acc / self.m
    }

    /// Gradient of the scaled log-likelihood.
    pub fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.dim];
        for (c, d) in &self.cells {
            let p = self.prob(d, theta);
            if p <= 0.0 {
                return Err(Error::NonPositiveLikelihood);
            }
            let w = c / p;
            for (gj, dj) in g.iter_mut().zip(d.iter()) {
                *gj += w * dj;
            }
        }
        for gj in g.iter_mut() {
            *gj /= self.m;
        }
        Ok(g)
    }

    fn score_floored(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim];
        for (c, d) in &self.cells {
            let p = self.prob(d, theta).max(P_FLOOR);
            let w = c / p;
            for (gj, dj) in g.iter_mut().zip(d.iter()) {
                *gj += w * dj;
            }
        }
        for gj in g.iter_mut() {
            *gj /= self.m;
        }
        g
    }

    /// Hessian of the scaled log-likelihood, row-major dim x dim. Exact:
    /// because p is affine in theta, the Hessian is
    /// -(1/m) sum c (d d^T)/p^2.
    pub fn hessian(&self, theta: &[f64]) -> Result<Vec<f64>> {
        for (_, d) in &self.cells {
            if self.prob(d, theta) <= 0.0 {
                return Err(Error::NonPositiveLikelihood);
            }
        }
        Ok(self.hessian_floored(theta))
    }

    fn hessian_floored(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut hess = vec![0.0; d * d];
        for (c, coeffs) in &self.cells {
            let p = self.prob(coeffs, theta).max(P_FLOOR);
            let w = c / (p * p);
            for j in 0..d {
                let wj = w * coeffs[j];
                for k in 0..d {
                    hess[j * d + k] -= wj * coeffs[k];
                }
            }
        }
        for v in hess.iter_mut() {
            *v /= self.m;
        }
        hess
    }

    /// Per-observation outer-product-of-gradients sum (1/m) sum_k s_k s_k^T,
    /// where s_k = d/p is the single-observation score of observation k.
    pub fn opg_per_observation(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim;
        let mut opg = vec![0.0; d * d];
        for (c, coeffs) in &self.cells {
            let p = self.prob(coeffs, theta);
            if p <= 0.0 {
                return Err(Error::NonPositiveLikelihood);
            }
            let s: Vec<f64> = coeffs.iter().map(|v| v / p).collect();
            for j in 0..d {
                let w = c * s[j];
                for k in 0..d {
                    opg[j * d + k] += w * s[k];
                }
            }
        }
        for v in opg.iter_mut() {
            *v /= self.m;
        }
        Ok(opg)
    }
}

/// Packed optimization state t = (theta, lambda, gamma): multipliers and
/// slacks for the N-1 constraints a_2..a_N.
#[derive(Debug, Clone)]
pub struct LagrangianState {
    pub theta: BlochVector,
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl LagrangianState {
    /// Standard initialization: lambda = 0 (constraints assumed inactive)
    /// and gamma_j = sqrt(max(a_j(theta), 1e-6)).
    pub fn init(theta: BlochVector, sc: &StructureConstants) -> Result<Self> {
        let coeffs = char_poly_coefficients(&theta, sc)?;
        let gamma = coeffs
            .scaled
            .iter()
            .map(|&a| math::sqrt(if a > 1e-6 { a } else { 1e-6 }))
            .collect();
        let k = coeffs.scaled.len();
        Ok(LagrangianState {
            theta,
            lambda: vec![0.0; k],
            gamma,
        })
    }

    pub fn n(&self) -> usize {
        self.theta.n()
    }

    /// Total packed dimension (N^2 - 1) + 2(N - 1).
    pub fn dim(&self) -> usize {
        self.theta.d() + self.lambda.len() + self.gamma.len()
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.dim());
        t.extend_from_slice(self.theta.theta());
        t.extend_from_slice(&self.lambda);
        t.extend_from_slice(&self.gamma);
        t
    }

    pub fn unpack(n: usize, t: &[f64]) -> Result<Self> {
        let d = n * n - 1;
        let k = n - 1;
        if t.len() != d + 2 * k {
            return Err(Error::DimensionMismatch {
                expected: d + 2 * k,
                got: t.len(),
            });
        }
        Ok(LagrangianState {
            theta: BlochVector::new(n, t[..d].to_vec())?,
            lambda: t[d..d + k].to_vec(),
            gamma: t[d + k..].to_vec(),
        })
    }
}

/// The root-finding system H and its Jacobian for one sample.
struct LagrangianSystem<'a> {
    model: &'a LikelihoodModel,
    sc: &'a StructureConstants,
    n: usize,
    d: usize,
    k: usize,
}

impl<'a> LagrangianSystem<'a> {
    fn new(model: &'a LikelihoodModel, sc: &'a StructureConstants) -> Self {
        let n = model.n();
        LagrangianSystem {
            model,
            sc,
            n,
            d: model.dim(),
            k: n - 1,
        }
    }

    fn dim(&self) -> usize {
        self.d + 2 * self.k
    }

    fn theta_vec(&self, t: &[f64]) -> BlochVector {
        BlochVector::new(self.n, t[..self.d].to_vec()).expect("packed state has valid length")
    }

    /// H(t), with floored probabilities.
    fn residual(&self, t: &[f64]) -> Result<Vec<f64>> {
        let theta = self.theta_vec(t);
        let (lambda, gamma) = (&t[self.d..self.d + self.k], &t[self.d + self.k..]);
        let score = self.model.score_floored(theta.theta());
        let coeffs = char_poly_coefficients(&theta, self.sc)?;
        let grads = constraint_gradients(&theta, self.sc)?;
        let mut h = Vec::with_capacity(self.dim());
        for j in 0..self.d {
            let mut v = score[j];
            for c in 0..self.k {
                v += lambda[c] * grads[c][j];
            }
            h.push(v);
        }
        for c in 0..self.k {
            h.push(coeffs.scaled[c] - gamma[c] * gamma[c]);
        }
        for c in 0..self.k {
            h.push(2.0 * lambda[c] * gamma[c]);
        }
        Ok(h)
    }

    /// Analytic Jacobian of H, row-major dim x dim, floored probabilities.
    fn jacobian(&self, t: &[f64]) -> Result<Vec<f64>> {
        let theta = self.theta_vec(t);
        let (lambda, gamma) = (&t[self.d..self.d + self.k], &t[self.d + self.k..]);
        let dim = self.dim();
        let mut jac = vec![0.0; dim * dim];
        let hess = self.model.hessian_floored(theta.theta());
        let grads = constraint_gradients(&theta, self.sc)?;
        let hesss = constraint_hessians(&theta, self.sc)?;
        // Stationarity rows.
        for j in 0..self.d {
            for kk in 0..self.d {
                let mut v = hess[j * self.d + kk];
                for c in 0..self.k {
                    v += lambda[c] * hesss[c][j * self.d + kk];
                }
                jac[j * dim + kk] = v;
            }
            for c in 0..self.k {
                jac[j * dim + self.d + c] = grads[c][j];
            }
        }
        // Constraint rows a_c - gamma_c^2.
        for c in 0..self.k {
            let row = self.d + c;
            for kk in 0..self.d {
                jac[row * dim + kk] = grads[c][kk];
            }
            jac[row * dim + self.d + self.k + c] = -2.0 * gamma[c];
        }
        // Complementarity rows 2 lambda_c gamma_c.
        for c in 0..self.k {
            let row = self.d + self.k + c;
            jac[row * dim + self.d + c] = 2.0 * gamma[c];
            jac[row * dim + self.d + self.k + c] = 2.0 * lambda[c];
        }
        Ok(jac)
    }

    fn h_value(&self, t: &[f64]) -> f64 {
        match self.residual(t) {
            Ok(h) => h.iter().map(|v| v * v).sum(),
            Err(_) => f64::INFINITY,
        }
    }

    fn h_gradient(&self, t: &[f64]) -> Result<Vec<f64>> {
        let h = self.residual(t)?;
        let jac = self.jacobian(t)?;
        let dim = self.dim();
        let mut g = vec![0.0; dim];
        for i in 0..dim {
            for j in 0..dim {
                g[j] += 2.0 * jac[i * dim + j] * h[i];
            }
        }
        Ok(g)
    }

    /// Multipliers must stay non-negative (KKT for a maximization with
    /// a_j >= 0 constraints).
    fn project(&self, t: &mut [f64]) {
        for c in 0..self.k {
            if t[self.d + c] < 0.0 {
                t[self.d + c] = 0.0;
            }
        }
    }

    fn converged(&self, t: &[f64], h: f64, cfg: &EstimationConfig) -> bool {
        h <= cfg.residual_tolerance * cfg.residual_tolerance
            && h <= cfg.likelihood_tolerance
            && self.model.min_observed_probability(&t[..self.d]) > P_FLOOR
    }
}

/// Scaled log-likelihood l(theta) = (1/m) sum_{r,i} c_{r,i} ln p_i^r(theta).
pub fn log_likelihood(theta: &BlochVector, sample: &Sample) -> Result<f64> {
    let gens = build_generators(sample.n())?;
    LikelihoodModel::new(&gens, sample)?.log_likelihood(theta.theta())
}

/// Gradient of the scaled log-likelihood,
/// score_j = (1/m) sum c_{r,i} d_{r,i,j} / p_i^r(theta).
pub fn score(theta: &BlochVector, sample: &Sample) -> Result<Vec<f64>> {
    let gens = build_generators(sample.n())?;
    LikelihoodModel::new(&gens, sample)?.score(theta.theta())
}

/// The first-order system H(t) at a packed state (strict probabilities).
pub fn lagrangian_residual(t: &LagrangianState, sample: &Sample) -> Result<Vec<f64>> {
    let gens = build_generators(sample.n())?;
    let sc = compute_structure_constants(&gens);
    let model = LikelihoodModel::new(&gens, sample)?;
    // Strictness: reject non-positive observed probabilities up front.
    model.score(t.theta.theta())?;
    LagrangianSystem::new(&model, &sc).residual(&t.pack())
}

/// Analytic Jacobian of H at a packed state, row-major (strict
/// probabilities).
pub fn lagrangian_jacobian(t: &LagrangianState, sample: &Sample) -> Result<Vec<f64>> {
    let gens = build_generators(sample.n())?;
    let sc = compute_structure_constants(&gens);
    let model = LikelihoodModel::new(&gens, sample)?;
    model.score(t.theta.theta())?;
    LagrangianSystem::new(&model, &sc).jacobian(&t.pack())
}

fn build_result(
    gens: &GeneratorSet,
    model: &LikelihoodModel,
    t: &[f64],
    method: EstimationMethod,
    converged: bool,
    h: f64,
    iterations: usize,
) -> Result<EstimationResult> {
    let d = model.dim();
    let theta_hat = BlochVector::new(model.n(), t[..d].to_vec())?;
    let rho_hat = bloch_to_density(gens, &theta_hat)?;
    let physical = rho_hat.is_physical()?;
    let scaled_loglik = model.log_likelihood_floored(theta_hat.theta());
    Ok(EstimationResult {
        theta_hat,
        rho_hat,
        converged,
        physical,
        method,
        scaled_loglik,
        residual_norm: math::sqrt(h.max(0.0)),
        iterations,
    })
}

fn newton_core(
    sys: &LagrangianSystem<'_>,
    t0: &[f64],
    cfg: &EstimationConfig,
) -> Result<(Vec<f64>, f64, usize, bool)> {
    let dim = sys.dim();
    let mut t = t0.to_vec();
    sys.project(&mut t);
    let mut h = sys.h_value(&t);
    if !h.is_finite() {
        return Err(Error::NonFinite);
    }
    for iter in 0..cfg.max_newton_iters {
        if sys.converged(&t, h, cfg) {
            return Ok((t, h, iter, true));
        }
        let residual = sys.residual(&t)?;
        let mut jac = sys.jacobian(&t)?;
        let mut rhs: Vec<f64> = residual.iter().map(|v| -v).collect();
        let delta = match linalg::solve_real(dim, &mut jac, &mut rhs) {
            Ok(d) => d,
            Err(Error::SingularSystem) => return Err(Error::SingularJacobian),
            Err(e) => return Err(e),
        };
        // Backtracking on the step length until h decreases.
        let mut step = 1.0f64;
        let mut accepted = false;
        for _ in 0..cfg.max_backtracks {
            let mut cand: Vec<f64> = t
                .iter()
                .zip(delta.iter())
                .map(|(a, b)| a + step * b)
                .collect();
            sys.project(&mut cand);
            let hc = sys.h_value(&cand);
            if hc.is_finite() && hc < h {
                t = cand;
                h = hc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::LineSearchStalled);
        }
    }
    let converged = sys.converged(&t, h, cfg);
    Ok((t, h, cfg.max_newton_iters, converged))
}

/// Damped Newton iteration on H(t) = 0: full step direction -J^{-1}H with
/// the step length halved until h = H.H decreases. Errors signal that the
/// quasi-Newton fallback should run (singular Jacobian, stalled line
/// search, exhausted budget).
pub fn newton_solve(
    t0: &LagrangianState,
    sample: &Sample,
    cfg: &EstimationConfig,
) -> Result<EstimationResult> {
    cfg.validate()?;
    let gens = build_generators(sample.n())?;
    let sc = compute_structure_constants(&gens);
    let model = LikelihoodModel::new(&gens, sample)?;
    let sys = LagrangianSystem::new(&model, &sc);
    let (t, h, iters, conv) = newton_core(&sys, &t0.pack(), cfg)?;
    build_result(&gens, &model, &t, EstimationMethod::Newton, conv, h, iters)
}

struct BfgsOutcome {
    t: Vec<f64>,
    h: f64,
    iterations: usize,
    converged: bool,
}

/// Armijo line search along `dir` from `t`: tries the full step, then the
/// quadratic-interpolation minimizer (exact when h is quadratic along the
/// ray), then halving with a plain-decrease criterion. Candidate points
/// are projected before evaluation.
fn search_along(
    sys: &LagrangianSystem<'_>,
    t: &[f64],
    dir: &[f64],
    h: f64,
    slope: f64,
    cfg: &EstimationConfig,
) -> Option<(Vec<f64>, f64)> {
    let trial = |alpha: f64| -> (Vec<f64>, f64) {
        let mut cand: Vec<f64> = t
            .iter()
            .zip(dir.iter())
            .map(|(a, d)| a + alpha * d)
            .collect();
        sys.project(&mut cand);
        let hc = sys.h_value(&cand);
        (cand, hc)
    };
    let armijo = |alpha: f64, val: f64| val <= h + 1e-4 * alpha * slope;

    let (mut cand, mut hc) = trial(1.0);
    let mut accepted = hc.is_finite() && armijo(1.0, hc);
    if hc.is_finite() {
        let denom = hc - h - slope;
        if denom > 0.0 {
            let alpha_star = (-slope / (2.0 * denom)).clamp(1e-4, 4.0);
            let (c2, h2) = trial(alpha_star);
            if h2.is_finite() && (h2 < hc || !accepted) && armijo(alpha_star, h2) {
                cand = c2;
                hc = h2;
                accepted = true;
            }
        }
    }
    if !accepted {
        let mut a = 0.5f64;
        for _ in 0..cfg.max_backtracks {
            let (c2, h2) = trial(a);
            if h2.is_finite() && h2 < h {
                cand = c2;
                hc = h2;
                accepted = true;
                break;
            }
            a *= 0.5;
        }
    }
    if accepted {
        Some((cand, hc))
    } else {
        None
    }
}

/// Fallback search along the exact root-finding direction -J^{-1}H. Near
/// a root this is the ideal descent direction for h (slope -2h), where a
/// freshly reset quasi-Newton model crawls; near complementarity corners
/// it is often the only direction making measurable progress.
fn search_newton_direction(
    sys: &LagrangianSystem<'_>,
    t: &[f64],
    h: f64,
    cfg: &EstimationConfig,
) -> Option<(Vec<f64>, f64)> {
    let dim = sys.dim();
    let residual = sys.residual(t).ok()?;
    let mut jac = sys.jacobian(t).ok()?;
    let mut rhs: Vec<f64> = residual.iter().map(|v| -v).collect();
    let dir = linalg::solve_real(dim, &mut jac, &mut rhs).ok()?;
    let g = sys.h_gradient(t).ok()?;
    let slope: f64 = dir.iter().zip(g.iter()).map(|(a, c)| a * c).sum();
    if !(slope < 0.0) {
        return None;
    }
    search_along(sys, t, &dir, h, slope, cfg)
}

fn bfgs_core(
    sys: &LagrangianSystem<'_>,
    t0: &[f64],
    cfg: &EstimationConfig,
    rng: &mut Rng,
) -> Result<BfgsOutcome> {
    let dim = sys.dim();
    let mut t = t0.to_vec();
    sys.project(&mut t);
    let mut h = sys.h_value(&t);
    if !h.is_finite() {
        return Err(Error::NonFinite);
    }
    let mut g = sys.h_gradient(&t)?;
    // Inverse-Hessian approximation, row-major.
    let mut b = identity_matrix(dim);
    let mut stagnant = 0usize;
    let mut annealing_left = cfg.annealing_rounds;
    // Annealing rounds are also dispensed on a schedule, not only on
    // stagnation: a run pinned to a gamma = 0 ridge can descend toward a
    // nonzero asymptote for the whole budget without ever looking stuck.
    let kick_interval = (cfg.bfgs_max_iters / (cfg.annealing_rounds + 1)).max(50);
    let mut last_kick = 0usize;

    for iter in 0..cfg.bfgs_max_iters {
        if sys.converged(&t, h, cfg) {
            return Ok(BfgsOutcome {
                t,
                h,
                iterations: iter,
                converged: true,
            });
        }

        let mut dir = mat_vec_neg(&b, &g);
        let mut slope: f64 = dir.iter().zip(g.iter()).map(|(a, c)| a * c).sum();
        if !(slope < 0.0) {
            // Not a descent direction: reset to steepest descent.
            b = identity_matrix(dim);
            dir = g.iter().map(|v| -v).collect();
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }

        let step = search_along(sys, &t, &dir, h, slope, cfg)
            .or_else(|| search_newton_direction(sys, &t, h, cfg));

        let (cand, hc) = match step {
            Some(pair) => pair,
            None => {
                // Nothing decreases h from here: either anneal or stop.
                if annealing_left == 0 {
                    return Ok(BfgsOutcome {
                        t,
                        h,
                        iterations: iter,
                        converged: false,
                    });
                }
                annealing_left -= 1;
                let before = t.clone();
                anneal(sys, &mut t, &mut h, cfg, rng);
                if t != before {
                    b = identity_matrix(dim);
                    g = sys.h_gradient(&t)?;
                }
                stagnant = 0;
                last_kick = iter;
                continue;
            }
        };

        let rel_drop = (h - hc) / h.max(1e-300);
        let g_new = sys.h_gradient(&cand)?;
        // Inverse BFGS update with a curvature guard.
        let s: Vec<f64> = cand.iter().zip(t.iter()).map(|(a, o)| a - o).collect();
        let y: Vec<f64> = g_new.iter().zip(g.iter()).map(|(a, o)| a - o).collect();
        let sy: f64 = s.iter().zip(y.iter()).map(|(a, c)| a * c).sum();
        let s_norm = math::sqrt(s.iter().map(|v| v * v).sum());
        let y_norm = math::sqrt(y.iter().map(|v| v * v).sum());
        if sy > 1e-10 * s_norm * y_norm {
            bfgs_update(&mut b, &s, &y, sy);
        }
        t = cand;
        h = hc;
        g = g_new;

        if rel_drop < 1e-10 {
            stagnant += 1;
        } else {
            stagnant = 0;
        }
        let scheduled = iter >= last_kick + kick_interval;
        if stagnant >= 5 || scheduled {
            if annealing_left == 0 {
                if scheduled && stagnant < 5 {
                    // Budget of kicks exhausted but still descending.
                    continue;
                }
                return Ok(BfgsOutcome {
                    t,
                    h,
                    iterations: iter,
                    converged: false,
                });
            }
            annealing_left -= 1;
            let before = t.clone();
            anneal(sys, &mut t, &mut h, cfg, rng);
            if t != before {
                b = identity_matrix(dim);
                g = sys.h_gradient(&t)?;
            }
            stagnant = 0;
            last_kick = iter;
        }
    }
    let converged = sys.converged(&t, h, cfg);
    Ok(BfgsOutcome {
        t,
        h,
        iterations: cfg.bfgs_max_iters,
        converged,
    })
}

/// Metropolis random walk on h with a geometric temperature schedule.
/// Proposals perturb one coordinate at a time, so a move along a
/// symmetry plane's normal (for example a gamma = 0 ridge, where the
/// gradient vanishes identically) is judged on its own merit instead of
/// being buried under noise on every other coordinate.
fn anneal(
    sys: &LagrangianSystem<'_>,
    t: &mut Vec<f64>,
    h: &mut f64,
    cfg: &EstimationConfig,
    rng: &mut Rng,
) {
    let dim = t.len();
    let mut temp = cfg.annealing_initial_temp_factor * (*h);
    if !(temp > 0.0) || !temp.is_finite() {
        temp = 1e-12;
    }
    for _ in 0..cfg.annealing_steps {
        let k = ((rng.uniform() * dim as f64) as usize).min(dim - 1);
        let mut cand = t.clone();
        cand[k] += cfg.annealing_sigma * rng.normal();
        sys.project(&mut cand);
        let hc = sys.h_value(&cand);
        if hc.is_finite() && (hc < *h || rng.uniform() < math::exp(-(hc - *h) / temp)) {
            *t = cand;
            *h = hc;
        }
        temp *= cfg.annealing_decay;
    }
}

fn identity_matrix(dim: usize) -> Vec<f64> {
    let mut m = vec![0.0; dim * dim];
    for i in 0..dim {
        m[i * dim + i] = 1.0;
    }
    m
}

fn mat_vec_neg(m: &[f64], v: &[f64]) -> Vec<f64> {
    let dim = v.len();
    let mut out = vec![0.0; dim];
    for i in 0..dim {
        let mut acc = 0.0;
        for j in 0..dim {
            acc += m[i * dim + j] * v[j];
        }
        out[i] = -acc;
    }
    out
}

/// B <- (I - rho s y^T) B (I - rho y s^T) + rho s s^T with rho = 1/(y.s).
fn bfgs_update(b: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let dim = s.len();
    let rho = 1.0 / sy;
    // u = B y
    let mut u = vec![0.0; dim];
    for i in 0..dim {
        let mut acc = 0.0;
        for j in 0..dim {
            acc += b[i * dim + j] * y[j];
        }
        u[i] = acc;
    }
    let yby: f64 = y.iter().zip(u.iter()).map(|(a, c)| a * c).sum();
    for i in 0..dim {
        for j in 0..dim {
            b[i * dim + j] += -rho * (s[i] * u[j] + u[i] * s[j])
                + rho * rho * yby * s[i] * s[j]
                + rho * s[i] * s[j];
        }
    }
}

fn bfgs_sa_with_seed(
    t0: &LagrangianState,
    sample: &Sample,
    cfg: &EstimationConfig,
    seed: RngSeed,
) -> Result<EstimationResult> {
    let gens = build_generators(sample.n())?;
    let sc = compute_structure_constants(&gens);
    let model = LikelihoodModel::new(&gens, sample)?;
    let sys = LagrangianSystem::new(&model, &sc);
    let mut rng = Rng::from_seed(seed);
    let out = bfgs_core(&sys, &t0.pack(), cfg, &mut rng)?;
    build_result(
        &gens,
        &model,
        &out.t,
        EstimationMethod::BfgsSa,
        out.converged,
        out.h,
        out.iterations,
    )
}

/// Quasi-Newton minimization of h(t) = H.H with analytic gradient 2J^T H,
/// Armijo line search with quadratic interpolation, and Metropolis
/// annealing restarts on stagnation. Deterministic given cfg.seed.
pub fn bfgs_sa_solve(
    t0: &LagrangianState,
    sample: &Sample,
    cfg: &EstimationConfig,
) -> Result<EstimationResult> {
    cfg.validate()?;
    bfgs_sa_with_seed(t0, sample, cfg, cfg.seed)
}

/// Shrinks an inadmissible Bloch vector toward the maximally mixed state
/// until it is admissible (bisection on the scale factor, then a small
/// safety margin). Admissible inputs pass through unchanged.
pub fn project_admissible(theta: &BlochVector, sc: &StructureConstants) -> Result<BlochVector> {
    if is_admissible(theta, sc)? {
        return Ok(theta.clone());
    }
    let n = theta.n();
    let scaled = |c: f64| -> Result<bool> {
        let v: Vec<f64> = theta.theta().iter().map(|t| c * t).collect();
        is_admissible(&BlochVector::new(n, v)?, sc)
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if scaled(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let c = lo * 0.999;
    BlochVector::new(n, theta.theta().iter().map(|t| c * t).collect())
}

/// Uniform draw from the admissible set: uniform in the bounding ball
/// |theta| <= sqrt(2(N-1)/N) (Gaussian direction, radius by inverse CDF),
/// rejected until admissible.
fn random_admissible(n: usize, sc: &StructureConstants, rng: &mut Rng) -> Result<BlochVector> {
    let d = n * n - 1;
    let radius = math::sqrt(2.0 * (n as f64 - 1.0) / n as f64);
    loop {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = math::sqrt(v.iter().map(|x| x * x).sum());
        if norm == 0.0 {
            continue;
        }
        let r = radius * math::powf(rng.uniform(), 1.0 / d as f64);
        for x in v.iter_mut() {
            *x *= r / norm;
        }
        let theta = BlochVector::new(n, v)?;
        if is_admissible(&theta, sc)? {
            return Ok(theta);
        }
    }
}

/// Multistart constrained ML driver. Start points: the maximally mixed
/// state, the admissibility-projected linear-inversion estimate, and
/// seeded random admissible draws. Each start runs Newton first and falls
/// back to BFGS + annealing. Among converged runs the one with the highest
/// scaled log-likelihood wins; if nothing converges the best-effort result
/// comes back with converged = false.
pub fn estimate(sample: &Sample, cfg: &EstimationConfig) -> Result<EstimationResult> {
    cfg.validate()?;
    let n = sample.n();
    let gens = build_generators(n)?;
    let sc = compute_structure_constants(&gens);
    let d = n * n - 1;

    let mut starts: Vec<BlochVector> = Vec::with_capacity(cfg.multistart_count);
    starts.push(BlochVector::new(n, vec![0.0; d])?);
    if cfg.multistart_count > 1 {
        if let Ok(mm) = tomographic_inversion(sample) {
            starts.push(project_admissible(&mm, &sc)?);
        }
    }
    let mut start_rng = Rng::from_seed(cfg.seed.stream(500));
    while starts.len() < cfg.multistart_count {
        starts.push(random_admissible(n, &sc, &mut start_rng)?);
    }

    let mut best: Option<EstimationResult> = None;
    let mut best_failed: Option<EstimationResult> = None;
    for (k, theta0) in starts.into_iter().enumerate() {
        let t0 = LagrangianState::init(theta0, &sc)?;
        let attempt = match newton_solve_quiet(&t0, sample, cfg) {
            Ok(res) if res.converged => res,
            _ => match bfgs_sa_with_seed(&t0, sample, cfg, cfg.seed.stream(1000 + k as u64)) {
                Ok(res) => res,
                Err(_) => continue,
            },
        };
        if attempt.converged {
            let better = match &best {
                None => true,
                Some(b) => attempt.scaled_loglik > b.scaled_loglik,
            };
            if better {
                best = Some(attempt);
            }
        } else {
            let better = match &best_failed {
                None => true,
                Some(b) => attempt.scaled_loglik > b.scaled_loglik,
            };
            if better {
                best_failed = Some(attempt);
            }
        }
    }
    best.or(best_failed).ok_or(Error::NonFinite)
}

/// newton_solve without the config re-validation, used by the driver.
fn newton_solve_quiet(
    t0: &LagrangianState,
    sample: &Sample,
    cfg: &EstimationConfig,
) -> Result<EstimationResult> {
    let gens = build_generators(sample.n())?;
    let sc = compute_structure_constants(&gens);
    let model = LikelihoodModel::new(&gens, sample)?;
    let sys = LagrangianSystem::new(&model, &sc);
    let (t, h, iters, conv) = newton_core(&sys, &t0.pack(), cfg)?;
    build_result(&gens, &model, &t, EstimationMethod::Newton, conv, h, iters)
}

/// Finds the loosest convergence tolerance that still reconstructs
/// reliably: for each candidate tau (1e0 down to 1e-12) runs 20 seeded
/// estimations at m = 10^4 with residual_tolerance = sqrt(tau) and
/// likelihood_tolerance = tau, returning the first tau for which every
/// run converges with fidelity(rho_hat, rho0) >= 0.999.
pub fn calibrate_tolerance(
    rho0: &DensityMatrix,
    bases: &crate::measurement::BasisSet,
    cfg: &EstimationConfig,
) -> Result<f64> {
    cfg.validate()?;
    const RUNS: u64 = 20;
    const M: u64 = 10_000;
    let mut tau = 1.0f64;
    for _ in 0..13 {
        let mut all_ok = true;
        for j in 0..RUNS {
            let seed = cfg.seed.stream(90_000 + j);
            let sample = crate::sampling::simulate_sample(rho0, bases, M, seed)?;
            let mut run_cfg = cfg.clone();
            run_cfg.residual_tolerance = math::sqrt(tau);
            run_cfg.likelihood_tolerance = tau;
            run_cfg.seed = seed;
            let res = estimate(&sample, &run_cfg)?;
            let ok = res.converged
                && match crate::state::fidelity(&res.rho_hat, rho0) {
                    Ok(f) => f >= 0.999,
                    Err(_) => false,
                };
            if !ok {
                all_ok = false;
                break;
            }
        }
        if all_ok {
            return Ok(tau);
        }
        tau *= 0.1;
    }
    Err(Error::CalibrationFailed)
}

/// Linear-inversion (method-of-moments) estimate: stacks one row per
/// basis/outcome cell of the affine Born model, 1/N + d . theta =
/// observed frequency, and solves by least squares through the normal
/// equations. The result is NOT forced into the admissible set.
pub fn tomographic_inversion(sample: &Sample) -> Result<BlochVector> {
    let n = sample.n();
    let gens = build_generators(n)?;
    let d = gens.count();
    let set = sample.basis_set();
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    for r in 0..set.count() {
        let m_r = sample.basis_total(r);
        if m_r == 0 {
            continue;
        }
        let obs = observables_from_basis(set.get(r));
        for (i, o) in obs.iter().enumerate() {
            let freq = sample.count(r, i) as f64 / m_r as f64;
            rows.push((o.bloch_coefficients(&gens), freq - 1.0 / n as f64));
        }
    }
    if rows.len() < d {
        return Err(Error::InsufficientData);
    }
    // Normal equations A^T A theta = A^T b.
    let mut ata = vec![0.0f64; d * d];
    let mut atb = vec![0.0f64; d];
    for (a, b) in &rows {
        for j in 0..d {
            atb[j] += a[j] * b;
            for k in 0..d {
                ata[j * d + k] += a[j] * a[k];
            }
        }
    }
    let theta = linalg::solve_real(d, &mut ata, &mut atb)?;
    BlochVector::new(n, theta)
}
