//! Monte Carlo evaluation of the estimator: replication driver, physical
//! filtering, summary tables (bias, spread, RMSE, quantiles, asymptotic
//! standard errors), empirical test size and power, relative efficiency
//! between measurement designs, and a Gaussian kernel density estimator
//! for visualizing sampling distributions.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::algebra::build_generators;
use crate::error::{Error, Result};
use crate::estimator::{estimate, EstimationConfig, EstimationResult};
use crate::inference::{
    asymptotic_covariance, delta_method_variance, eigenvalue_gradient, observed_fisher_hessian,
    t_statistic, wald_statistic, CovarianceEstimate,
};
use crate::math;
use crate::measurement::BasisSet;
use crate::rng::{Rng, RngSeed};
use crate::sampling::{simulate_sample, Sample};
use crate::state::{bloch_to_density, BlochVector, DensityMatrix};

/// Number of evaluation points in a kernel density estimate.
pub const KDE_GRID_POINTS: usize = 512;

/// Replication plan for one Monte Carlo experiment.
#[derive(Debug, Clone)]
pub struct McConfig {
    /// Observations per replication, split evenly across bases.
    pub m: u64,
    /// Number of replications.
    pub q: usize,
    /// Base seed; replication j derives its seed by offsetting j.
    pub seed: RngSeed,
    pub estimation: EstimationConfig,
}

/// One replication: the estimate plus, when it exists, the asymptotic
/// covariance at theta_hat. The covariance is absent when the estimate
/// sits on the positivity boundary or the information matrix is
/// ill-conditioned.
#[derive(Debug, Clone)]
pub struct ReplicationOutcome {
    pub result: EstimationResult,
    pub sigma: Option<CovarianceEstimate>,
}

/// One summary table row for a scalar quantity (a Bloch coordinate, a
/// population, or an eigenvalue).
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub label: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    /// Spread about the Monte Carlo mean, divisor q, so that
    /// rmse^2 = bias^2 + std^2 holds exactly.
    pub std: f64,
    pub rmse: f64,
    pub q025: f64,
    pub q975: f64,
    /// Asymptotic standard error from one selected replication.
    pub asymptotic_se: Option<f64>,
}

/// Summary table over all replications that reached this stage.
#[derive(Debug, Clone)]
pub struct McSummary {
    pub rows: Vec<SummaryRow>,
    pub replications: usize,
    /// Index (into the summarized slice) of the replication supplying
    /// the asymptotic column, when one was available.
    pub asymptotic_from: Option<usize>,
}

/// Empirical rejection behavior of a repeated hypothesis test.
#[derive(Debug, Clone)]
pub struct TestSummary {
    pub evaluated: usize,
    /// Replications without the ingredients for the test (missing
    /// covariance or degenerate spectrum).
    pub skipped: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    /// Finite-sample critical values from the empirical statistic
    /// distribution: 2.5% quantile for t hypotheses, absent for Wald.
    pub critical_lower: Option<f64>,
    /// 97.5% statistic quantile for t hypotheses, 95% for Wald.
    pub critical_upper: f64,
}

/// A hypothesis evaluated once per replication. Indices are 0-based.
#[derive(Debug, Clone)]
pub enum Hypothesis {
    /// t test of one Bloch coordinate against a fixed value.
    CoordinateT { index: usize, target: f64 },
    /// t test of one (descending) eigenvalue against a fixed value,
    /// with the standard error from the delta method.
    EigenvalueT { level: usize, target: f64 },
    /// Joint Wald test of a subset of coordinates.
    WaldCoordinates { indices: Vec<usize>, targets: Vec<f64> },
}

/// Kernel density estimate on a uniform grid.
#[derive(Debug, Clone)]
pub struct KdeEstimate {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

fn replication_sigma(theta: &BlochVector, sample: &Sample) -> Option<CovarianceEstimate> {
    let fisher = observed_fisher_hessian(theta, sample).ok()?;
    asymptotic_covariance(&fisher).ok()
}

/// One replication of a Monte Carlo plan: simulate counts from rho0 with
/// the replication's derived seed, estimate, and attach the asymptotic
/// covariance where defined. Replication j uses seed base + j for both
/// the draw and the estimator, so each replication is reproducible on
/// its own and the plan can be executed in any order.
pub fn run_replication(
    rho0: &DensityMatrix,
    bases: &BasisSet,
    cfg: &McConfig,
    j: usize,
) -> Result<ReplicationOutcome> {
    let seed_j = cfg.seed.stream(j as u64);
    let sample = simulate_sample(rho0, bases, cfg.m, seed_j)?;
    let mut est_cfg = cfg.estimation.clone();
    est_cfg.seed = seed_j;
    let result = estimate(&sample, &est_cfg)?;
    let sigma = if result.converged {
        replication_sigma(&result.theta_hat, &sample)
    } else {
        None
    };
    Ok(ReplicationOutcome { result, sigma })
}

/// Runs q independent replications in order.
pub fn run_monte_carlo(
    rho0: &DensityMatrix,
    bases: &BasisSet,
    cfg: &McConfig,
) -> Result<Vec<ReplicationOutcome>> {
    if cfg.q == 0 {
        return Err(Error::InvalidConfig("replication count must be positive"));
    }
    cfg.estimation.validate()?;
    let mut out = Vec::with_capacity(cfg.q);
    for j in 0..cfg.q {
        out.push(run_replication(rho0, bases, cfg, j)?);
    }
    Ok(out)
}

/// Drops replications that failed to converge or left the physical set.
/// Errors when nothing survives.
pub fn filter_physical(outcomes: &[ReplicationOutcome]) -> Result<Vec<ReplicationOutcome>> {
    let kept: Vec<ReplicationOutcome> = outcomes
        .iter()
        .filter(|o| o.result.converged && o.result.physical)
        .cloned()
        .collect();
    if kept.is_empty() {
        return Err(Error::AllFiltered);
    }
    Ok(kept)
}

/// Type 7 (linear interpolation) quantile of an ascending-sorted slice.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = math::floor(h) as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

fn mean_of(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

struct RowStats {
    mean: f64,
    std: f64,
    rmse: f64,
    q025: f64,
    q975: f64,
}

fn row_stats(values: &[f64], truth: f64) -> RowStats {
    let q = values.len() as f64;
    let mean = mean_of(values);
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / q;
    let mse = values.iter().map(|v| (v - truth) * (v - truth)).sum::<f64>() / q;
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite summaries"));
    RowStats {
        mean,
        std: math::sqrt(var),
        rmse: math::sqrt(mse),
        q025: quantile_type7(&sorted, 0.025),
        q975: quantile_type7(&sorted, 0.975),
    }
}

/// Gradient of rho_ii with respect to theta: one half of the real
/// diagonal of each generator.
fn population_gradient(n: usize, i: usize) -> Result<Vec<f64>> {
    let gens = build_generators(n)?;
    Ok((0..gens.count())
        .map(|j| 0.5 * gens.get(j).at(i, i).re)
        .collect())
}

/// Builds the summary table over theta coordinates, populations, and
/// eigenvalues. The asymptotic column comes from a single replication
/// picked by a sub-stream of `seed` among those carrying a covariance;
/// its eigenvalue rows stay empty if that replication's spectrum is too
/// close to degenerate.
pub fn summarize(
    outcomes: &[ReplicationOutcome],
    theta0: &BlochVector,
    seed: RngSeed,
) -> Result<McSummary> {
    if outcomes.is_empty() {
        return Err(Error::InsufficientData);
    }
    let n = theta0.n();
    let d = theta0.d();
    for o in outcomes {
        if o.result.theta_hat.n() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: o.result.theta_hat.n(),
            });
        }
    }
    let gens = build_generators(n)?;
    let rho0 = bloch_to_density(&gens, theta0)?;
    let truth_pop = rho0.diagonal();
    let truth_eig = rho0.eigenvalues()?;

    // Per-replication derived quantities.
    let q = outcomes.len();
    let mut theta_cols = vec![Vec::with_capacity(q); d];
    let mut pop_cols = vec![Vec::with_capacity(q); n];
    let mut eig_cols = vec![Vec::with_capacity(q); n];
    for o in outcomes {
        for (j, v) in o.result.theta_hat.theta().iter().enumerate() {
            theta_cols[j].push(*v);
        }
        for (i, v) in o.result.rho_hat.diagonal().iter().enumerate() {
            pop_cols[i].push(*v);
        }
        for (i, v) in o.result.rho_hat.eigenvalues()?.iter().enumerate() {
            eig_cols[i].push(*v);
        }
    }

    // One replication supplies the asymptotic column, as a lab would
    // report the errors of a single reconstruction.
    let candidates: Vec<usize> = (0..q).filter(|&j| outcomes[j].sigma.is_some()).collect();
    let asymptotic_from = if candidates.is_empty() {
        None
    } else {
        let mut rng = Rng::from_seed(seed.stream(777));
        let pick = (rng.uniform() * candidates.len() as f64) as usize;
        Some(candidates[pick.min(candidates.len() - 1)])
    };
    let (theta_se, pop_se, eig_se) = match asymptotic_from {
        None => (vec![None; d], vec![None; n], vec![None; n]),
        Some(idx) => {
            let oc = &outcomes[idx];
            let cov = oc.sigma.as_ref().expect("candidate has covariance");
            let theta_se: Vec<Option<f64>> = (0..d)
                .map(|j| Some(math::sqrt(cov.matrix[j * d + j].max(0.0))))
                .collect();
            let mut pop_se = Vec::with_capacity(n);
            for i in 0..n {
                let grad = population_gradient(n, i)?;
                pop_se.push(Some(math::sqrt(
                    delta_method_variance(&grad, cov)?.max(0.0),
                )));
            }
            let eig_se = match eigenvalue_gradient(&oc.result.theta_hat) {
                Err(_) => vec![None; n],
                Ok(grads) => {
                    let mut se = Vec::with_capacity(n);
                    for row in grads.iter() {
                        se.push(Some(math::sqrt(
                            delta_method_variance(row, cov)?.max(0.0),
                        )));
                    }
                    se
                }
            };
            (theta_se, pop_se, eig_se)
        }
    };

    let mut rows = Vec::with_capacity(d + 2 * n);
    for j in 0..d {
        let stats = row_stats(&theta_cols[j], theta0.theta()[j]);
        rows.push(SummaryRow {
            label: format!("theta_{}", j + 1),
            truth: theta0.theta()[j],
            mean: stats.mean,
            bias: stats.mean - theta0.theta()[j],
            std: stats.std,
            rmse: stats.rmse,
            q025: stats.q025,
            q975: stats.q975,
            asymptotic_se: theta_se[j],
        });
    }
    for i in 0..n {
        let stats = row_stats(&pop_cols[i], truth_pop[i]);
        rows.push(SummaryRow {
            label: format!("rho_{}{}", i + 1, i + 1),
            truth: truth_pop[i],
            mean: stats.mean,
            bias: stats.mean - truth_pop[i],
            std: stats.std,
            rmse: stats.rmse,
            q025: stats.q025,
            q975: stats.q975,
            asymptotic_se: pop_se[i],
        });
    }
    for i in 0..n {
        let stats = row_stats(&eig_cols[i], truth_eig[i]);
        rows.push(SummaryRow {
            label: format!("delta_{}", i + 1),
            truth: truth_eig[i],
            mean: stats.mean,
            bias: stats.mean - truth_eig[i],
            std: stats.std,
            rmse: stats.rmse,
            q025: stats.q025,
            q975: stats.q975,
            asymptotic_se: eig_se[i],
        });
    }
    Ok(McSummary {
        rows,
        replications: q,
        asymptotic_from,
    })
}

/// Evaluates one hypothesis on every replication and reports the
/// rejection fraction. Replications lacking a covariance (or a usable
/// spectrum for eigenvalue tests) are skipped and counted.
pub fn test_size_power(outcomes: &[ReplicationOutcome], hyp: &Hypothesis) -> Result<TestSummary> {
    if outcomes.is_empty() {
        return Err(Error::InsufficientData);
    }
    let d = outcomes[0].result.theta_hat.d();
    match hyp {
        Hypothesis::CoordinateT { index, .. } if *index >= d => {
            return Err(Error::InvalidConfig("coordinate index out of range"));
        }
        Hypothesis::EigenvalueT { level, .. } if *level >= outcomes[0].result.theta_hat.n() => {
            return Err(Error::InvalidConfig("eigenvalue level out of range"));
        }
        Hypothesis::WaldCoordinates { indices, targets } => {
            if indices.is_empty() || indices.len() != targets.len() {
                return Err(Error::InvalidConfig("index and target lists must match"));
            }
            for (a, idx) in indices.iter().enumerate() {
                if *idx >= d {
                    return Err(Error::InvalidConfig("coordinate index out of range"));
                }
                if indices[..a].contains(idx) {
                    return Err(Error::InvalidConfig("coordinate indices must be distinct"));
                }
            }
        }
        _ => {}
    }

    let mut evaluated = 0usize;
    let mut skipped = 0usize;
    let mut rejections = 0usize;
    let mut statistics: Vec<f64> = Vec::new();
    for o in outcomes {
        let cov = match &o.sigma {
            Some(c) => c,
            None => {
                skipped += 1;
                continue;
            }
        };
        let report = match hyp {
            Hypothesis::CoordinateT { index, target } => {
                let se = math::sqrt(cov.matrix[index * d + index].max(0.0));
                if !(se > 0.0) {
                    skipped += 1;
                    continue;
                }
                t_statistic(o.result.theta_hat.theta()[*index], *target, se)?
            }
            Hypothesis::EigenvalueT { level, target } => {
                let grads = match eigenvalue_gradient(&o.result.theta_hat) {
                    Ok(g) => g,
                    Err(_) => {
                        skipped += 1;
                        continue;
                    }
                };
                let var = delta_method_variance(&grads[*level], cov)?;
                if !(var > 0.0) {
                    skipped += 1;
                    continue;
                }
                let value = o.result.rho_hat.eigenvalues()?[*level];
                t_statistic(value, *target, math::sqrt(var))?
            }
            Hypothesis::WaldCoordinates { indices, targets } => {
                let k = indices.len();
                let v: Vec<f64> = indices
                    .iter()
                    .zip(targets.iter())
                    .map(|(&idx, &t)| o.result.theta_hat.theta()[idx] - t)
                    .collect();
                let mut sub = vec![0.0; k * k];
                for (a, &ia) in indices.iter().enumerate() {
                    for (b, &ib) in indices.iter().enumerate() {
                        sub[a * k + b] = cov.matrix[ia * d + ib];
                    }
                }
                match wald_statistic(
                    &v,
                    &CovarianceEstimate {
                        matrix: sub,
                        dim: k,
                    },
                ) {
                    Ok(r) => r,
                    Err(Error::SingularSystem) => {
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        evaluated += 1;
        statistics.push(report.statistic);
        if report.reject {
            rejections += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::InsufficientData);
    }
    statistics.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (critical_lower, critical_upper) = match hyp {
        Hypothesis::WaldCoordinates { .. } => (None, quantile_type7(&statistics, 0.95)),
        _ => (
            Some(quantile_type7(&statistics, 0.025)),
            quantile_type7(&statistics, 0.975),
        ),
    };
    Ok(TestSummary {
        evaluated,
        skipped,
        rejections,
        rejection_rate: rejections as f64 / evaluated as f64,
        critical_lower,
        critical_upper,
    })
}

/// Variance ratio sigma_b^2 / sigma_a^2 of a second design relative to a
/// reference; values above one mean the second design spreads more.
pub fn relative_efficiency(sigma_a: f64, sigma_b: f64) -> Result<f64> {
    if !(sigma_a > 0.0) {
        return Err(Error::ZeroSpread);
    }
    let r = sigma_b / sigma_a;
    Ok(r * r)
}

/// Gaussian kernel density estimate with the rule-of-thumb bandwidth
/// h = 1.06 sigma n^{-1/5}, sigma = min(sample std, IQR / 1.349), on a
/// uniform grid spanning the data plus three bandwidths on each side.
pub fn kde(values: &[f64]) -> Result<KdeEstimate> {
    let n = values.len();
    if n < 2 {
        return Err(Error::InsufficientData);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let mean = mean_of(values);
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    let std = math::sqrt(var);
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let iqr = quantile_type7(&sorted, 0.75) - quantile_type7(&sorted, 0.25);
    let sigma = if iqr > 0.0 {
        std.min(iqr / 1.349)
    } else {
        std
    };
    if !(sigma > 0.0) {
        return Err(Error::ZeroSpread);
    }
    let h = 1.06 * sigma * math::powf(n as f64, -0.2);
    let lo = sorted[0] - 3.0 * h;
    let hi = sorted[n - 1] + 3.0 * h;
    let steps = KDE_GRID_POINTS - 1;
    let dx = (hi - lo) / steps as f64;
    let norm = 1.0 / (n as f64 * h * math::sqrt(2.0 * core::f64::consts::PI));
    let mut grid = Vec::with_capacity(KDE_GRID_POINTS);
    let mut density = Vec::with_capacity(KDE_GRID_POINTS);
    for k in 0..KDE_GRID_POINTS {
        let x = lo + k as f64 * dx;
        let mut acc = 0.0;
        for v in values {
            let z = (x - v) / h;
            acc += math::exp(-0.5 * z * z);
        }
        grid.push(x);
        density.push(norm * acc);
    }
    Ok(KdeEstimate {
        grid,
        density,
        bandwidth: h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::EstimationMethod;
    use crate::measurement::mub_bases;

    fn spin_half_theta() -> BlochVector {
        BlochVector::new(2, vec![-0.44, -0.02, 0.19]).unwrap()
    }

    fn state_of(theta: &BlochVector) -> DensityMatrix {
        let gens = build_generators(theta.n()).unwrap();
        bloch_to_density(&gens, theta).unwrap()
    }

    fn mc_config(m: u64, q: usize, seed: u64) -> McConfig {
        McConfig {
            m,
            q,
            seed: RngSeed(seed),
            estimation: EstimationConfig::default(),
        }
    }

    fn synthetic_outcome(theta: BlochVector, sigma: Option<CovarianceEstimate>) -> ReplicationOutcome {
        let gens = build_generators(theta.n()).unwrap();
        let rho = bloch_to_density(&gens, &theta).unwrap();
        let physical = rho.is_physical().unwrap();
        ReplicationOutcome {
            result: EstimationResult {
                theta_hat: theta,
                rho_hat: rho,
                converged: true,
                physical,
                method: EstimationMethod::Newton,
                scaled_loglik: 0.0,
                residual_norm: 0.0,
                iterations: 0,
            },
            sigma,
        }
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let rho = state_of(&spin_half_theta());
        let bases = mub_bases(2).unwrap();
        let cfg = mc_config(100, 5, 42);
        let a = run_monte_carlo(&rho, &bases, &cfg).unwrap();
        let b = run_monte_carlo(&rho, &bases, &cfg).unwrap();
        assert_eq!(a.len(), 5);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.result.theta_hat.theta(), y.result.theta_hat.theta());
            assert_eq!(x.sigma.is_some(), y.sigma.is_some());
        }
        // A different base seed must change the draws.
        let c = run_monte_carlo(&rho, &bases, &mc_config(100, 5, 43)).unwrap();
        assert!(a[0].result.theta_hat.theta() != c[0].result.theta_hat.theta());
    }

    #[test]
    fn filtering_keeps_converged_physical_runs() {
        let good = synthetic_outcome(BlochVector::new(2, vec![0.1, 0.0, 0.2]).unwrap(), None);
        let mut bad_conv = good.clone();
        bad_conv.result.converged = false;
        let mut bad_phys = good.clone();
        bad_phys.result.physical = false;
        let kept = filter_physical(&[good.clone(), bad_conv.clone(), bad_phys.clone()]).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(
            filter_physical(&[bad_conv, bad_phys]).unwrap_err(),
            Error::AllFiltered
        );
    }

    #[test]
    fn quantiles_interpolate_linearly() {
        let sorted = [0.1, 0.2, 0.3];
        assert!((quantile_type7(&sorted, 0.025) - 0.105).abs() < 1e-12);
        assert!((quantile_type7(&sorted, 0.975) - 0.295).abs() < 1e-12);
        assert_eq!(quantile_type7(&sorted, 0.0), 0.1);
        assert_eq!(quantile_type7(&sorted, 1.0), 0.3);
        assert!((quantile_type7(&sorted, 0.5) - 0.2).abs() < 1e-12);
        // Monotone in p.
        let mut last = f64::NEG_INFINITY;
        for k in 0..=20 {
            let v = quantile_type7(&sorted, k as f64 / 20.0);
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn summary_matches_hand_computation() {
        let sigma = CovarianceEstimate {
            matrix: vec![
                0.01, 0.0, 0.0, //
                0.0, 0.01, 0.0, //
                0.0, 0.0, 0.01,
            ],
            dim: 3,
        };
        let outcomes: Vec<ReplicationOutcome> = [0.1, 0.2, 0.3]
            .iter()
            .map(|&z| {
                synthetic_outcome(
                    BlochVector::new(2, vec![0.0, 0.0, z]).unwrap(),
                    Some(sigma.clone()),
                )
            })
            .collect();
        let theta0 = BlochVector::new(2, vec![0.0, 0.0, 0.2]).unwrap();
        let s = summarize(&outcomes, &theta0, RngSeed(0)).unwrap();
        assert_eq!(s.rows.len(), 3 + 2 + 2);
        assert_eq!(s.replications, 3);

        let row = &s.rows[2];
        assert_eq!(row.label, "theta_3");
        assert!((row.mean - 0.2).abs() < 1e-12);
        assert!(row.bias.abs() < 1e-12);
        let expect_std = (0.02f64 / 3.0).sqrt();
        assert!((row.std - expect_std).abs() < 1e-12);
        assert!((row.rmse - expect_std).abs() < 1e-12);
        assert!((row.q025 - 0.105).abs() < 1e-12);
        assert!((row.q975 - 0.295).abs() < 1e-12);
        assert!((row.asymptotic_se.unwrap() - 0.1).abs() < 1e-12);

        // rho_11 = 1/2 + theta_3/2: same shape shifted and halved.
        let pop = &s.rows[3];
        assert_eq!(pop.label, "rho_11");
        assert!((pop.truth - 0.6).abs() < 1e-12);
        assert!((pop.mean - 0.6).abs() < 1e-12);
        assert!((pop.std - expect_std / 2.0).abs() < 1e-12);
        assert!((pop.asymptotic_se.unwrap() - 0.05).abs() < 1e-12);

        // delta_1 = (1 + |theta|)/2 equals rho_11 on the z axis.
        let eig = &s.rows[5];
        assert_eq!(eig.label, "delta_1");
        assert!((eig.truth - 0.6).abs() < 1e-12);
        assert!((eig.asymptotic_se.unwrap() - 0.05).abs() < 1e-12);

        // RMSE identity on every row.
        for row in &s.rows {
            let lhs = row.rmse * row.rmse;
            let rhs = row.bias * row.bias + row.std * row.std;
            assert!((lhs - rhs).abs() < 1e-10, "row {}", row.label);
        }
    }

    #[test]
    fn summary_on_real_replications_keeps_rmse_identity() {
        let rho = state_of(&spin_half_theta());
        let bases = mub_bases(2).unwrap();
        let outcomes = run_monte_carlo(&rho, &bases, &mc_config(100, 50, 7)).unwrap();
        let kept = filter_physical(&outcomes).unwrap();
        let s = summarize(&kept, &spin_half_theta(), RngSeed(7)).unwrap();
        for row in &s.rows {
            let lhs = row.rmse * row.rmse;
            let rhs = row.bias * row.bias + row.std * row.std;
            assert!((lhs - rhs).abs() < 1e-10, "row {}", row.label);
            assert!(row.q025 <= row.q975);
        }
        // At m = 100 the sampling spread of each coordinate is far above
        // the tabulated asymptotic errors.
        if s.asymptotic_from.is_some() {
            for row in &s.rows[..3] {
                let se = row.asymptotic_se.unwrap();
                assert!(row.std > se, "std {} vs se {}", row.std, se);
            }
        }
    }

    #[test]
    fn summary_without_covariances_has_empty_asymptotic_column() {
        let outcomes = vec![
            synthetic_outcome(BlochVector::new(2, vec![0.0, 0.0, 0.1]).unwrap(), None),
            synthetic_outcome(BlochVector::new(2, vec![0.0, 0.0, 0.2]).unwrap(), None),
        ];
        let theta0 = BlochVector::new(2, vec![0.0, 0.0, 0.15]).unwrap();
        let s = summarize(&outcomes, &theta0, RngSeed(1)).unwrap();
        assert!(s.asymptotic_from.is_none());
        assert!(s.rows.iter().all(|r| r.asymptotic_se.is_none()));
    }

    #[test]
    fn synthetic_normal_size_is_near_nominal() {
        // Draw theta_3 ~ N(target, se^2) with the matching covariance:
        // the t test must reject close to 5% of the time.
        let se = 0.02;
        let sigma = CovarianceEstimate {
            matrix: vec![
                1e-4, 0.0, 0.0, //
                0.0, 1e-4, 0.0, //
                0.0, 0.0, se * se,
            ],
            dim: 3,
        };
        let mut rng = Rng::from_seed(RngSeed(314));
        let outcomes: Vec<ReplicationOutcome> = (0..2000)
            .map(|_| {
                let z = 0.19 + se * rng.normal();
                synthetic_outcome(
                    BlochVector::new(2, vec![0.0, 0.0, z]).unwrap(),
                    Some(sigma.clone()),
                )
            })
            .collect();
        let summary = test_size_power(
            &outcomes,
            &Hypothesis::CoordinateT {
                index: 2,
                target: 0.19,
            },
        )
        .unwrap();
        assert_eq!(summary.evaluated, 2000);
        assert_eq!(summary.skipped, 0);
        assert!(
            (summary.rejection_rate - 0.05).abs() <= 0.02,
            "size {}",
            summary.rejection_rate
        );
        // Exact asymptotics: the empirical statistic quantiles sit near
        // the normal critical values.
        let lower = summary.critical_lower.unwrap();
        assert!((lower + 1.96).abs() <= 0.2, "2.5% quantile {}", lower);
        assert!(
            (summary.critical_upper - 1.96).abs() <= 0.2,
            "97.5% quantile {}",
            summary.critical_upper
        );
    }

    #[test]
    fn power_reaches_one_under_distant_alternatives() {
        let se = 0.02;
        let sigma = CovarianceEstimate {
            matrix: vec![
                1e-4, 0.0, 0.0, //
                0.0, 1e-4, 0.0, //
                0.0, 0.0, se * se,
            ],
            dim: 3,
        };
        let mut rng = Rng::from_seed(RngSeed(2718));
        let outcomes: Vec<ReplicationOutcome> = (0..500)
            .map(|_| {
                let z = 0.19 + se * rng.normal();
                synthetic_outcome(
                    BlochVector::new(2, vec![0.0, 0.0, z]).unwrap(),
                    Some(sigma.clone()),
                )
            })
            .collect();
        // True value 0.19, hypothesis 0.5: 15 standard errors away.
        let summary = test_size_power(
            &outcomes,
            &Hypothesis::CoordinateT {
                index: 2,
                target: 0.5,
            },
        )
        .unwrap();
        assert!(summary.rejection_rate > 0.99);
    }

    #[test]
    fn outcomes_without_covariance_are_skipped() {
        let sigma = CovarianceEstimate {
            matrix: vec![
                1e-4, 0.0, 0.0, //
                0.0, 1e-4, 0.0, //
                0.0, 0.0, 1e-4,
            ],
            dim: 3,
        };
        let outcomes = vec![
            synthetic_outcome(
                BlochVector::new(2, vec![0.0, 0.0, 0.2]).unwrap(),
                Some(sigma),
            ),
            synthetic_outcome(BlochVector::new(2, vec![0.0, 0.0, 0.2]).unwrap(), None),
        ];
        let summary = test_size_power(
            &outcomes,
            &Hypothesis::CoordinateT {
                index: 2,
                target: 0.2,
            },
        )
        .unwrap();
        assert_eq!(summary.evaluated, 1);
        assert_eq!(summary.skipped, 1);

        let all_missing = vec![synthetic_outcome(
            BlochVector::new(2, vec![0.0, 0.0, 0.2]).unwrap(),
            None,
        )];
        assert_eq!(
            test_size_power(
                &all_missing,
                &Hypothesis::CoordinateT {
                    index: 2,
                    target: 0.2
                }
            )
            .unwrap_err(),
            Error::InsufficientData
        );
    }

    #[test]
    fn wald_hypothesis_runs_on_subsets() {
        let sigma = CovarianceEstimate {
            matrix: vec![
                1e-4, 0.0, 0.0, //
                0.0, 1e-4, 0.0, //
                0.0, 0.0, 1e-4,
            ],
            dim: 3,
        };
        let outcomes = vec![synthetic_outcome(
            BlochVector::new(2, vec![0.1, 0.0, 0.2]).unwrap(),
            Some(sigma),
        )];
        // Exactly at the hypothesized values: no rejection.
        let ok = test_size_power(
            &outcomes,
            &Hypothesis::WaldCoordinates {
                indices: vec![0, 2],
                targets: vec![0.1, 0.2],
            },
        )
        .unwrap();
        assert_eq!(ok.rejections, 0);
        // Far away on one coordinate: rejection.
        let far = test_size_power(
            &outcomes,
            &Hypothesis::WaldCoordinates {
                indices: vec![0, 2],
                targets: vec![0.5, 0.2],
            },
        )
        .unwrap();
        assert_eq!(far.rejections, 1);
        // Validation.
        assert!(test_size_power(
            &outcomes,
            &Hypothesis::WaldCoordinates {
                indices: vec![0, 0],
                targets: vec![0.1, 0.1],
            },
        )
        .is_err());
    }

    #[test]
    fn eigenvalue_t_test_runs_and_skips_degenerate_spectra() {
        let sigma = CovarianceEstimate {
            matrix: vec![
                1e-4, 0.0, 0.0, //
                0.0, 1e-4, 0.0, //
                0.0, 0.0, 1e-4,
            ],
            dim: 3,
        };
        let outcomes = vec![
            synthetic_outcome(
                BlochVector::new(2, vec![0.0, 0.0, 0.2]).unwrap(),
                Some(sigma.clone()),
            ),
            // Maximally mixed: degenerate spectrum, must be skipped.
            synthetic_outcome(
                BlochVector::new(2, vec![0.0, 0.0, 0.0]).unwrap(),
                Some(sigma),
            ),
        ];
        let summary = test_size_power(
            &outcomes,
            &Hypothesis::EigenvalueT {
                level: 0,
                target: 0.6,
            },
        )
        .unwrap();
        assert_eq!(summary.evaluated, 1);
        assert_eq!(summary.skipped, 1);
        assert_eq!(summary.rejections, 0);
    }

    #[test]
    fn relative_efficiency_squares_the_ratio() {
        assert!((relative_efficiency(0.1, 0.2).unwrap() - 4.0).abs() < 1e-12);
        assert!((relative_efficiency(0.2, 0.1).unwrap() - 0.25).abs() < 1e-12);
        assert_eq!(relative_efficiency(0.0, 0.1).unwrap_err(), Error::ZeroSpread);
    }

    #[test]
    fn kde_integrates_to_one() {
        let mut rng = Rng::from_seed(RngSeed(11));
        let values: Vec<f64> = (0..200).map(|_| 0.3 + 0.05 * rng.normal()).collect();
        let est = kde(&values).unwrap();
        assert_eq!(est.grid.len(), KDE_GRID_POINTS);
        let dx = est.grid[1] - est.grid[0];
        let mut integral = 0.0;
        for k in 1..est.grid.len() {
            integral += 0.5 * (est.density[k - 1] + est.density[k]) * dx;
        }
        assert!((integral - 1.0).abs() <= 1e-3, "integral {}", integral);
    }

    #[test]
    fn kde_of_symmetric_pair_is_symmetric() {
        let est = kde(&[-1.0, 1.0]).unwrap();
        let last = est.grid.len() - 1;
        for k in 0..est.grid.len() {
            assert!((est.grid[k] + est.grid[last - k]).abs() < 1e-12);
            assert!(
                (est.density[k] - est.density[last - k]).abs() < 1e-12,
                "k = {}",
                k
            );
        }
    }

    #[test]
    fn kde_tracks_the_standard_normal() {
        let mut rng = Rng::from_seed(RngSeed(123));
        let values: Vec<f64> = (0..10_000).map(|_| rng.normal()).collect();
        let est = kde(&values).unwrap();
        let mut worst = 0.0f64;
        for (x, f) in est.grid.iter().zip(est.density.iter()) {
            let phi = (-0.5 * x * x).exp() / (2.0 * core::f64::consts::PI).sqrt();
            worst = worst.max((f - phi).abs());
        }
        assert!(worst <= 0.02, "sup-norm {}", worst);
    }

    #[test]
    fn kde_rejects_degenerate_inputs() {
        assert_eq!(kde(&[1.0]).unwrap_err(), Error::InsufficientData);
        assert_eq!(kde(&[2.0, 2.0, 2.0]).unwrap_err(), Error::ZeroSpread);
        assert_eq!(
            kde(&[0.0, f64::INFINITY]).unwrap_err(),
            Error::NonFinite
        );
    }

    #[test]
    fn sigma_is_present_interior_and_absent_on_the_boundary() {
        let rho = state_of(&spin_half_theta());
        let bases = mub_bases(2).unwrap();
        let sample = crate::sampling::simulate_sample(&rho, &bases, 1000, RngSeed(5)).unwrap();
        let interior = spin_half_theta();
        assert!(replication_sigma(&interior, &sample).is_some());
        let boundary = BlochVector::new(2, vec![0.0, 0.0, 1.0 - 1e-10]).unwrap();
        assert!(replication_sigma(&boundary, &sample).is_none());
    }
}
