//! Experiment orchestration: scenario preparation, the worker pool,
//! parallel Monte Carlo panels, and the derived per-quantity columns
//! behind summary tables and density grids.
//!
//! Replication j of panel i (the i-th sample size) derives its seed as
//! base + (i << 32) + j. Every replication is therefore reproducible in
//! isolation, panels never overlap, and a parallel run collects exactly
//! the sequential result.

use std::env;

use rayon::prelude::*;

use qtomo_core::algebra::{build_generators, GeneratorSet};
use qtomo_core::estimator::EstimationConfig;
use qtomo_core::inference::confidence_interval;
use qtomo_core::measurement::{appendix_mbb, generate_mbb, mub_bases, BasisSet};
use qtomo_core::rng::RngSeed;
use qtomo_core::state::{bloch_to_density, BlochVector, DensityMatrix};
use qtomo_core::stats::{filter_physical, run_replication, McConfig, McSummary, ReplicationOutcome, TestSummary};

use crate::config::{self, BasisSource, ResolvedHypothesis, RunConfig};
use crate::error::{CliError, CliResult};
use crate::formats::{self, fmt6};

/// Rotation increment used when growing biased bases from the MUB set.
pub const MBB_STEP: f64 = 0.05;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "QTOMO_THREADS";

/// Builds the worker pool, honoring QTOMO_THREADS when set.
pub fn thread_pool() -> CliResult<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = env::var(THREADS_ENV) {
        let threads: usize = raw.parse().unwrap_or(0);
        if threads == 0 {
            return Err(CliError::Config(format!(
                "{THREADS_ENV} must be a positive integer, got {raw:?}"
            )));
        }
        builder = builder.num_threads(threads);
    }
    builder
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))
}

/// Everything derived from a validated config before any sampling.
pub struct Scenario {
    pub gens: GeneratorSet,
    pub theta0: BlochVector,
    pub rho0: DensityMatrix,
    pub bases: BasisSet,
}

/// Builds the basis set a config asks for.
pub fn resolve_bases(cfg: &RunConfig) -> CliResult<BasisSet> {
    let n = cfg.system.n();
    match &cfg.basis {
        BasisSource::Mub => mub_bases(n).map_err(CliError::from),
        BasisSource::Mbb { alpha, seed } => {
            let mub = mub_bases(n)?;
            generate_mbb(&mub, *alpha, MBB_STEP, RngSeed(*seed)).map_err(CliError::from)
        }
        BasisSource::Appendix => appendix_mbb(false).map_err(CliError::from),
        BasisSource::Custom { path } => formats::read_basis_file(path),
    }
}

pub fn prepare(cfg: &RunConfig) -> CliResult<Scenario> {
    let n = cfg.system.n();
    let gens = build_generators(n)?;
    let theta0 = config::true_state(cfg)?;
    let rho0 = bloch_to_density(&gens, &theta0)?;
    let bases = resolve_bases(cfg)?;
    if bases.n() != n {
        return Err(CliError::Config(format!(
            "basis set dimension {} does not match {}",
            bases.n(),
            cfg.system.as_str()
        )));
    }
    Ok(Scenario {
        gens,
        theta0,
        rho0,
        bases,
    })
}

/// Base seed of the i-th sample size in the m list. Panels sit 2^32
/// apart so per-replication offsets never collide across panels.
pub fn panel_seed(seed: u64, panel: usize) -> RngSeed {
    RngSeed(seed).stream((panel as u64) << 32)
}

/// Replication plan for one panel.
pub fn mc_config(cfg: &RunConfig, panel: usize) -> McConfig {
    McConfig {
        m: cfg.m[panel],
        q: cfg.q,
        seed: panel_seed(cfg.seed, panel),
        estimation: EstimationConfig::default(),
    }
}

/// Runs all replications of one panel on the pool. Work distribution is
/// dynamic, but seeds are per-replication, so the result is identical to
/// a sequential run.
pub fn run_panel(
    pool: &rayon::ThreadPool,
    rho0: &DensityMatrix,
    bases: &BasisSet,
    mc: &McConfig,
) -> CliResult<Vec<ReplicationOutcome>> {
    if mc.q == 0 {
        return Err(CliError::Config("q must be at least 1".into()));
    }
    mc.estimation.validate()?;
    let outcomes: Result<Vec<ReplicationOutcome>, qtomo_core::Error> = pool.install(|| {
        (0..mc.q)
            .into_par_iter()
            .map(|j| run_replication(rho0, bases, mc, j))
            .collect()
    });
    outcomes.map_err(CliError::from)
}

/// One executed panel with its filtering bookkeeping.
pub struct PanelRun {
    pub m: u64,
    /// Every replication, including failures.
    pub outcomes: Vec<ReplicationOutcome>,
    /// Converged and physical replications; tables and tests use these.
    pub filtered: Vec<ReplicationOutcome>,
    pub unphysical: usize,
    pub unconverged: usize,
}

pub fn execute_panel(
    pool: &rayon::ThreadPool,
    scenario: &Scenario,
    cfg: &RunConfig,
    panel: usize,
) -> CliResult<PanelRun> {
    let mc = mc_config(cfg, panel);
    let outcomes = run_panel(pool, &scenario.rho0, &scenario.bases, &mc)?;
    let unconverged = outcomes.iter().filter(|o| !o.result.converged).count();
    let unphysical = outcomes
        .iter()
        .filter(|o| o.result.converged && !o.result.physical)
        .count();
    let filtered = filter_physical(&outcomes)?;
    Ok(PanelRun {
        m: mc.m,
        outcomes,
        filtered,
        unphysical,
        unconverged,
    })
}

/// Labels of the summarized quantities in table order: Bloch
/// coordinates, then populations, then descending eigenvalues.
pub fn quantity_labels(n: usize) -> Vec<String> {
    let d = n * n - 1;
    let mut labels = Vec::with_capacity(d + 2 * n);
    for j in 1..=d {
        labels.push(format!("theta_{j}"));
    }
    for i in 1..=n {
        labels.push(format!("rho_{i}{i}"));
    }
    for i in 1..=n {
        labels.push(format!("delta_{i}"));
    }
    labels
}

/// Per-quantity values of one replication, in table order.
pub fn quantity_values(outcome: &ReplicationOutcome) -> CliResult<Vec<f64>> {
    let mut vals: Vec<f64> = outcome.result.theta_hat.theta().to_vec();
    vals.extend(outcome.result.rho_hat.diagonal());
    vals.extend(outcome.result.rho_hat.eigenvalues().map_err(CliError::from)?);
    Ok(vals)
}

/// Column of each quantity over the given replications.
pub fn quantity_columns(outcomes: &[ReplicationOutcome], n: usize) -> CliResult<Vec<Vec<f64>>> {
    let k = n * n - 1 + 2 * n;
    let mut cols = vec![Vec::with_capacity(outcomes.len()); k];
    for o in outcomes {
        for (c, v) in quantity_values(o)?.into_iter().enumerate() {
            cols[c].push(v);
        }
    }
    Ok(cols)
}

pub const SUMMARY_HEADER: &str = "label,truth,mean,bias,std,rmse,q025,q975,asymptotic_est,asymptotic_se,asymptotic_lo,asymptotic_hi";

/// Formats summary table rows: truth, Monte Carlo moments, the
/// finite-sample 95% interval, and the asymptotic estimate, standard
/// error and interval from the summary's selected replication.
pub fn summary_csv_rows(
    summary: &McSummary,
    outcomes: &[ReplicationOutcome],
) -> CliResult<Vec<String>> {
    let asym_values: Option<Vec<f64>> = match summary.asymptotic_from {
        Some(idx) => Some(quantity_values(&outcomes[idx])?),
        None => None,
    };
    let mut rows = Vec::with_capacity(summary.rows.len());
    for (k, row) in summary.rows.iter().enumerate() {
        let (est, se, lo, hi) = match (&asym_values, row.asymptotic_se) {
            (Some(vals), Some(se)) if se > 0.0 => {
                let (lo, hi) = confidence_interval(vals[k], se, 0.95)?;
                (fmt6(vals[k]), fmt6(se), fmt6(lo), fmt6(hi))
            }
            (Some(vals), Some(se)) => {
                (fmt6(vals[k]), fmt6(se), String::new(), String::new())
            }
            _ => (String::new(), String::new(), String::new(), String::new()),
        };
        rows.push(format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            row.label,
            fmt6(row.truth),
            fmt6(row.mean),
            fmt6(row.bias),
            fmt6(row.std),
            fmt6(row.rmse),
            fmt6(row.q025),
            fmt6(row.q975),
            est,
            se,
            lo,
            hi
        ));
    }
    Ok(rows)
}

pub const TESTS_HEADER: &str = "m,label,kind,role,evaluated,skipped,rejections,rejection_rate,critical_lower,critical_upper";

pub fn test_csv_row(m: u64, hyp: &ResolvedHypothesis, ts: &TestSummary) -> String {
    format!(
        "{m},{},{},{},{},{},{},{},{},{}",
        hyp.label,
        hyp.kind,
        hyp.role,
        ts.evaluated,
        ts.skipped,
        ts.rejections,
        fmt6(ts.rejection_rate),
        ts.critical_lower.map(fmt6).unwrap_or_default(),
        fmt6(ts.critical_upper)
    )
}

/// Header of the per-replication dump; the replication column is the
/// 0-based seed offset within the panel.
pub fn raw_header(d: usize) -> String {
    let mut h = String::from("replication,converged,physical,method");
    for j in 1..=d {
        h.push_str(&format!(",theta_{j}"));
    }
    h
}

pub fn raw_csv_rows(outcomes: &[ReplicationOutcome]) -> Vec<String> {
    outcomes
        .iter()
        .enumerate()
        .map(|(j, o)| {
            let mut row = format!(
                "{j},{},{},{}",
                o.result.converged,
                o.result.physical,
                o.result.method.as_str()
            );
            for v in o.result.theta_hat.theta() {
                row.push(',');
                row.push_str(&fmt6(*v));
            }
            row
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{preset, SystemKind};
    use qtomo_core::stats::summarize;

    #[test]
    fn panel_seeds_never_collide_across_panels() {
        let a = panel_seed(1, 0);
        let b = panel_seed(1, 1);
        assert_eq!(a, RngSeed(1));
        assert_eq!(b.0 - a.0, 1u64 << 32);
    }

    #[test]
    fn parallel_panel_matches_sequential_run() {
        let mut cfg = preset(SystemKind::SpinHalf);
        cfg.q = 12;
        cfg.m = vec![60];
        let scenario = prepare(&cfg).unwrap();
        let mc = mc_config(&cfg, 0);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let par = run_panel(&pool, &scenario.rho0, &scenario.bases, &mc).unwrap();
        let seq = qtomo_core::stats::run_monte_carlo(&scenario.rho0, &scenario.bases, &mc).unwrap();
        assert_eq!(par.len(), seq.len());
        for (a, b) in par.iter().zip(seq.iter()) {
            assert_eq!(a.result.theta_hat.theta(), b.result.theta_hat.theta());
            assert_eq!(a.result.method.as_str(), b.result.method.as_str());
        }
    }

    #[test]
    fn quantity_columns_align_with_summary_labels() {
        let mut cfg = preset(SystemKind::SpinHalf);
        cfg.q = 8;
        cfg.m = vec![80];
        let scenario = prepare(&cfg).unwrap();
        let pool = thread_pool().unwrap();
        let run = execute_panel(&pool, &scenario, &cfg, 0).unwrap();
        let summary = summarize(&run.filtered, &scenario.theta0, RngSeed(cfg.seed)).unwrap();
        let labels = quantity_labels(2);
        assert_eq!(labels.len(), summary.rows.len());
        for (lbl, row) in labels.iter().zip(summary.rows.iter()) {
            assert_eq!(lbl, &row.label);
        }
        let cols = quantity_columns(&run.filtered, 2).unwrap();
        assert_eq!(cols.len(), labels.len());
        // Column means must match the summary's means.
        for (col, row) in cols.iter().zip(summary.rows.iter()) {
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!((mean - row.mean).abs() < 1e-12);
        }
    }

    #[test]
    fn summary_rows_format_cleanly() {
        let mut cfg = preset(SystemKind::SpinHalf);
        cfg.q = 8;
        cfg.m = vec![80];
        let scenario = prepare(&cfg).unwrap();
        let pool = thread_pool().unwrap();
        let run = execute_panel(&pool, &scenario, &cfg, 0).unwrap();
        let summary = summarize(&run.filtered, &scenario.theta0, RngSeed(cfg.seed)).unwrap();
        let rows = summary_csv_rows(&summary, &run.filtered).unwrap();
        let n_fields = SUMMARY_HEADER.split(',').count();
        for row in &rows {
            assert_eq!(row.split(',').count(), n_fields, "row {row}");
        }
    }
}
