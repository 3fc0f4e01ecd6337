//! The command line surface: argument definitions and the five
//! subcommands. Each command validates its configuration before doing
//! any work, writes its artifacts into the output directory, and
//! finishes with a manifest hashing everything it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use qtomo_core::algebra::build_generators;
use qtomo_core::estimator::{estimate, EstimationConfig, EstimationResult};
use qtomo_core::inference::{asymptotic_covariance, confidence_interval, observed_fisher_hessian};
use qtomo_core::measurement::{appendix_mbb, generate_mbb, mub_bases, verify_mub, BasisSet};
use qtomo_core::rng::{RngSeed, RNG_NAME};
use qtomo_core::sampling::{simulate_sample, Sample};
use qtomo_core::state::{bloch_to_density, fidelity, DensityMatrix};
use qtomo_core::stats::{kde, summarize, test_size_power};

use crate::config::{self, BasisSource, ConfigFile, EmitFlag, Overrides, ResolvedHypothesis, RunConfig, SystemKind};
use crate::error::{CliError, CliResult};
use crate::formats::{self, fmt6, sig6, AsymptoticBlock, CountsEntry, EstimateReport, Manifest, ManifestOutput};
use crate::runner::{self, execute_panel, panel_seed, prepare, quantity_columns, quantity_labels, thread_pool, MBB_STEP};

/// Density matrix reconstruction by constrained maximum likelihood:
/// basis construction, sample simulation, estimation, and Monte Carlo
/// studies of estimator quality and test size/power.
#[derive(Debug, Parser)]
#[command(name = "qtomo", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Construct a measurement basis set and write it as JSON.
    Bases(BasesArgs),
    /// Draw seeded measurement samples and write them as CSV.
    Simulate(CommonArgs),
    /// Reconstruct a state from one sample and report diagnostics.
    Estimate(EstimateArgs),
    /// Monte Carlo study: summary tables, tests, densities, raw dumps.
    Mc(CommonArgs),
    /// Hypothesis test size/power tables only.
    Test(CommonArgs),
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(format!("expected on or off, got {s:?}")),
    }
}

/// Flags shared by the data-producing subcommands. Every flag overrides
/// the corresponding config file field.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON config file; flags override its fields.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Physical system preset.
    #[arg(long, value_enum)]
    pub system: Option<SystemKind>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', value_name = "M")]
    pub m: Option<Vec<u64>>,
    /// Monte Carlo replications.
    #[arg(long)]
    pub q: Option<usize>,
    /// Base seed; every drawn sample and estimator start derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Test significance level (only 0.05 is supported).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// on: tables keep only converged, physical replications.
    /// off: additionally emit unfiltered artifacts.
    #[arg(long, value_parser = parse_on_off, value_name = "on|off")]
    pub filter: Option<bool>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Artifact families to write, comma separated.
    #[arg(long, value_delimiter = ',', value_enum)]
    pub emit: Option<Vec<EmitFlag>>,
}

impl CommonArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let file = match &self.config {
            Some(path) => Some(ConfigFile::load(path)?),
            None => None,
        };
        let over = Overrides {
            system: self.system,
            m: self.m.clone(),
            q: self.q,
            seed: self.seed,
            alpha: self.alpha,
            filter: self.filter,
            out: self.out.clone(),
            emit: self.emit.clone(),
        };
        config::resolve(file, &over)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BasesKindArg {
    /// Mutually unbiased bases.
    Mub,
    /// Biased bases generated from the MUB set.
    Mbb,
    /// The fixed reference biased set (N = 3).
    Appendix,
}

impl BasesKindArg {
    fn as_str(self) -> &'static str {
        match self {
            BasesKindArg::Mub => "mub",
            BasesKindArg::Mbb => "mbb",
            BasesKindArg::Appendix => "appendix",
        }
    }
}

/// Arguments of the bases subcommand. Unlike the other subcommands,
/// --alpha here is the bias strength of generated biased bases, not a
/// significance level.
#[derive(Debug, Args)]
pub struct BasesArgs {
    /// JSON config file supplying system/seed/out defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Physical system; fixes the dimension when --n is absent.
    #[arg(long, value_enum)]
    pub system: Option<SystemKind>,
    /// Hilbert space dimension (2 or 3); overrides --system.
    #[arg(long)]
    pub n: Option<usize>,
    /// Which construction to emit.
    #[arg(long, value_enum, default_value = "mub")]
    pub kind: BasesKindArg,
    /// Bias strength for generated biased bases.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Generation seed for biased bases.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Arguments of the estimate subcommand.
#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Observation CSV to estimate from; without it, a sample of the
    /// first configured m is simulated.
    #[arg(long, value_name = "PATH")]
    pub sample: Option<PathBuf>,
    /// Basis set JSON the sample was recorded with (required with
    /// --sample).
    #[arg(long, value_name = "PATH")]
    pub bases: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Bases(args) => cmd_bases(args),
        Command::Simulate(args) => cmd_simulate(&args.resolve()?),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Mc(args) => cmd_mc(&args.resolve()?),
        Command::Test(args) => cmd_test(&args.resolve()?),
    }
}

fn ensure_out(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn manifest_outputs(paths: &[PathBuf]) -> CliResult<Vec<ManifestOutput>> {
    paths
        .iter()
        .map(|p| {
            Ok(ManifestOutput {
                file: p
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string()),
                sha256: formats::hash_file(p)?,
            })
        })
        .collect()
}

fn write_manifest(
    out: &Path,
    command: &str,
    config: serde_json::Value,
    rho0: Option<&DensityMatrix>,
    counts: Vec<CountsEntry>,
    written: &[PathBuf],
) -> CliResult<()> {
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        rng: RNG_NAME.to_string(),
        config,
        rho0: rho0.map(formats::density_entries),
        counts,
        outputs: manifest_outputs(written)?,
    };
    formats::write_json(&out.join(format!("manifest_{command}.json")), &manifest)
}

fn config_json(cfg: &RunConfig) -> CliResult<serde_json::Value> {
    serde_json::to_value(cfg).map_err(|e| CliError::Config(format!("serializing config: {e}")))
}

fn basis_tag(source: &BasisSource) -> &'static str {
    match source {
        BasisSource::Mub => "mub",
        BasisSource::Mbb { .. } => "mbb",
        BasisSource::Appendix => "appendix",
        BasisSource::Custom { .. } => "custom",
    }
}

fn cmd_bases(args: BasesArgs) -> CliResult<()> {
    let file = match &args.config {
        Some(path) => Some(ConfigFile::load(path)?),
        None => None,
    };
    let file_system = file.as_ref().and_then(|f| f.system);
    let file_seed = file.as_ref().and_then(|f| f.seed);
    let file_out = file.as_ref().and_then(|f| f.out.clone());

    let n = match (args.n, args.system.or(file_system), args.kind) {
        (Some(n), _, _) => n,
        (None, Some(system), _) => system.n(),
        (None, None, BasesKindArg::Appendix) => 3,
        (None, None, _) => {
            return Err(CliError::Config(
                "bases needs --n or --system to fix the dimension".into(),
            ))
        }
    };
    if !(n == 2 || n == 3) {
        return Err(CliError::Config(format!(
            "only dimensions 2 and 3 are supported, got {n}"
        )));
    }

    let alpha = args.alpha.unwrap_or(1.2);
    let seed = args.seed.or(file_seed).unwrap_or(1);
    let set: BasisSet = match args.kind {
        BasesKindArg::Mub => mub_bases(n)?,
        BasesKindArg::Mbb => generate_mbb(&mub_bases(n)?, alpha, MBB_STEP, RngSeed(seed))?,
        BasesKindArg::Appendix => {
            if n != 3 {
                return Err(CliError::Config(
                    "the appendix basis set is three-dimensional".into(),
                ));
            }
            appendix_mbb(false)?
        }
    };

    let deviation = verify_mub(&set);
    println!("mub deviation: {}", fmt6(deviation));

    let out = args.out.or(file_out).unwrap_or_else(|| PathBuf::from("out"));
    ensure_out(&out)?;
    let basis_path = out.join(format!("bases_{}_n{n}.json", args.kind.as_str()));
    formats::write_basis_file(&basis_path, &set)?;

    let mut config = serde_json::json!({
        "n": n,
        "kind": args.kind.as_str(),
    });
    if args.kind == BasesKindArg::Mbb {
        config["alpha"] = serde_json::json!(alpha);
        config["seed"] = serde_json::json!(seed);
        config["step"] = serde_json::json!(MBB_STEP);
    }
    write_manifest(&out, "bases", config, None, Vec::new(), &[basis_path])
}

fn cmd_simulate(cfg: &RunConfig) -> CliResult<()> {
    let scenario = prepare(cfg)?;
    ensure_out(&cfg.out)?;
    let mut written = Vec::new();

    let basis_path = cfg
        .out
        .join(format!("bases_{}_n{}.json", basis_tag(&cfg.basis), cfg.system.n()));
    formats::write_basis_file(&basis_path, &scenario.bases)?;
    written.push(basis_path);

    for (panel, &m) in cfg.m.iter().enumerate() {
        let sample = simulate_sample(
            &scenario.rho0,
            &scenario.bases,
            m,
            panel_seed(cfg.seed, panel),
        )?;
        let path = cfg.out.join(format!("sample_m{m}.csv"));
        formats::write_sample_csv(&path, &sample)?;
        written.push(path);
    }

    write_manifest(
        &cfg.out,
        "simulate",
        config_json(cfg)?,
        Some(&scenario.rho0),
        Vec::new(),
        &written,
    )
}

/// Assembles the JSON report for one estimation run.
fn build_report(
    system: SystemKind,
    result: &EstimationResult,
    sample: &Sample,
    rho0: &DensityMatrix,
) -> CliResult<EstimateReport> {
    let eigenvalues: Vec<f64> = result
        .rho_hat
        .eigenvalues()
        .map_err(CliError::from)?
        .into_iter()
        .map(sig6)
        .collect();
    // Fidelity is undefined when the estimate sits outside the physical
    // set; the report then carries null rather than failing the command.
    let fid = match fidelity(&result.rho_hat, rho0) {
        Ok(f) => Some(sig6(f)),
        Err(qtomo_core::Error::NegativeEigenvalue) => None,
        Err(e) => return Err(CliError::from(e)),
    };

    let (asymptotic, reason) = if !result.converged {
        (None, Some("estimate did not converge".to_string()))
    } else {
        match observed_fisher_hessian(&result.theta_hat, sample)
            .and_then(|f| asymptotic_covariance(&f))
        {
            Err(e) => (None, Some(e.to_string())),
            Ok(cov) => {
                let ses = cov.standard_errors();
                if ses.iter().all(|&s| s > 0.0) {
                    let mut intervals = Vec::with_capacity(ses.len());
                    for (v, s) in result.theta_hat.theta().iter().zip(ses.iter()) {
                        let (lo, hi) = confidence_interval(*v, *s, 0.95)?;
                        intervals.push([sig6(lo), sig6(hi)]);
                    }
                    (
                        Some(AsymptoticBlock {
                            standard_errors: ses.into_iter().map(sig6).collect(),
                            confidence_intervals: intervals,
                        }),
                        None,
                    )
                } else {
                    (None, Some("degenerate covariance diagonal".to_string()))
                }
            }
        }
    };

    Ok(EstimateReport {
        system: system.as_str().to_string(),
        m: sample.m(),
        converged: result.converged,
        physical: result.physical,
        method: result.method.as_str().to_string(),
        iterations: result.iterations,
        scaled_loglik: sig6(result.scaled_loglik),
        residual_norm: sig6(result.residual_norm),
        theta_hat: result.theta_hat.theta().iter().copied().map(sig6).collect(),
        rho_hat: formats::density_entries_sig6(&result.rho_hat),
        eigenvalues,
        fidelity_vs_true: fid,
        asymptotic,
        asymptotic_unavailable_reason: reason,
    })
}

fn cmd_estimate(args: EstimateArgs) -> CliResult<()> {
    let cfg = args.common.resolve()?;
    let n = cfg.system.n();
    let seed = panel_seed(cfg.seed, 0);

    let (sample, rho0) = match &args.sample {
        Some(sample_path) => {
            let bases_path = args.bases.as_ref().ok_or_else(|| {
                CliError::Config("--sample needs --bases for the recording bases".into())
            })?;
            let bases = formats::read_basis_file(bases_path)?;
            if bases.n() != n {
                return Err(CliError::Config(format!(
                    "basis set dimension {} does not match {}",
                    bases.n(),
                    cfg.system.as_str()
                )));
            }
            let sample = formats::read_sample_csv(sample_path, bases)?;
            let gens = build_generators(n)?;
            let rho0 = bloch_to_density(&gens, &config::true_state(&cfg)?)?;
            (sample, rho0)
        }
        None => {
            let scenario = prepare(&cfg)?;
            let sample = simulate_sample(&scenario.rho0, &scenario.bases, cfg.m[0], seed)?;
            (sample, scenario.rho0)
        }
    };

    let est_cfg = EstimationConfig {
        seed,
        ..EstimationConfig::default()
    };
    let result = estimate(&sample, &est_cfg)?;
    let report = build_report(cfg.system, &result, &sample, &rho0)?;

    ensure_out(&cfg.out)?;
    let report_path = cfg.out.join(format!("estimate_m{}.json", sample.m()));
    formats::write_json(&report_path, &report)?;

    let counts = vec![CountsEntry {
        m: sample.m(),
        q: 1,
        retained: usize::from(result.converged && result.physical),
        unphysical: usize::from(result.converged && !result.physical),
        unconverged: usize::from(!result.converged),
    }];
    write_manifest(
        &cfg.out,
        "estimate",
        config_json(&cfg)?,
        Some(&rho0),
        counts,
        &[report_path],
    )?;

    if !result.converged {
        return Err(CliError::Convergence(
            "estimation did not converge; report and manifest were written".into(),
        ));
    }
    Ok(())
}

fn cmd_mc(cfg: &RunConfig) -> CliResult<()> {
    run_batch(cfg, "mc", true)
}

fn cmd_test(cfg: &RunConfig) -> CliResult<()> {
    run_batch(cfg, "test", false)
}

/// Shared driver of the mc and test subcommands: runs every panel,
/// writes the requested artifact families, and finishes with the
/// manifest. The test command is the tables-only subset.
fn run_batch(cfg: &RunConfig, command: &str, full_artifacts: bool) -> CliResult<()> {
    let scenario = prepare(cfg)?;
    let pool = thread_pool()?;
    ensure_out(&cfg.out)?;
    let n = cfg.system.n();
    let resolved: Vec<ResolvedHypothesis> = cfg
        .hypotheses
        .iter()
        .map(|h| h.resolve(&scenario.theta0))
        .collect::<CliResult<_>>()?;

    let emit = |flag: EmitFlag| full_artifacts && cfg.emit.contains(&flag);
    let mut written: Vec<PathBuf> = Vec::new();
    let mut counts: Vec<CountsEntry> = Vec::new();
    let mut test_rows: Vec<String> = Vec::new();

    for panel in 0..cfg.m.len() {
        let run = execute_panel(&pool, &scenario, cfg, panel)?;
        let m = run.m;

        if emit(EmitFlag::Tables) {
            let summary = summarize(&run.filtered, &scenario.theta0, RngSeed(cfg.seed))?;
            let path = cfg.out.join(format!("summary_m{m}.csv"));
            formats::write_csv(
                &path,
                runner::SUMMARY_HEADER,
                &runner::summary_csv_rows(&summary, &run.filtered)?,
            )?;
            written.push(path);
            if !cfg.filter {
                let all = summarize(&run.outcomes, &scenario.theta0, RngSeed(cfg.seed))?;
                let path = cfg.out.join(format!("summary_m{m}_unfiltered.csv"));
                formats::write_csv(
                    &path,
                    runner::SUMMARY_HEADER,
                    &runner::summary_csv_rows(&all, &run.outcomes)?,
                )?;
                written.push(path);
            }
        }

        for hyp in &resolved {
            let ts = test_size_power(&run.filtered, &hyp.hypothesis)?;
            test_rows.push(runner::test_csv_row(m, hyp, &ts));
        }

        if emit(EmitFlag::Kde) || emit(EmitFlag::Svg) {
            let groups: &[(&[_], &str)] = if cfg.filter {
                &[(&run.filtered[..], "")]
            } else {
                &[(&run.filtered[..], ""), (&run.outcomes[..], "_unfiltered")]
            };
            for (outcomes, suffix) in groups {
                let cols = quantity_columns(outcomes, n)?;
                for (label, col) in quantity_labels(n).iter().zip(cols.iter()) {
                    let est = match kde(col) {
                        Ok(est) => est,
                        Err(e) => {
                            eprintln!("skipping density of {label} at m={m}{suffix}: {e}");
                            continue;
                        }
                    };
                    if emit(EmitFlag::Kde) {
                        let rows: Vec<String> = est
                            .grid
                            .iter()
                            .zip(est.density.iter())
                            .map(|(x, f)| {
                                format!("{},{},{}", fmt6(*x), fmt6(*f), fmt6(est.bandwidth))
                            })
                            .collect();
                        let path = cfg.out.join(format!("kde_{label}_m{m}{suffix}.csv"));
                        formats::write_csv(&path, "x,density,bandwidth", &rows)?;
                        written.push(path);
                    }
                    if emit(EmitFlag::Svg) {
                        let title = format!("{label} m={m}{suffix}");
                        let path = cfg.out.join(format!("kde_{label}_m{m}{suffix}.svg"));
                        formats::write_text(&path, &formats::kde_svg(&est, &title))?;
                        written.push(path);
                    }
                }
            }
        }

        if emit(EmitFlag::Raw) {
            let path = cfg.out.join(format!("raw_m{m}.csv"));
            formats::write_csv(
                &path,
                &runner::raw_header(cfg.system.d()),
                &runner::raw_csv_rows(&run.outcomes),
            )?;
            written.push(path);
        }

        counts.push(CountsEntry {
            m,
            q: cfg.q,
            retained: run.filtered.len(),
            unphysical: run.unphysical,
            unconverged: run.unconverged,
        });
    }

    let tests_wanted = !full_artifacts || cfg.emit.contains(&EmitFlag::Tables);
    if !resolved.is_empty() && tests_wanted {
        let path = cfg.out.join("tests.csv");
        formats::write_csv(&path, runner::TESTS_HEADER, &test_rows)?;
        written.push(path);
    }

    write_manifest(
        &cfg.out,
        command,
        config_json(cfg)?,
        Some(&scenario.rho0),
        counts,
        &written,
    )
}
