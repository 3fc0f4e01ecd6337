//! Run configuration: named presets, the JSON config file schema, flag
//! overrides, and fail-fast validation.
//!
//! Precedence is flags over file over preset. A configuration is fully
//! validated (state admissibility, hypothesis indices, basis/system
//! compatibility) before any simulation or estimation starts.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use qtomo_core::algebra::{build_generators, compute_structure_constants};
use qtomo_core::state::{bloch_to_density, is_admissible, BlochVector};
use qtomo_core::stats::Hypothesis;

use crate::error::{CliError, CliResult};

/// Significance level every test is calibrated for; the critical values
/// 1.96 and the chi-square table are specific to it.
pub const SUPPORTED_ALPHA: f64 = 0.05;

/// Which physical system to reconstruct; fixes the Hilbert dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    #[value(name = "spin_half")]
    SpinHalf,
    #[value(name = "spin_one")]
    SpinOne,
}

impl SystemKind {
    /// Hilbert space dimension N.
    pub fn n(self) -> usize {
        match self {
            SystemKind::SpinHalf => 2,
            SystemKind::SpinOne => 3,
        }
    }

    /// Number of Bloch coordinates, N^2 - 1.
    pub fn d(self) -> usize {
        self.n() * self.n() - 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SystemKind::SpinHalf => "spin_half",
            SystemKind::SpinOne => "spin_one",
        }
    }
}

/// Where the measurement bases come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSource {
    /// Mutually unbiased bases for the system dimension.
    Mub,
    /// Deliberately biased bases grown from the MUB set until every
    /// rotated basis overlaps another by at least alpha/sqrt(N).
    Mbb { alpha: f64, seed: u64 },
    /// The fixed four-basis reference biased set (N = 3 only).
    Appendix,
    /// Basis set loaded from a JSON file.
    Custom { path: PathBuf },
}

/// Artifact families a run can emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EmitFlag {
    /// Summary and test tables (CSV).
    Tables,
    /// Kernel density grids per reported quantity (CSV).
    Kde,
    /// Line-plot rendering of each KDE grid.
    Svg,
    /// Per-replication estimate dump (CSV).
    Raw,
}

/// One hypothesis evaluated on every Monte Carlo replication. Coordinate
/// and eigenvalue indices are 1-based, as in the emitted tables; a
/// missing target means "test against the true value" (a size row),
/// while an explicit target makes a power row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "snake_case")]
pub enum HypothesisSpec {
    /// t test of one Bloch coordinate.
    T {
        coordinate: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<f64>,
    },
    /// t test of the level-th largest eigenvalue of the reconstruction.
    EigenvalueT {
        level: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<f64>,
    },
    /// Joint Wald test of several coordinates against a common target.
    Wald {
        coordinates: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        target: Option<f64>,
    },
}

/// A hypothesis spec bound to a concrete true state: display label, test
/// family, size-or-power role, and the core hypothesis with 0-based
/// indices and explicit targets.
#[derive(Debug, Clone)]
pub struct ResolvedHypothesis {
    pub label: String,
    pub kind: &'static str,
    pub role: &'static str,
    pub hypothesis: Hypothesis,
}

impl HypothesisSpec {
    /// Binds the spec to the true state, filling missing targets from
    /// theta0 (or its spectrum) and converting indices to 0-based.
    pub fn resolve(&self, theta0: &BlochVector) -> CliResult<ResolvedHypothesis> {
        let d = theta0.d();
        let n = theta0.n();
        match self {
            HypothesisSpec::T { coordinate, target } => {
                if *coordinate == 0 || *coordinate > d {
                    return Err(CliError::Config(format!(
                        "t-test coordinate must lie in 1..={d}, got {coordinate}"
                    )));
                }
                let index = coordinate - 1;
                let (value, role) = match target {
                    Some(v) => (*v, "power"),
                    None => (theta0.theta()[index], "size"),
                };
                let label = match target {
                    Some(v) => format!("theta_{coordinate}={v}"),
                    None => format!("theta_{coordinate}=theta_{coordinate}_0"),
                };
                Ok(ResolvedHypothesis {
                    label,
                    kind: "t",
                    role,
                    hypothesis: Hypothesis::CoordinateT {
                        index,
                        target: value,
                    },
                })
            }
            HypothesisSpec::EigenvalueT { level, target } => {
                if *level == 0 || *level > n {
                    return Err(CliError::Config(format!(
                        "eigenvalue level must lie in 1..={n}, got {level}"
                    )));
                }
                let gens = build_generators(n)?;
                let rho0 = bloch_to_density(&gens, theta0)?;
                let eig = rho0.eigenvalues()?;
                let (value, role) = match target {
                    Some(v) => (*v, "power"),
                    None => (eig[level - 1], "size"),
                };
                let label = match target {
                    Some(v) => format!("delta_{level}={v}"),
                    None => format!("delta_{level}=delta_{level}_0"),
                };
                Ok(ResolvedHypothesis {
                    label,
                    kind: "t",
                    role,
                    hypothesis: Hypothesis::EigenvalueT {
                        level: level - 1,
                        target: value,
                    },
                })
            }
            HypothesisSpec::Wald {
                coordinates,
                target,
            } => {
                if coordinates.is_empty() {
                    return Err(CliError::Config(
                        "wald test needs at least one coordinate".into(),
                    ));
                }
                let mut indices = Vec::with_capacity(coordinates.len());
                for c in coordinates {
                    if *c == 0 || *c > d {
                        return Err(CliError::Config(format!(
                            "wald coordinate must lie in 1..={d}, got {c}"
                        )));
                    }
                    if indices.contains(&(c - 1)) {
                        return Err(CliError::Config(format!(
                            "wald coordinates must be distinct, {c} repeats"
                        )));
                    }
                    indices.push(c - 1);
                }
                let (targets, role) = match target {
                    Some(v) => (vec![*v; indices.len()], "power"),
                    None => (
                        indices.iter().map(|&i| theta0.theta()[i]).collect(),
                        "size",
                    ),
                };
                let digits: String = coordinates.iter().map(|c| c.to_string()).collect();
                let label = match target {
                    Some(v) => format!("theta_{digits}={v}"),
                    None => format!("theta_{digits}=theta_0"),
                };
                Ok(ResolvedHypothesis {
                    label,
                    kind: "wald",
                    role,
                    hypothesis: Hypothesis::WaldCoordinates { indices, targets },
                })
            }
        }
    }
}

/// A fully resolved run plan. Serialized verbatim into run manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub system: SystemKind,
    pub true_theta: Vec<f64>,
    pub basis: BasisSource,
    pub m: Vec<u64>,
    pub q: usize,
    pub seed: u64,
    pub alpha: f64,
    pub filter: bool,
    pub hypotheses: Vec<HypothesisSpec>,
    pub out: PathBuf,
    pub emit: Vec<EmitFlag>,
}

/// Built-in scenario for a system: its reference true state and the
/// standard battery of size and power hypotheses.
pub fn preset(system: SystemKind) -> RunConfig {
    let (true_theta, hypotheses) = match system {
        SystemKind::SpinHalf => (
            vec![-0.44, -0.02, 0.19],
            vec![
                HypothesisSpec::T {
                    coordinate: 2,
                    target: None,
                },
                HypothesisSpec::T {
                    coordinate: 2,
                    target: Some(0.5),
                },
                HypothesisSpec::Wald {
                    coordinates: vec![1, 2, 3],
                    target: None,
                },
                HypothesisSpec::Wald {
                    coordinates: vec![1, 2, 3],
                    target: Some(0.5),
                },
            ],
        ),
        SystemKind::SpinOne => (
            vec![0.15, -0.14, -0.07, -0.04, -0.15, -0.01, -0.17, -0.23],
            vec![
                HypothesisSpec::T {
                    coordinate: 6,
                    target: None,
                },
                HypothesisSpec::T {
                    coordinate: 6,
                    target: Some(0.5),
                },
                HypothesisSpec::EigenvalueT {
                    level: 1,
                    target: None,
                },
                HypothesisSpec::EigenvalueT {
                    level: 1,
                    target: Some(0.5),
                },
                HypothesisSpec::Wald {
                    coordinates: vec![3, 4, 6],
                    target: None,
                },
                HypothesisSpec::Wald {
                    coordinates: vec![3, 4, 6],
                    target: Some(0.5),
                },
            ],
        ),
    };
    RunConfig {
        system,
        true_theta,
        basis: BasisSource::Mub,
        m: vec![100, 400, 1000],
        q: 1000,
        seed: 1,
        alpha: SUPPORTED_ALPHA,
        filter: true,
        hypotheses,
        out: PathBuf::from("out"),
        emit: vec![EmitFlag::Tables],
    }
}

/// The JSON configuration file. Every field is optional; omitted fields
/// fall back to the preset for the chosen system, and command line flags
/// override both.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub system: Option<SystemKind>,
    pub true_theta: Option<Vec<f64>>,
    pub basis: Option<BasisSource>,
    pub m: Option<Vec<u64>>,
    pub q: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub filter: Option<bool>,
    pub hypotheses: Option<Vec<HypothesisSpec>>,
    pub out: Option<PathBuf>,
    pub emit: Option<Vec<EmitFlag>>,
}

impl ConfigFile {
    pub fn load(path: &std::path::Path) -> CliResult<ConfigFile> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }
}

/// Values taken from command line flags; all optional, strongest
/// precedence.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub system: Option<SystemKind>,
    pub m: Option<Vec<u64>>,
    pub q: Option<usize>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub filter: Option<bool>,
    pub out: Option<PathBuf>,
    pub emit: Option<Vec<EmitFlag>>,
}

/// Merges preset, config file, and flags into a validated RunConfig.
pub fn resolve(file: Option<ConfigFile>, over: &Overrides) -> CliResult<RunConfig> {
    let file = file.unwrap_or_default();
    let system = over.system.or(file.system).ok_or_else(|| {
        CliError::Config("system must be given via --system or the config file".into())
    })?;
    let mut cfg = preset(system);
    if let Some(v) = file.true_theta {
        cfg.true_theta = v;
    }
    if let Some(v) = file.basis {
        cfg.basis = v;
    }
    if let Some(v) = file.m {
        cfg.m = v;
    }
    if let Some(v) = file.q {
        cfg.q = v;
    }
    if let Some(v) = file.seed {
        cfg.seed = v;
    }
    if let Some(v) = file.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = file.filter {
        cfg.filter = v;
    }
    if let Some(v) = file.hypotheses {
        cfg.hypotheses = v;
    }
    if let Some(v) = file.out {
        cfg.out = v;
    }
    if let Some(v) = file.emit {
        cfg.emit = v;
    }
    if let Some(v) = &over.m {
        cfg.m = v.clone();
    }
    if let Some(v) = over.q {
        cfg.q = v;
    }
    if let Some(v) = over.seed {
        cfg.seed = v;
    }
    if let Some(v) = over.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = over.filter {
        cfg.filter = v;
    }
    if let Some(v) = &over.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &over.emit {
        cfg.emit = v.clone();
    }
    validate(&cfg)?;
    Ok(cfg)
}

/// Checks every precondition that can be checked without running
/// anything: sample sizes, significance level, state admissibility,
/// basis/system compatibility, hypothesis indices.
pub fn validate(cfg: &RunConfig) -> CliResult<()> {
    if cfg.m.is_empty() {
        return Err(CliError::Config("m list must not be empty".into()));
    }
    if cfg.m.iter().any(|&m| m == 0) {
        return Err(CliError::Config("every m must be at least 1".into()));
    }
    // Artifact names embed m, so repeats would silently overwrite.
    for (i, m) in cfg.m.iter().enumerate() {
        if cfg.m[..i].contains(m) {
            return Err(CliError::Config(format!("m values must be distinct, {m} repeats")));
        }
    }
    if cfg.q == 0 {
        return Err(CliError::Config("q must be at least 1".into()));
    }
    if (cfg.alpha - SUPPORTED_ALPHA).abs() > 1e-12 {
        return Err(CliError::Config(format!(
            "only the {SUPPORTED_ALPHA} significance level is supported, got {}",
            cfg.alpha
        )));
    }
    let theta0 = true_state(cfg)?;
    let gens = build_generators(cfg.system.n())?;
    let sc = compute_structure_constants(&gens);
    if !is_admissible(&theta0, &sc)? {
        return Err(CliError::Config(
            "true_theta is not an admissible density matrix".into(),
        ));
    }
    match &cfg.basis {
        BasisSource::Mbb { alpha, .. } => {
            if !(*alpha > 0.0) {
                return Err(CliError::Config("mbb alpha must be positive".into()));
            }
        }
        BasisSource::Appendix => {
            if cfg.system != SystemKind::SpinOne {
                return Err(CliError::Config(
                    "the appendix basis set is three-dimensional; it requires spin_one".into(),
                ));
            }
        }
        _ => {}
    }
    for h in &cfg.hypotheses {
        h.resolve(&theta0)?;
    }
    Ok(())
}

/// The configured true state as a Bloch vector.
pub fn true_state(cfg: &RunConfig) -> CliResult<BlochVector> {
    let d = cfg.system.d();
    if cfg.true_theta.len() != d {
        return Err(CliError::Config(format!(
            "true_theta needs {d} coordinates for {}, got {}",
            cfg.system.as_str(),
            cfg.true_theta.len()
        )));
    }
    BlochVector::new(cfg.system.n(), cfg.true_theta.clone()).map_err(CliError::from)
}
