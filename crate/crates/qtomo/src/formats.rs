//! Numeric formatting and every file format the CLI reads or writes:
//! CSV tables, basis-set JSON, sample CSV, estimate reports, run
//! manifests, and the optional SVG rendering of density grids.
//!
//! Table cells use fixed-format numbers with six significant digits,
//! '.' as the decimal separator and ',' as the CSV delimiter. Data meant
//! to round-trip (basis matrices, manifest configs) is stored at full
//! precision instead; rounding a unitary matrix to six digits would
//! break its own validity check on reload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qtomo_core::linalg::{polar_unitary, CMat};
use qtomo_core::measurement::{BasisKind, BasisSet, MeasurementBasis};
use qtomo_core::sampling::Sample;
use qtomo_core::state::DensityMatrix;
use qtomo_core::stats::KdeEstimate;
use qtomo_core::Complex64;

use crate::error::{CliError, CliResult};

/// Formats with six significant digits. Magnitudes outside [1e-5, 1e6)
/// switch to scientific notation; fixed notation cannot carry six
/// significant digits there.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 {
        return "0.00000".to_string();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-5..6).contains(&mag) {
        format!("{x:.5e}")
    } else {
        let prec = (5 - mag).max(0) as usize;
        format!("{x:.prec$}")
    }
}

/// Rounds to the six significant digits the tables display, so JSON
/// reports carry exactly the printed values.
pub fn sig6(x: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    fmt6(x).parse().unwrap_or(x)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes a CSV file: header row, then data rows, '\n' line endings.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> CliResult<()> {
    let mut text = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// JSON schema for a measurement basis set: unitary matrices row-major,
/// each entry an [re, im] pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisFile {
    pub kind: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub bases: Vec<Vec<Vec<[f64; 2]>>>,
}

impl BasisFile {
    pub fn from_set(set: &BasisSet) -> BasisFile {
        let n = set.n();
        let bases = set
            .bases()
            .iter()
            .map(|b| {
                (0..n)
                    .map(|i| {
                        (0..n)
                            .map(|j| {
                                let z = b.matrix().at(i, j);
                                [z.re, z.im]
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        BasisFile {
            kind: set.kind().as_str().to_string(),
            n,
            bases,
        }
    }

    /// Rebuilds the basis set. Matrices are replaced by their polar
    /// unitary factor so files with rounded entries stay usable.
    pub fn to_set(&self) -> CliResult<BasisSet> {
        let kind = match self.kind.as_str() {
            "mub" => BasisKind::Mub,
            "mbb" => BasisKind::Mbb,
            "custom" => BasisKind::Custom,
            other => {
                return Err(CliError::Config(format!(
                    "unknown basis kind {other:?}, expected mub, mbb or custom"
                )))
            }
        };
        let mut bases = Vec::with_capacity(self.bases.len());
        for (r, rows) in self.bases.iter().enumerate() {
            if rows.len() != self.n || rows.iter().any(|row| row.len() != self.n) {
                return Err(CliError::Config(format!(
                    "basis {r} is not an {n}x{n} matrix",
                    n = self.n
                )));
            }
            let raw = CMat::from_fn(self.n, |i, j| {
                Complex64::new(rows[i][j][0], rows[i][j][1])
            });
            // A matrix that is unitary to machine precision is taken as
            // written, so reading a file we wrote is the exact identity;
            // hand-authored input with rounded entries gets repaired by
            // projection onto the nearest unitary.
            let unitary = if raw.unitarity_residual() <= 1e-12 {
                raw
            } else {
                polar_unitary(&raw)
                    .map_err(|e| CliError::Config(format!("basis {r} is not unitarizable: {e}")))?
            };
            bases.push(MeasurementBasis::new(unitary).map_err(CliError::from)?);
        }
        BasisSet::new(self.n, kind, bases).map_err(CliError::from)
    }
}

pub fn write_basis_file(path: &Path, set: &BasisSet) -> CliResult<()> {
    let file = BasisFile::from_set(set);
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| CliError::Io(format!("serializing basis set: {e}")))?;
    write_text(path, &text)
}

pub fn read_basis_file(path: &Path) -> CliResult<BasisSet> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: BasisFile = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("invalid basis file {}: {e}", path.display())))?;
    file.to_set()
}

/// Writes one observation per row, indices 1-based.
pub fn write_sample_csv(path: &Path, sample: &Sample) -> CliResult<()> {
    let rows: Vec<String> = sample
        .records()
        .iter()
        .enumerate()
        .map(|(k, rec)| format!("{},{},{}", k + 1, rec.basis + 1, rec.outcome))
        .collect();
    write_csv(path, "replication,basis,outcome", &rows)
}

/// Reads an observation CSV back into per-basis outcome counts.
pub fn read_sample_csv(path: &Path, bases: BasisSet) -> CliResult<Sample> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("replication,basis,outcome") => {}
        _ => {
            return Err(CliError::Config(format!(
                "{}: expected header replication,basis,outcome",
                path.display()
            )))
        }
    }
    let n = bases.n();
    let mut counts = vec![vec![0u64; n]; bases.count()];
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parsed: Option<(usize, usize)> = match fields.as_slice() {
            [_, b, o] => b.parse().ok().zip(o.parse().ok()),
            _ => None,
        };
        let (basis, outcome) = parsed.ok_or_else(|| {
            CliError::Config(format!(
                "{}: malformed row {}: {line:?}",
                path.display(),
                lineno + 2
            ))
        })?;
        if basis == 0 || basis > bases.count() || outcome == 0 || outcome > n {
            return Err(CliError::Config(format!(
                "{}: row {} indices out of range: {line:?}",
                path.display(),
                lineno + 2
            )));
        }
        counts[basis - 1][outcome - 1] += 1;
    }
    Sample::new(bases, counts).map_err(CliError::from)
}

/// Asymptotic inference block of an estimate report: per-coordinate
/// standard errors and 95% confidence intervals.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticBlock {
    pub standard_errors: Vec<f64>,
    pub confidence_intervals: Vec<[f64; 2]>,
}

/// JSON report for a single estimation run. Numeric fields are rounded
/// to the displayed six significant digits.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub system: String,
    pub m: u64,
    pub converged: bool,
    pub physical: bool,
    pub method: String,
    pub iterations: usize,
    pub scaled_loglik: f64,
    pub residual_norm: f64,
    pub theta_hat: Vec<f64>,
    pub rho_hat: Vec<Vec<[f64; 2]>>,
    pub eigenvalues: Vec<f64>,
    pub fidelity_vs_true: Option<f64>,
    pub asymptotic: Option<AsymptoticBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub asymptotic_unavailable_reason: Option<String>,
}

/// Full-precision [re, im] entries of a density matrix, for manifests.
pub fn density_entries(rho: &DensityMatrix) -> Vec<Vec<[f64; 2]>> {
    let n = rho.n();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let z = rho.matrix().at(i, j);
                    [z.re, z.im]
                })
                .collect()
        })
        .collect()
}

/// Display-rounded entries for JSON reports.
pub fn density_entries_sig6(rho: &DensityMatrix) -> Vec<Vec<[f64; 2]>> {
    density_entries(rho)
        .into_iter()
        .map(|row| row.into_iter().map(|[re, im]| [sig6(re), sig6(im)]).collect())
        .collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Io(format!("serializing {}: {e}", path.display())))?;
    write_text(path, &text)
}

/// One output file entry of a run manifest.
#[derive(Debug, Clone, Serialize)]
pub struct ManifestOutput {
    pub file: String,
    pub sha256: String,
}

/// Replication bookkeeping for one sample size.
#[derive(Debug, Clone, Serialize)]
pub struct CountsEntry {
    pub m: u64,
    pub q: usize,
    pub retained: usize,
    pub unphysical: usize,
    pub unconverged: usize,
}

/// Run manifest: everything needed to reproduce the emitted files byte
/// for byte, plus their hashes.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub rng: String,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rho0: Option<Vec<Vec<[f64; 2]>>>,
    pub counts: Vec<CountsEntry>,
    pub outputs: Vec<ManifestOutput>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn hash_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Renders a kernel density grid as a minimal standalone SVG line plot.
pub fn kde_svg(kde: &KdeEstimate, title: &str) -> String {
    let (w, h) = (640.0, 400.0);
    let (ml, mr, mt, mb) = (50.0, 15.0, 30.0, 40.0);
    let xmin = kde.grid[0];
    let xmax = *kde.grid.last().expect("nonempty grid");
    let ymax = kde.density.iter().cloned().fold(f64::MIN, f64::max).max(1e-300) * 1.05;
    let px = |x: f64| ml + (x - xmin) / (xmax - xmin) * (w - ml - mr);
    let py = |y: f64| h - mb - y / ymax * (h - mt - mb);
    let mut points = String::new();
    for (x, y) in kde.grid.iter().zip(kde.density.iter()) {
        points.push_str(&format!("{:.2},{:.2} ", px(*x), py(*y)));
    }
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"20\" text-anchor=\"middle\" font-family=\"monospace\" ",
            "font-size=\"13\">{title}</text>\n",
            "<line x1=\"{ml}\" y1=\"{base}\" x2=\"{xr}\" y2=\"{base}\" stroke=\"black\"/>\n",
            "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{base}\" stroke=\"black\"/>\n",
            "<text x=\"{ml}\" y=\"{lbl}\" text-anchor=\"middle\" font-family=\"monospace\" ",
            "font-size=\"11\">{xmin}</text>\n",
            "<text x=\"{xr}\" y=\"{lbl}\" text-anchor=\"middle\" font-family=\"monospace\" ",
            "font-size=\"11\">{xmax}</text>\n",
            "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"1.5\" ",
            "points=\"{points}\"/>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        tx = w / 2.0,
        title = title,
        ml = ml,
        mt = mt,
        base = h - mb,
        xr = w - mr,
        lbl = h - mb + 18.0,
        xmin = fmt6(xmin),
        xmax = fmt6(xmax),
        points = points.trim_end(),
    )
}
