//! Run reports and the solution file format.
//!
//! A solution file stores the grid spec, the symmetry order, and the raw
//! (a, b) samples as base64 little-endian f64 payloads; phi is derived state
//! and is always recomputed on load. The run report is a self-contained JSON
//! document: re-running with the echoed config reproduces it bit-for-bit on
//! the same build, except for the timings block.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyEval;
use crate::equivariance::{FieldPair, SymmetryOrder};
use crate::error::{Error, Result};
use crate::grid::{build_grid, GridSpec, ScalarField};
use crate::minimizer::{MinimizeConfig, Solution, ThresholdReport, Trace};
use crate::verification::CertificateReport;

pub const REPORT_SCHEMA_VERSION: &str = "1";

/// Flat echo of every knob that influenced the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub r0: f64,
    pub n_r: usize,
    pub n_theta: usize,
    pub m: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub initial_step: f64,
    pub backtrack: f64,
    pub min_step: f64,
    pub seed: u64,
    pub init: String,
}

impl ConfigEcho {
    pub fn from_config(cfg: &MinimizeConfig, init: &str) -> Self {
        Self {
            r0: cfg.spec.r0,
            n_r: cfg.spec.n_r,
            n_theta: cfg.spec.n_theta,
            m: cfg.m.m,
            max_iters: cfg.max_iters,
            grad_tol: cfg.grad_tol,
            initial_step: cfg.initial_step,
            backtrack: cfg.backtrack,
            min_step: cfg.min_step,
            seed: cfg.seed,
            init: init.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EnergySummary {
    pub value: f64,
    pub grad_a_sq: f64,
    pub grad_b_sq: f64,
    pub grad_phi_norm: f64,
    pub lambda: f64,
}

impl From<&EnergyEval> for EnergySummary {
    fn from(e: &EnergyEval) -> Self {
        Self {
            value: e.value,
            grad_a_sq: e.grad_a_sq,
            grad_b_sq: e.grad_b_sq,
            grad_phi_norm: e.grad_phi_norm,
            lambda: e.lambda,
        }
    }
}

/// Decimated view of the minimizing sequence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceSummary {
    pub iterations: usize,
    pub final_energy: f64,
    pub final_grad_norm: f64,
    pub final_concentration: f64,
    /// (iteration, energy) samples, at most `TRACE_SAMPLES` of them, always
    /// including the last record.
    pub energy_history: Vec<(usize, f64)>,
}

const TRACE_SAMPLES: usize = 64;

impl TraceSummary {
    pub fn from_trace(trace: &Trace) -> Self {
        let records = &trace.records;
        let last = records.last().expect("trace never empty");
        let stride = records.len().div_ceil(TRACE_SAMPLES).max(1);
        let mut energy_history: Vec<(usize, f64)> = records
            .iter()
            .step_by(stride)
            .map(|r| (r.iteration, r.energy))
            .collect();
        if energy_history.last().map(|t| t.0) != Some(last.iteration) {
            energy_history.push((last.iteration, last.energy));
        }
        Self {
            iterations: records.len(),
            final_energy: last.energy,
            final_grad_norm: last.grad_norm,
            final_concentration: last.concentration,
            energy_history,
        }
    }
}

/// Wall-clock timings in milliseconds; the one block excluded from
/// determinism comparisons.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Timings {
    pub solve_ms: f64,
    pub certify_ms: f64,
    pub export_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ArtifactPaths {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh_obj: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh_ply: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: String,
    pub config: ConfigEcho,
    pub converged: bool,
    pub energy: EnergySummary,
    pub trace: TraceSummary,
    pub certificate: CertificateReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdReport>,
    pub equivariance_defect: f64,
    pub timings: Timings,
    pub artifacts: ArtifactPaths,
}

/// Serialize any report-like value as pretty JSON, UTF-8, LF, trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// On-disk solution: JSON header plus base64 f64 little-endian payloads for
/// a and b in row-major (r-major) order. phi is never stored.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionFile {
    pub format_version: String,
    pub grid: GridSpec,
    pub m: usize,
    /// Informational echoes; recomputed (never trusted) on load.
    pub energy: f64,
    pub lambda: f64,
    pub a: String,
    pub b: String,
}

fn encode_field(f: &ScalarField) -> String {
    let mut bytes = Vec::with_capacity(f.values.len() * 8);
    for v in f.values.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    BASE64.encode(bytes)
}

fn decode_field(data: &str, spec: GridSpec) -> Result<ScalarField> {
    let bytes = BASE64
        .decode(data)
        .map_err(|e| Error::Format(format!("bad base64 payload: {e}")))?;
    let expected = spec.n_r * spec.n_theta * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload holds {} bytes, grid {}x{} needs {}",
            bytes.len(),
            spec.n_r,
            spec.n_theta,
            expected
        )));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite sample in payload".into()));
    }
    let grid = build_grid(spec)?;
    ScalarField::new(
        grid,
        ndarray::Array2::from_shape_vec((spec.n_r, spec.n_theta), values)
            .map_err(|e| Error::Format(e.to_string()))?,
    )
}

pub fn save_solution(sol: &Solution, path: &Path) -> Result<()> {
    save_pair(&sol.pair, sol.m, sol.eval.value, sol.eval.lambda, path)
}

/// Save an arbitrary pair in the solution file format; the energy and lambda
/// echoes are informational only.
pub fn save_pair(
    pair: &FieldPair,
    m: SymmetryOrder,
    energy: f64,
    lambda: f64,
    path: &Path,
) -> Result<()> {
    let file = SolutionFile {
        format_version: REPORT_SCHEMA_VERSION.to_string(),
        grid: pair.a.grid.spec,
        m: m.m,
        energy,
        lambda,
        a: encode_field(&pair.a),
        b: encode_field(&pair.b),
    };
    write_json(&file, path)
}

/// A solution file read back: the pair and its symmetry order. Everything
/// derived (phi, energy, lambda) must be recomputed by the caller.
pub struct LoadedSolution {
    pub pair: FieldPair,
    pub m: SymmetryOrder,
}

pub fn load_solution(path: &Path) -> Result<LoadedSolution> {
    let text = std::fs::read_to_string(path)?;
    let file: SolutionFile =
        serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let a = decode_field(&file.a, file.grid)?;
    let b = decode_field(&file.b, file.grid)?;
    Ok(LoadedSolution {
        pair: FieldPair::new(a, b)?,
        m: SymmetryOrder::new(file.m)?,
    })
}
