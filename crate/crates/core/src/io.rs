//! File formats: controller ensembles (JSON), record and summary tables
//! (CSV), and run manifests written next to every output.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytics::CorrelationSummary;
use crate::error::{Error, Result};
use crate::geometry::GeometryRecord;
use crate::network::NetworkSpec;
use crate::synthesis::Controller;

/// Bumped whenever a column or field changes.
pub const SCHEMA_VERSION: u32 = 1;

pub const RECORD_COLUMNS: [&str; 15] = [
    "controller_index",
    "structure_index",
    "F",
    "e",
    "zeta",
    "abs_zeta",
    "f_n",
    "tf",
    "norm_K",
    "norm_Rs",
    "cos_phi",
    "sin_phi",
    "cos_theta",
    "identity_residual",
    "pst_flag",
];

pub const SUMMARY_COLUMNS: [&str; 6] = [
    "structure_index",
    "n_records",
    "pearson_loglog",
    "kendall_tau_e_vs_sinphi",
    "mean_norm_K",
    "var_norm_K",
];

/// One element of the controller JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerEntry {
    pub index: usize,
    pub seed: u64,
    pub tf: f64,
    pub biases: Vec<f64>,
    pub fidelity: f64,
}

impl From<&Controller> for ControllerEntry {
    fn from(c: &Controller) -> Self {
        Self {
            index: c.index,
            seed: c.seed,
            tf: c.t_f,
            biases: c.biases.clone(),
            fidelity: c.fidelity,
        }
    }
}

impl ControllerEntry {
    pub fn into_controller(self, spec: &NetworkSpec) -> Result<Controller> {
        if self.biases.len() != spec.num_spins {
            return Err(Error::DimensionMismatch {
                expected: spec.num_spins,
                got: self.biases.len(),
            });
        }
        if !(self.tf.is_finite() && self.tf >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "controller {} has invalid read-out time {}",
                self.index, self.tf
            )));
        }
        Ok(Controller {
            biases: self.biases,
            t_f: self.tf,
            fidelity: self.fidelity,
            spec: spec.clone(),
            seed: self.seed,
            index: self.index,
            converged: true,
        })
    }
}

pub fn controllers_to_json(controllers: &[Controller]) -> Result<String> {
    let entries: Vec<ControllerEntry> = controllers.iter().map(ControllerEntry::from).collect();
    let mut s = serde_json::to_string_pretty(&entries)?;
    s.push('\n');
    Ok(s)
}

pub fn controllers_from_json(text: &str, spec: &NetworkSpec) -> Result<Vec<Controller>> {
    let entries: Vec<ControllerEntry> = serde_json::from_str(text)?;
    entries
        .into_iter()
        .map(|e| e.into_controller(spec))
        .collect()
}

pub fn read_spec(path: &Path) -> Result<NetworkSpec> {
    let spec: NetworkSpec = serde_json::from_str(&fs::read_to_string(path)?)?;
    spec.validate()?;
    Ok(spec)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".to_string(), fmt_f64)
}

pub fn write_records<W: Write>(out: W, records: &[GeometryRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(RECORD_COLUMNS)?;
    for r in records {
        w.write_record([
            r.controller_index.to_string(),
            r.structure_index.to_string(),
            fmt_f64(r.fidelity),
            fmt_f64(r.error),
            fmt_f64(r.zeta),
            fmt_f64(r.zeta.abs()),
            fmt_f64(r.f_n),
            fmt_f64(r.t_f),
            fmt_f64(r.norm_k),
            fmt_f64(r.norm_rs),
            fmt_f64(r.cos_phi),
            fmt_f64(r.sin_phi),
            fmt_f64(r.cos_theta),
            fmt_f64(r.identity_residual),
            u8::from(r.pst).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summaries<W: Write>(out: W, summaries: &[CorrelationSummary]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for s in summaries {
        w.write_record([
            s.structure_index.to_string(),
            s.count.to_string(),
            fmt_opt(s.pearson_r_loglog),
            fmt_opt(s.kendall_tau),
            fmt_f64(s.mean_norm_k),
            fmt_f64(s.var_norm_k),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Parse a records CSV back into rows of named columns (used by tests and
/// downstream tooling).
pub fn read_records(path: &Path) -> Result<Vec<GeometryRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != RECORD_COLUMNS {
        return Err(Error::InvalidConfig(format!(
            "unexpected record columns in {}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let f = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|e| Error::InvalidConfig(format!("column {}: {e}", RECORD_COLUMNS[i])))
        };
        let u = |i: usize| -> Result<usize> {
            row[i]
                .parse::<usize>()
                .map_err(|e| Error::InvalidConfig(format!("column {}: {e}", RECORD_COLUMNS[i])))
        };
        out.push(GeometryRecord {
            controller_index: u(0)?,
            structure_index: u(1)?,
            fidelity: f(2)?,
            error: f(3)?,
            zeta: f(4)?,
            f_n: f(6)?,
            t_f: f(7)?,
            norm_k: f(8)?,
            norm_rs: f(9)?,
            cos_phi: f(10)?,
            sin_phi: f(11)?,
            cos_theta: f(12)?,
            identity_residual: f(13)?,
            pst: &row[14] == "1",
            zero_fidelity: f(2)? < crate::geometry::ZERO_FIDELITY || f(11)?.is_nan(),
        });
    }
    Ok(out)
}

/// Provenance for one command invocation. Data files themselves carry no
/// timestamps; the manifest sits beside each of them as `<file>.manifest.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub master_seed: Option<u64>,
    pub spec: NetworkSpec,
    pub config: serde_json::Value,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// SHA-256 over the canonical JSON of the command, spec and configuration.
pub fn config_hash(
    command: &str,
    spec: &NetworkSpec,
    config: &serde_json::Value,
) -> Result<String> {
    let canonical = serde_json::to_vec(&serde_json::json!({
        "command": command,
        "schema_version": SCHEMA_VERSION,
        "spec": spec,
        "config": config,
    }))?;
    Ok(Sha256::digest(&canonical)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

pub fn manifest_path(data: &Path) -> PathBuf {
    let mut name = data
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    data.with_file_name(name)
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn write_beside(&self, data: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        fs::write(manifest_path(data), s)?;
        Ok(())
    }

    pub fn read_beside(data: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(manifest_path(
            data,
        ))?)?)
    }
}
