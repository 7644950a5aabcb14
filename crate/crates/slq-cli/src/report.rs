//! Report emission: run manifests with hashed file inventories, identity
//! report files, and the P-diagnostics CSV.
//!
//! Emitted CSV layouts (all columns use Rust's shortest round-trip float
//! formatting, so files are byte-deterministic for identical inputs):
//! - `p_diagnostics.csv`: `t,entry,value` — one row per grid node and
//!   distinct entry `p_i_j` (`i <= j`) of the symmetric value matrix,
//!   evaluated along the `W = 0` slice.
//! - `reports.csv`: `identity,pass,residual,tolerance,lhs,lhs_se,rhs,rhs_se`.
//! - `iterations.csv`: `iteration,delta,min_k_eig`.

use serde::Serialize;
use sha2::{Digest, Sha256};
use slq_core::error::{Error, Result};
use slq_core::riccati::RiccatiSolution;
use slq_core::verify::IdentityReport;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Lowercase hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// One emitted file with its content hash.
#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    /// Path relative to the output directory, with forward slashes.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// One pipeline stage with wall-clock accounting.
#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub detail: String,
    pub wall_ms: u64,
    /// "ok" or "failed: <message>".
    pub status: String,
}

/// Inventory of one experiment run: configuration digest, stage log, and
/// every emitted file with its content hash (the manifest itself excluded).
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub config_digest: String,
    pub seed: Option<u64>,
    /// Solver actually selected ("riccati-ode", "theta-fixed-point",
    /// "bsde-direct"); absent until the solve stage runs.
    pub regime: Option<String>,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileRecord>,
    /// Name of the stage that aborted the run, when one did.
    pub failure_stage: Option<String>,
    pub checks_total: usize,
    pub checks_passed: usize,
}

impl RunManifest {
    pub fn new(config_digest: String, seed: Option<u64>) -> Self {
        Self {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config_digest,
            seed,
            regime: None,
            stages: Vec::new(),
            files: Vec::new(),
            failure_stage: None,
            checks_total: 0,
            checks_passed: 0,
        }
    }

    pub fn record_ok(&mut self, name: &str, detail: String, started: Instant) {
        let wall_ms = started.elapsed().as_millis() as u64;
        println!("[{name}] {detail} ({wall_ms} ms)");
        self.stages.push(StageRecord {
            name: name.into(),
            detail,
            wall_ms,
            status: "ok".into(),
        });
    }

    pub fn record_fail(&mut self, name: &str, started: Instant, err: &Error) {
        self.stages.push(StageRecord {
            name: name.into(),
            detail: String::new(),
            wall_ms: started.elapsed().as_millis() as u64,
            status: format!("failed: {err}"),
        });
        self.failure_stage = Some(name.into());
    }
}

/// Writes files under one output directory and keeps the hashed inventory.
pub struct Emitter {
    out_dir: PathBuf,
    pub files: Vec<FileRecord>,
}

impl Emitter {
    /// Creates the output directory (and parents) up front so that even a
    /// failed run leaves a manifest behind.
    pub fn new(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir).map_err(|e| {
            Error::Config(format!(
                "cannot create output directory '{}': {e}",
                out_dir.display()
            ))
        })?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Writes one file (creating subdirectories) and records it in the
    /// inventory.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.out_dir.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| {
                Error::Config(format!("cannot create '{}': {e}", parent.display()))
            })?;
        }
        std::fs::write(&path, bytes)
            .map_err(|e| Error::Config(format!("cannot write '{}': {e}", path.display())))?;
        self.files.push(FileRecord {
            path: rel.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// Serializes a value as pretty JSON with a trailing newline.
    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Config(format!("cannot serialize '{rel}': {e}")))?;
        text.push('\n');
        self.write(rel, text.as_bytes())
    }

    /// Writes the manifest itself; the manifest is not part of its own
    /// inventory.
    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<()> {
        let mut text = serde_json::to_string_pretty(manifest)
            .map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))?;
        text.push('\n');
        let path = self.out_dir.join("manifest.json");
        std::fs::write(&path, text)
            .map_err(|e| Error::Config(format!("cannot write '{}': {e}", path.display())))
    }
}

/// P-diagnostics table: the distinct entries of the symmetric value matrix
/// at every grid node, along the `W = 0` slice.
pub fn p_diagnostics_csv(solution: &RiccatiSolution) -> String {
    let grid = solution.grid();
    let mut csv = String::from("t,entry,value\n");
    for k in 0..=grid.steps() {
        let t = grid.time(k);
        let p = solution.p_at(k, 0.0);
        for i in 0..p.nrows() {
            for j in i..p.ncols() {
                csv.push_str(&format!("{t},p_{i}_{j},{}\n", p[(i, j)]));
            }
        }
    }
    csv
}

/// Fixed-point iteration log as CSV.
pub fn iterations_csv(solution: &RiccatiSolution) -> String {
    let mut csv = String::from("iteration,delta,min_k_eig\n");
    for stat in &solution.iterations {
        csv.push_str(&format!(
            "{},{},{}\n",
            stat.iteration, stat.delta, stat.min_k_eig
        ));
    }
    csv
}

/// Emits identity reports in the requested formats: one JSON file per
/// report under `reports/`, and a `reports.csv` summary table. Requires at
/// least one report.
pub fn emit_reports(
    emitter: &mut Emitter,
    reports: &[IdentityReport],
    json: bool,
    csv: bool,
) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Contract(
            "emit_reports requires at least one identity report".into(),
        ));
    }
    if json {
        for rep in reports {
            emitter.write_json(&format!("reports/{}.json", rep.identity), rep)?;
        }
    }
    if csv {
        let mut table =
            String::from("identity,pass,residual,tolerance,lhs,lhs_se,rhs,rhs_se\n");
        for r in reports {
            table.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.identity, r.pass, r.residual, r.tolerance, r.lhs, r.lhs_se, r.rhs, r.rhs_se
            ));
        }
        emitter.write("reports.csv", table.as_bytes())?;
    }
    Ok(())
}
