//! Artifact writing: CSV tables, binary field dumps and the run manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use insens_core::{Grid, Trajectory};
use serde::Serialize;

use crate::CliError;

pub const FIELD_MAGIC: &[u8; 8] = b"INS4FLD\0";
pub const FIELD_HEADER_LEN: usize = 32;

/// One asserted check and its outcome.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
    pub timings: Vec<(String, f64)>,
    pub checks: Vec<Check>,
    pub all_pass: bool,
}

/// Output directory that records everything written into it.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    timings: Vec<(String, f64)>,
    pub checks: Vec<Check>,
}

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// `{:.16e}`: 17 significant digits, enough to round-trip an f64.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

impl Artifacts {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            timings: Vec::new(),
            checks: Vec::new(),
        })
    }

    fn claim(&mut self, name: &str) -> PathBuf {
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        self.dir.join(name)
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
    }

    pub fn time(&mut self, stage: &str, d: Duration) {
        self.timings.push((stage.to_string(), d.as_secs_f64()));
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.claim(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| io(&path, e))?;
        w.write_record(header).map_err(|e| io(&path, e))?;
        for r in rows {
            w.write_record(r).map_err(|e| io(&path, e))?;
        }
        w.flush().map_err(|e| io(&path, e))
    }

    pub fn field(&mut self, name: &str, grid: &Grid, traj: &Trajectory) -> Result<(), CliError> {
        let path = self.claim(name);
        let f = File::create(&path).map_err(|e| io(&path, e))?;
        let mut w = BufWriter::new(f);
        write_field(&mut w, grid, traj).map_err(|e| io(&path, e))?;
        w.flush().map_err(|e| io(&path, e))
    }

    /// Writes `manifest.json`; call this last.
    pub fn finish(self, command: &str, config: serde_json::Value) -> Result<bool, CliError> {
        let all_pass = self.all_pass();
        let mut outputs = self.files;
        outputs.push("manifest.json".into());
        let m = RunManifest {
            command: command.to_string(),
            config,
            outputs,
            timings: self.timings,
            checks: self.checks,
            all_pass,
        };
        let path = self.dir.join("manifest.json");
        let tmp = self.dir.join("manifest.json.tmp");
        let text = serde_json::to_string_pretty(&m).map_err(|e| io(&path, e))?;
        std::fs::write(&tmp, text).map_err(|e| io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| io(&path, e))?;
        Ok(all_pass)
    }
}

/// Header, then `Nt` time slices of the interior nodes, row-major, little-endian.
///
/// Layout: magic (8 bytes), dimension u32, `N` u32, `Nt` u32, 4 zero bytes,
/// payload length in bytes u64.
pub fn write_field(w: &mut impl Write, grid: &Grid, traj: &Trajectory) -> std::io::Result<()> {
    let payload = (traj.nt() * grid.node_count() * 8) as u64;
    let mut h = [0u8; FIELD_HEADER_LEN];
    h[..8].copy_from_slice(FIELD_MAGIC);
    h[8..12].copy_from_slice(&(grid.dimension() as u32).to_le_bytes());
    h[12..16].copy_from_slice(&(grid.n() as u32).to_le_bytes());
    h[16..20].copy_from_slice(&(traj.nt() as u32).to_le_bytes());
    h[24..32].copy_from_slice(&payload.to_le_bytes());
    w.write_all(&h)?;
    let (n1, n2) = grid.shape();
    for u in traj.fields() {
        for i in 0..n1 {
            for j in 0..n2 {
                w.write_all(&u[(i, j)].to_le_bytes())?;
            }
        }
    }
    Ok(())
}
