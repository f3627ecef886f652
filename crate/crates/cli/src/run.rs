//! Run directories and their manifests.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: PathBuf,
    /// `None` for paths that do not exist (or could not be read).
    pub sha256: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub status: String,
    pub error: Option<String>,
    pub exit_code: i32,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub started_at: String,
    pub wall_time_secs: f64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub version: String,
}

/// Every command writes its outputs below one of these and finishes by
/// writing exactly one manifest.
pub struct RunDir {
    pub path: PathBuf,
    started: Instant,
    started_at: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
}

impl RunDir {
    /// Uses `explicit` verbatim, or `<root>/<UTC timestamp>-seed<seed>`.
    pub fn create(root: &Path, explicit: Option<&Path>, seed: Option<u64>) -> CliResult<Self> {
        let now = chrono::Utc::now();
        let path = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let stamp = now.format("%Y%m%dT%H%M%S%.3fZ");
                let base = root.join(format!("{stamp}-seed{}", seed.unwrap_or(0)));
                let mut path = base.clone();
                let mut n = 1;
                while path.exists() {
                    path = PathBuf::from(format!("{}-{n}", base.display()));
                    n += 1;
                }
                path
            }
        };
        if path.join(MANIFEST_FILE).exists() {
            return Err(CliError::usage(format!(
                "{} already holds a finished run; manifests are never overwritten",
                path.display()
            )));
        }
        std::fs::create_dir_all(&path)
            .map_err(|e| CliError::usage(format!("cannot create run directory {}: {e}", path.display())))?;
        Ok(RunDir {
            path,
            started: Instant::now(),
            started_at: now.to_rfc3339(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: serde_json::Value::Null,
            seed,
        })
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }

    /// Registers and returns `<run>/<rel>`.
    pub fn output(&mut self, rel: &str) -> PathBuf {
        let p = self.path.join(rel);
        self.outputs.push(p.clone());
        p
    }

    pub fn finish(self, command: &str, argv: Vec<String>, result: &CliResult<()>) -> CliResult<PathBuf> {
        let digests = |paths: &[PathBuf]| {
            let mut out = Vec::new();
            for p in paths {
                expand(p, &mut out);
            }
            out
        };
        let (status, error, exit_code) = match result {
            Ok(()) => ("ok".to_string(), None, 0),
            Err(e) => ("failed".to_string(), Some(e.message.clone()), e.code),
        };
        let manifest = RunManifest {
            command: command.to_string(),
            argv,
            status,
            error,
            exit_code,
            seed: self.seed,
            config: self.config,
            started_at: self.started_at,
            wall_time_secs: self.started.elapsed().as_secs_f64(),
            inputs: digests(&self.inputs),
            outputs: digests(&self.outputs),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let path = self.path.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
        Ok(path)
    }
}

/// Directories expand to their files in sorted order.
fn expand(p: &Path, out: &mut Vec<FileDigest>) {
    if p.is_dir() {
        let mut entries: Vec<PathBuf> = match std::fs::read_dir(p) {
            Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
            Err(_) => Vec::new(),
        };
        entries.sort();
        for e in entries {
            expand(&e, out);
        }
    } else {
        out.push(FileDigest {
            path: p.to_path_buf(),
            sha256: sha256_file(p).ok(),
        });
    }
}

pub fn sha256_file(p: &Path) -> std::io::Result<String> {
    let mut f = std::fs::File::open(p)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
