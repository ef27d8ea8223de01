//! Output directory bookkeeping: artifacts with digests, checks, and the run
//! manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::config::Config;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Artifact {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// Acceptance criterion number, when the check is one.
    pub criterion: Option<u32>,
    pub passed: bool,
    pub measured: Map<String, Value>,
    pub expected: String,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, criterion: Option<u32>, expected: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            criterion,
            passed: false,
            measured: Map::new(),
            expected: expected.into(),
            detail: String::new(),
        }
    }

    pub fn measure(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.measured.insert(key.to_string(), value.into());
        self
    }

    pub fn passed(mut self, passed: bool) -> Self {
        self.passed = passed;
        self
    }

    pub fn detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    /// One line: `PASS [3] zf-stationarity: ...`.
    pub fn line(&self) -> String {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        let crit = self.criterion.map(|c| format!("[{c}] ")).unwrap_or_default();
        let vals: Vec<String> = self.measured.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let mut s = format!("{tag} {crit}{}: {} (expected {})", self.name, vals.join(" "), self.expected);
        if !self.detail.is_empty() {
            s.push_str(" -- ");
            s.push_str(&self.detail);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorRecord {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub tolerance_profile: String,
    pub config: Config,
    pub wall_time_s: f64,
    pub status: String,
    pub checks: Vec<Check>,
    pub artifacts: Vec<Artifact>,
    pub errors: Vec<ErrorRecord>,
}

/// Collects everything a subcommand writes.
pub struct Run {
    out: PathBuf,
    pub artifacts: Vec<Artifact>,
    pub checks: Vec<Check>,
}

impl Run {
    pub fn new(out: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(out).map_err(|e| anyhow::anyhow!("cannot create {}: {e}", out.display()))?;
        Ok(Run {
            out: out.to_path_buf(),
            artifacts: Vec::new(),
            checks: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.out
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.push(name, bytes);
        Ok(())
    }

    /// Renders into memory with `f`, then writes.
    pub fn write_with(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut Vec<u8>) -> wtmoments_core::Result<()>,
    ) -> anyhow::Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Registers a file some other code already wrote under the output dir.
    pub fn register(&mut self, name: &str) -> anyhow::Result<()> {
        let bytes = fs::read(self.out.join(name))?;
        self.push(name, &bytes);
        Ok(())
    }

    fn push(&mut self, name: &str, bytes: &[u8]) {
        self.artifacts.retain(|a| a.path != name);
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
