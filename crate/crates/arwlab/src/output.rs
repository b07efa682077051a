//! Output files named `{experiment}-{hash}.{csv,json}`. Every file carries
//! the SHA-256 of the resolved config that produced it, and an existing
//! file is only replaced by output of the same config.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use arwlab_core::arw::{SiteConfig, SiteValue};
use arwlab_core::df::Odometer;
use arwlab_core::lattice::Site;
use arwlab_core::ssm::ProcessorState;

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("refusing to overwrite {path}: it was written by config {found}")]
    HashMismatch { path: PathBuf, found: String },
}

pub const HASH_PREFIX: &str = "# config_hash: ";

/// Hex SHA-256 of the compact JSON form of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String, OutputError> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hash embedded in an existing output file, if any.
pub fn embedded_hash(path: &Path) -> Option<String> {
    let text = fs::read_to_string(path).ok()?;
    if path.extension().is_some_and(|e| e == "json") {
        let v: serde_json::Value = serde_json::from_str(&text).ok()?;
        v.get("config_hash")?.as_str().map(str::to_owned)
    } else {
        text.lines().next()?.strip_prefix(HASH_PREFIX).map(|h| h.trim().to_owned())
    }
}

#[derive(Serialize)]
struct Document<'a, C: Serialize, B: Serialize> {
    experiment: &'a str,
    config_hash: &'a str,
    run_config: &'a C,
    #[serde(flatten)]
    body: &'a B,
    #[serde(skip_serializing_if = "Option::is_none")]
    runtime_secs: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct OutputSet {
    dir: PathBuf,
    experiment: String,
    hash: String,
    runtime_secs: Option<f64>,
}

impl OutputSet {
    pub fn new(dir: impl Into<PathBuf>, experiment: &str, hash: String) -> Self {
        Self { dir: dir.into(), experiment: experiment.to_owned(), hash, runtime_secs: None }
    }

    /// Wall time to record in the JSON file. Without it the output is a
    /// pure function of the config.
    pub fn with_runtime(mut self, secs: Option<f64>) -> Self {
        self.runtime_secs = secs;
        self
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn path(&self, ext: &str) -> PathBuf {
        self.dir.join(format!("{}-{}.{ext}", self.experiment, &self.hash[..16]))
    }

    fn put(&self, path: PathBuf, contents: &[u8]) -> Result<PathBuf, OutputError> {
        if path.exists() {
            match embedded_hash(&path) {
                Some(h) if h == self.hash => {}
                found => return Err(OutputError::HashMismatch { path, found: found.unwrap_or_else(|| "unknown".into()) }),
            }
        }
        fs::create_dir_all(&self.dir).map_err(|source| OutputError::Io { path: self.dir.clone(), source })?;
        fs::write(&path, contents).map_err(|source| OutputError::Io { path: path.clone(), source })?;
        Ok(path)
    }

    pub fn write_csv(&self, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, OutputError> {
        let mut buf = format!("{HASH_PREFIX}{}\n", self.hash).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush().map_err(|source| OutputError::Io { path: self.path("csv"), source })?;
        }
        self.put(self.path("csv"), &buf)
    }

    pub fn write_json<C: Serialize, B: Serialize>(&self, config: &C, body: &B) -> Result<PathBuf, OutputError> {
        let doc = Document {
            experiment: &self.experiment,
            config_hash: &self.hash,
            run_config: config,
            body,
            runtime_secs: self.runtime_secs,
        };
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        self.put(self.path("json"), text.as_bytes())
    }
}

/// Site coordinates joined by `;`, for CSV cells.
pub fn site_cell(x: &Site) -> String {
    x.coords().iter().map(i64::to_string).collect::<Vec<_>>().join(";")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum CellValue {
    Count(u32),
    Label(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigEntry {
    pub site: Vec<i64>,
    pub value: CellValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CountEntry {
    pub site: Vec<i64>,
    pub count: u64,
}

pub fn config_entries(c: &SiteConfig) -> Vec<ConfigEntry> {
    c.iter()
        .map(|(x, v)| ConfigEntry {
            site: x.coords().to_vec(),
            value: match v {
                SiteValue::Active(n) => CellValue::Count(*n),
                SiteValue::Sleeping => CellValue::Label("s"),
            },
        })
        .collect()
}

pub fn odometer_entries(j: &Odometer) -> Vec<CountEntry> {
    j.iter().map(|(x, n)| CountEntry { site: x.coords().to_vec(), count: *n }).collect()
}

/// Final state of a walk-engine stabilization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ArwSnapshot {
    pub stable: bool,
    pub particles: u64,
    pub config: Vec<ConfigEntry>,
    pub odometer: Vec<CountEntry>,
    pub dissipated: u64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProcessorEntry {
    pub site: Vec<i64>,
    pub q: u64,
    pub r: u64,
    pub retained: u64,
}

/// Final state of a sandpile-network stabilization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SsmSnapshot {
    pub stable: bool,
    pub retained: u64,
    pub processors: Vec<ProcessorEntry>,
    pub dissipated: u64,
    pub processed: u64,
}

pub fn processor_entries<'a>(states: impl IntoIterator<Item = (&'a Site, &'a ProcessorState)>, kappa: u64) -> Vec<ProcessorEntry> {
    states
        .into_iter()
        .map(|(x, s)| ProcessorEntry { site: x.coords().to_vec(), q: s.q, r: s.r, retained: s.retained(kappa) })
        .collect()
}
