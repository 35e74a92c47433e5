//! Run manifests, content hashes and CSV writers.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::simdata::PerturbationKind;
use crate::train::EpochRecord;

use super::experiment::RunConfig;
use super::metrics::MetricReport;

pub const MANIFEST_FORMAT: &str = "ofgcn-manifest";
pub const MANIFEST_VERSION: u32 = 1;

/// Environment variable that overrides the output root directory.
pub const OUT_DIR_ENV: &str = "OFGCN_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "ofgcn-out";

pub fn out_root() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from)
}

/// Git-style object hash: SHA-256 over `"blob <len>\0"` followed by the bytes.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Metrics under one corruption setting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub kind: PerturbationKind,
    pub mask_ratio: f64,
    pub report: MetricReport,
}

/// Everything needed to reproduce a run's numbers. Wall-clock time lives in a
/// separate timing file so that manifests of identical runs are identical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub config: RunConfig,
    pub seed: u64,
    pub checkpoint_hash: String,
    pub history_hash: String,
    pub metrics: Vec<MetricRow>,
}

impl RunManifest {
    pub fn new(command: &str, config: RunConfig, checkpoint: &[u8], history: &[u8], metrics: Vec<MetricRow>) -> Self {
        Self {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            command: command.into(),
            seed: config.seed,
            config,
            checkpoint_hash: content_hash(checkpoint),
            history_hash: content_hash(history),
            metrics,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("unsupported manifest {} v{}", m.format, m.version),
            });
        }
        Ok(m)
    }

    /// Metrics for `(kind, mask_ratio)`, if recorded.
    pub fn metric(&self, kind: PerturbationKind, mask_ratio: f64) -> Option<&MetricReport> {
        self.metrics
            .iter()
            .find(|r| r.kind == kind && r.mask_ratio == mask_ratio)
            .map(|r| &r.report)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seconds: f64,
}

pub const HISTORY_HEADER: &str = "epoch,ce,sc,total,train_acc,lr";
pub const EVAL_HEADER: &str = "kind,m_r,accuracy,macro_f1,auc,n";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in history {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.epoch, r.ce, r.sc, r.total, r.train_acc, r.lr);
    }
    s
}

/// `accuracy,macro_f1,auc,n` fields of one report.
pub fn metric_fields(r: &MetricReport) -> String {
    format!("{},{},{},{}", r.accuracy, r.macro_f1, r.auc_field(), r.n_samples)
}

pub fn eval_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{EVAL_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.kind, r.mask_ratio, metric_fields(&r.report));
    }
    s
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}
