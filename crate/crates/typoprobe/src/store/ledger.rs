//! Append-only results ledger.
//!
//! One JSON object per line, schema-versioned with a `v` field. A single
//! writer holds an advisory lock for its lifetime; readers never lock.
//! Sequence numbers increase monotonically across process restarts, so
//! resumed runs keep appending where they stopped.

use super::StoreError;
use crate::encoders::DistanceRecord;
use crate::evalsuite::EvalRecord;
use serde::{Deserialize, Serialize};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::os::unix::io::AsRawFd;
use std::path::{Path, PathBuf};

pub const LEDGER_SCHEMA_VERSION: u32 = 1;

/// A stored image artifact: the ledger keeps paths and hashes, never pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub prompt_id: String,
    pub condition_tag: String,
    /// Path relative to the experiment root.
    pub path: String,
    /// sha256 of the file bytes.
    pub content_hash: String,
    pub width: u32,
    pub height: u32,
}

/// What an optimization run produced, small enough to live in the ledger.
/// Together with the manifest (config, encoder identities, seeds) this is
/// enough to re-run the attack and reproduce `final_similarity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSummary {
    pub prompt_id: String,
    /// Tag of the adversarial output condition.
    pub condition_tag: String,
    /// Tag of the degraded condition the attack started from.
    pub source_condition: String,
    pub initial_similarity: f64,
    pub final_similarity: f64,
    pub delta_linf: f64,
    /// Achieved 8-bit budget of the exported file.
    pub linf_8bit: u8,
    pub steps: usize,
    pub seed: u64,
    pub config_hash: String,
    pub encoder_names: Vec<String>,
    pub outer_rule: String,
    pub image_path: String,
    pub image_hash: String,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Image,
    Distance,
    Eval,
    Attack,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowPayload {
    Image(ImageRow),
    Distance(DistanceRecord),
    Eval(EvalRecord),
    Attack(AttackSummary),
}

impl RowPayload {
    pub fn kind(&self) -> RowKind {
        match self {
            RowPayload::Image(_) => RowKind::Image,
            RowPayload::Distance(_) => RowKind::Distance,
            RowPayload::Eval(_) => RowKind::Eval,
            RowPayload::Attack(_) => RowKind::Attack,
        }
    }

    pub fn prompt_id(&self) -> &str {
        match self {
            RowPayload::Image(r) => &r.prompt_id,
            RowPayload::Distance(r) => &r.prompt_id,
            RowPayload::Eval(r) => &r.prompt_id,
            RowPayload::Attack(r) => &r.prompt_id,
        }
    }

    pub fn condition_tag(&self) -> &str {
        match self {
            RowPayload::Image(r) => &r.condition_tag,
            RowPayload::Distance(r) => &r.condition_tag,
            RowPayload::Eval(r) => &r.condition_tag,
            RowPayload::Attack(r) => &r.condition_tag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub v: u32,
    pub seq: u64,
    pub experiment_id: String,
    #[serde(flatten)]
    pub payload: RowPayload,
}

#[derive(Debug, Clone, Default)]
pub struct RowFilter {
    pub kind: Option<RowKind>,
    pub prompt_id: Option<String>,
    pub condition_tag: Option<String>,
}

impl RowFilter {
    pub fn kind(kind: RowKind) -> Self {
        RowFilter {
            kind: Some(kind),
            ..Default::default()
        }
    }

    fn matches(&self, row: &LedgerRow) -> bool {
        self.kind.is_none_or(|k| row.payload.kind() == k)
            && self
                .prompt_id
                .as_deref()
                .is_none_or(|p| row.payload.prompt_id() == p)
            && self
                .condition_tag
                .as_deref()
                .is_none_or(|c| row.payload.condition_tag() == c)
    }
}

pub fn ledger_path(experiment_dir: &Path) -> PathBuf {
    experiment_dir.join("ledger.jsonl")
}

/// The single writer over one experiment's ledger. Holds an advisory file
/// lock until dropped; a second writer on the same experiment fails fast.
pub struct ResultLedger {
    file: File,
    _lock: File,
    experiment_id: String,
    next_seq: u64,
}

fn io_err(path: &Path, e: std::io::Error) -> StoreError {
    StoreError::Io {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

impl ResultLedger {
    pub fn open_writer(experiment_dir: &Path, experiment_id: &str) -> Result<Self, StoreError> {
        let lock_path = experiment_dir.join("ledger.lock");
        let lock = OpenOptions::new()
            .create(true)
            .write(true)
            .truncate(false)
            .open(&lock_path)
            .map_err(|e| io_err(&lock_path, e))?;
        let rc = unsafe { libc::flock(lock.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) };
        if rc != 0 {
            return Err(StoreError::WriterLocked { path: lock_path });
        }

        let path = ledger_path(experiment_dir);
        // Resume from the highest sequence number already on disk.
        let next_seq = match read_rows(experiment_dir, &RowFilter::default()) {
            Ok(read) => read.rows.iter().map(|r| r.seq).max().unwrap_or(0) + 1,
            Err(StoreError::Io { .. }) => 1,
            Err(other) => return Err(other),
        };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| io_err(&path, e))?;
        Ok(Self {
            file,
            _lock: lock,
            experiment_id: experiment_id.to_string(),
            next_seq,
        })
    }

    /// Appends one row and returns its sequence number. The line is flushed
    /// before returning so a crash loses at most the row being written.
    pub fn append(&mut self, payload: RowPayload) -> Result<u64, StoreError> {
        let row = LedgerRow {
            v: LEDGER_SCHEMA_VERSION,
            seq: self.next_seq,
            experiment_id: self.experiment_id.clone(),
            payload,
        };
        let mut line =
            serde_json::to_string(&row).map_err(|e| StoreError::Serde(e.to_string()))?;
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|()| self.file.flush())
            .map_err(|e| StoreError::Io {
                path: "<ledger>".into(),
                reason: e.to_string(),
            })?;
        self.next_seq += 1;
        Ok(row.seq)
    }
}

#[derive(Debug, Default)]
pub struct LedgerRead {
    pub rows: Vec<LedgerRow>,
    /// One entry per skipped line, naming its position.
    pub warnings: Vec<String>,
}

/// Reads rows in write order, applying the filter. Corrupt lines (torn
/// writes, truncation) are skipped and reported by line number, never fatal.
pub fn read_rows(experiment_dir: &Path, filter: &RowFilter) -> Result<LedgerRead, StoreError> {
    let path = ledger_path(experiment_dir);
    let file = File::open(&path).map_err(|e| io_err(&path, e))?;
    let mut out = LedgerRead::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<LedgerRow>(&line) {
            Ok(row) => {
                if filter.matches(&row) {
                    out.rows.push(row);
                }
            }
            Err(e) => out
                .warnings
                .push(format!("line {}: skipped corrupt row ({e})", idx + 1)),
        }
    }
    Ok(out)
}
