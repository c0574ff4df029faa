//! Durable experiment state: content hashing, the append-only results
//! ledger, and experiment manifests.
//!
//! The layout under one experiment root is
//! `manifest.json, ledger.jsonl, prompts.jsonl, images/,
//! cache/embeddings/, cache/verdicts/, reports/`. The manifest is immutable
//! and hash-verified on load; the ledger takes a single writer under an
//! advisory lock with unlimited concurrent readers.

pub mod hash;
pub mod ledger;
pub mod manifest;

pub use hash::{json_content_hash, pixels_content_hash, sha256_hex, text_content_hash};
pub use ledger::{
    ledger_path, read_rows, AttackSummary, ImageRow, LedgerRead, LedgerRow, ResultLedger,
    RowFilter, RowKind, RowPayload, LEDGER_SCHEMA_VERSION,
};
pub use manifest::{
    init_experiment, load_manifest, load_prompts, manifest_path, parse_prompts_file,
    EncoderSnapshot, ExperimentManifest, PromptRow, PromptSource,
};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("i/o failure at {}: {reason}", path.display())]
    Io { path: PathBuf, reason: String },
    #[error("serialization: {0}")]
    Serde(String),
    #[error("another writer holds the ledger lock at {}", path.display())]
    WriterLocked { path: PathBuf },
    #[error("experiment `{experiment_id}` already initialized here")]
    Conflict { experiment_id: String },
    #[error("invalid config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("no experiment at {}: run `render` to initialize one", dir.display())]
    MissingExperiment { dir: PathBuf },
    #[error("provenance check failed: {0}")]
    Provenance(String),
    #[error("prompt file: {0}")]
    Prompts(String),
}
