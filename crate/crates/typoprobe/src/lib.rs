//! Typoprobe renders text prompts as (optionally degraded) typographic
//! images, measures image–text multimodal embedding distance, and runs an
//! ensemble embedding-alignment attack under a bounded ℓ∞ budget, together
//! with the evaluation harness around it: target querying, verdict judging,
//! failure taxonomy, ASR aggregation, correlation statistics, and reports.
//!
//! The crate is organized around seven subsystems:
//!
//! * [`textimage`] — deterministic rasterization of prompts and the visual
//!   degradation transforms (rotation, blur, noise, contrast, JPEG, warp).
//! * [`encoders`] — pluggable image/text embedding backends behind a
//!   registry, the normalized L2 distance, and ensemble cosine similarity.
//!   Two fixture families (seeded linear and tiny convolutional encoders)
//!   ship in-tree so every numeric path is testable offline on CPU.
//! * [`attack`] — the ensemble embedding-alignment optimizer: sequential
//!   per-encoder momentum sign-ascent with spectral (DCT-domain) and input
//!   diversity augmentations, projected onto the ℓ∞ ball each step.
//! * [`evalsuite`] — chat-endpoint querying, verdict judging (offline
//!   heuristic or remote LLM), failure-mode taxonomy, ASR tables, and
//!   attack-sample selection.
//! * [`stats`] — Pearson correlation with exact two-sided p-values (in-tree
//!   incomplete beta) and condition-level aggregation.
//! * [`store`] — experiment manifests, an append-only JSONL result ledger,
//!   and content-addressed caches tying artifacts to their provenance.
//! * [`cli`] — the `typoprobe` command-line pipeline and report emission.

pub mod attack;
pub mod cli;
pub mod config;
pub mod encoders;
pub mod evalsuite;
pub mod report;
pub mod stats;
pub mod store;
pub mod textimage;

pub use textimage::TypoImage;
