//! Multimodal embedding backends, the normalized-embedding distance, and
//! the ensemble similarity objective.
//!
//! A handle bundles a backend with its declared preprocessing; embeddings
//! come out unit-normalized. The distance between an image and the prompt
//! it renders is the Euclidean distance between the two normalized
//! embeddings, which ties to cosine by `d^2 = 2 - 2 cos`.

mod backend;
mod cache;
mod fixtures;
mod preprocess;
mod registry;

pub use backend::{text_features, EncoderBackend, TEXT_FEATURE_DIM};
pub use cache::EmbeddingCache;
pub use fixtures::{ConvFixture, LinearFixture, FIXTURE_DIM, FIXTURE_SIDE};
pub use preprocess::{bilinear_resize, bilinear_resize_vjp, Preprocessing, CLIP_MEANS, CLIP_SCALES};
pub use registry::{default_fixture_ensemble, resolve_encoder, EncoderResolution, KNOWN_SURROGATES};

use crate::textimage::TypoImage;
use ndarray::{Array1, Array3, ArrayView3};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("encoder `{name}` is unavailable: {reason}")]
    Unavailable { name: String, reason: String },
    #[error("unknown encoder `{name}`; known: {known}")]
    Unknown { name: String, known: String },
    #[error("text to embed must be nonempty")]
    EmptyText,
    #[error("encoder `{name}` produced a zero-norm raw embedding")]
    DegenerateEmbedding { name: String },
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding vector is not normalized")]
    NotNormalized,
    #[error("encoder `{name}` does not support {capability}")]
    MissingCapability { name: String, capability: String },
    #[error("ensemble evaluation failed for: {}", failures.join("; "))]
    PartialEnsemble { failures: Vec<String> },
    #[error("embedding cache i/o: {0}")]
    CacheIo(String),
}

/// What a backend can do; checked before work is attempted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Capabilities {
    pub text_embedding: bool,
    pub image_embedding: bool,
    pub input_gradient: bool,
}

/// A named encoder: backend plus its declared preprocessing. Immutable
/// after construction; safe to share across threads.
#[derive(Clone)]
pub struct EncoderHandle {
    pub name: String,
    pub embed_dim: usize,
    pub input_side_px: usize,
    pub preprocessing: Preprocessing,
    pub capabilities: Capabilities,
    backend: Arc<dyn EncoderBackend>,
}

impl std::fmt::Debug for EncoderHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EncoderHandle")
            .field("name", &self.name)
            .field("embed_dim", &self.embed_dim)
            .field("input_side_px", &self.input_side_px)
            .field("capabilities", &self.capabilities)
            .finish()
    }
}

impl EncoderHandle {
    pub fn new(
        name: impl Into<String>,
        backend: Arc<dyn EncoderBackend>,
        preprocessing: Preprocessing,
        capabilities: Capabilities,
    ) -> Self {
        Self {
            name: name.into(),
            embed_dim: backend.embed_dim(),
            input_side_px: preprocessing.resize_side,
            preprocessing,
            capabilities,
            backend,
        }
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVector, EncoderError> {
        if !self.capabilities.text_embedding {
            return Err(EncoderError::MissingCapability {
                name: self.name.clone(),
                capability: "text embedding".into(),
            });
        }
        if text.is_empty() {
            return Err(EncoderError::EmptyText);
        }
        let raw = self
            .backend
            .raw_text(text)
            .ok_or_else(|| EncoderError::MissingCapability {
                name: self.name.clone(),
                capability: "text embedding".into(),
            })?;
        EmbeddingVector::normalize(raw, &self.name)
    }

    pub fn embed_image(&self, img: &TypoImage) -> Result<EmbeddingVector, EncoderError> {
        self.embed_pixels(&img.pixels())
    }

    /// Embeds a raw pixel array (the attack path: values may sit slightly
    /// outside `[0,1]` before projection).
    pub fn embed_pixels(&self, pixels: &ArrayView3<'_, f64>) -> Result<EmbeddingVector, EncoderError> {
        if !self.capabilities.image_embedding {
            return Err(EncoderError::MissingCapability {
                name: self.name.clone(),
                capability: "image embedding".into(),
            });
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFiniteInput);
        }
        let z = self.preprocessing.forward(pixels);
        EmbeddingVector::normalize(self.backend.raw_image(&z.view()), &self.name)
    }

    /// Cosine between the image's normalized embedding and `target`, plus
    /// its gradient with respect to the input pixels.
    pub fn cosine_grad(
        &self,
        pixels: &ArrayView3<'_, f64>,
        target: &EmbeddingVector,
    ) -> Result<(f64, Array3<f64>), EncoderError> {
        if !self.capabilities.input_gradient {
            return Err(EncoderError::MissingCapability {
                name: self.name.clone(),
                capability: "input gradients".into(),
            });
        }
        target.require_normalized()?;
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFiniteInput);
        }
        let z = self.preprocessing.forward(pixels);
        let raw = self.backend.raw_image(&z.view());
        let norm = raw.dot(&raw).sqrt();
        if norm == 0.0 {
            return Err(EncoderError::DegenerateEmbedding {
                name: self.name.clone(),
            });
        }
        if target.values.len() != raw.len() {
            return Err(EncoderError::DimensionMismatch {
                left: target.values.len(),
                right: raw.len(),
            });
        }
        let unit = &raw / norm;
        let cos = unit.dot(&target.values);
        // d cos / d raw for cos = <raw/|raw|, t>.
        let upstream = (&target.values - &(&unit * cos)) / norm;
        let g_z = self
            .backend
            .raw_image_vjp(&z.view(), &upstream.view())
            .ok_or_else(|| EncoderError::MissingCapability {
                name: self.name.clone(),
                capability: "input gradients".into(),
            })?;
        let grad = self.preprocessing.vjp(pixels.dim(), &g_z.view());
        Ok((cos, grad))
    }
}

/// A finite embedding, flagged when unit-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Array1<f64>,
    pub normalized: bool,
}

impl EmbeddingVector {
    /// Normalizes a raw embedding to unit length.
    pub fn normalize(raw: Array1<f64>, encoder_name: &str) -> Result<Self, EncoderError> {
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFiniteInput);
        }
        let norm = raw.dot(&raw).sqrt();
        if norm == 0.0 {
            return Err(EncoderError::DegenerateEmbedding {
                name: encoder_name.to_string(),
            });
        }
        Ok(Self {
            values: raw / norm,
            normalized: true,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    fn require_normalized(&self) -> Result<(), EncoderError> {
        if !self.normalized || (self.values.dot(&self.values).sqrt() - 1.0).abs() > 1e-6 {
            return Err(EncoderError::NotNormalized);
        }
        Ok(())
    }
}

/// One measured image-text pair for one encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceRecord {
    pub prompt_id: String,
    pub condition_tag: String,
    pub encoder_name: String,
    pub l2_distance: f64,
    pub cosine: f64,
}

impl DistanceRecord {
    pub fn measure(
        prompt_id: &str,
        condition_tag: &str,
        encoder: &EncoderHandle,
        text_emb: &EmbeddingVector,
        img_emb: &EmbeddingVector,
    ) -> Result<Self, EncoderError> {
        let d = l2_distance(text_emb, img_emb)?;
        Ok(Self {
            prompt_id: prompt_id.to_string(),
            condition_tag: condition_tag.to_string(),
            encoder_name: encoder.name.clone(),
            l2_distance: d,
            cosine: cosine(text_emb, img_emb)?,
        })
    }
}

/// Euclidean distance between two normalized embeddings, in `[0, 2]`.
pub fn l2_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EncoderError> {
    a.require_normalized()?;
    b.require_normalized()?;
    if a.dim() != b.dim() {
        return Err(EncoderError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let diff = &a.values - &b.values;
    Ok(diff.dot(&diff).sqrt())
}

/// Cosine similarity between two normalized embeddings, in `[-1, 1]`.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EncoderError> {
    a.require_normalized()?;
    b.require_normalized()?;
    if a.dim() != b.dim() {
        return Err(EncoderError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    Ok(a.values.dot(&b.values).clamp(-1.0, 1.0))
}

/// Mean per-encoder cosine between one image and per-encoder target text
/// embeddings: the quantity the attack maximizes.
pub fn ensemble_similarity(
    pixels: &ArrayView3<'_, f64>,
    targets: &[(EncoderHandle, EmbeddingVector)],
) -> Result<f64, EncoderError> {
    if targets.is_empty() {
        return Err(EncoderError::PartialEnsemble {
            failures: vec!["empty ensemble".into()],
        });
    }
    let mut sum = 0.0;
    let mut failures = Vec::new();
    for (enc, target) in targets {
        match enc
            .embed_pixels(pixels)
            .and_then(|img_emb| cosine(target, &img_emb))
        {
            Ok(c) => sum += c,
            Err(e) => failures.push(format!("{}: {e}", enc.name)),
        }
    }
    if !failures.is_empty() {
        return Err(EncoderError::PartialEnsemble { failures });
    }
    Ok(sum / targets.len() as f64)
}
