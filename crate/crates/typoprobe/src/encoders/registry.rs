//! Name-to-backend resolution.
//!
//! Encoder identities are configuration strings. The fixture families
//! resolve in-tree; the pretrained surrogates are recognized but require
//! optional weights this distribution does not bundle, so resolving them
//! reports exactly what is missing instead of guessing.

use super::fixtures::{ConvFixture, LinearFixture, FIXTURE_SIDE};
use super::preprocess::Preprocessing;
use super::{Capabilities, EncoderError, EncoderHandle};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::Arc;

/// The pretrained surrogate identities the registry recognizes by name.
pub const KNOWN_SURROGATES: [&str; 4] = [
    "qwen3-vl-embedding-2b",
    "jinaclip-v2",
    "openai-clip-vit-l-14-336",
    "siglip-so400m",
];

/// Per-encoder configuration overrides.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderResolution {
    /// Override of the encoder's input side in pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    /// Checkpoint location for pretrained backends.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_path: Option<PathBuf>,
}

/// Resolves an encoder name to a live handle.
///
/// `fixture-linear-<tag>` and `fixture-conv-<tag>` build seeded in-tree
/// fixtures (any tag; the full name seeds the weights).
pub fn resolve_encoder(
    name: &str,
    overrides: &EncoderResolution,
) -> Result<EncoderHandle, EncoderError> {
    let side = overrides.resolution.unwrap_or(FIXTURE_SIDE);
    if side == 0 {
        return Err(EncoderError::Unavailable {
            name: name.to_string(),
            reason: "resolution must be positive".into(),
        });
    }
    let full_caps = Capabilities {
        text_embedding: true,
        image_embedding: true,
        input_gradient: true,
    };
    if name.starts_with("fixture-linear-") {
        // The linear fixture's weight matrix is sized to its input; the
        // declared side is fixed so the matrix stays small.
        if side != FIXTURE_SIDE {
            return Err(EncoderError::Unavailable {
                name: name.to_string(),
                reason: format!("linear fixtures are defined at side {FIXTURE_SIDE}"),
            });
        }
        return Ok(EncoderHandle::new(
            name,
            Arc::new(LinearFixture::new(name)),
            Preprocessing::clip_like(side),
            full_caps,
        ));
    }
    if name.starts_with("fixture-conv-") {
        return Ok(EncoderHandle::new(
            name,
            Arc::new(ConvFixture::new(name)),
            Preprocessing::clip_like(side),
            full_caps,
        ));
    }
    if KNOWN_SURROGATES.contains(&name) {
        let hint = match &overrides.weights_path {
            Some(p) => format!("no loader for checkpoint at {}", p.display()),
            None => "pretrained weights are an optional install; set weights_path".into(),
        };
        return Err(EncoderError::Unavailable {
            name: name.to_string(),
            reason: hint,
        });
    }
    Err(EncoderError::Unknown {
        name: name.to_string(),
        known: format!(
            "fixture-linear-*, fixture-conv-*, {}",
            KNOWN_SURROGATES.join(", ")
        ),
    })
}

/// The default offline ensemble: four differentiable fixtures, mirroring
/// the four-surrogate setup.
pub fn default_fixture_ensemble() -> Vec<String> {
    vec![
        "fixture-linear-a".into(),
        "fixture-linear-b".into(),
        "fixture-conv-a".into(),
        "fixture-conv-b".into(),
    ]
}
