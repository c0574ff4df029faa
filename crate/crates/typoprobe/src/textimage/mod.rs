//! Deterministic rendering of prompts as typographic images, plus the
//! visual degradation transforms applied to them.
//!
//! Rendering is grayscale text on a uniform background with greedy word
//! wrapping; pixels are kept as real values in `[0,1]` internally and only
//! quantized to 8 bits at file export. Every operation is a pure function
//! of its inputs (stochastic transforms take an explicit seed), so a fixed
//! `(text, RenderSpec, [TransformSpec])` tuple always reproduces the same
//! pixel array under a pinned rasterizer version.

mod font;
mod image_type;
mod render;
mod transform;
mod wrap;

pub use font::{bundled_font_path, FontFace, SizedMetrics};
pub use image_type::{Provenance, TypoImage};
pub use render::render_prompt;
pub use transform::{apply_transform, TransformKind, TransformSpec};
pub use wrap::{wrap_text, GlyphMetrics};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;

/// Version tag for the rasterization stack, recorded in manifests so a
/// provenance triple fully determines pixels.
pub const RASTERIZER_VERSION: &str = "fontdue-0.9";

/// How a prompt becomes an image: canvas geometry, font, colors, layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderSpec {
    /// Square canvas side in pixels.
    pub canvas_px: u32,
    /// Nominal glyph size in pixels.
    pub font_size_px: u32,
    /// Path to a vector font file (defaults to the bundled sans-serif).
    pub font_file: PathBuf,
    /// 8-bit gray level of the glyph ink.
    pub text_color: u8,
    /// 8-bit gray level of the background.
    pub background_color: u8,
    /// Margin on all four sides in pixels.
    pub margin_px: u32,
    /// Line height multiplier applied to the font's natural line size.
    pub line_spacing: f64,
    /// Grayscale antialiasing; when off, glyph coverage is thresholded.
    pub antialias: bool,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            canvas_px: 1024,
            font_size_px: 20,
            font_file: bundled_font_path(),
            text_color: 0,
            background_color: 255,
            margin_px: 32,
            line_spacing: 1.2,
            antialias: true,
        }
    }
}

impl RenderSpec {
    pub fn with_font_size(font_size_px: u32) -> Self {
        Self {
            font_size_px,
            ..Self::default()
        }
    }

    /// Every violated field, one message each, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.canvas_px == 0 {
            v.push("canvas_px must be > 0".into());
        }
        if self.font_size_px == 0 || self.font_size_px >= self.canvas_px.max(1) {
            v.push(format!(
                "font_size_px must satisfy 1 <= {} < canvas_px {}",
                self.font_size_px, self.canvas_px
            ));
        }
        if self.text_color == self.background_color {
            v.push("text_color must differ from background_color".into());
        }
        if !self.line_spacing.is_finite() || self.line_spacing <= 0.0 {
            v.push("line_spacing must be a positive finite multiplier".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        match self.violations().into_iter().next() {
            Some(msg) => Err(RenderError::InvalidSpec(msg)),
            None => Ok(()),
        }
    }
}

/// Errors from rendering and transforming typographic images.
#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("invalid render spec: {0}")]
    InvalidSpec(String),
    #[error("text overflows canvas vertically: requires {required_px}px, canvas offers {available_px}px")]
    VerticalOverflow { required_px: u32, available_px: u32 },
    #[error("max width {max_width_px:.1}px is below the widest glyph advance {widest_px:.1}px")]
    WidthTooNarrow { max_width_px: f64, widest_px: f64 },
    #[error("failed to load font {}: {reason}", path.display())]
    FontLoad { path: PathBuf, reason: String },
    #[error("unsupported transform kind `{0}`")]
    UnsupportedTransform(String),
    #[error("transform `{kind}` is missing required parameter `{param}`")]
    MissingParam { kind: String, param: String },
    #[error("transform parameter `{param}` = {value} is out of range for `{kind}`")]
    BadParam {
        kind: String,
        param: String,
        value: f64,
    },
    #[error("image contains non-finite pixel values")]
    NonFinite,
    #[error("pixel values outside [0,1]: min {min}, max {max}")]
    OutOfRange { min: f64, max: f64 },
    #[error("image i/o failure at {}: {reason}", path.display())]
    ImageIo { path: PathBuf, reason: String },
}
