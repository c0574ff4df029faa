//! Font loading and per-size metrics on top of fontdue.

use super::wrap::GlyphMetrics;
use super::RenderError;
use once_cell::sync::Lazy;
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

/// Path of the font shipped with the crate.
pub fn bundled_font_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/fonts/DejaVuSans.ttf")
}

/// Parsed font plus the checksum of its bytes.
///
/// Faces are cached per path for the lifetime of the process; a face is a
/// few MB and rendering touches it for every glyph.
pub struct FontFace {
    font: fontdue::Font,
    checksum: String,
    path: PathBuf,
}

static FACE_CACHE: Lazy<Mutex<HashMap<PathBuf, Arc<FontFace>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

impl FontFace {
    /// Loads (or returns the cached) face for `path`.
    pub fn load(path: &Path) -> Result<Arc<FontFace>, RenderError> {
        let key = path.to_path_buf();
        let mut cache = FACE_CACHE.lock().expect("font cache poisoned");
        if let Some(face) = cache.get(&key) {
            return Ok(Arc::clone(face));
        }
        let bytes = std::fs::read(path).map_err(|e| RenderError::FontLoad {
            path: key.clone(),
            reason: e.to_string(),
        })?;
        let checksum = hex::encode(Sha256::digest(&bytes));
        let font = fontdue::Font::from_bytes(bytes, fontdue::FontSettings::default()).map_err(
            |e| RenderError::FontLoad {
                path: key.clone(),
                reason: e.to_string(),
            },
        )?;
        let face = Arc::new(FontFace {
            font,
            checksum,
            path: key.clone(),
        });
        cache.insert(key, Arc::clone(&face));
        Ok(face)
    }

    /// sha256 of the font file, recorded in experiment manifests.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn has_glyph(&self, ch: char) -> bool {
        self.font.lookup_glyph_index(ch) != 0
    }

    /// Metrics bound to one pixel size.
    pub fn sized(self: &Arc<Self>, px: f32) -> Result<SizedMetrics, RenderError> {
        let line = self
            .font
            .horizontal_line_metrics(px)
            .ok_or_else(|| RenderError::FontLoad {
                path: self.path.clone(),
                reason: "font has no horizontal line metrics".into(),
            })?;
        Ok(SizedMetrics {
            face: Arc::clone(self),
            px,
            ascent: f64::from(line.ascent),
            descent: f64::from(line.descent),
        })
    }

    pub(crate) fn rasterize(&self, ch: char, px: f32) -> (fontdue::Metrics, Vec<u8>) {
        self.font.rasterize(ch, px)
    }

    pub(crate) fn char_advance(&self, ch: char, px: f32) -> f64 {
        f64::from(self.font.metrics(ch, px).advance_width)
    }
}

impl std::fmt::Debug for FontFace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FontFace")
            .field("path", &self.path)
            .field("checksum", &self.checksum)
            .finish()
    }
}

/// A face at a fixed pixel size; the advance source for wrapping and the
/// vertical metrics source for layout.
#[derive(Debug, Clone)]
pub struct SizedMetrics {
    face: Arc<FontFace>,
    px: f32,
    /// Distance from baseline to the top of the line, in px (positive).
    ascent: f64,
    /// Distance from baseline to the bottom of the line, in px (negative).
    descent: f64,
}

impl SizedMetrics {
    pub fn face(&self) -> &Arc<FontFace> {
        &self.face
    }

    pub fn px(&self) -> f32 {
        self.px
    }

    pub fn ascent(&self) -> f64 {
        self.ascent
    }

    /// Baseline-to-baseline distance before the line-spacing multiplier.
    pub fn natural_line_height(&self) -> f64 {
        self.ascent - self.descent
    }
}

impl GlyphMetrics for SizedMetrics {
    fn advance(&self, ch: char) -> f64 {
        self.face.char_advance(ch, self.px)
    }
}
