//! The in-memory image type shared by rendering, encoders, and the attack.

use super::{RenderError, RenderSpec, TransformSpec};
use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Everything needed to reproduce an image's pixels under a fixed
/// rasterizer version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub prompt_id: String,
    pub render: RenderSpec,
    pub transforms: Vec<TransformSpec>,
    /// Rendering notes such as replacement-glyph substitutions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Provenance {
    pub fn new(prompt_id: impl Into<String>, render: RenderSpec) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            render,
            transforms: Vec::new(),
            warnings: Vec::new(),
        }
    }
}

/// A typographic image: channel-major real pixels in `[0,1]` plus the
/// provenance that produced them.
///
/// Rendering yields a single channel; the attack path replicates to three
/// channels before optimizing. Shape is `(channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypoImage {
    pixels: Array3<f64>,
    pub provenance: Provenance,
}

impl TypoImage {
    /// Wraps a pixel array, validating the range and finiteness invariants.
    pub fn from_pixels(pixels: Array3<f64>, provenance: Provenance) -> Result<Self, RenderError> {
        let (c, _, _) = pixels.dim();
        if c != 1 && c != 3 {
            return Err(RenderError::InvalidSpec(format!(
                "image must have 1 or 3 channels, got {c}"
            )));
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in pixels.iter() {
            if !v.is_finite() {
                return Err(RenderError::NonFinite);
            }
            min = min.min(v);
            max = max.max(v);
        }
        if !pixels.is_empty() && (min < 0.0 || max > 1.0) {
            return Err(RenderError::OutOfRange { min, max });
        }
        Ok(Self { pixels, provenance })
    }

    /// Internal constructor for pixels already known to satisfy the
    /// invariants (producers clamp before calling).
    pub(crate) fn from_clamped(pixels: Array3<f64>, provenance: Provenance) -> Self {
        debug_assert!(pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { pixels, provenance }
    }

    pub fn pixels(&self) -> ArrayView3<'_, f64> {
        self.pixels.view()
    }

    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    /// Replicates a grayscale image to three channels; three-channel images
    /// are returned unchanged.
    pub fn to_rgb(&self) -> TypoImage {
        if self.channels() == 3 {
            return self.clone();
        }
        let (_, h, w) = self.pixels.dim();
        let mut rgb = Array3::<f64>::zeros((3, h, w));
        for c in 0..3 {
            rgb.index_axis_mut(ndarray::Axis(0), c)
                .assign(&self.pixels.index_axis(ndarray::Axis(0), 0));
        }
        Self {
            pixels: rgb,
            provenance: self.provenance.clone(),
        }
    }

    /// Count of pixels darker than `threshold`, averaged over channels.
    pub fn ink_pixel_count(&self, threshold: f64) -> usize {
        let (c, h, w) = self.pixels.dim();
        let mut count = 0;
        for y in 0..h {
            for x in 0..w {
                let mean: f64 = (0..c).map(|ch| self.pixels[(ch, y, x)]).sum::<f64>() / c as f64;
                if mean < threshold {
                    count += 1;
                }
            }
        }
        count
    }

    fn quantized_buffer(&self) -> (Vec<u8>, image::ColorType, u32, u32) {
        let (c, h, w) = self.pixels.dim();
        let mut buf = Vec::with_capacity(c * h * w);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    buf.push(quantize(self.pixels[(ch, y, x)]));
                }
            }
        }
        let color = if c == 1 {
            image::ColorType::L8
        } else {
            image::ColorType::Rgb8
        };
        (buf, color, w as u32, h as u32)
    }

    /// Quantizes to 8 bits and writes a grayscale or RGB PNG.
    pub fn save_png(&self, path: &Path) -> Result<(), RenderError> {
        let (buf, color, w, h) = self.quantized_buffer();
        image::save_buffer(path, &buf, w, h, color).map_err(|e| RenderError::ImageIo {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }

    /// Same quantization as `save_png`, encoded to an in-memory PNG.
    pub fn png_bytes(&self) -> Result<Vec<u8>, RenderError> {
        let (buf, color, w, h) = self.quantized_buffer();
        let mut out = std::io::Cursor::new(Vec::new());
        image::write_buffer_with_format(&mut out, &buf, w, h, color, image::ImageFormat::Png)
            .map_err(|e| RenderError::ImageIo {
                path: "<memory>".into(),
                reason: e.to_string(),
            })?;
        Ok(out.into_inner())
    }

    /// Loads a PNG back into real-valued pixels.
    pub fn load_png(path: &Path, provenance: Provenance) -> Result<Self, RenderError> {
        let io_err = |e: String| RenderError::ImageIo {
            path: path.to_path_buf(),
            reason: e,
        };
        let img = image::open(path).map_err(|e| io_err(e.to_string()))?;
        let pixels = match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = (g.width() as usize, g.height() as usize);
                let mut arr = Array3::<f64>::zeros((1, h, w));
                for (x, y, p) in g.enumerate_pixels() {
                    arr[(0, y as usize, x as usize)] = f64::from(p.0[0]) / 255.0;
                }
                arr
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                let mut arr = Array3::<f64>::zeros((3, h, w));
                for (x, y, p) in rgb.enumerate_pixels() {
                    for c in 0..3 {
                        arr[(c, y as usize, x as usize)] = f64::from(p.0[c]) / 255.0;
                    }
                }
                arr
            }
        };
        Ok(Self { pixels, provenance })
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance::new("p0", RenderSpec::default())
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        let arr = Array3::from_elem((1, 4, 4), 1.5);
        assert!(matches!(
            TypoImage::from_pixels(arr, prov()),
            Err(RenderError::OutOfRange { .. })
        ));
    }

    #[test]
    fn rejects_nan_pixels() {
        let mut arr = Array3::from_elem((1, 4, 4), 0.5);
        arr[(0, 1, 2)] = f64::NAN;
        assert!(matches!(
            TypoImage::from_pixels(arr, prov()),
            Err(RenderError::NonFinite)
        ));
    }

    #[test]
    fn rgb_replication_copies_the_gray_channel() {
        let mut arr = Array3::from_elem((1, 2, 2), 0.25);
        arr[(0, 0, 1)] = 0.75;
        let img = TypoImage::from_pixels(arr, prov()).unwrap();
        let rgb = img.to_rgb();
        assert_eq!(rgb.channels(), 3);
        for c in 0..3 {
            assert_eq!(rgb.pixels()[(c, 0, 1)], 0.75);
            assert_eq!(rgb.pixels()[(c, 1, 0)], 0.25);
        }
    }

    #[test]
    fn png_round_trip_preserves_quantized_levels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut arr = Array3::from_elem((1, 3, 3), 1.0);
        arr[(0, 1, 1)] = 0.0;
        arr[(0, 0, 2)] = 128.0 / 255.0;
        let img = TypoImage::from_pixels(arr, prov()).unwrap();
        img.save_png(&path).unwrap();
        let back = TypoImage::load_png(&path, prov()).unwrap();
        assert_eq!(back.pixels()[(0, 1, 1)], 0.0);
        assert_eq!(back.pixels()[(0, 0, 2)], 128.0 / 255.0);
        assert_eq!(back.pixels()[(0, 2, 2)], 1.0);
    }
}
