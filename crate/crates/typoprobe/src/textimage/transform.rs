//! The visual degradation transforms applied to rendered prompts.
//!
//! Every transform is deterministic given its spec (stochastic kinds draw
//! from a seeded generator) and clamps its output back into `[0,1]`.

use super::image_type::{quantize, TypoImage};
use super::RenderError;
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    Rotate90,
    Rotate45,
    GaussianBlur,
    HeavyBlur,
    GaussianNoise,
    LowContrast,
    TripleDegradation,
    Invert,
    JpegArtifact,
    PerspectiveWarp,
}

impl TransformKind {
    pub const ALL: [TransformKind; 11] = [
        TransformKind::Identity,
        TransformKind::Rotate90,
        TransformKind::Rotate45,
        TransformKind::GaussianBlur,
        TransformKind::HeavyBlur,
        TransformKind::GaussianNoise,
        TransformKind::LowContrast,
        TransformKind::TripleDegradation,
        TransformKind::Invert,
        TransformKind::JpegArtifact,
        TransformKind::PerspectiveWarp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::Rotate90 => "rotate90",
            TransformKind::Rotate45 => "rotate45",
            TransformKind::GaussianBlur => "gaussian_blur",
            TransformKind::HeavyBlur => "heavy_blur",
            TransformKind::GaussianNoise => "gaussian_noise",
            TransformKind::LowContrast => "low_contrast",
            TransformKind::TripleDegradation => "triple_degradation",
            TransformKind::Invert => "invert",
            TransformKind::JpegArtifact => "jpeg_artifact",
            TransformKind::PerspectiveWarp => "perspective_warp",
        }
    }

    /// Default parameter set for the kind.
    fn defaults(self) -> &'static [(&'static str, f64)] {
        match self {
            TransformKind::Identity
            | TransformKind::Rotate90
            | TransformKind::Rotate45
            | TransformKind::Invert => &[],
            TransformKind::GaussianBlur => &[("sigma", 2.0)],
            TransformKind::HeavyBlur => &[("sigma", 5.0)],
            // Noise sigma is expressed in 8-bit levels.
            TransformKind::GaussianNoise => &[("sigma", 25.0)],
            TransformKind::LowContrast => &[("factor", 0.5)],
            TransformKind::TripleDegradation => {
                &[("blur_sigma", 2.0), ("noise_sigma", 25.0), ("contrast", 0.5)]
            }
            TransformKind::JpegArtifact => &[("quality", 10.0)],
            TransformKind::PerspectiveWarp => &[("jitter", 0.05)],
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = RenderError;

    /// Accepts the canonical snake_case names plus the short CLI tags.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "identity" => TransformKind::Identity,
            "rotate90" | "rot90" => TransformKind::Rotate90,
            "rotate45" | "rot45" => TransformKind::Rotate45,
            "gaussian_blur" | "blur" => TransformKind::GaussianBlur,
            "heavy_blur" | "heavyblur" => TransformKind::HeavyBlur,
            "gaussian_noise" | "noise" => TransformKind::GaussianNoise,
            "low_contrast" | "lowcontrast" => TransformKind::LowContrast,
            "triple_degradation" | "triple" => TransformKind::TripleDegradation,
            "invert" => TransformKind::Invert,
            "jpeg_artifact" | "jpeg" => TransformKind::JpegArtifact,
            "perspective_warp" | "warp" => TransformKind::PerspectiveWarp,
            other => return Err(RenderError::UnsupportedTransform(other.to_string())),
        })
    }
}

/// One degradation step: a kind, its scalar parameters, and a seed for the
/// stochastic kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kind: TransformKind,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl TransformSpec {
    /// Spec with the kind's default parameters and seed 0.
    pub fn new(kind: TransformKind) -> Self {
        let params = kind
            .defaults()
            .iter()
            .map(|&(k, v)| (k.to_string(), v))
            .collect();
        Self { kind, params, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    fn param(&self, key: &str) -> Result<f64, RenderError> {
        self.params
            .get(key)
            .copied()
            .ok_or_else(|| RenderError::MissingParam {
                kind: self.kind.name().to_string(),
                param: key.to_string(),
            })
    }

    fn positive_param(&self, key: &str) -> Result<f64, RenderError> {
        let v = self.param(key)?;
        if !v.is_finite() || v <= 0.0 {
            return Err(self.bad(key, v));
        }
        Ok(v)
    }

    fn nonnegative_param(&self, key: &str) -> Result<f64, RenderError> {
        let v = self.param(key)?;
        if !v.is_finite() || v < 0.0 {
            return Err(self.bad(key, v));
        }
        Ok(v)
    }

    fn bad(&self, key: &str, value: f64) -> RenderError {
        RenderError::BadParam {
            kind: self.kind.name().to_string(),
            param: key.to_string(),
            value,
        }
    }
}

/// Applies one degradation, extending the image's provenance.
pub fn apply_transform(img: &TypoImage, t: &TransformSpec) -> Result<TypoImage, RenderError> {
    let pixels = img.pixels().to_owned();
    let out = match t.kind {
        TransformKind::Identity => pixels,
        TransformKind::Rotate90 => rotate90(&pixels),
        TransformKind::Rotate45 => rotate_expand(&pixels, std::f64::consts::FRAC_PI_4),
        TransformKind::GaussianBlur | TransformKind::HeavyBlur => {
            gaussian_blur(&pixels, t.positive_param("sigma")?)
        }
        TransformKind::GaussianNoise => {
            add_noise(&pixels, t.nonnegative_param("sigma")? / 255.0, t.seed)
        }
        TransformKind::LowContrast => scale_contrast(&pixels, t.nonnegative_param("factor")?),
        TransformKind::TripleDegradation => {
            // The ordered composition blur -> noise -> contrast, built from
            // the same kernels the single transforms use. Each stage clamps,
            // exactly as three separate applications would.
            let blurred = gaussian_blur(&pixels, t.positive_param("blur_sigma")?)
                .mapv(|v| v.clamp(0.0, 1.0));
            let noisy = add_noise(&blurred, t.nonnegative_param("noise_sigma")? / 255.0, t.seed)
                .mapv(|v| v.clamp(0.0, 1.0));
            scale_contrast(&noisy, t.nonnegative_param("contrast")?)
        }
        TransformKind::Invert => pixels.mapv(|v| 1.0 - v),
        TransformKind::JpegArtifact => {
            let q = t.param("quality")?;
            if !(1.0..=100.0).contains(&q) || q.fract() != 0.0 {
                return Err(t.bad("quality", q));
            }
            jpeg_round_trip(&pixels, q as u8)?
        }
        TransformKind::PerspectiveWarp => {
            let jitter = t.nonnegative_param("jitter")?;
            if jitter > 0.25 {
                return Err(t.bad("jitter", jitter));
            }
            perspective_warp(&pixels, jitter, t.seed)?
        }
    };
    let clamped = out.mapv(|v| v.clamp(0.0, 1.0));
    let mut provenance = img.provenance.clone();
    provenance.transforms.push(t.clone());
    Ok(TypoImage::from_clamped(clamped, provenance))
}

/// Clockwise quarter turn: (y, x) -> (x, h-1-y).
fn rotate90(img: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = img.dim();
    let mut out = Array3::zeros((c, w, h));
    for ch in 0..c {
        for y in 0..w {
            for x in 0..h {
                out[(ch, y, x)] = img[(ch, h - 1 - x, y)];
            }
        }
    }
    out
}

/// Rotation by `theta` (counterclockwise) onto an expanded canvas with
/// white fill, bilinear sampling.
fn rotate_expand(img: &Array3<f64>, theta: f64) -> Array3<f64> {
    let (c, h, w) = img.dim();
    let (sin, cos) = theta.sin_cos();
    let new_w = (w as f64 * cos.abs() + h as f64 * sin.abs()).ceil() as usize;
    let new_h = (w as f64 * sin.abs() + h as f64 * cos.abs()).ceil() as usize;
    let (icx, icy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (ocx, ocy) = ((new_w as f64 - 1.0) / 2.0, (new_h as f64 - 1.0) / 2.0);
    let mut out = Array3::from_elem((c, new_h, new_w), 1.0);
    for y in 0..new_h {
        for x in 0..new_w {
            // Inverse map: rotate output coordinates by -theta.
            let dx = x as f64 - ocx;
            let dy = y as f64 - ocy;
            let sx = cos * dx - sin * dy + icx;
            let sy = sin * dx + cos * dy + icy;
            for ch in 0..c {
                out[(ch, y, x)] = bilinear(img, ch, sy, sx, 1.0);
            }
        }
    }
    out
}

/// Bilinear sample at real coordinates; outside the image returns `fill`.
fn bilinear(img: &Array3<f64>, ch: usize, y: f64, x: f64, fill: f64) -> f64 {
    let (_, h, w) = img.dim();
    if y < -1.0 || x < -1.0 || y > h as f64 || x > w as f64 {
        return fill;
    }
    let y0 = y.floor();
    let x0 = x.floor();
    let fy = y - y0;
    let fx = x - x0;
    let at = |yy: f64, xx: f64| -> f64 {
        if yy < 0.0 || xx < 0.0 || yy >= h as f64 || xx >= w as f64 {
            fill
        } else {
            img[(ch, yy as usize, xx as usize)]
        }
    };
    let v00 = at(y0, x0);
    let v01 = at(y0, x0 + 1.0);
    let v10 = at(y0 + 1.0, x0);
    let v11 = at(y0 + 1.0, x0 + 1.0);
    v00 * (1.0 - fy) * (1.0 - fx) + v01 * (1.0 - fy) * fx + v10 * fy * (1.0 - fx) + v11 * fy * fx
}

/// Separable Gaussian with a normalized, truncated kernel and replicated
/// edges, so a constant image is an exact fixed point.
fn gaussian_blur(img: &Array3<f64>, sigma: f64) -> Array3<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-0.5 * (i as f64 / sigma).powi(2)).exp());
    }
    let total: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= total;
    }

    let (c, h, w) = img.dim();
    let clamp = |v: i64, hi: usize| v.clamp(0, hi as i64 - 1) as usize;

    let mut horiz = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    let sx = clamp(x as i64 + j as i64 - radius, w);
                    acc += k * img[(ch, y, sx)];
                }
                horiz[(ch, y, x)] = acc;
            }
        }
    }
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (j, k) in kernel.iter().enumerate() {
                    let sy = clamp(y as i64 + j as i64 - radius, h);
                    acc += k * horiz[(ch, sy, x)];
                }
                out[(ch, y, x)] = acc;
            }
        }
    }
    out
}

/// Additive Gaussian noise, sigma in [0,1] units, drawn in fixed pixel
/// order from a seeded generator.
fn add_noise(img: &Array3<f64>, sigma: f64, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    img.mapv(|v| v + sigma * normal.sample(&mut rng))
}

/// Contrast scaling about mid-gray.
fn scale_contrast(img: &Array3<f64>, factor: f64) -> Array3<f64> {
    img.mapv(|v| 0.5 + factor * (v - 0.5))
}

/// Encode-decode through a lossy JPEG at the given quality.
fn jpeg_round_trip(img: &Array3<f64>, quality: u8) -> Result<Array3<f64>, RenderError> {
    let (c, h, w) = img.dim();
    let io_err = |e: String| RenderError::ImageIo {
        path: "<jpeg buffer>".into(),
        reason: e,
    };
    let mut raw = Vec::with_capacity(c * h * w);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                raw.push(quantize(img[(ch, y, x)]));
            }
        }
    }
    let color = if c == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    let mut encoded = Vec::new();
    image::codecs::jpeg::JpegEncoder::new_with_quality(&mut encoded, quality)
        .encode(&raw, w as u32, h as u32, color)
        .map_err(|e| io_err(e.to_string()))?;
    let decoded = image::load_from_memory(&encoded).map_err(|e| io_err(e.to_string()))?;
    let mut out = Array3::zeros((c, h, w));
    if c == 1 {
        let gray = decoded.to_luma8();
        for (x, y, p) in gray.enumerate_pixels() {
            out[(0, y as usize, x as usize)] = f64::from(p.0[0]) / 255.0;
        }
    } else {
        let rgb = decoded.to_rgb8();
        for (x, y, p) in rgb.enumerate_pixels() {
            for ch in 0..3 {
                out[(ch, y as usize, x as usize)] = f64::from(p.0[ch]) / 255.0;
            }
        }
    }
    Ok(out)
}

/// Random perspective distortion: each corner moves by up to
/// `jitter * side` in both axes; the induced homography is inverted and
/// sampled bilinearly with white fill.
fn perspective_warp(img: &Array3<f64>, jitter: f64, seed: u64) -> Result<Array3<f64>, RenderError> {
    let (c, h, w) = img.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = h.max(w) as f64;
    let src = [
        (0.0, 0.0),
        (w as f64 - 1.0, 0.0),
        (w as f64 - 1.0, h as f64 - 1.0),
        (0.0, h as f64 - 1.0),
    ];
    let mut dst = [(0.0, 0.0); 4];
    for (i, &(x, y)) in src.iter().enumerate() {
        let dx = rng.gen_range(-jitter..=jitter) * side;
        let dy = rng.gen_range(-jitter..=jitter) * side;
        dst[i] = (x + dx, y + dy);
    }
    // Homography taking output (dst-frame) points back to input coords.
    let hm = solve_homography(&dst, &src)?;
    let mut out = Array3::from_elem((c, h, w), 1.0);
    for y in 0..h {
        for x in 0..w {
            let denom = hm[6] * x as f64 + hm[7] * y as f64 + 1.0;
            let sx = (hm[0] * x as f64 + hm[1] * y as f64 + hm[2]) / denom;
            let sy = (hm[3] * x as f64 + hm[4] * y as f64 + hm[5]) / denom;
            for ch in 0..c {
                out[(ch, y, x)] = bilinear(img, ch, sy, sx, 1.0);
            }
        }
    }
    Ok(out)
}

/// Solves for the 8 homography coefficients mapping each `from[i]` to
/// `to[i]`, by Gaussian elimination with partial pivoting.
fn solve_homography(from: &[(f64, f64); 4], to: &[(f64, f64); 4]) -> Result<[f64; 8], RenderError> {
    let mut a = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let (fx, fy) = from[i];
        let (tx, ty) = to[i];
        a[2 * i] = [fx, fy, 1.0, 0.0, 0.0, 0.0, -tx * fx, -tx * fy, tx];
        a[2 * i + 1] = [0.0, 0.0, 0.0, fx, fy, 1.0, -ty * fx, -ty * fy, ty];
    }
    for col in 0..8 {
        let pivot = (col..8)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() < 1e-12 {
            return Err(RenderError::InvalidSpec(
                "degenerate perspective warp corners".into(),
            ));
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row == col {
                continue;
            }
            let f = a[row][col] / a[col][col];
            for k in col..9 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut h = [0.0f64; 8];
    for i in 0..8 {
        h[i] = a[i][8] / a[i][i];
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textimage::{render_prompt, RenderSpec};

    fn rendered() -> TypoImage {
        let spec = RenderSpec {
            canvas_px: 192,
            font_size_px: 20,
            ..RenderSpec::default()
        };
        render_prompt("p0", "Mix the two reagents", &spec).unwrap()
    }

    fn rotate180(img: &Array3<f64>) -> Array3<f64> {
        let (c, h, w) = img.dim();
        let mut out = Array3::zeros((c, h, w));
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[(ch, y, x)] = img[(ch, h - 1 - y, w - 1 - x)];
                }
            }
        }
        out
    }

    #[test]
    fn rotate90_twice_is_rotate180() {
        let img = rendered();
        let once = apply_transform(&img, &TransformSpec::new(TransformKind::Rotate90)).unwrap();
        let twice = apply_transform(&once, &TransformSpec::new(TransformKind::Rotate90)).unwrap();
        assert_eq!(twice.pixels().to_owned(), rotate180(&img.pixels().to_owned()));
    }

    #[test]
    fn rotate90_four_times_is_identity() {
        let img = rendered();
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = apply_transform(&cur, &TransformSpec::new(TransformKind::Rotate90)).unwrap();
        }
        assert_eq!(cur.pixels(), img.pixels());
        assert_eq!(cur.provenance.transforms.len(), 4);
    }

    #[test]
    fn blur_of_constant_is_constant() {
        let arr = Array3::from_elem((1, 32, 32), 0.42);
        let img = TypoImage::from_pixels(arr, rendered().provenance.clone()).unwrap();
        let spec = TransformSpec::new(TransformKind::GaussianBlur).with_param("sigma", 5.0);
        let out = apply_transform(&img, &spec).unwrap();
        for &v in out.pixels().iter() {
            assert!((v - 0.42).abs() < 1e-6);
        }
    }

    #[test]
    fn triple_equals_explicit_composition() {
        let img = rendered();
        let triple = TransformSpec::new(TransformKind::TripleDegradation).with_seed(0);
        let composed = apply_transform(&img, &triple).unwrap();

        let blur = TransformSpec::new(TransformKind::GaussianBlur).with_param("sigma", 2.0);
        let noise = TransformSpec::new(TransformKind::GaussianNoise)
            .with_param("sigma", 25.0)
            .with_seed(0);
        let contrast = TransformSpec::new(TransformKind::LowContrast).with_param("factor", 0.5);
        let step1 = apply_transform(&img, &blur).unwrap();
        let step2 = apply_transform(&step1, &noise).unwrap();
        let step3 = apply_transform(&step2, &contrast).unwrap();

        assert_eq!(composed.pixels(), step3.pixels());
    }

    #[test]
    fn noise_is_seed_deterministic() {
        let img = rendered();
        let spec = TransformSpec::new(TransformKind::GaussianNoise).with_seed(7);
        let a = apply_transform(&img, &spec).unwrap();
        let b = apply_transform(&img, &spec).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        let other = apply_transform(&img, &spec.clone().with_seed(8)).unwrap();
        assert_ne!(a.pixels(), other.pixels());
    }

    #[test]
    fn invert_twice_is_identity() {
        let img = rendered();
        let inv = TransformSpec::new(TransformKind::Invert);
        let once = apply_transform(&img, &inv).unwrap();
        let twice = apply_transform(&once, &inv).unwrap();
        assert_eq!(twice.pixels(), img.pixels());
        assert!((once.pixels()[(0, 0, 0)] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn rotate45_expands_canvas_with_white_fill() {
        let img = rendered();
        let out = apply_transform(&img, &TransformSpec::new(TransformKind::Rotate45)).unwrap();
        let expect = (192.0 * std::f64::consts::SQRT_2).ceil() as usize;
        assert_eq!(out.height(), expect);
        assert_eq!(out.width(), expect);
        assert_eq!(out.pixels()[(0, 0, 0)], 1.0);
        assert!(out.ink_pixel_count(0.5) > 0);
    }

    #[test]
    fn jpeg_artifacts_alter_pixels_deterministically() {
        let img = rendered();
        let spec = TransformSpec::new(TransformKind::JpegArtifact);
        let a = apply_transform(&img, &spec).unwrap();
        let b = apply_transform(&img, &spec).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        assert_ne!(a.pixels(), img.pixels());
    }

    #[test]
    fn warp_with_zero_jitter_is_identity() {
        let img = rendered();
        let spec = TransformSpec::new(TransformKind::PerspectiveWarp).with_param("jitter", 0.0);
        let out = apply_transform(&img, &spec).unwrap();
        assert_eq!(out.pixels(), img.pixels());
    }

    #[test]
    fn warp_is_seed_deterministic() {
        let img = rendered();
        let spec = TransformSpec::new(TransformKind::PerspectiveWarp).with_seed(3);
        let a = apply_transform(&img, &spec).unwrap();
        let b = apply_transform(&img, &spec).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        let other = apply_transform(&img, &spec.clone().with_seed(4)).unwrap();
        assert_ne!(a.pixels(), other.pixels());
    }

    #[test]
    fn outputs_stay_in_range() {
        let img = rendered();
        for kind in TransformKind::ALL {
            let out = apply_transform(&img, &TransformSpec::new(kind)).unwrap();
            for &v in out.pixels().iter() {
                assert!((0.0..=1.0).contains(&v), "{kind}: {v}");
            }
        }
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in TransformKind::ALL {
            assert_eq!(kind.name().parse::<TransformKind>().unwrap(), kind);
            let json = serde_json::to_string(&kind).unwrap();
            assert_eq!(json, format!("\"{}\"", kind.name()));
        }
        // Short CLI tags resolve too.
        assert_eq!("rot90".parse::<TransformKind>().unwrap(), TransformKind::Rotate90);
        assert_eq!("triple".parse::<TransformKind>().unwrap(), TransformKind::TripleDegradation);
        assert_eq!("heavyblur".parse::<TransformKind>().unwrap(), TransformKind::HeavyBlur);
        assert!("sepia".parse::<TransformKind>().is_err());
    }

    #[test]
    fn bad_params_are_rejected() {
        let img = rendered();
        let neg = TransformSpec::new(TransformKind::GaussianBlur).with_param("sigma", -1.0);
        assert!(matches!(
            apply_transform(&img, &neg),
            Err(RenderError::BadParam { .. })
        ));
        let mut missing = TransformSpec::new(TransformKind::GaussianNoise);
        missing.params.clear();
        assert!(matches!(
            apply_transform(&img, &missing),
            Err(RenderError::MissingParam { .. })
        ));
        let q = TransformSpec::new(TransformKind::JpegArtifact).with_param("quality", 250.0);
        assert!(matches!(
            apply_transform(&img, &q),
            Err(RenderError::BadParam { .. })
        ));
    }
}
