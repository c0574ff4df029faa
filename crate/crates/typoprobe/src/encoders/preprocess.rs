//! Declared, differentiable preprocessing: channel replication, bilinear
//! resize to the encoder's native side, and per-channel normalization.

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

/// CLIP-family channel means and standard deviations; the fixtures declare
/// the same constants so the full pipeline is exercised offline.
pub const CLIP_MEANS: [f64; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const CLIP_SCALES: [f64; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];

/// The full declared preprocessing pipeline of one encoder. Living in the
/// handle (not at call sites) is what lets the attack differentiate through
/// a single authoritative definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    /// Square side the encoder consumes.
    pub resize_side: usize,
    /// Interpolation mode; only bilinear is implemented.
    pub resize_mode: String,
    pub channel_means: [f64; 3],
    pub channel_scales: [f64; 3],
}

impl Preprocessing {
    pub fn clip_like(resize_side: usize) -> Self {
        Self {
            resize_side,
            resize_mode: "bilinear".into(),
            channel_means: CLIP_MEANS,
            channel_scales: CLIP_SCALES,
        }
    }

    /// `[0,1]`-ish pixels (1 or 3 channels, any size) to the encoder's
    /// normalized input tensor `(3, side, side)`.
    pub fn forward(&self, pixels: &ArrayView3<'_, f64>) -> Array3<f64> {
        let rgb = replicate_channels(pixels);
        let resized = bilinear_resize(&rgb.view(), self.resize_side, self.resize_side);
        let mut out = resized;
        for c in 0..3 {
            let mean = self.channel_means[c];
            let scale = self.channel_scales[c];
            out.index_axis_mut(ndarray::Axis(0), c)
                .mapv_inplace(|v| (v - mean) / scale);
        }
        out
    }

    /// Transpose of `forward`'s linear part: maps a gradient with respect
    /// to the encoder input back to a gradient with respect to the original
    /// pixels (shape `in_dim`).
    pub fn vjp(&self, in_dim: (usize, usize, usize), upstream: &ArrayView3<'_, f64>) -> Array3<f64> {
        let (c_in, h, w) = in_dim;
        let mut scaled = upstream.to_owned();
        for c in 0..3 {
            let scale = self.channel_scales[c];
            scaled
                .index_axis_mut(ndarray::Axis(0), c)
                .mapv_inplace(|v| v / scale);
        }
        let g_rgb = bilinear_resize_vjp(&scaled.view(), h, w);
        if c_in == 3 {
            g_rgb
        } else {
            // Channel replication's transpose is a channel sum.
            let mut g = Array3::zeros((1, h, w));
            for c in 0..3 {
                g.index_axis_mut(ndarray::Axis(0), 0)
                    .zip_mut_with(&g_rgb.index_axis(ndarray::Axis(0), c), |a, &b| *a += b);
            }
            g
        }
    }
}

fn replicate_channels(pixels: &ArrayView3<'_, f64>) -> Array3<f64> {
    let (c, h, w) = pixels.dim();
    if c == 3 {
        return pixels.to_owned();
    }
    let mut rgb = Array3::zeros((3, h, w));
    for ch in 0..3 {
        rgb.index_axis_mut(ndarray::Axis(0), ch)
            .assign(&pixels.index_axis(ndarray::Axis(0), 0));
    }
    rgb
}

/// Per-axis source taps for bilinear interpolation with the half-pixel
/// center convention.
fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * scale - 0.5;
            let clamped = src.clamp(0.0, in_len as f64 - 1.0);
            let lo = clamped.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, clamped - lo as f64)
        })
        .collect()
}

pub fn bilinear_resize(img: &ArrayView3<'_, f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = img.dim();
    let ys = axis_taps(h, out_h);
    let xs = axis_taps(w, out_w);
    let mut out = Array3::zeros((c, out_h, out_w));
    for ch in 0..c {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                out[(ch, oy, ox)] = img[(ch, y0, x0)] * (1.0 - fy) * (1.0 - fx)
                    + img[(ch, y0, x1)] * (1.0 - fy) * fx
                    + img[(ch, y1, x0)] * fy * (1.0 - fx)
                    + img[(ch, y1, x1)] * fy * fx;
            }
        }
    }
    out
}

/// Transpose of `bilinear_resize` as a linear map: scatters each output
/// gradient back onto its four source taps.
pub fn bilinear_resize_vjp(
    upstream: &ArrayView3<'_, f64>,
    in_h: usize,
    in_w: usize,
) -> Array3<f64> {
    let (c, out_h, out_w) = upstream.dim();
    let ys = axis_taps(in_h, out_h);
    let xs = axis_taps(in_w, out_w);
    let mut grad = Array3::zeros((c, in_h, in_w));
    for ch in 0..c {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let u = upstream[(ch, oy, ox)];
                grad[(ch, y0, x0)] += u * (1.0 - fy) * (1.0 - fx);
                grad[(ch, y0, x1)] += u * (1.0 - fy) * fx;
                grad[(ch, y1, x0)] += u * fy * (1.0 - fx);
                grad[(ch, y1, x1)] += u * fy * fx;
            }
        }
    }
    grad
}
