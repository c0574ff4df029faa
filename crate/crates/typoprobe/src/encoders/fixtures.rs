//! In-tree fixture encoders: all the ensemble math is testable offline.
//!
//! Both families derive every weight from a seeded generator keyed by the
//! encoder name, so a name fully determines the model. The conv fixture is
//! smooth (tanh activations), which keeps finite-difference gradient checks
//! tight.

use super::backend::{text_features, EncoderBackend, TEXT_FEATURE_DIM};
use crate::store::sha256_hex;
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView1, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub const FIXTURE_DIM: usize = 128;
pub const FIXTURE_SIDE: usize = 32;

/// First eight bytes of sha256(name + role) as a seed: distinct towers of
/// the same fixture never share weights.
fn name_seed(name: &str, role: &str) -> u64 {
    let hash = sha256_hex(format!("{name}\x00{role}").as_bytes());
    u64::from_str_radix(&hash[..16], 16).expect("hex prefix")
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let normal = Normal::new(0.0, 1.0 / (cols as f64).sqrt()).expect("normal");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(rng))
}

/// Text tower shared by both fixture families: a seeded linear map over
/// hashed byte features.
fn text_matrix(name: &str) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(name_seed(name, "text"));
    gaussian_matrix(&mut rng, FIXTURE_DIM, TEXT_FEATURE_DIM)
}

/// Linear image tower: a fixed seeded matrix over flattened pixels.
pub struct LinearFixture {
    w_img: Array2<f64>,
    w_text: Array2<f64>,
}

impl LinearFixture {
    pub fn new(name: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(name, "image"));
        let in_dim = 3 * FIXTURE_SIDE * FIXTURE_SIDE;
        Self {
            w_img: gaussian_matrix(&mut rng, FIXTURE_DIM, in_dim),
            w_text: text_matrix(name),
        }
    }

    /// Image weight matrix, exposed so tests can recompute embeddings
    /// independently.
    pub fn image_matrix(&self) -> &Array2<f64> {
        &self.w_img
    }

    pub fn text_matrix(&self) -> &Array2<f64> {
        &self.w_text
    }
}

impl EncoderBackend for LinearFixture {
    fn embed_dim(&self) -> usize {
        FIXTURE_DIM
    }

    fn raw_text(&self, text: &str) -> Option<Array1<f64>> {
        Some(self.w_text.dot(&text_features(text)))
    }

    fn raw_image(&self, z: &ArrayView3<'_, f64>) -> Array1<f64> {
        let flat = z.to_owned().into_shape_with_order(self.w_img.ncols()).expect("flatten");
        self.w_img.dot(&flat)
    }

    fn raw_image_vjp(
        &self,
        z: &ArrayView3<'_, f64>,
        upstream: &ArrayView1<'_, f64>,
    ) -> Option<Array3<f64>> {
        let flat_grad = self.w_img.t().dot(upstream);
        Some(flat_grad.into_shape_with_order(z.dim()).expect("unflatten"))
    }
}

/// Tiny smooth convnet: conv3x3/s2 -> tanh -> conv3x3/s2 -> tanh -> global
/// average pool -> linear.
pub struct ConvFixture {
    conv1: Array4<f64>, // (8, 3, 3, 3)
    conv2: Array4<f64>, // (16, 8, 3, 3)
    w_out: Array2<f64>, // (FIXTURE_DIM, 16)
    w_text: Array2<f64>,
}

const C1: usize = 8;
const C2: usize = 16;

impl ConvFixture {
    pub fn new(name: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(name_seed(name, "image"));
        let normal1 = Normal::new(0.0, (2.0 / (3.0 * 9.0_f64)).sqrt()).expect("normal");
        let conv1 = Array4::from_shape_fn((C1, 3, 3, 3), |_| normal1.sample(&mut rng));
        let normal2 = Normal::new(0.0, (2.0 / (C1 as f64 * 9.0)).sqrt()).expect("normal");
        let conv2 = Array4::from_shape_fn((C2, C1, 3, 3), |_| normal2.sample(&mut rng));
        let w_out = gaussian_matrix(&mut rng, FIXTURE_DIM, C2);
        Self {
            conv1,
            conv2,
            w_out,
            w_text: text_matrix(name),
        }
    }
}

/// Output rows a kernel row `k` reaches under stride 2, padding 1: row 0
/// has no source for `k = 0` (its sample sits in the padding), the rest are
/// in range for even and odd input sides alike. Returns (first output row,
/// row count, first source row).
fn kernel_span(k: usize, out_len: usize) -> (usize, usize, usize) {
    let o0 = usize::from(k == 0);
    (o0, out_len.saturating_sub(o0), 2 * o0 + k - 1)
}

/// 3x3 convolution, stride 2, zero padding 1: (C_in, L, L) -> (C_out, L/2, L/2).
/// One strided-slice pass per kernel tap; each output element still
/// accumulates its taps in (i, ky, kx) order, like the scalar loop nest.
fn conv3x3_s2(input: &ArrayView3<'_, f64>, weights: &Array4<f64>) -> Array3<f64> {
    let (c_in, h, w) = input.dim();
    let c_out = weights.dim().0;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::zeros((c_out, oh, ow));
    for o in 0..c_out {
        for i in 0..c_in {
            for ky in 0..3 {
                let (oy0, ny, sy0) = kernel_span(ky, oh);
                for kx in 0..3 {
                    let (ox0, nx, sx0) = kernel_span(kx, ow);
                    if ny == 0 || nx == 0 {
                        continue;
                    }
                    let w_k = weights[(o, i, ky, kx)];
                    let src =
                        input.slice(s![i, sy0..sy0 + 2 * ny - 1; 2, sx0..sx0 + 2 * nx - 1; 2]);
                    let mut dst = out.slice_mut(s![o, oy0..oy0 + ny, ox0..ox0 + nx]);
                    dst.zip_mut_with(&src, |d, &s| *d += w_k * s);
                }
            }
        }
    }
    out
}

/// Transpose of `conv3x3_s2` with respect to its input.
fn conv3x3_s2_vjp(
    upstream: &ArrayView3<'_, f64>,
    weights: &Array4<f64>,
    in_dim: (usize, usize, usize),
) -> Array3<f64> {
    let (c_in, h, w) = in_dim;
    let (c_out, oh, ow) = upstream.dim();
    let mut grad = Array3::zeros((c_in, h, w));
    for o in 0..c_out {
        for i in 0..c_in {
            for ky in 0..3 {
                let (oy0, ny, sy0) = kernel_span(ky, oh);
                for kx in 0..3 {
                    let (ox0, nx, sx0) = kernel_span(kx, ow);
                    if ny == 0 || nx == 0 {
                        continue;
                    }
                    let w_k = weights[(o, i, ky, kx)];
                    let up = upstream.slice(s![o, oy0..oy0 + ny, ox0..ox0 + nx]);
                    let mut dst =
                        grad.slice_mut(s![i, sy0..sy0 + 2 * ny - 1; 2, sx0..sx0 + 2 * nx - 1; 2]);
                    dst.zip_mut_with(&up, |d, &u| *d += w_k * u);
                }
            }
        }
    }
    grad
}

impl EncoderBackend for ConvFixture {
    fn embed_dim(&self) -> usize {
        FIXTURE_DIM
    }

    fn raw_text(&self, text: &str) -> Option<Array1<f64>> {
        Some(self.w_text.dot(&text_features(text)))
    }

    fn raw_image(&self, z: &ArrayView3<'_, f64>) -> Array1<f64> {
        let a1 = conv3x3_s2(z, &self.conv1).mapv(f64::tanh);
        let a2 = conv3x3_s2(&a1.view(), &self.conv2).mapv(f64::tanh);
        let (c2, ph, pw) = a2.dim();
        let mut pooled = Array1::zeros(c2);
        for c in 0..c2 {
            pooled[c] = a2.index_axis(ndarray::Axis(0), c).sum() / (ph * pw) as f64;
        }
        self.w_out.dot(&pooled)
    }

    fn raw_image_vjp(
        &self,
        z: &ArrayView3<'_, f64>,
        upstream: &ArrayView1<'_, f64>,
    ) -> Option<Array3<f64>> {
        // Recompute forward activations, then walk the chain backwards.
        let pre1 = conv3x3_s2(z, &self.conv1);
        let a1 = pre1.mapv(f64::tanh);
        let pre2 = conv3x3_s2(&a1.view(), &self.conv2);
        let a2 = pre2.mapv(f64::tanh);
        let (c2, ph, pw) = a2.dim();

        let g_pooled = self.w_out.t().dot(upstream);
        let mut g_a2 = Array3::zeros((c2, ph, pw));
        for c in 0..c2 {
            let v = g_pooled[c] / (ph * pw) as f64;
            g_a2.index_axis_mut(ndarray::Axis(0), c).fill(v);
        }
        let g_pre2 = &g_a2 * &a2.mapv(|y| 1.0 - y * y);
        let g_a1 = conv3x3_s2_vjp(&g_pre2.view(), &self.conv2, a1.dim());
        let g_pre1 = &g_a1 * &a1.mapv(|y| 1.0 - y * y);
        Some(conv3x3_s2_vjp(&g_pre1.view(), &self.conv1, z.dim()))
    }
}
