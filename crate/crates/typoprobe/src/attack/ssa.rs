//! Spectral simulation augmentation: Gaussian input noise plus a random
//! multiplicative mask in the DCT frequency domain.
//!
//! Draws are captured in a tape so the forward pass, its vector-Jacobian
//! product, and parallel workers all see the same randomness.

use super::dct::{dct2, idct2};
use super::AttackError;
use ndarray::{Array3, ArrayView3, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// One SSA draw: additive noise and the spectral mask, both elementwise
/// over all channels.
#[derive(Debug, Clone)]
pub struct SsaTape {
    pub noise: Array3<f64>,
    pub mask: Array3<f64>,
}

impl SsaTape {
    /// Draws a tape for images of shape `dim`. `sigma` is the noise std in
    /// `[0,1]` pixel units; the mask is Uniform(1-rho, 1+rho).
    pub fn draw<R: Rng>(
        dim: (usize, usize, usize),
        sigma: f64,
        rho: f64,
        rng: &mut R,
    ) -> SsaTape {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let noise = if sigma == 0.0 {
            Array3::zeros(dim)
        } else {
            Array3::from_shape_fn(dim, |_| sigma * normal.sample(rng))
        };
        let mask = if rho == 0.0 {
            Array3::ones(dim)
        } else {
            Array3::from_shape_fn(dim, |_| rng.gen_range(1.0 - rho..=1.0 + rho))
        };
        SsaTape { noise, mask }
    }

    /// `idct2(dct2(x + noise) * mask)` per channel. Output is NOT clamped;
    /// the update step projects later, keeping the gradient path smooth.
    pub fn apply(&self, x: &ArrayView3<'_, f64>) -> Result<Array3<f64>, AttackError> {
        if x.dim() != self.noise.dim() {
            return Err(AttackError::ShapeMismatch);
        }
        let noisy = x.to_owned() + &self.noise;
        let mut out = Array3::zeros(x.dim());
        for c in 0..x.dim().0 {
            let spectrum = dct2(&noisy.index_axis(Axis(0), c))?;
            let masked = &spectrum * &self.mask.index_axis(Axis(0), c);
            out.index_axis_mut(Axis(0), c).assign(&idct2(&masked.view())?);
        }
        Ok(out)
    }

    /// VJP of `apply` with respect to `x`. The map is affine in `x` with an
    /// orthogonal, self-adjoint-up-to-transpose spectral core, so the
    /// adjoint is `idct2(mask * dct2(g))` per channel.
    pub fn vjp(&self, upstream: &ArrayView3<'_, f64>) -> Result<Array3<f64>, AttackError> {
        if upstream.dim() != self.mask.dim() {
            return Err(AttackError::ShapeMismatch);
        }
        let mut grad = Array3::zeros(upstream.dim());
        for c in 0..upstream.dim().0 {
            let spectrum = dct2(&upstream.index_axis(Axis(0), c))?;
            let masked = &spectrum * &self.mask.index_axis(Axis(0), c);
            grad.index_axis_mut(Axis(0), c)
                .assign(&idct2(&masked.view())?);
        }
        Ok(grad)
    }
}

/// Convenience for single-shot augmentation outside the optimizer.
pub fn ssa_augment<R: Rng>(
    x: &ArrayView3<'_, f64>,
    sigma: f64,
    rho: f64,
    rng: &mut R,
) -> Result<Array3<f64>, AttackError> {
    SsaTape::draw(x.dim(), sigma, rho, rng).apply(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_img(seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((3, 12, 12), |_| rng.gen::<f64>())
    }

    #[test]
    fn degenerate_draw_is_identity() {
        let x = random_img(1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = ssa_augment(&x.view(), 0.0, 0.0, &mut rng).unwrap();
        let max_err = (&out - &x).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_err < 1e-6);
    }

    #[test]
    fn same_rng_state_gives_identical_outputs() {
        let x = random_img(2);
        let a = ssa_augment(&x.view(), 16.0 / 255.0, 0.5, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = ssa_augment(&x.view(), 16.0 / 255.0, 0.5, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_image_scales_by_the_dc_mask_entry() {
        // Constant input with sigma=0: the only nonzero DCT coefficient is
        // DC, so the output is the constant times mask[(c,0,0)].
        let c = 0.6;
        let x = Array3::from_elem((1, 8, 8), c);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tape = SsaTape::draw((1, 8, 8), 0.0, 0.5, &mut rng);
        let out = tape.apply(&x.view()).unwrap();
        let want = c * tape.mask[(0, 0, 0)];
        for &v in out.iter() {
            assert!((v - want).abs() < 1e-9, "{v} vs {want}");
        }
    }

    #[test]
    fn vjp_is_the_adjoint_of_the_jacobian() {
        // <J v, u> == <v, J^T u>; J is the linear part of the affine map.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tape = SsaTape::draw((2, 9, 7), 0.1, 0.4, &mut rng);
        let v = Array3::from_shape_fn((2, 9, 7), |_| rng.gen::<f64>() - 0.5);
        let u = Array3::from_shape_fn((2, 9, 7), |_| rng.gen::<f64>() - 0.5);
        let zero = Array3::zeros((2, 9, 7));
        let jv = tape.apply(&v.view()).unwrap() - tape.apply(&zero.view()).unwrap();
        let jtu = tape.vjp(&u.view()).unwrap();
        let lhs: f64 = (&jv * &u).sum();
        let rhs: f64 = (&v * &jtu).sum();
        assert!((lhs - rhs).abs() < 1e-9, "{lhs} vs {rhs}");
    }

    #[test]
    fn output_is_not_clamped() {
        // Large noise must be allowed to leave [0,1].
        let x = Array3::from_elem((1, 8, 8), 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = ssa_augment(&x.view(), 2.0, 0.0, &mut rng).unwrap();
        assert!(out.iter().any(|&v| !(0.0..=1.0).contains(&v)));
    }
}
