//! The backend contract and the shared text featurizer.

use ndarray::{Array1, Array3, ArrayView1, ArrayView3};

/// Raw (unnormalized) embedding producer. Backends receive the already
/// preprocessed `(3, side, side)` tensor; normalization of outputs and all
/// caching happen in the handle layer.
pub trait EncoderBackend: Send + Sync {
    fn embed_dim(&self) -> usize;

    /// Raw text embedding, `None` when the backend has no text tower.
    fn raw_text(&self, text: &str) -> Option<Array1<f64>>;

    /// Raw image embedding of a preprocessed input tensor.
    fn raw_image(&self, z: &ArrayView3<'_, f64>) -> Array1<f64>;

    /// Vector-Jacobian product: gradient of `<raw_image(z), upstream>` with
    /// respect to `z`. `None` when the backend cannot propagate gradients.
    fn raw_image_vjp(
        &self,
        z: &ArrayView3<'_, f64>,
        upstream: &ArrayView1<'_, f64>,
    ) -> Option<Array3<f64>>;
}

/// Dimension of the hashed byte feature vector used by fixture text towers.
pub const TEXT_FEATURE_DIM: usize = 512;

/// Deterministic byte-level features: unigram counts in the low 256 slots,
/// hashed byte trigrams in the high 256. Nonempty text always produces a
/// nonzero vector (unigram counts are positive).
pub fn text_features(text: &str) -> Array1<f64> {
    let bytes = text.as_bytes();
    let mut feat = Array1::<f64>::zeros(TEXT_FEATURE_DIM);
    for &b in bytes {
        feat[b as usize] += 1.0;
    }
    for tri in bytes.windows(3) {
        // FNV-1a over the trigram.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &b in tri {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        feat[256 + (h % 256) as usize] += 1.0;
    }
    feat
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_count_unigrams_and_trigrams() {
        let f = text_features("aab");
        assert_eq!(f[b'a' as usize], 2.0);
        assert_eq!(f[b'b' as usize], 1.0);
        // One trigram lands somewhere in the hashed half.
        let tri_mass: f64 = f.slice(ndarray::s![256..]).sum();
        assert_eq!(tri_mass, 1.0);
    }

    #[test]
    fn features_are_deterministic_and_text_sensitive() {
        assert_eq!(text_features("hello world"), text_features("hello world"));
        assert_ne!(text_features("hello world"), text_features("hello worle"));
    }

    #[test]
    fn nonempty_text_is_nonzero() {
        assert!(text_features("x").sum() > 0.0);
        assert_eq!(text_features("").sum(), 0.0);
    }
}
