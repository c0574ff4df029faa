//! Orthonormal type-II 2-D DCT via cached cosine-basis matrices.
//!
//! For a basis matrix `D` (rows indexed by frequency), the transform is
//! `dct2(X) = D_h · X · D_w^T` and, since `D` is orthogonal, the inverse is
//! `idct2(Y) = D_h^T · Y · D_w`. Energy is preserved (Parseval) and a
//! constant image maps to a single DC coefficient.

use super::AttackError;
use ndarray::{Array2, ArrayView2};
use once_cell::sync::Lazy;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

static BASIS_CACHE: Lazy<Mutex<HashMap<usize, Arc<Array2<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

/// Orthonormal DCT-II basis: `D[k][n] = c_k cos(pi (2n+1) k / (2N))` with
/// `c_0 = sqrt(1/N)`, `c_k = sqrt(2/N)`.
fn basis(n: usize) -> Arc<Array2<f64>> {
    let mut cache = BASIS_CACHE.lock().expect("dct basis cache poisoned");
    if let Some(b) = cache.get(&n) {
        return Arc::clone(b);
    }
    let mut d = Array2::zeros((n, n));
    let norm0 = (1.0 / n as f64).sqrt();
    let norm = (2.0 / n as f64).sqrt();
    for k in 0..n {
        let c = if k == 0 { norm0 } else { norm };
        for j in 0..n {
            d[(k, j)] = c * (std::f64::consts::PI * (2.0 * j as f64 + 1.0) * k as f64
                / (2.0 * n as f64))
                .cos();
        }
    }
    let d = Arc::new(d);
    cache.insert(n, Arc::clone(&d));
    d
}

fn check_finite(x: &ArrayView2<'_, f64>) -> Result<(), AttackError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(AttackError::NonFiniteInput);
    }
    Ok(())
}

/// Forward orthonormal 2-D DCT-II.
pub fn dct2(x: &ArrayView2<'_, f64>) -> Result<Array2<f64>, AttackError> {
    check_finite(x)?;
    let (h, w) = x.dim();
    let dh = basis(h);
    let dw = basis(w);
    Ok(dh.dot(x).dot(&dw.t()))
}

/// Inverse of `dct2`.
pub fn idct2(y: &ArrayView2<'_, f64>) -> Result<Array2<f64>, AttackError> {
    check_finite(y)?;
    let (h, w) = y.dim();
    let dh = basis(h);
    let dw = basis(w);
    Ok(dh.t().dot(y).dot(&*dw))
}
