//! The feasible-set projection for the bounded perturbation.

use super::AttackError;
use ndarray::{Array3, ArrayView3};

/// Projects `x` onto the intersection of the epsilon-ball around `x0` and
/// the `[0,1]` pixel box, elementwise.
pub fn project_linf(
    x: &ArrayView3<'_, f64>,
    x0: &ArrayView3<'_, f64>,
    epsilon: f64,
) -> Result<Array3<f64>, AttackError> {
    if x.dim() != x0.dim() {
        return Err(AttackError::ShapeMismatch);
    }
    let mut out = Array3::zeros(x.dim());
    ndarray::Zip::from(&mut out)
        .and(x)
        .and(x0)
        .for_each(|o, &xi, &ai| {
            *o = xi.clamp(ai - epsilon, ai + epsilon).clamp(0.0, 1.0);
        });
    Ok(out)
}

/// Largest absolute pixel difference between two same-shaped images.
pub fn linf_distance(a: &ArrayView3<'_, f64>, b: &ArrayView3<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()))
}
