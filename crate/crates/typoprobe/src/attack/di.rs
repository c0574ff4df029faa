//! Input diversity: random resize-and-pad, differentiable via bilinear
//! interpolation.

use super::AttackError;
use crate::encoders::{bilinear_resize, bilinear_resize_vjp};
use ndarray::{s, Array3, ArrayView3};
use rand::Rng;

/// One DI draw. `None` window means the identity branch was taken.
#[derive(Debug, Clone, PartialEq)]
pub struct DiTape {
    pub window: Option<DiWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiWindow {
    pub side: usize,
    pub off_y: usize,
    pub off_x: usize,
}

impl DiTape {
    /// With probability `prob`: a side uniform in `[ceil(0.9 s), s]` and a
    /// uniform placement of the resized image inside the canvas.
    pub fn draw<R: Rng>(canvas_side: usize, prob: f64, rng: &mut R) -> DiTape {
        if !rng.gen_bool(prob) {
            return DiTape { window: None };
        }
        let min_side = (0.9 * canvas_side as f64).ceil() as usize;
        let side = rng.gen_range(min_side..=canvas_side);
        let max_off = canvas_side - side;
        let off_y = if max_off == 0 { 0 } else { rng.gen_range(0..=max_off) };
        let off_x = if max_off == 0 { 0 } else { rng.gen_range(0..=max_off) };
        DiTape {
            window: Some(DiWindow { side, off_y, off_x }),
        }
    }

    /// Shrink to the drawn side, pad back to the full canvas with
    /// `background` at the drawn offset.
    pub fn apply(
        &self,
        x: &ArrayView3<'_, f64>,
        background: f64,
    ) -> Result<Array3<f64>, AttackError> {
        let Some(win) = self.window else {
            return Ok(x.to_owned());
        };
        let (c, h, w) = x.dim();
        if h != w {
            return Err(AttackError::ShapeMismatch);
        }
        let small = bilinear_resize(x, win.side, win.side);
        let mut out = Array3::from_elem((c, h, w), background);
        out.slice_mut(s![
            ..,
            win.off_y..win.off_y + win.side,
            win.off_x..win.off_x + win.side
        ])
        .assign(&small);
        Ok(out)
    }

    /// VJP of `apply`: crop the upstream gradient to the window and resize
    /// it back up; the constant padding contributes nothing.
    pub fn vjp(
        &self,
        upstream: &ArrayView3<'_, f64>,
        in_dim: (usize, usize, usize),
    ) -> Result<Array3<f64>, AttackError> {
        let Some(win) = self.window else {
            return Ok(upstream.to_owned());
        };
        let cropped = upstream.slice(s![
            ..,
            win.off_y..win.off_y + win.side,
            win.off_x..win.off_x + win.side
        ]);
        Ok(bilinear_resize_vjp(&cropped, in_dim.1, in_dim.2))
    }
}
