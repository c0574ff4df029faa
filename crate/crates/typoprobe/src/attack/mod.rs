//! The embedding-alignment adversarial optimizer.
//!
//! Maximizes the mean cosine between an image's embeddings and fixed
//! per-encoder text embeddings, under an elementwise perturbation budget.
//! The update rule processes the ensemble sequentially with a shared
//! momentum buffer (inner steps), then takes a signed outer step from the
//! step's anchor point, with spectral (SSA) and resize-pad (DI)
//! augmentation on every gradient sample.

mod dct;
mod di;
mod project;
mod ssa;

pub use dct::{dct2, idct2};
pub use di::{DiTape, DiWindow};
pub use project::{linf_distance, project_linf};
pub use ssa::{ssa_augment, SsaTape};

use crate::encoders::{cosine, EmbeddingVector, EncoderError, EncoderHandle};
use crate::store::json_content_hash;
use crate::textimage::TypoImage;
use ndarray::{Array3, ArrayView3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("invalid attack config: {0}")]
    InvalidConfig(String),
    #[error("image shapes do not match")]
    ShapeMismatch,
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("encoder `{encoder}` cannot provide input gradients")]
    MissingGradient { encoder: String },
    #[error("non-finite gradient from encoder `{encoder}` at step {step}")]
    NonFiniteGradient { encoder: String, step: usize },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("attack i/o: {0}")]
    Io(String),
    #[error("8-bit export exceeds budget: linf {linf_8bit} > allowed {budget_8bit}")]
    BudgetExceeded { linf_8bit: u8, budget_8bit: u8 },
}

/// Which order the inner loop visits the ensemble in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelOrder {
    Fixed,
    ShuffledPerStep,
}

/// How the outer step moves from the step's anchor toward the inner
/// loop's endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuterRule {
    /// anchor + alpha_outer * sign(x_end - anchor)
    SignedStep,
    /// anchor + (alpha_outer / alpha_inner) * (x_end - anchor) / K
    ScaledDifference,
}

impl OuterRule {
    /// The kebab-case name recorded in manifests.
    pub fn name(self) -> &'static str {
        match self {
            OuterRule::SignedStep => "signed-step",
            OuterRule::ScaledDifference => "scaled-difference",
        }
    }
}

/// All optimization hyperparameters. Defaults are the reference settings;
/// every value is in `[0,1]` pixel units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub steps_t: usize,
    pub alpha_inner: f64,
    pub alpha_outer: f64,
    pub momentum_mu: f64,
    pub ssa_samples_s: usize,
    pub ssa_sigma: f64,
    pub ssa_rho: f64,
    pub di_prob: f64,
    pub model_order: ModelOrder,
    pub outer_rule: OuterRule,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            epsilon: 32.0 / 255.0,
            steps_t: 100,
            alpha_inner: 5.0 / 255.0,
            alpha_outer: 4.0 / 255.0,
            momentum_mu: 0.9,
            ssa_samples_s: 3,
            ssa_sigma: 16.0 / 255.0,
            ssa_rho: 0.5,
            di_prob: 0.7,
            model_order: ModelOrder::Fixed,
            outer_rule: OuterRule::SignedStep,
            seed: 0,
        }
    }
}

impl AttackConfig {
    /// Every violated field, one message each, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            v.push(format!("epsilon {} must be in (0, 1]", self.epsilon));
        }
        if !(self.alpha_inner > 0.0) {
            v.push(format!("alpha_inner {} must be positive", self.alpha_inner));
        }
        if !(self.alpha_outer > 0.0) {
            v.push(format!("alpha_outer {} must be positive", self.alpha_outer));
        }
        if !(0.0..1.0).contains(&self.momentum_mu) {
            v.push(format!("momentum_mu {} must be in [0, 1)", self.momentum_mu));
        }
        if self.ssa_samples_s < 1 {
            v.push("ssa_samples_s must be at least 1".into());
        }
        if !(self.ssa_sigma >= 0.0) {
            v.push(format!("ssa_sigma {} must be nonnegative", self.ssa_sigma));
        }
        if !(0.0..1.0).contains(&self.ssa_rho) {
            v.push(format!("ssa_rho {} must be in [0, 1)", self.ssa_rho));
        }
        if !(0.0..=1.0).contains(&self.di_prob) {
            v.push(format!("di_prob {} must be in [0, 1]", self.di_prob));
        }
        if [
            self.epsilon,
            self.alpha_inner,
            self.alpha_outer,
            self.momentum_mu,
            self.ssa_sigma,
            self.ssa_rho,
            self.di_prob,
        ]
        .iter()
        .any(|x| !x.is_finite())
        {
            v.push("hyperparameters must be finite".into());
        }
        v
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        match self.violations().into_iter().next() {
            Some(msg) => Err(AttackError::InvalidConfig(msg)),
            None => Ok(()),
        }
    }
}

/// Everything a finished optimization reports.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial_image: TypoImage,
    pub delta_linf: f64,
    /// Ensemble similarity after each outer step (clean evaluation).
    pub similarity_trace: Vec<f64>,
    /// Per-encoder cosines after each outer step, encoder order as given.
    pub per_encoder_trace: Vec<Vec<f64>>,
    /// max |x - img0| after each outer step.
    pub linf_trace: Vec<f64>,
    pub initial_similarity: f64,
    pub final_similarity: f64,
    pub config_hash: String,
    pub seed: u64,
    pub wall_time_s: f64,
}

/// Sign with a genuine zero: stationary coordinates stay put.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn clean_similarities(
    x: &ArrayView3<'_, f64>,
    targets: &[(EncoderHandle, EmbeddingVector)],
) -> Result<(f64, Vec<f64>), AttackError> {
    let mut per = Vec::with_capacity(targets.len());
    for (enc, t) in targets {
        let e = enc.embed_pixels(x)?;
        per.push(cosine(t, &e)?);
    }
    let mean = per.iter().sum::<f64>() / per.len() as f64;
    Ok((mean, per))
}

/// Runs the full optimization. Deterministic given `(img0, targets, cfg)`
/// with fixture backends: augmentation draws come from a single seeded
/// generator, and parallel gradient samples are reduced in tape order.
pub fn cwa_ssa_optimize(
    img0: &TypoImage,
    targets: &[(EncoderHandle, EmbeddingVector)],
    cfg: &AttackConfig,
) -> Result<AttackResult, AttackError> {
    let start = std::time::Instant::now();
    cfg.validate()?;
    if targets.is_empty() {
        return Err(AttackError::InvalidConfig("empty encoder ensemble".into()));
    }
    for (enc, t) in targets {
        if !enc.capabilities.input_gradient {
            return Err(AttackError::MissingGradient {
                encoder: enc.name.clone(),
            });
        }
        if t.dim() != enc.embed_dim {
            return Err(AttackError::Encoder(EncoderError::DimensionMismatch {
                left: t.dim(),
                right: enc.embed_dim,
            }));
        }
    }

    // The perturbation lives on three channels: encoders consume RGB, so a
    // grayscale render is replicated before optimization begins.
    let rgb = img0.to_rgb();
    let x0 = rgb.pixels().to_owned();
    let background = f64::from(img0.provenance.render.background_color) / 255.0;
    let dim = x0.dim();
    let canvas_side = dim.1;
    let k = targets.len();

    let (initial_similarity, _) = clean_similarities(&x0.view(), targets)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = x0.clone();
    let mut momentum = Array3::<f64>::zeros(dim);
    let mut similarity_trace = Vec::with_capacity(cfg.steps_t);
    let mut per_encoder_trace = Vec::with_capacity(cfg.steps_t);
    let mut linf_trace = Vec::with_capacity(cfg.steps_t);

    for step in 0..cfg.steps_t {
        let anchor = x.clone();
        let mut order: Vec<usize> = (0..k).collect();
        if cfg.model_order == ModelOrder::ShuffledPerStep {
            order.shuffle(&mut rng);
        }

        for &ki in &order {
            let (enc, target) = &targets[ki];
            // Tapes are drawn up front from the master generator; the
            // parallel map below then has no randomness of its own, and the
            // reduction runs in tape order.
            let tapes: Vec<(SsaTape, DiTape)> = (0..cfg.ssa_samples_s)
                .map(|_| {
                    (
                        SsaTape::draw(dim, cfg.ssa_sigma, cfg.ssa_rho, &mut rng),
                        DiTape::draw(canvas_side, cfg.di_prob, &mut rng),
                    )
                })
                .collect();

            let samples: Vec<Result<Array3<f64>, AttackError>> = tapes
                .par_iter()
                .map(|(ssa, di)| {
                    let aug = ssa.apply(&x.view())?;
                    let diversified = di.apply(&aug.view(), background)?;
                    let (_, g_div) = enc.cosine_grad(&diversified.view(), target)?;
                    if g_div.iter().any(|v| !v.is_finite()) {
                        return Err(AttackError::NonFiniteGradient {
                            encoder: enc.name.clone(),
                            step,
                        });
                    }
                    let g_aug = di.vjp(&g_div.view(), dim)?;
                    ssa.vjp(&g_aug.view())
                })
                .collect();

            let mut grad = Array3::<f64>::zeros(dim);
            for s in samples {
                grad += &s?;
            }
            grad /= cfg.ssa_samples_s as f64;

            if grad.iter().any(|v| !v.is_finite()) {
                return Err(AttackError::NonFiniteGradient {
                    encoder: enc.name.clone(),
                    step,
                });
            }

            // Momentum with L1-mean gradient normalization; a zero gradient
            // only decays the buffer.
            let denom = grad.iter().map(|v| v.abs()).sum::<f64>() / grad.len() as f64;
            if denom > 0.0 {
                momentum = &momentum * cfg.momentum_mu + &(&grad / denom);
            } else {
                momentum *= cfg.momentum_mu;
            }

            let stepped = &x + &momentum.mapv(sign).mapv(|s| s * cfg.alpha_inner);
            x = project_linf(&stepped.view(), &x0.view(), cfg.epsilon)?;
        }

        x = match cfg.outer_rule {
            OuterRule::SignedStep => {
                let moved = &anchor + &(&x - &anchor).mapv(|d| cfg.alpha_outer * sign(d));
                project_linf(&moved.view(), &x0.view(), cfg.epsilon)?
            }
            OuterRule::ScaledDifference => {
                let scale = cfg.alpha_outer / cfg.alpha_inner / k as f64;
                let moved = &anchor + &(&x - &anchor).mapv(|d| scale * d);
                project_linf(&moved.view(), &x0.view(), cfg.epsilon)?
            }
        };

        let (mean, per) = clean_similarities(&x.view(), targets)?;
        similarity_trace.push(mean);
        per_encoder_trace.push(per);
        linf_trace.push(linf_distance(&x.view(), &x0.view()));
    }

    let delta_linf = linf_distance(&x.view(), &x0.view());
    let final_similarity = similarity_trace.last().copied().unwrap_or(initial_similarity);
    let adversarial_image = TypoImage::from_clamped(x, rgb.provenance.clone());

    Ok(AttackResult {
        adversarial_image,
        delta_linf,
        similarity_trace,
        per_encoder_trace,
        linf_trace,
        initial_similarity,
        final_similarity,
        config_hash: json_content_hash(cfg).map_err(|e| AttackError::Io(e.to_string()))?,
        seed: cfg.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// 8-bit budget in quantized levels for a given epsilon.
pub fn budget_8bit(epsilon: f64) -> u8 {
    (epsilon * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Saves the adversarial image as an 8-bit PNG whose quantized pixels are
/// clamped into the original's quantized budget, so re-loading always
/// verifies. Returns the achieved 8-bit distance.
pub fn export_adversarial_png(
    adv: &TypoImage,
    original: &TypoImage,
    epsilon: f64,
    path: &Path,
) -> Result<u8, AttackError> {
    let adv_rgb = adv.to_rgb();
    let orig_rgb = original.to_rgb();
    if adv_rgb.pixels().dim() != orig_rgb.pixels().dim() {
        return Err(AttackError::ShapeMismatch);
    }
    let budget = i16::from(budget_8bit(epsilon));
    let (c, h, w) = adv_rgb.pixels().dim();
    let mut buf = Vec::with_capacity(c * h * w);
    let mut achieved: i16 = 0;
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let q0 = (orig_rgb.pixels()[(ch, y, x)].clamp(0.0, 1.0) * 255.0).round() as i16;
                let q = (adv_rgb.pixels()[(ch, y, x)].clamp(0.0, 1.0) * 255.0).round() as i16;
                let clamped = q.clamp(q0 - budget, q0 + budget).clamp(0, 255);
                achieved = achieved.max((clamped - q0).abs());
                buf.push(clamped as u8);
            }
        }
    }
    image::save_buffer(path, &buf, w as u32, h as u32, image::ColorType::Rgb8)
        .map_err(|e| AttackError::Io(e.to_string()))?;
    Ok(achieved as u8)
}

/// Re-loads an exported adversarial PNG and its original and confirms the
/// 8-bit budget held. Returns the measured 8-bit distance.
pub fn verify_8bit_budget(
    adv_path: &Path,
    original_path: &Path,
    epsilon: f64,
) -> Result<u8, AttackError> {
    let io = |e: image::ImageError| AttackError::Io(e.to_string());
    let adv = image::open(adv_path).map_err(io)?.to_rgb8();
    let orig = image::open(original_path).map_err(io)?.to_rgb8();
    if adv.dimensions() != orig.dimensions() {
        return Err(AttackError::ShapeMismatch);
    }
    let mut linf: i16 = 0;
    for (a, o) in adv.pixels().zip(orig.pixels()) {
        for ch in 0..3 {
            linf = linf.max((i16::from(a.0[ch]) - i16::from(o.0[ch])).abs());
        }
    }
    let budget = i16::from(budget_8bit(epsilon));
    if linf > budget {
        return Err(AttackError::BudgetExceeded {
            linf_8bit: linf as u8,
            budget_8bit: budget as u8,
        });
    }
    Ok(linf as u8)
}
