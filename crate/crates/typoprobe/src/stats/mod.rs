//! Pearson correlation between embedding distance and attack success rate,
//! with exact two-sided p-values and the condition-level aggregation that
//! feeds the study tables. Everything here is a pure function.

pub mod special;

pub use special::{inc_beta, ln_gamma, student_t_cdf, student_t_two_sided};

use crate::encoders::DistanceRecord;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("input lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {needed} points, got {n}")]
    TooFewPoints { n: usize, needed: usize },
    #[error("{axis} values have zero variance; correlation undefined")]
    ZeroVariance { axis: &'static str },
    #[error("inputs contain non-finite values")]
    NonFinite,
    #[error("points mix groupings: {0}")]
    MixedGrouping(String),
}

/// Which study axis a correlation runs over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    FontSizes,
    Transforms,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Axis::FontSizes => "font_sizes",
            Axis::Transforms => "transforms",
        })
    }
}

/// One aggregated rendering condition: mean embedding distance for one
/// encoder, attack success rate against one target model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionPoint {
    pub condition_tag: String,
    pub encoder_name: String,
    pub target_model: String,
    pub mean_l2_distance: f64,
    pub asr_percent: f64,
    pub n_prompts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub encoder_name: String,
    pub target_model: String,
    pub axis: Axis,
    pub r: f64,
    pub p_two_sided: f64,
    pub n_points: usize,
}

/// Product-moment correlation with a two-sided p-value from the exact
/// Student-t null distribution (df = n - 2).
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    let n = xs.len();
    if n < 3 {
        return Err(StatsError::TooFewPoints { n, needed: 3 });
    }
    if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(StatsError::ZeroVariance { axis: "x" });
    }
    if syy == 0.0 {
        return Err(StatsError::ZeroVariance { axis: "y" });
    }
    let mut r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    // Exactly affine inputs land a few ulps shy of +-1; snap so perfect
    // (anti)correlation reports r = +-1 and p = 0. Real data never gets
    // this close.
    if r.abs() > 1.0 - 1e-12 {
        r = r.signum();
    }
    Ok((r, pearson_p_two_sided(r, n)))
}

/// Two-sided p for a given r and sample size. Exposed separately so table
/// values can be checked without reconstructing the underlying samples.
pub fn pearson_p_two_sided(r: f64, n: usize) -> f64 {
    debug_assert!(n >= 3 && r.abs() <= 1.0);
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return 0.0;
    }
    let t = r * (df / denom).sqrt();
    special::student_t_two_sided(t, df)
}

/// Correlates mean distance against ASR across the given condition points.
/// All points must share encoder and target model; order is irrelevant.
pub fn correlate_conditions(
    points: &[ConditionPoint],
    axis: Axis,
) -> Result<CorrelationReport, StatsError> {
    if points.len() < 3 {
        return Err(StatsError::TooFewPoints {
            n: points.len(),
            needed: 3,
        });
    }
    let encoder_name = &points[0].encoder_name;
    let target_model = &points[0].target_model;
    for p in points {
        if &p.encoder_name != encoder_name || &p.target_model != target_model {
            return Err(StatsError::MixedGrouping(format!(
                "expected ({encoder_name}, {target_model}), found ({}, {})",
                p.encoder_name, p.target_model
            )));
        }
    }
    let xs: Vec<f64> = points.iter().map(|p| p.mean_l2_distance).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.asr_percent).collect();
    let (r, p_two_sided) = pearson(&xs, &ys)?;
    Ok(CorrelationReport {
        encoder_name: encoder_name.clone(),
        target_model: target_model.clone(),
        axis,
        r,
        p_two_sided,
        n_points: points.len(),
    })
}

/// One judged attack outcome against the target model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub prompt_id: String,
    pub condition_tag: String,
    pub success: bool,
}

/// Aggregation output: condition rows plus warnings for anything dropped.
#[derive(Debug, Clone, Default)]
pub struct ConditionTable {
    pub points: Vec<ConditionPoint>,
    pub warnings: Vec<String>,
}

/// Joins per-prompt distances with judged outcomes on condition tags and
/// emits one row per (encoder, condition). Conditions present in only one
/// source are dropped with a warning; rows come out sorted by encoder then
/// condition, so input order never matters.
pub fn build_condition_table(
    distances: &[DistanceRecord],
    outcomes: &[EvalOutcome],
    target_model: &str,
) -> ConditionTable {
    let mut table = ConditionTable::default();

    // (encoder, condition) -> distance samples.
    let mut dist_groups: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for rec in distances {
        if !rec.l2_distance.is_finite() || rec.l2_distance < 0.0 {
            table.warnings.push(format!(
                "dropped distance for prompt `{}` under `{}`: invalid value {}",
                rec.prompt_id, rec.condition_tag, rec.l2_distance
            ));
            continue;
        }
        dist_groups
            .entry((rec.encoder_name.clone(), rec.condition_tag.clone()))
            .or_default()
            .push(rec.l2_distance);
    }

    // condition -> (successes, prompt set).
    let mut eval_groups: BTreeMap<String, (usize, BTreeSet<String>)> = BTreeMap::new();
    for out in outcomes {
        let entry = eval_groups.entry(out.condition_tag.clone()).or_default();
        entry.0 += usize::from(out.success);
        entry.1.insert(out.prompt_id.clone());
    }

    let eval_conditions: BTreeSet<&String> = eval_groups.keys().collect();
    let dist_conditions: BTreeSet<&String> = dist_groups.keys().map(|(_, c)| c).collect();
    for missing in eval_conditions.difference(&dist_conditions) {
        table
            .warnings
            .push(format!("condition `{missing}` has judged outcomes but no distances; row omitted"));
    }

    for ((encoder_name, condition_tag), samples) in &dist_groups {
        let Some((successes, prompts)) = eval_groups.get(condition_tag) else {
            table.warnings.push(format!(
                "condition `{condition_tag}` has distances for `{encoder_name}` but no judged outcomes; row omitted"
            ));
            continue;
        };
        let judged = outcomes
            .iter()
            .filter(|o| &o.condition_tag == condition_tag)
            .count();
        table.points.push(ConditionPoint {
            condition_tag: condition_tag.clone(),
            encoder_name: encoder_name.clone(),
            target_model: target_model.to_string(),
            mean_l2_distance: samples.iter().sum::<f64>() / samples.len() as f64,
            asr_percent: 100.0 * *successes as f64 / judged as f64,
            n_prompts: prompts.len(),
        });
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // The four published (distance, ASR) points for the strongest target
    // model across font sizes 20/12/8/6 px.
    const FOUR_POINTS: [(f64, f64); 4] = [(1.265, 0.3), (1.242, 3.5), (1.192, 6.4), (1.115, 7.7)];

    fn four_condition_points() -> Vec<ConditionPoint> {
        FOUR_POINTS
            .iter()
            .enumerate()
            .map(|(i, &(d, a))| ConditionPoint {
                condition_tag: format!("font-{i}"),
                encoder_name: "jinaclip-v2".into(),
                target_model: "gpt-4o".into(),
                mean_l2_distance: d,
                asr_percent: a,
                n_prompts: 100,
            })
            .collect()
    }

    #[test]
    fn p_values_match_frozen_references() {
        // Frozen from an independent scientific-python evaluation of the
        // same t-statistic mapping.
        let cases = [
            (-0.795, 12, 0.001997883189),
            (-0.717, 10, 0.01961067668),
            (-0.899, 12, 6.97128543e-5),
            (-0.628, 10, 0.05187057958),
            (-0.725, 12, 0.007634344206),
        ];
        for (r, n, expect) in cases {
            let p = pearson_p_two_sided(r, n);
            assert!((p - expect).abs() < 1e-9, "p({r},{n}) = {p}, want {expect}");
        }
    }

    #[test]
    fn four_point_column_reproduces_published_correlation() {
        let xs: Vec<f64> = FOUR_POINTS.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = FOUR_POINTS.iter().map(|p| p.1).collect();
        let (r, p) = pearson(&xs, &ys).unwrap();
        assert!((r - -0.9180505823).abs() < 1e-9, "r = {r}");
        assert!((p - 0.08194941775).abs() < 1e-9, "p = {p}");
    }

    #[test]
    fn perfect_anticorrelation_is_exact() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| -2.0 * x + 3.0).collect();
        let (r, p) = pearson(&xs, &ys).unwrap();
        assert_eq!(r, -1.0);
        assert_eq!(p, 0.0);
    }

    #[test]
    fn matches_raw_moment_reference_on_random_instances() {
        // Independent reference: the raw-moment formula
        // r = (n sum{xy} - sum{x} sum{y}) / sqrt((n sum{xx} - sum{x}^2)(n sum{yy} - sum{y}^2))
        // and p via the t CDF rather than the direct tail call.
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..1000 {
            let n = rng.gen_range(3..=50);
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let (r, p) = pearson(&xs, &ys).unwrap();

            let nf = n as f64;
            let (sx, sy): (f64, f64) = (xs.iter().sum(), ys.iter().sum());
            let sxx: f64 = xs.iter().map(|x| x * x).sum();
            let syy: f64 = ys.iter().map(|y| y * y).sum();
            let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
            let r_ref = (nf * sxy - sx * sy)
                / ((nf * sxx - sx * sx).sqrt() * (nf * syy - sy * sy).sqrt());
            assert!((r - r_ref).abs() < 1e-9, "trial {trial}: {r} vs {r_ref}");

            let df = nf - 2.0;
            let t = r_ref * (df / (1.0 - r_ref * r_ref)).sqrt();
            let p_ref = 2.0 * (1.0 - student_t_cdf(t.abs(), df));
            assert!((p - p_ref).abs() < 1e-6, "trial {trial}: {p} vs {p_ref}");
        }
    }

    #[test]
    fn p_is_monotone_in_effect_size_and_sample_size() {
        let mut prev = 1.0;
        for i in 1..=18 {
            let p = pearson_p_two_sided(0.05 * i as f64, 12);
            assert!(p < prev, "|r| up must push p down");
            prev = p;
        }
        let mut prev = 1.0;
        for n in 4..=30 {
            let p = pearson_p_two_sided(0.5, n);
            assert!(p < prev, "n up must push p down");
            prev = p;
        }
    }

    #[test]
    fn affine_rescaling_only_touches_the_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
        let ys: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (r0, p0) = pearson(&xs, &ys).unwrap();
        for (a, c) in [(2.0, 3.0), (-1.5, 4.0), (0.5, -2.0), (-3.0, -0.25)] {
            let xs2: Vec<f64> = xs.iter().map(|x| a * x + 7.0).collect();
            let ys2: Vec<f64> = ys.iter().map(|y| c * y - 1.0).collect();
            let (r1, p1) = pearson(&xs2, &ys2).unwrap();
            let want = if a * c < 0.0 { -r0 } else { r0 };
            assert!((r1 - want).abs() < 1e-12);
            assert!((p1 - p0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::LengthMismatch { .. })
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0, 2.0]),
            Err(StatsError::TooFewPoints { .. })
        ));
        assert!(matches!(
            pearson(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::ZeroVariance { axis: "x" })
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]),
            Err(StatsError::ZeroVariance { axis: "y" })
        ));
        assert!(matches!(
            pearson(&[1.0, f64::NAN, 3.0], &[1.0, 2.0, 3.0]),
            Err(StatsError::NonFinite)
        ));
    }

    #[test]
    fn condition_correlation_reproduces_the_four_point_column() {
        let report = correlate_conditions(&four_condition_points(), Axis::FontSizes).unwrap();
        assert!((report.r - -0.9180505823).abs() < 1e-9);
        assert_eq!(report.n_points, 4);
        assert_eq!(report.encoder_name, "jinaclip-v2");
        assert_eq!(report.axis, Axis::FontSizes);
    }

    #[test]
    fn condition_correlation_is_permutation_invariant() {
        let points = four_condition_points();
        let a = correlate_conditions(&points, Axis::FontSizes).unwrap();
        let mut reversed = points.clone();
        reversed.reverse();
        let b = correlate_conditions(&reversed, Axis::FontSizes).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixed_groupings_are_rejected() {
        let mut points = four_condition_points();
        points[2].encoder_name = "other-encoder".into();
        assert!(matches!(
            correlate_conditions(&points, Axis::FontSizes),
            Err(StatsError::MixedGrouping(_))
        ));
    }

    fn dist(prompt: &str, cond: &str, enc: &str, d: f64) -> DistanceRecord {
        DistanceRecord {
            prompt_id: prompt.into(),
            condition_tag: cond.into(),
            encoder_name: enc.into(),
            l2_distance: d,
            cosine: 1.0 - d * d / 2.0,
        }
    }

    fn outcome(prompt: &str, cond: &str, success: bool) -> EvalOutcome {
        EvalOutcome {
            prompt_id: prompt.into(),
            condition_tag: cond.into(),
            success,
        }
    }

    #[test]
    fn table_means_match_hand_computation() {
        // 3 prompts x 2 conditions; means computed by hand.
        let distances = vec![
            dist("p1", "font-6px", "e", 1.0),
            dist("p2", "font-6px", "e", 1.3),
            dist("p3", "font-6px", "e", 1.6),
            dist("p1", "font-20px", "e", 0.4),
            dist("p2", "font-20px", "e", 0.5),
            dist("p3", "font-20px", "e", 0.9),
        ];
        let outcomes = vec![
            outcome("p1", "font-6px", true),
            outcome("p2", "font-6px", false),
            outcome("p3", "font-6px", true),
            outcome("p1", "font-20px", false),
            outcome("p2", "font-20px", false),
            outcome("p3", "font-20px", true),
        ];
        let table = build_condition_table(&distances, &outcomes, "gpt-4o");
        assert!(table.warnings.is_empty());
        assert_eq!(table.points.len(), 2);
        // BTreeMap ordering: "font-20px" < "font-6px" lexicographically.
        let twenty = &table.points[0];
        assert_eq!(twenty.condition_tag, "font-20px");
        assert!((twenty.mean_l2_distance - 0.6).abs() < 1e-12);
        assert!((twenty.asr_percent - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(twenty.n_prompts, 3);
        let six = &table.points[1];
        assert!((six.mean_l2_distance - 1.3).abs() < 1e-12);
        assert!((six.asr_percent - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_prompt_condition_passes_through() {
        let table = build_condition_table(
            &[dist("p1", "c", "e", 0.77)],
            &[outcome("p1", "c", true)],
            "m",
        );
        assert_eq!(table.points.len(), 1);
        assert_eq!(table.points[0].mean_l2_distance, 0.77);
        assert_eq!(table.points[0].asr_percent, 100.0);
        assert_eq!(table.points[0].n_prompts, 1);
    }

    #[test]
    fn one_sided_conditions_are_omitted_with_warnings() {
        let table = build_condition_table(
            &[
                dist("p1", "both", "e", 1.0),
                dist("p1", "dist-only", "e", 2.0),
            ],
            &[outcome("p1", "both", true), outcome("p1", "eval-only", false)],
            "m",
        );
        assert_eq!(table.points.len(), 1);
        assert_eq!(table.points[0].condition_tag, "both");
        assert_eq!(table.warnings.len(), 2);
        assert!(table.warnings.iter().any(|w| w.contains("eval-only")));
        assert!(table.warnings.iter().any(|w| w.contains("dist-only")));
    }

    #[test]
    fn invalid_distances_are_dropped_with_warnings() {
        let table = build_condition_table(
            &[dist("p1", "c", "e", f64::NAN), dist("p2", "c", "e", 1.0)],
            &[outcome("p1", "c", true), outcome("p2", "c", false)],
            "m",
        );
        assert_eq!(table.points.len(), 1);
        assert_eq!(table.points[0].mean_l2_distance, 1.0);
        assert_eq!(table.warnings.len(), 1);
    }

    #[test]
    fn table_groups_multiple_encoders_separately() {
        let table = build_condition_table(
            &[
                dist("p1", "c", "enc-a", 1.0),
                dist("p1", "c", "enc-b", 2.0),
            ],
            &[outcome("p1", "c", true)],
            "m",
        );
        assert_eq!(table.points.len(), 2);
        assert_eq!(table.points[0].encoder_name, "enc-a");
        assert_eq!(table.points[1].encoder_name, "enc-b");
        assert_eq!(table.points[0].mean_l2_distance, 1.0);
        assert_eq!(table.points[1].mean_l2_distance, 2.0);
    }
}
