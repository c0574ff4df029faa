//! Report emission: the condition table (per-condition mean distance and
//! ASR), the distance-ASR correlation table, and the before/after attack
//! table, each as aligned text plus CSV, with distance-vs-ASR scatter plots
//! as standalone SVGs. Every number is recomputed from ledger rows at call
//! time; nothing is read back from earlier reports.

use crate::encoders::DistanceRecord;
use crate::evalsuite::{compute_asr, EvalRecord};
use crate::stats::{
    build_condition_table, correlate_conditions, Axis, ConditionPoint, CorrelationReport,
    EvalOutcome, StatsError,
};
use crate::store::{LedgerRow, RowPayload};
use crate::textimage::TransformKind;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("report i/o at {}: {reason}", path.display())]
    Io { path: PathBuf, reason: String },
}

/// Condition tag of the adversarial counterpart of `condition`.
pub fn adversarial_tag(condition: &str) -> String {
    format!("{condition}+adv")
}

/// Tag for the un-rendered raw-text condition.
pub const TEXT_CONDITION: &str = "text";

/// Which correlation axis a condition tag belongs to, if any.
pub fn axis_of(tag: &str) -> Option<Axis> {
    if tag == TEXT_CONDITION || tag.ends_with("+adv") {
        return None;
    }
    if tag.strip_suffix("px").is_some_and(|n| n.parse::<u32>().is_ok()) {
        return Some(Axis::FontSizes);
    }
    if tag.parse::<TransformKind>().is_ok() {
        return Some(Axis::Transforms);
    }
    None
}

/// Sort key giving the study's presentation order: font sizes ascending,
/// the raw-text row, transforms, then adversarial conditions.
fn condition_order(tag: &str) -> (u8, u32, String) {
    if let Some(px) = tag.strip_suffix("px").and_then(|n| n.parse::<u32>().ok()) {
        return (0, px, tag.to_string());
    }
    if tag == TEXT_CONDITION {
        return (1, 0, tag.to_string());
    }
    if tag.ends_with("+adv") {
        return (3, 0, tag.to_string());
    }
    (2, 0, tag.to_string())
}

/// One table cell. `P` renders as a study-style p-value in text output but
/// as the raw float in CSV.
#[derive(Debug, Clone, PartialEq)]
enum Cell {
    Text(String),
    Num(f64),
    P(f64),
    Missing,
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<.001".into()
    } else {
        let s = format!("{p:.3}");
        match s.strip_prefix('0') {
            Some(rest) if rest.starts_with('.') => rest.to_string(),
            _ => s,
        }
    }
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// A small numeric table rendered two ways: aligned monospace text for
/// humans, full-precision CSV for machines.
#[derive(Debug, Clone, Default)]
struct NumTable {
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl NumTable {
    fn text_cell(cell: &Cell) -> String {
        match cell {
            Cell::Text(s) => s.clone(),
            Cell::Num(v) => format!("{v:.3}"),
            Cell::P(p) => fmt_p(*p),
            Cell::Missing => "--".into(),
        }
    }

    fn csv_cell(cell: &Cell) -> String {
        match cell {
            Cell::Text(s) => csv_escape(s),
            Cell::Num(v) => format!("{v}"),
            Cell::P(p) => format!("{p}"),
            Cell::Missing => String::new(),
        }
    }

    fn aligned(&self, title: &str) -> String {
        let rendered: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(Self::text_cell).collect())
            .collect();
        let mut widths: Vec<usize> = self.header.iter().map(|h| h.chars().count()).collect();
        for row in &rendered {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let _ = writeln!(out, "{title}");
        let line = |cells: &[String], out: &mut String| {
            let mut parts = Vec::with_capacity(cells.len());
            for (i, cell) in cells.iter().enumerate() {
                // First column left-aligned, the rest right-aligned.
                if i == 0 {
                    parts.push(format!("{cell:<width$}", width = widths[i]));
                } else {
                    parts.push(format!("{cell:>width$}", width = widths[i]));
                }
            }
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&self.header, &mut out);
        let _ = writeln!(
            out,
            "{}",
            widths
                .iter()
                .map(|w| "-".repeat(*w))
                .collect::<Vec<_>>()
                .join("  ")
        );
        for row in &rendered {
            line(row, &mut out);
        }
        out
    }

    fn csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{}",
            self.header
                .iter()
                .map(|h| csv_escape(h))
                .collect::<Vec<_>>()
                .join(",")
        );
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{}",
                row.iter().map(Self::csv_cell).collect::<Vec<_>>().join(",")
            );
        }
        out
    }
}

/// Ledger rows split into the typed record sets reports work from. Only
/// judged eval rows are kept; the number of ignored un-judged rows is
/// returned so callers can surface the gap.
pub struct SplitRows {
    pub distances: Vec<DistanceRecord>,
    pub evals: Vec<EvalRecord>,
    pub unjudged: usize,
}

pub fn split_rows(rows: &[LedgerRow]) -> SplitRows {
    let mut out = SplitRows {
        distances: Vec::new(),
        evals: Vec::new(),
        unjudged: 0,
    };
    for row in rows {
        match &row.payload {
            RowPayload::Distance(d) => out.distances.push(d.clone()),
            RowPayload::Eval(e) => {
                if e.verdict.is_some() {
                    out.evals.push(e.clone());
                } else {
                    out.unjudged += 1;
                }
            }
            _ => {}
        }
    }
    out
}

fn distinct_encoders(distances: &[DistanceRecord]) -> Vec<String> {
    distances
        .iter()
        .map(|d| d.encoder_name.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn distinct_models(evals: &[EvalRecord]) -> Vec<String> {
    evals
        .iter()
        .map(|e| e.target_model.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn outcomes_for(evals: &[EvalRecord], model: &str) -> Vec<EvalOutcome> {
    evals
        .iter()
        .filter(|e| e.target_model == model)
        .map(|e| EvalOutcome {
            prompt_id: e.prompt_id.clone(),
            condition_tag: e.condition_tag.clone(),
            success: e.is_success(),
        })
        .collect()
}

/// Condition rows: mean distance per encoder plus ASR per target model.
fn condition_table(distances: &[DistanceRecord], evals: &[EvalRecord]) -> NumTable {
    let encoders = distinct_encoders(distances);
    let models = distinct_models(evals);

    let mut mean_dist: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for d in distances {
        if d.l2_distance.is_finite() && d.l2_distance >= 0.0 {
            let cell = mean_dist
                .entry((d.encoder_name.clone(), d.condition_tag.clone()))
                .or_insert((0.0, 0));
            cell.0 += d.l2_distance;
            cell.1 += 1;
        }
    }
    let asr = compute_asr(evals).expect("split_rows keeps judged rows only");

    let mut conditions: BTreeSet<String> = distances
        .iter()
        .map(|d| d.condition_tag.clone())
        .collect();
    conditions.extend(evals.iter().map(|e| e.condition_tag.clone()));
    let mut ordered: Vec<String> = conditions.into_iter().collect();
    ordered.sort_by_key(|tag| condition_order(tag));

    let mut table = NumTable::default();
    table.header.push("condition".into());
    table
        .header
        .extend(encoders.iter().map(|e| format!("d({e})")));
    table
        .header
        .extend(models.iter().map(|m| format!("asr%({m})")));
    table.header.push("n".into());

    for tag in ordered {
        let mut row = vec![Cell::Text(tag.clone())];
        for enc in &encoders {
            row.push(
                mean_dist
                    .get(&(enc.clone(), tag.clone()))
                    .map(|(sum, n)| Cell::Num(sum / *n as f64))
                    .unwrap_or(Cell::Missing),
            );
        }
        let mut n_judged = 0usize;
        for model in &models {
            match asr.get(&(tag.clone(), model.clone())) {
                Some(cell) => {
                    row.push(Cell::Num(cell.percent()));
                    n_judged = n_judged.max(cell.judged);
                }
                None => row.push(Cell::Missing),
            }
        }
        row.push(Cell::Text(n_judged.to_string()));
        table.rows.push(row);
    }
    table
}

/// All computable distance-ASR correlations plus notes for the pairs that
/// were not computable (too few conditions, constant values, ...).
pub struct CorrelationSet {
    pub reports: Vec<CorrelationReport>,
    pub gaps: Vec<String>,
}

pub fn correlation_reports(distances: &[DistanceRecord], evals: &[EvalRecord]) -> CorrelationSet {
    let mut set = CorrelationSet {
        reports: Vec::new(),
        gaps: Vec::new(),
    };
    for model in distinct_models(evals) {
        let outcomes = outcomes_for(evals, &model);
        let table = build_condition_table(distances, &outcomes, &model);
        let mut by_encoder: BTreeMap<String, Vec<ConditionPoint>> = BTreeMap::new();
        for point in table.points {
            if axis_of(&point.condition_tag).is_some() {
                by_encoder
                    .entry(point.encoder_name.clone())
                    .or_default()
                    .push(point);
            }
        }
        for (encoder, points) in by_encoder {
            for axis in [Axis::FontSizes, Axis::Transforms] {
                let axis_points: Vec<ConditionPoint> = points
                    .iter()
                    .filter(|p| axis_of(&p.condition_tag) == Some(axis))
                    .cloned()
                    .collect();
                match correlate_conditions(&axis_points, axis) {
                    Ok(report) => set.reports.push(report),
                    Err(StatsError::TooFewPoints { n, .. }) if n == 0 => {}
                    Err(e) => set
                        .gaps
                        .push(format!("{encoder} / {model} over {axis}: {e}")),
                }
            }
        }
    }
    set
}

/// The correlation table rendered both ways, without touching disk:
/// `(aligned text, csv)`.
pub fn correlation_files(set: &CorrelationSet) -> (String, String) {
    let table = correlation_table(set);
    (table.aligned("Distance-ASR correlations"), table.csv())
}

fn correlation_table(set: &CorrelationSet) -> NumTable {
    let pairs: BTreeSet<(String, String)> = set
        .reports
        .iter()
        .map(|r| (r.encoder_name.clone(), r.target_model.clone()))
        .collect();
    let mut table = NumTable::default();
    table.header = vec![
        "encoder / model".into(),
        "r(sizes)".into(),
        "p(sizes)".into(),
        "n".into(),
        "r(transforms)".into(),
        "p(transforms)".into(),
        "n".into(),
    ];
    for (encoder, model) in pairs {
        let mut row = vec![Cell::Text(format!("{encoder} / {model}"))];
        for axis in [Axis::FontSizes, Axis::Transforms] {
            match set
                .reports
                .iter()
                .find(|r| r.encoder_name == encoder && r.target_model == model && r.axis == axis)
            {
                Some(r) => {
                    row.push(Cell::Num(r.r));
                    row.push(Cell::P(r.p_two_sided));
                    row.push(Cell::Text(r.n_points.to_string()));
                }
                None => row.extend([Cell::Missing, Cell::Missing, Cell::Missing]),
            }
        }
        table.rows.push(row);
    }
    table
}

/// Before/after rows for every condition that has a judged adversarial
/// counterpart. Returns None when no condition pairs exist.
fn before_after_table(evals: &[EvalRecord]) -> Option<NumTable> {
    let asr = compute_asr(evals).expect("split_rows keeps judged rows only");
    let models = distinct_models(evals);
    let conditions: BTreeSet<String> = evals.iter().map(|e| e.condition_tag.clone()).collect();
    let mut paired: Vec<String> = conditions
        .iter()
        .filter(|c| !c.ends_with("+adv") && conditions.contains(&adversarial_tag(c)))
        .cloned()
        .collect();
    paired.sort_by_key(|tag| condition_order(tag));
    if paired.is_empty() {
        return None;
    }

    let mut table = NumTable::default();
    table.header.push("setting".into());
    table
        .header
        .extend(models.iter().map(|m| format!("asr%({m})")));
    table.header.push("best_delta".into());

    for cond in paired {
        let adv = adversarial_tag(&cond);
        let mut before_row = vec![Cell::Text(format!("{cond} B"))];
        let mut after_row = vec![Cell::Text(format!("{cond} A"))];
        let mut best_delta: Option<f64> = None;
        for model in &models {
            let b = asr.get(&(cond.clone(), model.clone())).map(|c| c.percent());
            let a = asr.get(&(adv.clone(), model.clone())).map(|c| c.percent());
            if let (Some(b), Some(a)) = (b, a) {
                let delta = a - b;
                best_delta = Some(best_delta.map_or(delta, |d: f64| d.max(delta)));
            }
            before_row.push(b.map(Cell::Num).unwrap_or(Cell::Missing));
            after_row.push(a.map(Cell::Num).unwrap_or(Cell::Missing));
        }
        before_row.push(Cell::Missing);
        after_row.push(match best_delta {
            Some(d) => Cell::Text(format!("{}{:.1}%", if d >= 0.0 { "+" } else { "" }, d)),
            None => Cell::Missing,
        });
        table.rows.push(before_row);
        table.rows.push(after_row);
    }
    Some(table)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Distance-vs-ASR scatter for one encoder and axis, one color per target
/// model, with a least-squares trend line per model where defined.
pub fn scatter_svg(points: &[ConditionPoint], axis: Axis, encoder: &str) -> String {
    let (w, h) = (640.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 190.0, 50.0, 60.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);

    let xs: Vec<f64> = points.iter().map(|p| p.mean_l2_distance).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.asr_percent).collect();
    let (xmin, xmax) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = (xmax - xmin).max(1e-9);
    let (xmin, xmax) = (xmin - 0.05 * span, xmax + 0.05 * span);
    let ymax = ys.iter().fold(5.0f64, |m, &v| m.max(v)) * 1.05;

    let sx = |x: f64| ml + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| mt + ph - (y / ymax) * ph;

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"monospace\" font-size=\"12\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"15\">{} vs ASR ({})</text>\n",
        ml,
        xml_escape(encoder),
        axis
    );
    // Axes and ticks.
    let _ = write!(
        svg,
        "<line x1=\"{ml}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{0}\" stroke=\"black\"/>\n",
        mt + ph,
        ml + pw
    );
    for i in 0..=4 {
        let fx = xmin + (xmax - xmin) * i as f64 / 4.0;
        let fy = ymax * i as f64 / 4.0;
        let (px, py) = (sx(fx), sy(fy));
        let _ = write!(
            svg,
            "<line x1=\"{px}\" y1=\"{0}\" x2=\"{px}\" y2=\"{1}\" stroke=\"black\"/>\n\
             <text x=\"{px}\" y=\"{2}\" text-anchor=\"middle\">{fx:.3}</text>\n\
             <line x1=\"{3}\" y1=\"{py}\" x2=\"{ml}\" y2=\"{py}\" stroke=\"black\"/>\n\
             <text x=\"{4}\" y=\"{5}\" text-anchor=\"end\">{fy:.0}</text>\n",
            mt + ph,
            mt + ph + 5.0,
            mt + ph + 20.0,
            ml - 5.0,
            ml - 9.0,
            py + 4.0
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">mean L2 distance</text>\n\
         <text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {2})\" text-anchor=\"middle\">ASR %</text>\n",
        ml + pw / 2.0,
        h - 14.0,
        mt + ph / 2.0
    );

    let models: BTreeSet<&str> = points.iter().map(|p| p.target_model.as_str()).collect();
    for (mi, model) in models.iter().enumerate() {
        let color = PALETTE[mi % PALETTE.len()];
        let own: Vec<&ConditionPoint> = points
            .iter()
            .filter(|p| p.target_model == *model)
            .collect();
        // Trend line from the least-squares fit when the x spread allows it.
        let n = own.len() as f64;
        if own.len() >= 2 {
            let mx = own.iter().map(|p| p.mean_l2_distance).sum::<f64>() / n;
            let my = own.iter().map(|p| p.asr_percent).sum::<f64>() / n;
            let sxx: f64 = own
                .iter()
                .map(|p| (p.mean_l2_distance - mx).powi(2))
                .sum();
            let sxy: f64 = own
                .iter()
                .map(|p| (p.mean_l2_distance - mx) * (p.asr_percent - my))
                .sum();
            if sxx > 0.0 {
                let slope = sxy / sxx;
                let at = |x: f64| (my + slope * (x - mx)).clamp(0.0, ymax);
                let _ = write!(
                    svg,
                    "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" \
                     stroke-opacity=\"0.45\" stroke-dasharray=\"5,4\"/>\n",
                    sx(xmin),
                    sy(at(xmin)),
                    sx(xmax),
                    sy(at(xmax))
                );
            }
        }
        for p in &own {
            let _ = write!(
                svg,
                "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"{color}\" fill-opacity=\"0.85\">\
                 <title>{}: d={:.4}, asr={:.1}%</title></circle>\n",
                sx(p.mean_l2_distance),
                sy(p.asr_percent),
                xml_escape(&p.condition_tag),
                p.mean_l2_distance,
                p.asr_percent
            );
        }
        let ly = mt + 14.0 + 18.0 * mi as f64;
        let _ = write!(
            svg,
            "<rect x=\"{0}\" y=\"{1}\" width=\"10\" height=\"10\" fill=\"{color}\"/>\n\
             <text x=\"{2}\" y=\"{3}\">{4}</text>\n",
            ml + pw + 14.0,
            ly - 9.0,
            ml + pw + 30.0,
            ly,
            xml_escape(model)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Default)]
pub struct ReportOutcome {
    pub written: Vec<PathBuf>,
    /// Human-readable notes about everything that could not be emitted.
    pub gaps: Vec<String>,
}

fn write_file(dir: &Path, name: &str, content: &str, out: &mut ReportOutcome) -> Result<(), ReportError> {
    let path = dir.join(name);
    std::fs::write(&path, content).map_err(|e| ReportError::Io {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    out.written.push(path);
    Ok(())
}

/// Emits every table and plot the ledger supports into `reports_dir`,
/// noting explicit gaps for anything the rows cannot produce.
pub fn write_reports(reports_dir: &Path, rows: &[LedgerRow]) -> Result<ReportOutcome, ReportError> {
    std::fs::create_dir_all(reports_dir).map_err(|e| ReportError::Io {
        path: reports_dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut out = ReportOutcome::default();
    let split = split_rows(rows);
    if split.unjudged > 0 {
        out.gaps
            .push(format!("{} un-judged eval rows ignored", split.unjudged));
    }

    if split.distances.is_empty() && split.evals.is_empty() {
        out.gaps
            .push("no distance or eval rows: condition table not emitted".into());
    } else {
        let table = condition_table(&split.distances, &split.evals);
        write_file(reports_dir, "condition_table.txt", &table.aligned("Condition table"), &mut out)?;
        write_file(reports_dir, "condition_table.csv", &table.csv(), &mut out)?;
        if split.distances.is_empty() {
            out.gaps.push("no distance rows: condition table lacks distance columns".into());
        }
        if split.evals.is_empty() {
            out.gaps.push("no judged eval rows: condition table lacks ASR columns".into());
        }
    }

    let set = correlation_reports(&split.distances, &split.evals);
    out.gaps.extend(set.gaps.iter().cloned());
    if set.reports.is_empty() {
        out.gaps
            .push("correlation table not emitted: no computable distance-ASR pairs".into());
    } else {
        let table = correlation_table(&set);
        write_file(
            reports_dir,
            "correlation_table.txt",
            &table.aligned("Distance-ASR correlations"),
            &mut out,
        )?;
        write_file(reports_dir, "correlation_table.csv", &table.csv(), &mut out)?;
    }

    match before_after_table(&split.evals) {
        Some(table) => {
            write_file(
                reports_dir,
                "before_after_table.txt",
                &table.aligned("ASR before (B) and after (A) optimization"),
                &mut out,
            )?;
            write_file(reports_dir, "before_after_table.csv", &table.csv(), &mut out)?;
        }
        None => out
            .gaps
            .push("before/after table not emitted: no adversarial condition pairs".into()),
    }

    // One scatter per (encoder, axis) that has plottable points.
    let mut any_scatter = false;
    for encoder in distinct_encoders(&split.distances) {
        for axis in [Axis::FontSizes, Axis::Transforms] {
            let mut points: Vec<ConditionPoint> = Vec::new();
            for model in distinct_models(&split.evals) {
                let outcomes = outcomes_for(&split.evals, &model);
                let table = build_condition_table(&split.distances, &outcomes, &model);
                points.extend(
                    table
                        .points
                        .into_iter()
                        .filter(|p| p.encoder_name == encoder && axis_of(&p.condition_tag) == Some(axis)),
                );
            }
            if points.is_empty() {
                continue;
            }
            any_scatter = true;
            let svg = scatter_svg(&points, axis, &encoder);
            write_file(reports_dir, &format!("scatter_{encoder}_{axis}.svg"), &svg, &mut out)?;
        }
    }
    if !any_scatter {
        out.gaps.push("no scatter plots: no joined distance/ASR points".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalsuite::Verdict;
    use crate::store::{LedgerRow, RowPayload, LEDGER_SCHEMA_VERSION};

    fn dist(prompt: &str, cond: &str, enc: &str, d: f64) -> LedgerRow {
        LedgerRow {
            v: LEDGER_SCHEMA_VERSION,
            seq: 0,
            experiment_id: "exp-t".into(),
            payload: RowPayload::Distance(DistanceRecord {
                prompt_id: prompt.into(),
                condition_tag: cond.into(),
                encoder_name: enc.into(),
                l2_distance: d,
                cosine: 1.0 - d * d / 2.0,
            }),
        }
    }

    fn eval(prompt: &str, cond: &str, model: &str, verdict: Verdict) -> LedgerRow {
        let text = if verdict == Verdict::Empty { "" } else { "body" };
        LedgerRow {
            v: LEDGER_SCHEMA_VERSION,
            seq: 0,
            experiment_id: "exp-t".into(),
            payload: RowPayload::Eval(
                EvalRecord::unjudged(prompt, cond, model, text)
                    .judged(verdict, "offline-heuristic")
                    .unwrap(),
            ),
        }
    }

    /// Four font-size conditions with monotone distance/ASR per model plus
    /// one transform pair with adversarial counterparts.
    fn study_rows() -> Vec<LedgerRow> {
        let mut rows = Vec::new();
        let sizes = [("6px", 1.27), ("8px", 1.24), ("10px", 1.19), ("20px", 1.11)];
        for (ci, (cond, d)) in sizes.iter().enumerate() {
            for p in 0..4 {
                rows.push(dist(&format!("p{p}"), cond, "fixture-linear-a", d + 0.01 * p as f64));
                rows.push(dist(&format!("p{p}"), cond, "fixture-conv-a", d - 0.02 + 0.01 * p as f64));
                // model-a ASR climbs 25/50/75/100 across sizes; model-b stays lower.
                let a_success = p <= ci;
                let b_success = ci >= 2 && p == 0;
                rows.push(eval(
                    &format!("p{p}"),
                    cond,
                    "model-a",
                    if a_success { Verdict::Success } else { Verdict::Refusal },
                ));
                rows.push(eval(
                    &format!("p{p}"),
                    cond,
                    "model-b",
                    if b_success { Verdict::Success } else { Verdict::ReadabilityFailure },
                ));
            }
        }
        for p in 0..4 {
            rows.push(dist(&format!("p{p}"), "heavy_blur", "fixture-linear-a", 1.25));
            rows.push(eval(
                &format!("p{p}"),
                "heavy_blur",
                "model-a",
                if p == 0 { Verdict::Success } else { Verdict::Refusal },
            ));
            rows.push(eval(
                &format!("p{p}"),
                "heavy_blur+adv",
                "model-a",
                if p <= 1 { Verdict::Success } else { Verdict::Refusal },
            ));
            rows.push(eval(&format!("p{p}"), "text", "model-a", Verdict::Success));
        }
        rows
    }

    #[test]
    fn condition_table_reports_hand_computed_cells() {
        let rows = study_rows();
        let split = split_rows(&rows);
        let table = condition_table(&split.distances, &split.evals);
        assert_eq!(
            table.header,
            vec![
                "condition",
                "d(fixture-conv-a)",
                "d(fixture-linear-a)",
                "asr%(model-a)",
                "asr%(model-b)",
                "n"
            ]
        );
        // Presentation order: sizes ascending, text, transforms, adversarial.
        let conds: Vec<String> = table
            .rows
            .iter()
            .map(|r| match &r[0] {
                Cell::Text(s) => s.clone(),
                _ => unreachable!(),
            })
            .collect();
        assert_eq!(
            conds,
            vec!["6px", "8px", "10px", "20px", "text", "heavy_blur", "heavy_blur+adv"]
        );
        // 6px mean for linear: (1.27+1.28+1.29+1.30)/4 = 1.285.
        assert_eq!(table.rows[0][2], Cell::Num(1.285));
        // 6px model-a ASR: 1 of 4.
        assert_eq!(table.rows[0][3], Cell::Num(25.0));
        // 20px model-a ASR: 4 of 4.
        assert_eq!(table.rows[3][3], Cell::Num(100.0));
        // The text condition has no distances.
        assert_eq!(table.rows[4][1], Cell::Missing);
        assert_eq!(table.rows[4][3], Cell::Num(100.0));
    }

    #[test]
    fn correlation_numbers_match_the_stats_api_exactly() {
        let rows = study_rows();
        let split = split_rows(&rows);
        let set = correlation_reports(&split.distances, &split.evals);
        // Two encoders x two models on the size axis; transforms axis has
        // only one condition so it never correlates.
        assert_eq!(set.reports.len(), 4);
        assert!(set.reports.iter().all(|r| r.axis == Axis::FontSizes));
        assert!(set.reports.iter().all(|r| r.n_points == 4));

        for report in &set.reports {
            let outcomes = outcomes_for(&split.evals, &report.target_model);
            let table = build_condition_table(&split.distances, &outcomes, &report.target_model);
            let points: Vec<ConditionPoint> = table
                .points
                .into_iter()
                .filter(|p| {
                    p.encoder_name == report.encoder_name
                        && axis_of(&p.condition_tag) == Some(Axis::FontSizes)
                })
                .collect();
            let direct = correlate_conditions(&points, Axis::FontSizes).unwrap();
            assert_eq!(report.r, direct.r);
            assert_eq!(report.p_two_sided, direct.p_two_sided);
        }
        // Distance falls as ASR rises for model-a: strongly negative r.
        let a = set
            .reports
            .iter()
            .find(|r| r.encoder_name == "fixture-linear-a" && r.target_model == "model-a")
            .unwrap();
        assert!(a.r < -0.9, "expected strong anticorrelation, got {}", a.r);
    }

    #[test]
    fn csv_cells_carry_full_precision() {
        let rows = study_rows();
        let split = split_rows(&rows);
        let set = correlation_reports(&split.distances, &split.evals);
        let csv = correlation_table(&set).csv();
        let line = csv
            .lines()
            .find(|l| l.starts_with("fixture-linear-a / model-a"))
            .unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        let report = set
            .reports
            .iter()
            .find(|r| r.encoder_name == "fixture-linear-a" && r.target_model == "model-a")
            .unwrap();
        assert_eq!(fields[1].parse::<f64>().unwrap(), report.r);
        assert_eq!(fields[2].parse::<f64>().unwrap(), report.p_two_sided);
        assert_eq!(fields[3], "4");
    }

    #[test]
    fn before_after_rows_pair_adversarial_conditions() {
        let rows = study_rows();
        let split = split_rows(&rows);
        let table = before_after_table(&split.evals).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert_eq!(table.rows[0][0], Cell::Text("heavy_blur B".into()));
        assert_eq!(table.rows[1][0], Cell::Text("heavy_blur A".into()));
        // model-a: before 25%, after 50%.
        assert_eq!(table.rows[0][1], Cell::Num(25.0));
        assert_eq!(table.rows[1][1], Cell::Num(50.0));
        // Best delta +25% lives on the A row.
        assert_eq!(*table.rows[1].last().unwrap(), Cell::Text("+25.0%".into()));
    }

    #[test]
    fn p_values_format_in_study_style() {
        assert_eq!(fmt_p(0.0005), "<.001");
        assert_eq!(fmt_p(0.002), ".002");
        assert_eq!(fmt_p(0.0199999), ".020");
        assert_eq!(fmt_p(0.052), ".052");
        assert_eq!(fmt_p(1.0), "1.000");
    }

    #[test]
    fn csv_escapes_embedded_delimiters() {
        assert_eq!(csv_escape("plain"), "plain");
        assert_eq!(csv_escape("a,b"), "\"a,b\"");
        assert_eq!(csv_escape("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn axis_classification_follows_tag_shape() {
        assert_eq!(axis_of("6px"), Some(Axis::FontSizes));
        assert_eq!(axis_of("28px"), Some(Axis::FontSizes));
        assert_eq!(axis_of("heavy_blur"), Some(Axis::Transforms));
        assert_eq!(axis_of("rotate90"), Some(Axis::Transforms));
        assert_eq!(axis_of("text"), None);
        assert_eq!(axis_of("heavy_blur+adv"), None);
        assert_eq!(axis_of("px"), None);
        assert_eq!(axis_of("mystery"), None);
    }

    #[test]
    fn full_report_writes_tables_and_plots() {
        let dir = tempfile::tempdir().unwrap();
        let out = write_reports(dir.path(), &study_rows()).unwrap();
        let names: Vec<String> = out
            .written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        for expected in [
            "condition_table.txt",
            "condition_table.csv",
            "correlation_table.txt",
            "correlation_table.csv",
            "before_after_table.txt",
            "before_after_table.csv",
            "scatter_fixture-linear-a_font_sizes.svg",
        ] {
            assert!(names.contains(&expected.to_string()), "missing {expected}: {names:?}");
        }
        let svg = std::fs::read_to_string(dir.path().join("scatter_fixture-linear-a_font_sizes.svg"))
            .unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 8, "4 conditions x 2 models");
        assert!(svg.contains("model-a") && svg.contains("model-b"));
    }

    #[test]
    fn distance_only_ledgers_note_the_missing_tables() {
        let dir = tempfile::tempdir().unwrap();
        let rows: Vec<LedgerRow> = (0..3)
            .map(|p| dist(&format!("p{p}"), "6px", "fixture-linear-a", 1.2))
            .collect();
        let out = write_reports(dir.path(), &rows).unwrap();
        let names: Vec<String> = out
            .written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"condition_table.txt".to_string()));
        assert!(!names.iter().any(|n| n.starts_with("correlation")));
        assert!(out.gaps.iter().any(|g| g.contains("correlation table not emitted")));
        assert!(out.gaps.iter().any(|g| g.contains("before/after")));
    }

    #[test]
    fn empty_ledgers_emit_only_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let out = write_reports(dir.path(), &[]).unwrap();
        assert!(out.written.is_empty());
        assert!(out.gaps.len() >= 3);
    }

    #[test]
    fn model_names_are_xml_escaped_in_plots() {
        let points = vec![
            ConditionPoint {
                condition_tag: "6px".into(),
                encoder_name: "e".into(),
                target_model: "a<&b".into(),
                mean_l2_distance: 1.0,
                asr_percent: 10.0,
                n_prompts: 1,
            },
            ConditionPoint {
                condition_tag: "8px".into(),
                encoder_name: "e".into(),
                target_model: "a<&b".into(),
                mean_l2_distance: 1.2,
                asr_percent: 5.0,
                n_prompts: 1,
            },
        ];
        let svg = scatter_svg(&points, Axis::FontSizes, "enc<1>");
        assert!(svg.contains("a&lt;&amp;b"));
        assert!(svg.contains("enc&lt;1&gt;"));
        assert!(!svg.contains("enc<1>"));
    }
}
