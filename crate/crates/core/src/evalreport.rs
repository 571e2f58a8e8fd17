//! Frame-level metrics, repeat aggregation, TSV tables and SVG figures.
//!
//! Frames are pooled over all evaluated sequences before metrics are computed.
//! Macro averages skip classes that occur in neither truth nor predictions; for the
//! remaining classes an undefined precision or recall counts as 0.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Counts indexed `[true, predicted]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("confusion matrix must be square"));
        }
        Ok(ConfusionMatrix {
            n_classes: n,
            counts: rows.concat(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, predicted: usize) -> u64 {
        (0..self.n_classes).map(|t| self.get(t, predicted)).sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|k| self.get(k, k)).sum()
    }

    /// Adds one sequence pair.
    pub fn accumulate(&mut self, predicted: &[usize], truth: &[usize]) -> Result<()> {
        if predicted.len() != truth.len() {
            return Err(Error::invalid(format!(
                "prediction length {} differs from truth length {}",
                predicted.len(),
                truth.len()
            )));
        }
        let n = self.n_classes;
        if let Some(&bad) = predicted.iter().chain(truth).find(|&&c| c >= n) {
            return Err(Error::invalid(format!("label {bad} out of range for {n} classes")));
        }
        for (&p, &t) in predicted.iter().zip(truth) {
            self.counts[t * n + p] += 1;
        }
        Ok(())
    }
}

/// Frame counts pooled over paired sequences.
pub fn confusion<P, T>(predictions: &[P], truths: &[T], n_classes: usize) -> Result<ConfusionMatrix>
where
    P: AsRef<[usize]>,
    T: AsRef<[usize]>,
{
    if predictions.len() != truths.len() {
        return Err(Error::invalid(format!(
            "{} predicted sequences for {} truth sequences",
            predictions.len(),
            truths.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(n_classes);
    for (p, t) in predictions.iter().zip(truths) {
        cm.accumulate(p.as_ref(), t.as_ref())?;
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub accuracy: f64,
    /// `None` where the denominator is zero.
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub f1: Vec<Option<f64>>,
    /// Classes absent from both truth and predictions.
    pub excluded: Vec<bool>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

pub const METRIC_NAMES: [&str; 4] = ["accuracy", "precision", "recall", "f1"];

impl MetricReport {
    /// Headline values in [`METRIC_NAMES`] order.
    pub fn headline(&self) -> [f64; 4] {
        [self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1]
    }
}

pub fn metric_report(cm: &ConfusionMatrix) -> Result<MetricReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("confusion matrix has no frames"));
    }
    let n = cm.n_classes();
    let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
    let precision: Vec<Option<f64>> = (0..n).map(|k| ratio(cm.get(k, k), cm.col_sum(k))).collect();
    let recall: Vec<Option<f64>> = (0..n).map(|k| ratio(cm.get(k, k), cm.row_sum(k))).collect();
    let f1: Vec<Option<f64>> = precision
        .iter()
        .zip(&recall)
        .map(|(p, r)| match (p, r) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        })
        .collect();
    let excluded: Vec<bool> = (0..n).map(|k| cm.row_sum(k) == 0 && cm.col_sum(k) == 0).collect();
    let included = excluded.iter().filter(|e| !**e).count() as f64;
    let macro_of = |v: &[Option<f64>]| {
        v.iter()
            .zip(&excluded)
            .filter(|(_, e)| !**e)
            .map(|(x, _)| x.unwrap_or(0.0))
            .sum::<f64>()
            / included
    };
    Ok(MetricReport {
        accuracy: cm.trace() as f64 / total as f64,
        macro_precision: macro_of(&precision),
        macro_recall: macro_of(&recall),
        macro_f1: macro_of(&f1),
        precision,
        recall,
        f1,
        excluded,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricStats {
    pub mean: f64,
    /// Population standard deviation (divisor n).
    pub std: f64,
}

impl MetricStats {
    pub fn of(values: &[f64]) -> Result<MetricStats> {
        if values.is_empty() {
            return Err(Error::invalid("no values to aggregate"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(MetricStats { mean, std: var.sqrt() })
    }

    /// `"m ± s"` in percent with one decimal, for fractions in `[0, 1]`.
    pub fn format_percent(&self) -> String {
        format!("{:.1} ± {:.1}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateReport {
    pub repeats: usize,
    /// Keyed by [`METRIC_NAMES`].
    pub metrics: BTreeMap<String, MetricStats>,
}

impl AggregateReport {
    pub fn get(&self, metric: &str) -> Option<MetricStats> {
        self.metrics.get(metric).copied()
    }
}

pub fn aggregate(reports: &[MetricReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to aggregate"));
    }
    let mut metrics = BTreeMap::new();
    for (k, name) in METRIC_NAMES.iter().enumerate() {
        let values: Vec<f64> = reports.iter().map(|r| r.headline()[k]).collect();
        metrics.insert(name.to_string(), MetricStats::of(&values)?);
    }
    Ok(AggregateReport {
        repeats: reports.len(),
        metrics,
    })
}

fn fmt_value(v: f64) -> String {
    format!("{v:.6}")
}

/// Rows `variant  metric  class  value`; class is `all` for macro values and
/// undefined per-class entries are written as `nan`.
pub fn metrics_rows(variant: &str, report: &MetricReport) -> Vec<[String; 4]> {
    let mut rows = Vec::new();
    for (name, value) in METRIC_NAMES.iter().zip(report.headline()) {
        rows.push([variant.to_string(), name.to_string(), "all".to_string(), fmt_value(value)]);
    }
    for (name, values) in [("precision", &report.precision), ("recall", &report.recall), ("f1", &report.f1)] {
        for (k, v) in values.iter().enumerate() {
            let cell = match (v, report.excluded[k]) {
                (_, true) => "excluded".to_string(),
                (Some(v), false) => fmt_value(*v),
                (None, false) => "nan".to_string(),
            };
            rows.push([variant.to_string(), name.to_string(), k.to_string(), cell]);
        }
    }
    rows
}

pub fn write_metrics_tsv(reports: &[(String, MetricReport)], path: &Path) -> Result<()> {
    let mut out = String::from("#variant\tmetric\tclass\tvalue\n");
    for (variant, report) in reports {
        for row in metrics_rows(variant, report) {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Headline values of one or more variants from a `metrics.tsv`.
pub fn read_metrics_tsv(path: &Path) -> Result<BTreeMap<String, [f64; 4]>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: BTreeMap<String, [f64; 4]> = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{} line {}", path.display(), lineno + 1);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::parse(loc(), "expected 4 fields"));
        }
        if f[2] != "all" {
            continue;
        }
        let k = METRIC_NAMES
            .iter()
            .position(|m| *m == f[1])
            .ok_or_else(|| Error::parse(loc(), format!("unknown metric {:?}", f[1])))?;
        let v: f64 = f[3].parse().map_err(|_| Error::parse(loc(), "bad value"))?;
        out.entry(f[0].to_string()).or_insert([f64::NAN; 4])[k] = v;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub size: String,
    pub variant: String,
    pub metric: String,
    pub stats: MetricStats,
    pub repeats: usize,
}

/// Columns `size  variant  metric  mean  std  repeats`, values in percent.
pub fn write_summary_tsv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut out = String::from("#size\tvariant\tmetric\tmean\tstd\trepeats\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{}",
            r.size,
            r.variant,
            r.metric,
            100.0 * r.stats.mean,
            100.0 * r.stats.std,
            r.repeats
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_summary_tsv(path: &Path) -> Result<Vec<SummaryRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let loc = || format!("{} line {}", path.display(), lineno + 1);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 6 {
            return Err(Error::parse(loc(), format!("expected 6 fields, found {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(loc(), format!("bad number {s:?}")));
        rows.push(SummaryRow {
            size: f[0].to_string(),
            variant: f[1].to_string(),
            metric: f[2].to_string(),
            stats: MetricStats {
                mean: num(f[3])? / 100.0,
                std: num(f[4])? / 100.0,
            },
            repeats: f[5].parse().map_err(|_| Error::parse(loc(), "bad repeat count"))?,
        });
    }
    Ok(rows)
}

/// Markdown-style table of `mean ± std` per variant (rows) and size (columns) for one metric.
pub fn format_table(rows: &[SummaryRow], metric: &str) -> String {
    let sizes = ordered_sizes(rows);
    let mut variants: Vec<&str> = Vec::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    let mut out = format!("| {metric} |");
    for s in &sizes {
        let _ = write!(out, " {s} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(sizes.len()));
    out.push('\n');
    for v in variants {
        let _ = write!(out, "| {v} |");
        for s in &sizes {
            let cell = rows
                .iter()
                .find(|r| r.metric == metric && r.variant == v && &r.size == s)
                .map(|r| r.stats.format_percent())
                .unwrap_or_else(|| "-".into());
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
    }
    out
}

/// Sizes in numeric order, non-numeric labels (e.g. `full`) last.
fn ordered_sizes(rows: &[SummaryRow]) -> Vec<String> {
    let set: BTreeSet<&str> = rows.iter().map(|r| r.size.as_str()).collect();
    let mut sizes: Vec<String> = set.into_iter().map(String::from).collect();
    sizes.sort_by_key(|s| (s.parse::<u64>().unwrap_or(u64::MAX), s.clone()));
    sizes
}

pub const PHASE_COLORS: [&str; 7] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
];

fn color(k: usize) -> &'static str {
    PHASE_COLORS[k % PHASE_COLORS.len()]
}

/// Phase ribbons for the truth and each prediction, one row each, with a legend.
pub fn render_timeline(
    truth: &[usize],
    predictions: &[(String, Vec<usize>)],
    n_classes: usize,
    path: &Path,
) -> Result<()> {
    if truth.is_empty() {
        return Err(Error::invalid("empty truth sequence"));
    }
    for (name, p) in predictions {
        if p.len() != truth.len() {
            return Err(Error::invalid(format!(
                "prediction {name} has length {} for truth length {}",
                p.len(),
                truth.len()
            )));
        }
    }
    let (left, width, row_h, gap) = (110.0, 800.0, 24.0, 8.0);
    let rows: Vec<(&str, &[usize])> = std::iter::once(("truth", truth))
        .chain(predictions.iter().map(|(n, p)| (n.as_str(), p.as_slice())))
        .collect();
    let legend_y = 10.0 + rows.len() as f64 * (row_h + gap) + 10.0;
    let height = legend_y + 30.0;
    let frame_w = width / truth.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{height}" font-family="sans-serif" font-size="12">"#,
        left + width + 20.0
    );
    for (r, (name, seq)) in rows.iter().enumerate() {
        let y = 10.0 + r as f64 * (row_h + gap);
        let _ = writeln!(svg, r#"<text x="5" y="{:.1}">{}</text>"#, y + row_h * 0.7, escape(name));
        let mut start = 0;
        for t in 1..=seq.len() {
            if t == seq.len() || seq[t] != seq[start] {
                let _ = writeln!(
                    svg,
                    r#"<rect x="{:.3}" y="{y:.1}" width="{:.3}" height="{row_h}" fill="{}"/>"#,
                    left + start as f64 * frame_w,
                    (t - start) as f64 * frame_w,
                    color(seq[start])
                );
                start = t;
            }
        }
    }
    for k in 0..n_classes {
        let x = left + k as f64 * 70.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.1}" y="{legend_y:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">P{}</text>"#,
            color(k),
            x + 16.0,
            legend_y + 11.0,
            k + 1
        );
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Accuracy and F1 versus annotation budget, one polyline per variant with ±std whiskers.
pub fn render_curves(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let sizes = ordered_sizes(rows);
    if sizes.is_empty() {
        return Err(Error::invalid("no summary rows to plot"));
    }
    let mut variants: Vec<&str> = Vec::new();
    for r in rows {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    let (panel_w, panel_h, margin) = (360.0, 240.0, 50.0);
    let width = 2.0 * (panel_w + margin) + margin;
    let height = panel_h + 2.0 * margin + 20.0 * variants.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let x_of = |k: usize| {
        if sizes.len() == 1 {
            panel_w / 2.0
        } else {
            panel_w * k as f64 / (sizes.len() - 1) as f64
        }
    };
    let y_of = |v: f64| panel_h * (1.0 - v.clamp(0.0, 1.0));
    for (p, metric) in ["accuracy", "f1"].iter().enumerate() {
        let ox = margin + p as f64 * (panel_w + margin);
        let oy = margin;
        let _ = writeln!(svg, r#"<g transform="translate({ox},{oy})">"#);
        let _ = writeln!(
            svg,
            r#"<rect x="0" y="0" width="{panel_w}" height="{panel_h}" fill="none" stroke="black"/><text x="0" y="-8">{metric}</text>"#
        );
        for tick in 0..=4 {
            let v = tick as f64 / 4.0;
            let _ = writeln!(svg, r#"<text x="-30" y="{:.1}">{:.0}</text>"#, y_of(v) + 4.0, 100.0 * v);
        }
        for (k, s) in sizes.iter().enumerate() {
            let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, x_of(k) - 4.0, panel_h + 14.0, escape(s));
        }
        for (vi, variant) in variants.iter().enumerate() {
            let c = color(vi);
            let points: Vec<(f64, f64, f64)> = sizes
                .iter()
                .enumerate()
                .filter_map(|(k, s)| {
                    rows.iter()
                        .find(|r| r.metric == *metric && r.variant == *variant && &r.size == s)
                        .map(|r| (x_of(k), r.stats.mean, r.stats.std))
                })
                .collect();
            if points.len() > 1 {
                let coords: Vec<String> = points.iter().map(|(x, m, _)| format!("{x:.2},{:.2}", y_of(*m))).collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{c}" stroke-width="1.5"/>"#,
                    coords.join(" ")
                );
            }
            for (x, m, s) in &points {
                let _ = writeln!(
                    svg,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{c}"/><circle cx="{x:.2}" cy="{:.2}" r="3" fill="{c}"/>"#,
                    y_of(m - s),
                    y_of(m + s),
                    y_of(*m)
                );
            }
        }
        svg.push_str("</g>\n");
    }
    for (vi, variant) in variants.iter().enumerate() {
        let y = panel_h + 2.0 * margin + 20.0 * vi as f64 - 10.0;
        let _ = writeln!(
            svg,
            r#"<rect x="{margin}" y="{y:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            color(vi),
            margin + 16.0,
            y + 11.0,
            escape(variant)
        );
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hand_built() -> ConfusionMatrix {
        ConfusionMatrix::from_rows(&[vec![5, 1, 0], vec![0, 4, 0], vec![2, 0, 8]]).unwrap()
    }

    #[test]
    fn hand_built_class_zero() {
        let r = metric_report(&hand_built()).unwrap();
        assert!((r.precision[0].unwrap() - 5.0 / 7.0).abs() < 1e-12);
        assert!((r.recall[0].unwrap() - 5.0 / 6.0).abs() < 1e-12);
        assert!((r.f1[0].unwrap() - 10.0 / 13.0).abs() < 1e-12);
        let mean_f1 = r.f1.iter().map(|f| f.unwrap()).sum::<f64>() / 3.0;
        assert!((r.macro_f1 - mean_f1).abs() < 1e-12);
        assert!((r.accuracy - 17.0 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let t = vec![vec![0, 1, 2, 2, 1]];
        let cm = confusion(&t, &t, 3).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    assert_eq!(cm.get(a, b), 0);
                }
            }
        }
        let r = metric_report(&cm).unwrap();
        assert_eq!(r.headline(), [1.0; 4]);
    }

    #[test]
    fn constant_prediction_on_two_classes() {
        let cm = confusion(&[vec![0; 4]], &[vec![0, 1, 0, 1]], 2).unwrap();
        let r = metric_report(&cm).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.precision[1], None);
        // undefined precision of class 1 counts as 0
        assert!((r.macro_precision - 0.25).abs() < 1e-15);
        assert!((r.macro_recall - 0.5).abs() < 1e-15);
    }

    #[test]
    fn absent_class_is_excluded() {
        let cm = confusion(&[vec![0, 1, 1]], &[vec![0, 1, 1]], 3).unwrap();
        let r = metric_report(&cm).unwrap();
        assert_eq!(r.excluded, vec![false, false, true]);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn length_mismatch_and_empty() {
        assert!(confusion(&[vec![0, 1]], &[vec![0]], 2).is_err());
        assert!(confusion(&[vec![0, 5]], &[vec![0, 1]], 2).is_err());
        assert!(metric_report(&ConfusionMatrix::new(3)).is_err());
    }

    #[test]
    fn aggregate_uses_population_std() {
        let s = MetricStats::of(&[70.0, 80.0, 90.0]).unwrap();
        assert!((s.mean - 80.0).abs() < 1e-12);
        assert!((s.std - (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((s.std - 8.165).abs() < 1e-3);
        let one = MetricStats::of(&[0.42]).unwrap();
        assert_eq!((one.mean, one.std), (0.42, 0.0));
        assert_eq!(MetricStats { mean: 0.758, std: 0.015 }.format_percent(), "75.8 ± 1.5");
    }

    #[test]
    fn identical_reports_have_zero_std() {
        let r = metric_report(&hand_built()).unwrap();
        let agg = aggregate(&[r.clone(), r.clone(), r]).unwrap();
        assert_eq!(agg.repeats, 3);
        assert!(agg.metrics.values().all(|s| s.std == 0.0));
    }

    #[test]
    fn tsv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let r = metric_report(&hand_built()).unwrap();
        let p = dir.path().join("metrics.tsv");
        write_metrics_tsv(&[("m5".into(), r.clone())], &p).unwrap();
        let back = read_metrics_tsv(&p).unwrap();
        for (a, b) in back["m5"].iter().zip(r.headline()) {
            assert!((a - b).abs() < 1e-6);
        }
        let rows = vec![SummaryRow {
            size: "20".into(),
            variant: "m5".into(),
            metric: "f1".into(),
            stats: MetricStats { mean: 0.5, std: 0.25 },
            repeats: 3,
        }];
        let p = dir.path().join("summary.tsv");
        write_summary_tsv(&rows, &p).unwrap();
        assert_eq!(read_summary_tsv(&p).unwrap(), rows);
    }

    #[test]
    fn timeline_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let truth = vec![0, 0, 1, 1, 2, 3, 4, 5, 6];
        let preds = vec![("m5".to_string(), truth.clone()), ("m1".to_string(), vec![2; 9])];
        let (a, b) = (dir.path().join("a.svg"), dir.path().join("b.svg"));
        render_timeline(&truth, &preds, 7, &a).unwrap();
        render_timeline(&truth, &preds, 7, &b).unwrap();
        let text = fs::read_to_string(&a).unwrap();
        assert_eq!(text, fs::read_to_string(&b).unwrap());
        // constant prediction is a single rect
        let m1_rects = text.lines().filter(|l| l.contains(r#"y="74.0""#) && l.starts_with("<rect")).count();
        assert_eq!(m1_rects, 1);
        assert!(render_timeline(&truth, &[("x".into(), vec![0])], 7, &a).is_err());
    }

    fn curve_rows(values: &[(u32, f64)]) -> Vec<SummaryRow> {
        values
            .iter()
            .flat_map(|&(size, v)| {
                ["accuracy", "f1"].map(|m| SummaryRow {
                    size: size.to_string(),
                    variant: "m5".into(),
                    metric: m.into(),
                    stats: MetricStats { mean: v, std: 0.01 },
                    repeats: 3,
                })
            })
            .collect()
    }

    #[test]
    fn curves_single_point_and_monotone() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.svg");
        render_curves(&curve_rows(&[(20, 0.7)]), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(!text.contains("<polyline"));
        assert_eq!(text.matches("<circle").count(), 2);

        render_curves(&curve_rows(&[(1, 0.2), (3, 0.4), (20, 0.7), (10, 0.6)]), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let line = text.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let pts: Vec<(f64, f64)> = line
            .split('"')
            .nth(1)
            .unwrap()
            .split(' ')
            .map(|xy| {
                let (x, y) = xy.split_once(',').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect();
        assert!(pts.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 > w[1].1));
        let again = dir.path().join("d.svg");
        render_curves(&curve_rows(&[(1, 0.2), (3, 0.4), (20, 0.7), (10, 0.6)]), &again).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&again).unwrap());
        assert!(render_curves(&[], &p).is_err());
    }

    fn arb_pairs() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..60).prop_flat_map(|n| (prop::collection::vec(0usize..4, n), prop::collection::vec(0usize..4, n)))
    }

    proptest! {
        #[test]
        fn accuracy_is_frequency_weighted_recall((p, t) in arb_pairs()) {
            let cm = confusion(&[p], &[t], 4).unwrap();
            let r = metric_report(&cm).unwrap();
            let total = cm.total() as f64;
            let weighted: f64 = (0..4)
                .filter_map(|k| r.recall[k].map(|rec| rec * cm.row_sum(k) as f64 / total))
                .sum();
            prop_assert!((weighted - r.accuracy).abs() < 1e-12);
        }

        #[test]
        fn macro_within_included_range((p, t) in arb_pairs()) {
            let r = metric_report(&confusion(&[p], &[t], 4).unwrap()).unwrap();
            let inc: Vec<f64> = (0..4).filter(|&k| !r.excluded[k]).map(|k| r.f1[k].unwrap_or(0.0)).collect();
            let lo = inc.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = inc.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.macro_f1 >= lo - 1e-12 && r.macro_f1 <= hi + 1e-12);
        }

        #[test]
        fn report_is_permutation_equivariant((p, t) in arb_pairs(), perm in Just([2usize, 0, 3, 1])) {
            let r = metric_report(&confusion(std::slice::from_ref(&p), std::slice::from_ref(&t), 4).unwrap()).unwrap();
            let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
            let tp: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
            let rp = metric_report(&confusion(&[pp], &[tp], 4).unwrap()).unwrap();
            for k in 0..4 {
                prop_assert_eq!(r.f1[k], rp.f1[perm[k]]);
                prop_assert_eq!(r.excluded[k], rp.excluded[perm[k]]);
            }
            prop_assert!((r.macro_f1 - rp.macro_f1).abs() < 1e-12);
            prop_assert_eq!(r.accuracy, rp.accuracy);
        }
    }
}
