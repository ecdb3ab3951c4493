use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ap_at, ap_range, ApConfig, ApWarning, ImageGroundTruth, ImagePredictions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "AP@0.50")]
    Ap50,
    #[serde(rename = "AP@0.5:0.05:0.95")]
    Ap50To95,
    #[serde(rename = "AP@0.75")]
    Ap75,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Ap50, Metric::Ap50To95, Metric::Ap75];

    pub fn label(self) -> &'static str {
        match self {
            Metric::Ap50 => "AP@0.50",
            Metric::Ap50To95 => "AP@0.5:0.05:0.95",
            Metric::Ap75 => "AP@0.75",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.label() == s)
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: Metric,
    pub per_run: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; absent for a single run.
    #[serde(default)]
    pub sd: Option<f64>,
    /// Baseline mean minus this report's mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difference: Option<f64>,
}

impl MetricRow {
    pub fn from_runs(metric: Metric, per_run: Vec<f64>) -> Result<Self> {
        if per_run.is_empty() {
            return Err(Error::Empty(format!("no runs for {metric}")));
        }
        let n = per_run.len() as f64;
        let mean = per_run.iter().sum::<f64>() / n;
        let sd = (per_run.len() > 1).then(|| {
            let ss: f64 = per_run.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        });
        Ok(Self {
            metric,
            per_run,
            mean,
            sd,
            difference: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub metrics: Vec<MetricRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Box<EvalReport>>,
}

impl EvalReport {
    pub fn row(&self, metric: Metric) -> Option<&MetricRow> {
        self.metrics.iter().find(|r| r.metric == metric)
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::fsio::read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsio::write_json(path, self)
    }

    fn metric_set(&self) -> Vec<Metric> {
        self.metrics.iter().map(|r| r.metric).collect()
    }
}

/// Scores one run at the three reported settings.
pub fn evaluate_run(
    label: &str,
    preds: &ImagePredictions,
    gts: &ImageGroundTruth,
    cfg: &ApConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let a50 = ap_at(preds, gts, 0.5, cfg);
    let a75 = ap_at(preds, gts, 0.75, cfg);
    let range = ap_range(preds, gts, cfg);
    let mut warnings = Vec::new();
    if [a50.warning, a75.warning, range.warning].contains(&Some(ApWarning::NoGroundTruth)) {
        warnings.push("no ground-truth boxes; AP reported as 0".to_string());
    }
    let mut metrics = Vec::new();
    for (m, v) in [(Metric::Ap50, a50.ap), (Metric::Ap50To95, range.ap), (Metric::Ap75, a75.ap)] {
        metrics.push(MetricRow::from_runs(m, vec![v])?);
    }
    Ok(EvalReport {
        label: label.to_string(),
        metrics,
        warnings,
        baseline: None,
    })
}

/// Pools per-run reports: each input contributes its mean as one run.
pub fn aggregate_runs(label: &str, runs: &[EvalReport]) -> Result<EvalReport> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Empty("aggregate_runs needs at least one run".into()))?;
    let set = first.metric_set();
    for r in &runs[1..] {
        if r.metric_set() != set {
            return Err(Error::MetricMismatch(format!(
                "run `{}` reports {:?}, expected {:?}",
                r.label,
                r.metric_set(),
                set
            )));
        }
    }
    let metrics = set
        .iter()
        .enumerate()
        .map(|(i, &m)| MetricRow::from_runs(m, runs.iter().map(|r| r.metrics[i].mean).collect()))
        .collect::<Result<Vec<_>>>()?;
    let mut warnings: Vec<String> = runs.iter().flat_map(|r| r.warnings.clone()).collect();
    warnings.dedup();
    Ok(EvalReport {
        label: label.to_string(),
        metrics,
        warnings,
        baseline: None,
    })
}

/// Attaches `baseline` to `candidate` and fills each row's difference with
/// `baseline.mean - candidate.mean`.
pub fn diff_report(candidate: &EvalReport, baseline: &EvalReport) -> Result<EvalReport> {
    let mut a = candidate.metric_set();
    let mut b = baseline.metric_set();
    a.sort();
    b.sort();
    if a != b {
        return Err(Error::MetricMismatch(format!(
            "`{}` reports {:?} but baseline `{}` reports {:?}",
            candidate.label, a, baseline.label, b
        )));
    }
    let mut out = candidate.clone();
    for row in &mut out.metrics {
        let base = baseline.row(row.metric).expect("metric sets checked");
        row.difference = Some(base.mean - row.mean);
    }
    let mut base = baseline.clone();
    base.baseline = None;
    out.baseline = Some(Box::new(base));
    Ok(out)
}

/// Reads a per-run file: either a saved [`EvalReport`] or a flat object
/// mapping metric labels to values, e.g. `{"AP@0.50": 0.7, ...}`.
pub fn load_run(path: &Path) -> Result<EvalReport> {
    let value: Value = crate::fsio::read_json(path)?;
    if value.get("metrics").is_some() {
        return serde_json::from_value(value).map_err(|e| Error::parse(path, &e));
    }
    let obj = value
        .as_object()
        .ok_or_else(|| Error::record(path, 0, "", "expected a JSON object"))?;
    let mut metrics = Vec::new();
    for m in Metric::ALL {
        if let Some(v) = obj.get(m.label()) {
            let x = v
                .as_f64()
                .ok_or_else(|| Error::record(path, 0, m.label(), "expected a number"))?;
            metrics.push(MetricRow::from_runs(m, vec![x])?);
        }
    }
    if metrics.is_empty() {
        return Err(Error::record(path, 0, "metrics", "no known metric keys"));
    }
    let label = obj
        .get("label")
        .and_then(Value::as_str)
        .map(str::to_string)
        .unwrap_or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    Ok(EvalReport {
        label,
        metrics,
        warnings: Vec::new(),
        baseline: None,
    })
}

fn cell(row: &MetricRow) -> String {
    match row.sd {
        Some(sd) => format!("{:.2} ± {:.3}", row.mean, sd),
        None => format!("{:.2}", row.mean),
    }
}

/// Plain-text table: one row per dataset (baseline first), one column per
/// metric, and a Difference row when a baseline is attached.
pub fn render_table(report: &EvalReport) -> String {
    let metrics: Vec<Metric> = report.metrics.iter().map(|r| r.metric).collect();
    let mut rows: Vec<Vec<String>> = vec![std::iter::once("Dataset".to_string())
        .chain(metrics.iter().map(|m| m.label().to_string()))
        .collect()];
    let mut push = |r: &EvalReport| {
        rows.push(
            std::iter::once(r.label.clone())
                .chain(metrics.iter().map(|&m| r.row(m).map(cell).unwrap_or_default()))
                .collect(),
        )
    };
    if let Some(base) = &report.baseline {
        push(base);
    }
    push(report);
    if report.baseline.is_some() {
        rows.push(
            std::iter::once("Difference".to_string())
                .chain(report.metrics.iter().map(|r| {
                    r.difference.map(|d| format!("{d:.2}")).unwrap_or_default()
                }))
                .collect(),
        );
    }
    let ncol = rows[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s:<w$}"))
            .collect();
        let _ = writeln!(out, "{}", line.join(" | ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "{}", rule.join("-+-"));
        }
    }
    out
}
