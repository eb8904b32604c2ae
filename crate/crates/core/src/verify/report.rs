//! Baseline-vs-candidate benchmark comparison.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::VerifyError;

pub const DEFAULT_MARGIN: f64 = 0.1;

pub const ENGLISH_METRICS: [&str; 9] = [
    "MMLU",
    "ARC-C",
    "ARC-E",
    "CommonSenseQA",
    "HellaSwag",
    "OpenbookQA",
    "PIQA",
    "SIQA",
    "Winogrande",
];
pub const CHINESE_METRICS: [&str; 2] = ["C-Eval", "CMMLU"];

/// Scores of one evaluated run, in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub run_label: String,
    pub scores: BTreeMap<String, f64>,
}

impl EvalScores {
    pub fn new(run_label: impl Into<String>, scores: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self {
            run_label: run_label.into(),
            scores: scores.into_iter().collect(),
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, VerifyError> {
        let scores: Self = serde_json::from_slice(bytes)?;
        scores.validate()?;
        Ok(scores)
    }

    pub fn validate(&self) -> Result<(), VerifyError> {
        for (metric, &score) in &self.scores {
            if !(0.0..=100.0).contains(&score) {
                return Err(VerifyError::ScoreOutOfRange {
                    metric: metric.clone(),
                    score,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricGroup {
    pub name: String,
    pub metrics: Vec<String>,
}

/// Disjoint metric groups plus an optional union group over all of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricGrouping {
    pub groups: Vec<MetricGroup>,
    #[serde(default = "default_overall")]
    pub overall: Option<String>,
}

fn default_overall() -> Option<String> {
    Some("Overall".to_owned())
}

impl Default for MetricGrouping {
    fn default() -> Self {
        let group = |name: &str, metrics: &[&str]| MetricGroup {
            name: name.to_owned(),
            metrics: metrics.iter().map(|m| m.to_string()).collect(),
        };
        Self {
            groups: vec![
                group("English", &ENGLISH_METRICS),
                group("Chinese", &CHINESE_METRICS),
            ],
            overall: default_overall(),
        }
    }
}

impl MetricGrouping {
    pub fn from_json(bytes: &[u8]) -> Result<Self, VerifyError> {
        let grouping: Self = serde_json::from_slice(bytes)?;
        grouping.validate()?;
        Ok(grouping)
    }

    pub fn validate(&self) -> Result<(), VerifyError> {
        if self.groups.is_empty() {
            return Err(VerifyError::InvalidGrouping("no groups".into()));
        }
        let mut names = HashSet::new();
        let mut seen = HashSet::new();
        for g in &self.groups {
            if !names.insert(g.name.as_str()) {
                return Err(VerifyError::InvalidGrouping(format!(
                    "group {:?} appears twice",
                    g.name
                )));
            }
            if g.metrics.is_empty() {
                return Err(VerifyError::InvalidGrouping(format!(
                    "group {:?} is empty",
                    g.name
                )));
            }
            for m in &g.metrics {
                if !seen.insert(m.as_str()) {
                    return Err(VerifyError::InvalidGrouping(format!(
                        "metric {m:?} is in two groups"
                    )));
                }
            }
        }
        if let Some(o) = &self.overall {
            if names.contains(o.as_str()) {
                return Err(VerifyError::InvalidGrouping(format!(
                    "overall name {o:?} clashes with a group"
                )));
            }
        }
        Ok(())
    }

    /// Groups in report order, with the union group last.
    pub fn resolved(&self) -> Vec<MetricGroup> {
        let mut out = self.groups.clone();
        if let Some(name) = &self.overall {
            out.push(MetricGroup {
                name: name.clone(),
                metrics: self
                    .groups
                    .iter()
                    .flat_map(|g| g.metrics.iter().cloned())
                    .collect(),
            });
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Improved,
    Regressed,
    Unchanged,
}

impl Verdict {
    fn from_diff(diff: f64, margin: f64) -> Self {
        if diff > margin {
            Verdict::Improved
        } else if diff < -margin {
            Verdict::Regressed
        } else {
            Verdict::Unchanged
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDiff {
    pub metric: String,
    pub baseline: f64,
    pub candidate: f64,
    pub diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub name: String,
    pub metrics: Vec<MetricDiff>,
    pub baseline_average: f64,
    pub candidate_average: f64,
    pub diff: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub baseline_label: String,
    pub candidate_label: String,
    pub margin: f64,
    pub groups: Vec<GroupReport>,
    pub overall: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Table,
    Json,
    Markdown,
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}

pub fn eval_report(
    baseline: &EvalScores,
    candidate: &EvalScores,
    grouping: &MetricGrouping,
    margin: f64,
) -> Result<EvalReport, VerifyError> {
    grouping.validate()?;
    baseline.validate()?;
    candidate.validate()?;
    if !(margin >= 0.0 && margin.is_finite()) {
        return Err(VerifyError::InvalidConfig(format!(
            "margin must be non-negative, got {margin}"
        )));
    }
    for run in [baseline, candidate] {
        let missing: Vec<String> = grouping
            .groups
            .iter()
            .flat_map(|g| &g.metrics)
            .filter(|m| !run.scores.contains_key(*m))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(VerifyError::MissingMetric {
                run: run.run_label.clone(),
                metrics: missing,
            });
        }
    }
    let groups = grouping
        .resolved()
        .into_iter()
        .map(|g| {
            let metrics: Vec<MetricDiff> = g
                .metrics
                .iter()
                .map(|m| {
                    let (b, c) = (baseline.scores[m], candidate.scores[m]);
                    MetricDiff {
                        metric: m.clone(),
                        baseline: b,
                        candidate: c,
                        diff: c - b,
                    }
                })
                .collect();
            let baseline_average = mean(metrics.iter().map(|m| m.baseline));
            let candidate_average = mean(metrics.iter().map(|m| m.candidate));
            let diff = candidate_average - baseline_average;
            GroupReport {
                name: g.name,
                metrics,
                baseline_average,
                candidate_average,
                diff,
                verdict: Verdict::from_diff(diff, margin),
            }
        })
        .collect();
    Ok(EvalReport {
        baseline_label: baseline.run_label.clone(),
        candidate_label: candidate.run_label.clone(),
        margin,
        groups,
        overall: grouping.overall.clone(),
    })
}

impl EvalReport {
    pub fn group(&self, name: &str) -> Option<&GroupReport> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// The headline group: the union group if present, else the only group.
    pub fn headline(&self) -> Option<&GroupReport> {
        match &self.overall {
            Some(name) => self.group(name),
            None if self.groups.len() == 1 => self.groups.first(),
            None => None,
        }
    }

    /// Improved on the headline group and regressed on none.
    pub fn improved(&self) -> bool {
        let headline = match self.headline() {
            Some(g) => g.verdict == Verdict::Improved,
            None => self.groups.iter().any(|g| g.verdict == Verdict::Improved),
        };
        headline && self.groups.iter().all(|g| g.verdict != Verdict::Regressed)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Json => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
            ReportFormat::Table => self.render_rows(false),
            ReportFormat::Markdown => self.render_rows(true),
        }
    }

    fn rows(&self) -> Vec<[String; 4]> {
        let mut rows = vec![[
            "Metrics".to_owned(),
            self.baseline_label.clone(),
            self.candidate_label.clone(),
            "Diff".to_owned(),
        ]];
        let mut listed = HashSet::new();
        for g in &self.groups {
            for m in &g.metrics {
                if listed.insert(m.metric.as_str()) {
                    rows.push([
                        m.metric.clone(),
                        format!("{:.2}", m.baseline),
                        format!("{:.2}", m.candidate),
                        format!("{:+.2}", m.diff),
                    ]);
                }
            }
        }
        for g in &self.groups {
            rows.push([
                format!("Average ({})", g.name),
                format!("{:.3}", g.baseline_average),
                format!("{:.3}", g.candidate_average),
                format!("{:+.3} {}", g.diff, verdict_word(g.verdict)),
            ]);
        }
        rows
    }

    fn render_rows(&self, markdown: bool) -> String {
        let rows = self.rows();
        let mut out = String::new();
        if markdown {
            for (i, r) in rows.iter().enumerate() {
                let _ = writeln!(out, "| {} |", r.join(" | "));
                if i == 0 {
                    out.push_str("|---|---:|---:|---:|\n");
                }
            }
            return out;
        }
        let widths: Vec<usize> = (0..4)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        for r in &rows {
            let line = format!(
                "{:<w0$}  {:>w1$}  {:>w2$}  {:<w3$}",
                r[0],
                r[1],
                r[2],
                r[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

fn verdict_word(v: Verdict) -> &'static str {
    match v {
        Verdict::Improved => "improved",
        Verdict::Regressed => "regressed",
        Verdict::Unchanged => "unchanged",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(label: &str, values: &[(&str, f64)]) -> EvalScores {
        EvalScores::new(label, values.iter().map(|(m, v)| (m.to_string(), *v)))
    }

    fn chinese_only() -> MetricGrouping {
        MetricGrouping {
            groups: vec![MetricGroup {
                name: "Chinese".into(),
                metrics: CHINESE_METRICS.iter().map(|s| s.to_string()).collect(),
            }],
            overall: None,
        }
    }

    #[test]
    fn identity_has_zero_diffs() {
        let a = run("a", &[("C-Eval", 33.95), ("CMMLU", 32.41)]);
        let r = eval_report(&a, &a, &chinese_only(), DEFAULT_MARGIN).unwrap();
        assert!(r
            .groups
            .iter()
            .all(|g| g.diff == 0.0 && g.verdict == Verdict::Unchanged));
        assert!(r.groups[0].metrics.iter().all(|m| m.diff == 0.0));
        assert!(!r.improved());
    }

    #[test]
    fn missing_metric_names_it() {
        let a = run("a", &[("C-Eval", 33.95)]);
        let b = run("b", &[("C-Eval", 33.95), ("CMMLU", 1.0)]);
        match eval_report(&a, &b, &chinese_only(), DEFAULT_MARGIN) {
            Err(VerifyError::MissingMetric { run, metrics }) => {
                assert_eq!(run, "a");
                assert_eq!(metrics, vec!["CMMLU"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_scores_are_rejected() {
        let bad = br#"{"run_label":"x","scores":{"MMLU":101}}"#;
        assert!(matches!(
            EvalScores::from_json(bad),
            Err(VerifyError::ScoreOutOfRange { .. })
        ));
    }

    #[test]
    fn overlapping_groups_are_rejected() {
        let mut g = MetricGrouping::default();
        g.groups[1].metrics.push("MMLU".into());
        assert!(g.validate().is_err());
        assert_eq!(MetricGrouping::default().resolved()[2].metrics.len(), 11);
    }

    #[test]
    fn verdict_margin_is_strict() {
        assert_eq!(Verdict::from_diff(0.1, 0.1), Verdict::Unchanged);
        assert_eq!(Verdict::from_diff(-0.025, 0.1), Verdict::Unchanged);
        assert_eq!(Verdict::from_diff(0.11, 0.1), Verdict::Improved);
        assert_eq!(Verdict::from_diff(-0.2, 0.1), Verdict::Regressed);
    }

    #[test]
    fn renders_signed_diffs() {
        let a = run("base", &[("C-Eval", 33.95), ("CMMLU", 32.41)]);
        let b = run("cand", &[("C-Eval", 34.26), ("CMMLU", 36.06)]);
        let r = eval_report(&a, &b, &chinese_only(), DEFAULT_MARGIN).unwrap();
        let table = r.render(ReportFormat::Table);
        assert!(table.contains("+3.65"), "{table}");
        assert!(table.contains("35.160"), "{table}");
        assert!(table.contains("+1.980 improved"), "{table}");
        assert!(r
            .render(ReportFormat::Markdown)
            .starts_with("| Metrics | base | cand | Diff |"));
        assert!(r.improved());
    }
}
