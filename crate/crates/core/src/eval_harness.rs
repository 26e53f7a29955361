//! Offline metrics: per-category precision/recall, grounding mIoU, and
//! Welch's t-test for comparing runs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::output_format::{ModerationOutput, ReasoningChain, ResultEntry};
use crate::reward_engine::{major_set, match_entries, GroundTruth, GroundTruthError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("prediction and label lists differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("each sample needs at least two values, got {0} and {1}")]
    TooFewValues(usize, usize),
    #[error("sample {0} has zero variance")]
    ZeroVariance(char),
    #[error("samples contain non-finite values")]
    NonFinite,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub raw: String,
}

/// One line of a labels file: a reference annotation keyed by video id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub id: String,
    pub violation: bool,
    pub results: Vec<ResultEntry>,
    #[serde(default)]
    pub reasoning: ReasoningChain,
    pub duration: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl LabelRecord {
    pub fn from_ground_truth(id: impl Into<String>, gt: &GroundTruth) -> Self {
        Self {
            id: id.into(),
            violation: gt.violation,
            results: gt.results.clone(),
            reasoning: gt.reference_chain.clone(),
            duration: gt.duration,
            source: None,
        }
    }

    pub fn to_ground_truth(&self) -> Result<GroundTruth, GroundTruthError> {
        GroundTruth::new(self.violation, self.results.clone(), self.reasoning.clone(), self.duration)
    }
}

/// Sample-level confusion counts and rates for one label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelPr {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `None` when the label was never predicted.
    pub precision: Option<f64>,
    /// `None` when the label never occurs in the reference.
    pub recall: Option<f64>,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Per-label precision and recall over paired label sets.
pub fn category_pr(
    preds: &[BTreeSet<String>],
    gts: &[BTreeSet<String>],
) -> Result<BTreeMap<String, LabelPr>, EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::LengthMismatch(preds.len(), gts.len()));
    }
    let mut table: BTreeMap<String, LabelPr> = BTreeMap::new();
    for (p, g) in preds.iter().zip(gts) {
        for label in p.union(g) {
            let e = table.entry(label.clone()).or_default();
            match (p.contains(label), g.contains(label)) {
                (true, true) => e.tp += 1,
                (true, false) => e.fp += 1,
                (false, true) => e.fn_ += 1,
                (false, false) => unreachable!("label comes from the union"),
            }
        }
    }
    for e in table.values_mut() {
        e.precision = ratio(e.tp, e.tp + e.fp);
        e.recall = ratio(e.tp, e.tp + e.fn_);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiouSummary {
    /// Mean IoU over all reference entries; `None` when there are none.
    pub overall: Option<f64>,
    /// Same, grouped by the reference entry's major category.
    pub per_major: BTreeMap<String, f64>,
    pub entries: usize,
}

/// Per-entry IoU of matched pairs; unmatched reference entries count as 0.
pub fn grounding_miou(preds: &[ModerationOutput], gts: &[GroundTruth]) -> Result<MiouSummary, EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::LengthMismatch(preds.len(), gts.len()));
    }
    let mut total = 0.0;
    let mut entries = 0usize;
    let mut per_major: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (p, g) in preds.iter().zip(gts) {
        if g.results.is_empty() {
            continue;
        }
        let mut ious = vec![0.0; g.results.len()];
        for (i, j) in match_entries(&p.results, &g.results) {
            ious[j] = p.results[i].ground.iou(&g.results[j].ground);
        }
        for (entry, iou) in g.results.iter().zip(ious) {
            total += iou;
            entries += 1;
            let slot = per_major.entry(entry.major.clone()).or_default();
            slot.0 += iou;
            slot.1 += 1;
        }
    }
    Ok(MiouSummary {
        overall: (entries > 0).then(|| total / entries as f64),
        per_major: per_major.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect(),
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub samples: usize,
    /// Predictions that failed to parse; scored as empty outputs.
    pub parse_failures: usize,
    pub per_major: BTreeMap<String, LabelPr>,
    /// Unweighted mean over majors present in the reference; not-applicable values are skipped.
    pub avg_precision: Option<f64>,
    pub avg_recall: Option<f64>,
    pub miou: Option<f64>,
    pub miou_per_major: BTreeMap<String, f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn evaluate(preds: &[ModerationOutput], gts: &[GroundTruth], parse_failures: usize) -> Result<EvalReport, EvalError> {
    if preds.len() != gts.len() {
        return Err(EvalError::LengthMismatch(preds.len(), gts.len()));
    }
    let p_sets: Vec<_> = preds.iter().map(|p| major_set(&p.results)).collect();
    let g_sets: Vec<_> = gts.iter().map(|g| major_set(&g.results)).collect();
    let per_major = category_pr(&p_sets, &g_sets)?;
    let in_gt = || per_major.values().filter(|e| e.tp + e.fn_ > 0);
    let miou = grounding_miou(preds, gts)?;
    Ok(EvalReport {
        samples: preds.len(),
        parse_failures,
        avg_precision: mean(in_gt().filter_map(|e| e.precision)),
        avg_recall: mean(in_gt().filter_map(|e| e.recall)),
        per_major,
        miou: miou.overall,
        miou_per_major: miou.per_major,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"))
}

impl EvalReport {
    /// Plain-text table, one row per major plus the averages.
    pub fn to_table(&self) -> String {
        let width = self.per_major.keys().map(String::len).max().unwrap_or(0).max(8);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>5} {:>5} {:>5}  {:>9} {:>9} {:>9}",
            "major", "tp", "fp", "fn", "precision", "recall", "miou"
        );
        for (label, e) in &self.per_major {
            let _ = writeln!(
                out,
                "{:<width$}  {:>5} {:>5} {:>5}  {:>9} {:>9} {:>9}",
                label,
                e.tp,
                e.fp,
                e.fn_,
                cell(e.precision),
                cell(e.recall),
                cell(self.miou_per_major.get(label).copied())
            );
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>5} {:>5} {:>5}  {:>9} {:>9} {:>9}",
            "average",
            "",
            "",
            "",
            cell(self.avg_precision),
            cell(self.avg_recall),
            cell(self.miou)
        );
        let _ = writeln!(out, "samples: {}, parse failures: {}", self.samples, self.parse_failures);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_ttest(a: &[f64], b: &[f64]) -> Result<WelchResult, EvalError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(EvalError::TooFewValues(a.len(), b.len()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite);
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va == 0.0 {
        return Err(EvalError::ZeroVariance('a'));
    }
    if vb == 0.0 {
        return Err(EvalError::ZeroVariance('b'));
    }
    let (sa, sb) = (va / a.len() as f64, vb / b.len() as f64);
    let se2 = sa + sb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|_| EvalError::NonFinite)?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchResult { t, df, p })
}
