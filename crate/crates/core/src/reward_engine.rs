//! Hierarchical reward: format, violation, major/sub label overlap, temporal
//! grounding, and reasoning consistency, combined by a weight vector.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::output_format::{
    format_reward, normalize_label, parse_output, ModerationOutput, ParseFailure, ReasoningChain,
    ResultEntry, TimeInterval,
};
use crate::similarity::{cosine, EmbeddingProvider};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RewardError {
    #[error("tversky weights must be non-negative with a positive sum, got alpha={alpha}, beta={beta}")]
    InvalidTversky { alpha: f64, beta: f64 },
    #[error("reward weights must be finite and non-negative: {0:?}")]
    InvalidWeights([f64; 6]),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundTruthError {
    #[error("duration must be positive and finite, got {0}")]
    Duration(f64),
    #[error("violation flag {violation} disagrees with {count} result entries")]
    ViolationMismatch { violation: bool, count: usize },
    #[error("result {index} interval [{start}, {end}] exceeds duration {duration}")]
    IntervalOutOfRange {
        index: usize,
        start: f64,
        end: f64,
        duration: f64,
    },
    #[error("result {index} has a label that is not a snake-case id: {label:?}")]
    BadLabel { index: usize, label: String },
}

/// Reference annotation for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub violation: bool,
    pub results: Vec<ResultEntry>,
    #[serde(rename = "reasoning")]
    pub reference_chain: ReasoningChain,
    pub duration: f64,
}

impl GroundTruth {
    pub fn new(
        violation: bool,
        results: Vec<ResultEntry>,
        reference_chain: ReasoningChain,
        duration: f64,
    ) -> Result<Self, GroundTruthError> {
        let gt = Self {
            violation,
            results,
            reference_chain,
            duration,
        };
        gt.validate()?;
        Ok(gt)
    }

    pub fn validate(&self) -> Result<(), GroundTruthError> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(GroundTruthError::Duration(self.duration));
        }
        if self.violation == self.results.is_empty() {
            return Err(GroundTruthError::ViolationMismatch {
                violation: self.violation,
                count: self.results.len(),
            });
        }
        for (index, r) in self.results.iter().enumerate() {
            if r.ground.end() > self.duration {
                return Err(GroundTruthError::IntervalOutOfRange {
                    index,
                    start: r.ground.start(),
                    end: r.ground.end(),
                    duration: self.duration,
                });
            }
            for label in [&r.major, &r.sub] {
                if label.is_empty() || normalize_label(label) != *label {
                    return Err(GroundTruthError::BadLabel {
                        index,
                        label: label.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// The output a perfect model would produce for this video.
    pub fn as_output(&self) -> ModerationOutput {
        ModerationOutput {
            think: String::new(),
            reason: self.reference_chain.clone(),
            violation: self.violation,
            results: self.results.clone(),
        }
    }
}

/// Tversky index weights: `alpha` scales false positives, `beta` false negatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTversky")]
pub struct TverskyParams {
    alpha: f64,
    beta: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTversky {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawTversky> for TverskyParams {
    type Error = RewardError;

    fn try_from(raw: RawTversky) -> Result<Self, Self::Error> {
        Self::new(raw.alpha, raw.beta)
    }
}

impl Default for TverskyParams {
    /// Dice coefficient.
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.5,
        }
    }
}

impl TverskyParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self, RewardError> {
        let ok = alpha.is_finite() && beta.is_finite() && alpha >= 0.0 && beta >= 0.0 && alpha + beta > 0.0;
        if !ok {
            return Err(RewardError::InvalidTversky { alpha, beta });
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Tversky similarity `|P∩G| / (|P∩G| + α|P∖G| + β|G∖P|)`.
///
/// Both sets empty scores 1; exactly one empty scores 0.
pub fn tversky_reward<T: Ord>(pred: &BTreeSet<T>, gt: &BTreeSet<T>, params: TverskyParams) -> f64 {
    match (pred.is_empty(), gt.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let inter = pred.intersection(gt).count() as f64;
    let false_pos = pred.len() as f64 - inter;
    let false_neg = gt.len() as f64 - inter;
    let denom = inter + params.alpha * false_pos + params.beta * false_neg;
    if denom == 0.0 {
        return 0.0;
    }
    inter / denom
}

pub fn violation_reward(pred: &ModerationOutput, gt: &GroundTruth) -> f64 {
    if pred.violation == gt.violation {
        1.0
    } else {
        0.0
    }
}

pub fn major_set(results: &[ResultEntry]) -> BTreeSet<String> {
    results.iter().map(|r| r.major.clone()).collect()
}

pub fn sub_set(results: &[ResultEntry]) -> BTreeSet<(String, String)> {
    results.iter().map(|r| (r.major.clone(), r.sub.clone())).collect()
}

/// Above this many DP states `match_entries` falls back to greedy matching.
const MAX_EXACT_STATES: usize = 1 << 22;

/// One-to-one matching of predicted to reference entries with equal major.
///
/// Maximizes total interval IoU, then the number of pairs; remaining ties
/// prefer lower prediction indices paired with lower reference indices.
/// Pairs are returned sorted by prediction index.
pub fn match_entries(pred: &[ResultEntry], gt: &[ResultEntry]) -> Vec<(usize, usize)> {
    if pred.is_empty() || gt.is_empty() {
        return Vec::new();
    }
    let states = (pred.len() + 1).saturating_mul(1usize.checked_shl(gt.len() as u32).unwrap_or(usize::MAX));
    if gt.len() >= usize::BITS as usize - 1 || states > MAX_EXACT_STATES {
        return greedy_match(pred, gt);
    }
    exact_match(pred, gt)
}

#[derive(Clone, Copy, PartialEq)]
struct Score {
    iou: f64,
    pairs: usize,
}

impl Score {
    fn better_than(&self, other: &Score) -> bool {
        self.iou > other.iou || (self.iou == other.iou && self.pairs > other.pairs)
    }
}

fn exact_match(pred: &[ResultEntry], gt: &[ResultEntry]) -> Vec<(usize, usize)> {
    let n = pred.len();
    let masks = 1usize << gt.len();
    // best[i * masks + used]: best score for preds i.. given the gt entries in `used` are taken.
    // choice: None = skip pred i, Some(j) = pair with gt j.
    let mut best = vec![Score { iou: 0.0, pairs: 0 }; (n + 1) * masks];
    let mut choice: Vec<Option<usize>> = vec![None; (n + 1) * masks];
    for i in (0..n).rev() {
        for used in 0..masks {
            let mut top = best[(i + 1) * masks + used];
            let mut pick = None;
            for (j, g) in gt.iter().enumerate() {
                if used & (1 << j) != 0 || g.major != pred[i].major {
                    continue;
                }
                let tail = best[(i + 1) * masks + (used | 1 << j)];
                let cand = Score {
                    iou: pred[i].ground.iou(&g.ground) + tail.iou,
                    pairs: tail.pairs + 1,
                };
                if pick.is_none() && !top.better_than(&cand) || cand.better_than(&top) {
                    top = cand;
                    pick = Some(j);
                }
            }
            best[i * masks + used] = top;
            choice[i * masks + used] = pick;
        }
    }
    let mut pairs = Vec::new();
    let mut used = 0usize;
    for i in 0..n {
        if let Some(j) = choice[i * masks + used] {
            pairs.push((i, j));
            used |= 1 << j;
        }
    }
    pairs
}

fn greedy_match(pred: &[ResultEntry], gt: &[ResultEntry]) -> Vec<(usize, usize)> {
    let mut cands: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if p.major == g.major {
                cands.push((p.ground.iou(&g.ground), i, j));
            }
        }
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in cands {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// `max(0, 1 − (|Δstart| + |Δend|) / duration)`.
pub fn boundary_score(pred: &TimeInterval, gt: &TimeInterval, duration: f64) -> f64 {
    let dev = (pred.start() - gt.start()).abs() + (pred.end() - gt.end()).abs();
    (1.0 - dev / duration).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingScore {
    /// Mean of IoU + boundary over matched pairs, in [0, 2].
    pub value: f64,
    /// False when the reference has no result entries.
    pub applicable: bool,
    /// Mean IoU over matched pairs; `None` when not applicable.
    pub mean_iou: Option<f64>,
    pub pairs: usize,
}

pub fn grounding_detail(pred: &ModerationOutput, gt: &GroundTruth) -> GroundingScore {
    if gt.results.is_empty() {
        return GroundingScore {
            value: 0.0,
            applicable: false,
            mean_iou: None,
            pairs: 0,
        };
    }
    let pairs = match_entries(&pred.results, &gt.results);
    if pairs.is_empty() {
        return GroundingScore {
            value: 0.0,
            applicable: true,
            mean_iou: Some(0.0),
            pairs: 0,
        };
    }
    let (mut iou_sum, mut total) = (0.0, 0.0);
    for &(i, j) in &pairs {
        let (p, g) = (&pred.results[i].ground, &gt.results[j].ground);
        let iou = p.iou(g);
        iou_sum += iou;
        total += iou + boundary_score(p, g, gt.duration);
    }
    let n = pairs.len() as f64;
    GroundingScore {
        value: (total / n).clamp(0.0, 2.0),
        applicable: true,
        mean_iou: Some(iou_sum / n),
        pairs: pairs.len(),
    }
}

pub fn grounding_reward(pred: &ModerationOutput, gt: &GroundTruth) -> f64 {
    grounding_detail(pred, gt).value
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReasonMode {
    /// Compare the three sections joined into one text.
    #[default]
    FullChain,
    /// Mean of the clamped per-section similarities.
    PerSection,
}

fn clamped_similarity(provider: &dyn EmbeddingProvider, a: &str, b: &str) -> f64 {
    let (ea, eb) = (provider.embed(a), provider.embed(b));
    cosine(&ea.vector, &eb.vector).unwrap_or(0.0).clamp(0.0, 1.0)
}

pub fn reason_reward(
    pred: &ReasoningChain,
    gt_chain: &ReasoningChain,
    provider: &dyn EmbeddingProvider,
    mode: ReasonMode,
) -> f64 {
    match mode {
        ReasonMode::FullChain => clamped_similarity(provider, &pred.full_text(), &gt_chain.full_text()),
        ReasonMode::PerSection => {
            let sum: f64 = pred
                .sections()
                .iter()
                .zip(gt_chain.sections())
                .map(|(a, b)| clamped_similarity(provider, a, b))
                .sum();
            sum / 3.0
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub violation: f64,
    pub reason: f64,
    pub major: f64,
    pub sub: f64,
    pub ground: f64,
}

impl RewardBreakdown {
    pub fn zero() -> Self {
        Self::default()
    }

    /// Components in weight order: format, violation, major, sub, ground, reason.
    pub fn as_array(&self) -> [f64; 6] {
        [self.format, self.violation, self.major, self.sub, self.ground, self.reason]
    }

    pub fn in_range(&self) -> bool {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        (self.format == 0.0 || self.format == 1.0)
            && (self.violation == 0.0 || self.violation == 1.0)
            && unit(self.reason)
            && unit(self.major)
            && unit(self.sub)
            && (0.0..=2.0).contains(&self.ground)
    }
}

/// λ₁…λ₆ in the order (format, violation, major, sub, ground, reason).
///
/// Serialized as a six-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct WeightVector([f64; 6]);

impl WeightVector {
    pub fn new(weights: [f64; 6]) -> Result<Self, RewardError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(RewardError::InvalidWeights(weights));
        }
        Ok(Self(weights))
    }

    pub fn uniform(value: f64) -> Result<Self, RewardError> {
        Self::new([value; 6])
    }

    pub fn as_array(&self) -> [f64; 6] {
        self.0
    }

    pub fn format(&self) -> f64 {
        self.0[0]
    }

    pub fn violation(&self) -> f64 {
        self.0[1]
    }

    pub fn major(&self) -> f64 {
        self.0[2]
    }

    pub fn sub(&self) -> f64 {
        self.0[3]
    }

    pub fn ground(&self) -> f64 {
        self.0[4]
    }

    pub fn reason(&self) -> f64 {
        self.0[5]
    }
}

impl TryFrom<[f64; 6]> for WeightVector {
    type Error = RewardError;

    fn try_from(w: [f64; 6]) -> Result<Self, Self::Error> {
        Self::new(w)
    }
}

impl From<WeightVector> for [f64; 6] {
    fn from(w: WeightVector) -> Self {
        w.0
    }
}

pub fn aggregate(b: &RewardBreakdown, w: &WeightVector) -> f64 {
    b.as_array().iter().zip(w.0).map(|(c, l)| c * l).sum()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub tversky: TverskyParams,
    pub reason_mode: ReasonMode,
}

/// Everything learned while scoring one response.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredResponse {
    pub parsed: Result<ModerationOutput, ParseFailure>,
    pub breakdown: RewardBreakdown,
    pub grounding: GroundingScore,
}

pub fn score_parsed(
    pred: &ModerationOutput,
    gt: &GroundTruth,
    config: &RewardConfig,
    provider: &dyn EmbeddingProvider,
) -> (RewardBreakdown, GroundingScore) {
    let grounding = grounding_detail(pred, gt);
    let breakdown = RewardBreakdown {
        format: 1.0,
        violation: violation_reward(pred, gt),
        reason: reason_reward(&pred.reason, &gt.reference_chain, provider, config.reason_mode),
        major: tversky_reward(&major_set(&pred.results), &major_set(&gt.results), config.tversky),
        sub: tversky_reward(&sub_set(&pred.results), &sub_set(&gt.results), config.tversky),
        ground: grounding.value,
    };
    (breakdown, grounding)
}

pub fn score_response(
    raw: &str,
    gt: &GroundTruth,
    config: &RewardConfig,
    provider: &dyn EmbeddingProvider,
) -> ScoredResponse {
    match parse_output(raw) {
        Ok(pred) => {
            let (breakdown, grounding) = score_parsed(&pred, gt, config, provider);
            ScoredResponse {
                parsed: Ok(pred),
                breakdown,
                grounding,
            }
        }
        Err(failure) => ScoredResponse {
            parsed: Err(failure),
            breakdown: RewardBreakdown::zero(),
            grounding: GroundingScore {
                value: 0.0,
                applicable: !gt.results.is_empty(),
                mean_iou: (!gt.results.is_empty()).then_some(0.0),
                pairs: 0,
            },
        },
    }
}

/// All six components for a raw response. A format failure zeroes every component.
pub fn compute_breakdown(
    raw: &str,
    gt: &GroundTruth,
    config: &RewardConfig,
    provider: &dyn EmbeddingProvider,
) -> RewardBreakdown {
    let scored = score_response(raw, gt, config, provider);
    debug_assert_eq!(scored.breakdown.format, format_reward(raw));
    scored.breakdown
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::output_format::serialize_output;
    use crate::similarity::ReferenceEmbedder;

    fn iv(a: f64, b: f64) -> TimeInterval {
        TimeInterval::new(a, b).unwrap()
    }

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    fn gt_one(major: &str, sub: &str, ground: TimeInterval, duration: f64) -> GroundTruth {
        GroundTruth::new(
            true,
            vec![ResultEntry::new(major, sub, ground)],
            ReasoningChain::new("a skincare ad", "blood at four seconds", "gory content violation"),
            duration,
        )
        .unwrap()
    }

    #[test]
    fn tversky_examples() {
        let p = TverskyParams::default();
        assert_eq!(tversky_reward(&set(&["m1", "m2"]), &set(&["m1", "m2"]), p), 1.0);
        assert_eq!(tversky_reward(&set(&["m1", "m2"]), &set(&["m1", "m2"]), TverskyParams::new(3.0, 0.0).unwrap()), 1.0);
        assert!((tversky_reward(&set(&["a", "b"]), &set(&["b", "c"]), p) - 0.5).abs() < 1e-15);
        assert_eq!(tversky_reward(&set(&["a"]), &set(&["b"]), p), 0.0);
        assert_eq!(tversky_reward(&set(&[]), &set(&[]), p), 1.0);
        assert_eq!(tversky_reward(&set(&["a"]), &set(&[]), TverskyParams::new(0.0, 1.0).unwrap()), 0.0);
    }

    #[test]
    fn tversky_asymmetric_weights() {
        // P={a,b}, G={a}: one false positive
        let fp_heavy = TverskyParams::new(1.0, 0.0).unwrap();
        let fn_heavy = TverskyParams::new(0.0, 1.0).unwrap();
        assert_eq!(tversky_reward(&set(&["a", "b"]), &set(&["a"]), fp_heavy), 0.5);
        assert_eq!(tversky_reward(&set(&["a", "b"]), &set(&["a"]), fn_heavy), 1.0);
    }

    #[test]
    fn tversky_params_validated() {
        assert!(TverskyParams::new(0.0, 0.0).is_err());
        assert!(TverskyParams::new(-0.1, 1.0).is_err());
        assert!(TverskyParams::new(f64::NAN, 1.0).is_err());
        assert!(serde_json::from_str::<TverskyParams>(r#"{"alpha":0,"beta":0}"#).is_err());
    }

    #[test]
    fn violation_examples() {
        let gt_y = gt_one("m", "s", iv(0.0, 1.0), 10.0);
        let mut pred = gt_y.as_output();
        assert_eq!(violation_reward(&pred, &gt_y), 1.0);
        pred.violation = false;
        assert_eq!(violation_reward(&pred, &gt_y), 0.0);
        let gt_n = GroundTruth::new(false, vec![], ReasoningChain::default(), 10.0).unwrap();
        assert_eq!(violation_reward(&ModerationOutput::empty(), &gt_n), 1.0);
    }

    #[test]
    fn match_examples() {
        let g = vec![ResultEntry::new("m", "s", iv(0.0, 10.0))];
        assert_eq!(match_entries(&[ResultEntry::new("m", "x", iv(1.0, 2.0))], &g), vec![(0, 0)]);
        // IoU 0.8 and 0.3 against the same reference entry
        let preds = vec![
            ResultEntry::new("m", "s", iv(0.0, 3.0)),
            ResultEntry::new("m", "s", iv(0.0, 8.0)),
        ];
        assert!((preds[1].ground.iou(&g[0].ground) - 0.8).abs() < 1e-12);
        assert!((preds[0].ground.iou(&g[0].ground) - 0.3).abs() < 1e-12);
        assert_eq!(match_entries(&preds, &g), vec![(1, 0)]);
        assert!(match_entries(&[ResultEntry::new("other", "s", iv(0.0, 10.0))], &g).is_empty());
    }

    #[test]
    fn match_beats_greedy_when_greedy_is_suboptimal() {
        // Greedy takes (0,0) at 0.667 and strands pred 1; optimal crosses over.
        let g = vec![
            ResultEntry::new("m", "s", iv(0.0, 10.0)),
            ResultEntry::new("m", "s", iv(5.0, 15.0)),
        ];
        let p = vec![
            ResultEntry::new("m", "s", iv(2.0, 12.0)),
            ResultEntry::new("m", "s", iv(0.0, 4.0)),
        ];
        assert_eq!(greedy_match(&p, &g), vec![(0, 0), (1, 1)]);
        assert_eq!(match_entries(&p, &g), vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn grounding_examples() {
        let gt = gt_one("m", "s", iv(5.0, 15.0), 20.0);
        let mut pred = gt.as_output();
        assert!((grounding_reward(&pred, &gt) - 2.0).abs() < 1e-12);
        pred.results[0].ground = iv(0.0, 10.0);
        // IoU 5/15, boundary 1 - 10/20
        assert!((grounding_reward(&pred, &gt) - (1.0 / 3.0 + 0.5)).abs() < 1e-12);
        let far = gt_one("m", "s", iv(0.0, 1.0), 20.0);
        let mut pred = far.as_output();
        pred.results[0].ground = iv(19.0, 20.0);
        // gap 19 + 19 >= duration
        assert_eq!(grounding_reward(&pred, &far), 0.0);
    }

    #[test]
    fn grounding_not_applicable_without_reference_entries() {
        let gt = GroundTruth::new(false, vec![], ReasoningChain::default(), 5.0).unwrap();
        let d = grounding_detail(&ModerationOutput::empty(), &gt);
        assert_eq!(d.value, 0.0);
        assert!(!d.applicable);
        let gt = gt_one("m", "s", iv(0.0, 1.0), 5.0);
        let d = grounding_detail(&ModerationOutput::empty(), &gt);
        assert!(d.applicable);
        assert_eq!(d.mean_iou, Some(0.0));
    }

    #[test]
    fn reason_examples() {
        let e = ReferenceEmbedder::default();
        let chain = ReasoningChain::new("a b", "c", "d e");
        assert!((reason_reward(&chain, &chain, &e, ReasonMode::FullChain) - 1.0).abs() < 1e-12);
        assert!((reason_reward(&chain, &chain, &e, ReasonMode::PerSection) - 1.0).abs() < 1e-12);
        assert_eq!(reason_reward(&ReasoningChain::default(), &chain, &e, ReasonMode::FullChain), 0.0);
    }

    #[test]
    fn breakdown_examples() {
        let e = ReferenceEmbedder::default();
        let cfg = RewardConfig::default();
        let gt = gt_one("discomforting_content", "gory_content", iv(4.0, 9.0), 30.0);
        assert_eq!(compute_breakdown("garbage", &gt, &cfg, &e), RewardBreakdown::zero());

        let perfect = serialize_output(&gt.as_output()).unwrap();
        let b = compute_breakdown(&perfect, &gt, &cfg, &e);
        assert_eq!(b.format, 1.0);
        assert_eq!(b.violation, 1.0);
        assert_eq!(b.major, 1.0);
        assert_eq!(b.sub, 1.0);
        assert!((b.ground - 2.0).abs() < 1e-12);
        assert!((b.reason - 1.0).abs() < 1e-12);

        let mut wrong_sub = gt.as_output();
        wrong_sub.results[0].sub = "medical_procedures".into();
        let b = compute_breakdown(&serialize_output(&wrong_sub).unwrap(), &gt, &cfg, &e);
        assert_eq!(b.major, 1.0);
        assert_eq!(b.sub, 0.0);
    }

    #[test]
    fn aggregate_examples() {
        let ones = RewardBreakdown {
            format: 1.0,
            violation: 1.0,
            reason: 1.0,
            major: 1.0,
            sub: 1.0,
            ground: 1.0,
        };
        let w = WeightVector::new([1.0, 1.0, 0.5, 0.3, 0.0, 0.1]).unwrap();
        assert!((aggregate(&ones, &w) - 2.9).abs() < 1e-12);
        assert_eq!(aggregate(&ones, &WeightVector::uniform(0.0).unwrap()), 0.0);
        let b = RewardBreakdown {
            ground: 1.7,
            ..RewardBreakdown::zero()
        };
        assert_eq!(aggregate(&b, &WeightVector::new([0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap()), 1.7);
        assert!(WeightVector::new([1.0, -1.0, 0.0, 0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn ground_truth_validation() {
        let chain = ReasoningChain::default();
        assert!(GroundTruth::new(false, vec![], chain.clone(), 0.0).is_err());
        assert!(GroundTruth::new(true, vec![], chain.clone(), 5.0).is_err());
        let out_of_range = ResultEntry::new("m", "s", iv(1.0, 6.0));
        assert!(matches!(
            GroundTruth::new(true, vec![out_of_range], chain.clone(), 5.0),
            Err(GroundTruthError::IntervalOutOfRange { .. })
        ));
        let bad_label = ResultEntry::new("Major Label", "s", iv(1.0, 2.0));
        assert!(matches!(
            GroundTruth::new(true, vec![bad_label], chain, 5.0),
            Err(GroundTruthError::BadLabel { .. })
        ));
    }
}
