//! Active-stage routing: each rollout is classified by its failure mode into
//! the SFT buffer, the weighted RL buffer, or the standard RL flow.

use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::Phase;
use crate::data_gen::candidates_for;
use crate::grpo_sim::{
    evaluate, expected_breakdown, rl_step, rollout_group, sft_step, GrpoError, RolloutGroup, ScoredSample, Scorer,
    StepMetrics, ToyPolicy,
};
use crate::output_format::{normalize_label, ModerationOutput, ParseFailure, ReasoningChain, ResultEntry, TimeInterval};
use crate::reward_engine::{grounding_detail, major_set, sub_set, GroundTruth, RewardBreakdown, WeightVector};
use crate::taxonomy::LabelTree;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RouterError {
    #[error("invalid routing thresholds: {0}")]
    InvalidThresholds(String),
    #[error("{destination:?} sample pushed into {kind:?} buffer")]
    KindMismatch { destination: Destination, kind: BufferKind },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingThresholds {
    pub iou_low: f64,
    pub reason_low: f64,
    pub hard_weight: f64,
    pub standard_weight: f64,
    pub batch_size: usize,
}

impl Default for RoutingThresholds {
    fn default() -> Self {
        Self {
            iou_low: 0.5,
            reason_low: 0.7,
            hard_weight: 1.0,
            standard_weight: 0.1,
            batch_size: 16,
        }
    }
}

impl RoutingThresholds {
    pub fn validate(&self) -> Result<(), RouterError> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.iou_low) || !unit(self.reason_low) {
            return Err(RouterError::InvalidThresholds("iou_low and reason_low must lie in [0, 1]".into()));
        }
        if !(self.standard_weight >= 0.0 && self.standard_weight < self.hard_weight && self.hard_weight.is_finite()) {
            return Err(RouterError::InvalidThresholds(format!(
                "need 0 <= standard_weight < hard_weight, got {} and {}",
                self.standard_weight, self.hard_weight
            )));
        }
        if self.batch_size == 0 {
            return Err(RouterError::InvalidThresholds("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Destination {
    Sft,
    RlHard,
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trigger {
    ViolationMiss,
    MajorMiss,
    SubMiss,
    LowIou,
    ReasonDrift,
    None,
}

impl Trigger {
    pub fn destination(self) -> Destination {
        match self {
            Trigger::ViolationMiss | Trigger::MajorMiss => Destination::Sft,
            Trigger::SubMiss | Trigger::LowIou | Trigger::ReasonDrift => Destination::RlHard,
            Trigger::None => Destination::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutedSample {
    pub sample_id: String,
    pub destination: Destination,
    pub trigger: Trigger,
    /// Reward weight for RL destinations; SFT samples carry 0.
    pub weight: f64,
    pub step: usize,
}

/// Classifies one response. Parse failures count as violation misses.
pub fn route(
    sample_id: &str,
    pred: &Result<ModerationOutput, ParseFailure>,
    gt: &GroundTruth,
    breakdown: &RewardBreakdown,
    th: &RoutingThresholds,
    step: usize,
) -> RoutedSample {
    let trigger = match pred {
        Err(_) => Trigger::ViolationMiss,
        Ok(p) if p.violation != gt.violation => Trigger::ViolationMiss,
        Ok(p) if major_set(&p.results) != major_set(&gt.results) => Trigger::MajorMiss,
        Ok(p) if sub_set(&p.results) != sub_set(&gt.results) => Trigger::SubMiss,
        Ok(p) if grounding_detail(p, gt).mean_iou.is_some_and(|iou| iou < th.iou_low) => Trigger::LowIou,
        Ok(_) if breakdown.reason < th.reason_low => Trigger::ReasonDrift,
        Ok(_) => Trigger::None,
    };
    let destination = trigger.destination();
    let weight = match destination {
        Destination::Sft => 0.0,
        Destination::RlHard => th.hard_weight,
        Destination::Standard => th.standard_weight,
    };
    RoutedSample {
        sample_id: sample_id.to_string(),
        destination,
        trigger,
        weight,
        step,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BufferKind {
    Sft,
    Rl,
}

impl BufferKind {
    pub fn accepts(self, d: Destination) -> bool {
        matches!((self, d), (BufferKind::Sft, Destination::Sft) | (BufferKind::Rl, Destination::RlHard))
    }
}

/// FIFO queue drained as a whole once it holds `batch_size` entries.
/// `P` is whatever the trainer needs to replay the sample later.
#[derive(Debug, Clone)]
pub struct TrainingBuffer<P = ()> {
    kind: BufferKind,
    batch_size: usize,
    entries: VecDeque<(RoutedSample, P)>,
    pushed: usize,
    drained: usize,
}

impl<P> TrainingBuffer<P> {
    pub fn new(kind: BufferKind, batch_size: usize) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        Self {
            kind,
            batch_size,
            entries: VecDeque::new(),
            pushed: 0,
            drained: 0,
        }
    }

    pub fn kind(&self) -> BufferKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pushed(&self) -> usize {
        self.pushed
    }

    pub fn drained(&self) -> usize {
        self.drained
    }

    pub fn resident(&self) -> impl Iterator<Item = &RoutedSample> {
        self.entries.iter().map(|(s, _)| s)
    }

    pub fn push_with(&mut self, sample: RoutedSample, payload: P) -> Result<Option<Vec<(RoutedSample, P)>>, RouterError> {
        if !self.kind.accepts(sample.destination) {
            return Err(RouterError::KindMismatch {
                destination: sample.destination,
                kind: self.kind,
            });
        }
        self.entries.push_back((sample, payload));
        self.pushed += 1;
        if self.entries.len() >= self.batch_size {
            let batch: Vec<_> = self.entries.drain(..).collect();
            self.drained += batch.len();
            return Ok(Some(batch));
        }
        Ok(None)
    }
}

impl TrainingBuffer<()> {
    pub fn push_and_maybe_drain(&mut self, sample: RoutedSample) -> Result<Option<Vec<RoutedSample>>, RouterError> {
        Ok(self
            .push_with(sample, ())?
            .map(|batch| batch.into_iter().map(|(s, _)| s).collect()))
    }
}

/// One training video for the active stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub id: String,
    pub gt: GroundTruth,
    pub candidates: Vec<String>,
    pub correct_action: usize,
    /// Visited before ordinary entries in the next epoch.
    pub priority: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActiveDataset {
    entries: Vec<DatasetEntry>,
    index: HashMap<String, usize>,
}

impl ActiveDataset {
    pub fn new(entries: Vec<DatasetEntry>) -> Self {
        let mut ds = Self::default();
        for e in entries {
            ds.upsert(e);
        }
        ds
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&DatasetEntry> {
        self.index.get(id).map(|&i| &self.entries[i])
    }

    /// Inserts or replaces by id. Returns the position and whether it replaced.
    pub fn upsert(&mut self, entry: DatasetEntry) -> (usize, bool) {
        match self.index.get(&entry.id) {
            Some(&i) => {
                self.entries[i] = entry;
                (i, true)
            }
            None => {
                let i = self.entries.len();
                self.index.insert(entry.id.clone(), i);
                self.entries.push(entry);
                (i, false)
            }
        }
    }

    /// Priority entries in insertion order, then the rest shuffled.
    pub fn epoch_order(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut first: Vec<usize> = (0..self.len()).filter(|&i| self.entries[i].priority).collect();
        let mut rest: Vec<usize> = (0..self.len()).filter(|&i| !self.entries[i].priority).collect();
        rest.shuffle(rng);
        first.extend(rest);
        first
    }

    pub fn clear_priority(&mut self) {
        self.entries.iter_mut().for_each(|e| e.priority = false);
    }
}

/// A reviewer-labelled hard sample, one JSONL line of a feedback file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackRecord {
    pub id: String,
    pub violation: bool,
    pub results: Vec<RawResult>,
    #[serde(default)]
    pub reasoning: ReasoningChain,
    pub duration: f64,
    #[serde(default)]
    pub source: Option<String>,
}

/// Result entry with an unchecked interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawResult {
    pub major: String,
    pub sub: String,
    pub ground: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Schema,
    EmptyId,
    IntervalOrder,
    IntervalOutOfRange,
    ViolationMismatch,
    Duration,
    BadLabel,
    UnknownLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRejection {
    pub line: usize,
    pub id: Option<String>,
    pub reason: RejectReason,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestReport {
    pub added: Vec<String>,
    /// Dataset positions whose entry was replaced; their policy rows are stale.
    pub replaced: Vec<usize>,
    pub rejected: Vec<FeedbackRejection>,
}

impl FeedbackRecord {
    pub fn to_ground_truth(&self, tree: &LabelTree) -> Result<GroundTruth, (RejectReason, String)> {
        use crate::reward_engine::GroundTruthError as E;
        if self.id.trim().is_empty() {
            return Err((RejectReason::EmptyId, "id is empty".into()));
        }
        let mut results = Vec::with_capacity(self.results.len());
        for (i, r) in self.results.iter().enumerate() {
            let (l, rr) = r.ground;
            if !(l.is_finite() && rr.is_finite() && l >= 0.0) {
                return Err((RejectReason::IntervalOutOfRange, format!("result {i}: interval [{l}, {rr}] is not a valid time range")));
            }
            if l > rr {
                return Err((RejectReason::IntervalOrder, format!("result {i}: start {l} is after end {rr}")));
            }
            let ground = TimeInterval::new(l, rr).map_err(|e| (RejectReason::IntervalOutOfRange, e.to_string()))?;
            results.push(ResultEntry::new(normalize_label(&r.major), normalize_label(&r.sub), ground));
        }
        let gt = GroundTruth::new(self.violation, results, self.reasoning.clone(), self.duration).map_err(|e| {
            let reason = match e {
                E::Duration(_) => RejectReason::Duration,
                E::ViolationMismatch { .. } => RejectReason::ViolationMismatch,
                E::IntervalOutOfRange { .. } => RejectReason::IntervalOutOfRange,
                E::BadLabel { .. } => RejectReason::BadLabel,
            };
            (reason, e.to_string())
        })?;
        for (i, r) in gt.results.iter().enumerate() {
            if tree.lookup(&r.major, &r.sub).is_none() {
                return Err((RejectReason::UnknownLabel, format!("result {i}: {}/{} is not in the taxonomy", r.major, r.sub)));
            }
        }
        Ok(gt)
    }
}

/// Parses one feedback line; `line` is 1-based and only used for messages.
pub fn parse_feedback_line(line: usize, text: &str) -> Result<FeedbackRecord, FeedbackRejection> {
    serde_json::from_str(text).map_err(|e| FeedbackRejection {
        line,
        id: serde_json::from_str::<serde_json::Value>(text)
            .ok()
            .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_string)),
        reason: RejectReason::Schema,
        message: e.to_string(),
    })
}

/// Adds reviewer feedback to the dataset, replacing entries with the same id.
/// Invalid records are reported and skipped; accepted ones get `k` candidates
/// and are visited first in the next epoch.
pub fn ingest_reviewer_feedback(
    dataset: &mut ActiveDataset,
    records: &[Result<FeedbackRecord, FeedbackRejection>],
    tree: &LabelTree,
    k: usize,
    seed: u64,
) -> IngestReport {
    let mut report = IngestReport::default();
    for (i, rec) in records.iter().enumerate() {
        let rec = match rec {
            Ok(r) => r,
            Err(rej) => {
                report.rejected.push(rej.clone());
                continue;
            }
        };
        let gt = match rec.to_ground_truth(tree) {
            Ok(gt) => gt,
            Err((reason, message)) => {
                report.rejected.push(FeedbackRejection {
                    line: i + 1,
                    id: Some(rec.id.clone()),
                    reason,
                    message,
                });
                continue;
            }
        };
        let (candidates, _) = candidates_for(tree, &gt, k, seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let (pos, replaced) = dataset.upsert(DatasetEntry {
            id: rec.id.clone(),
            gt,
            candidates,
            correct_action: 0,
            priority: true,
        });
        if replaced {
            report.replaced.push(pos);
        } else {
            report.added.push(rec.id.clone());
        }
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage3Mode {
    /// Failure-mode routing with SFT and weighted RL buffers.
    Active,
    /// Every rollout group gets an immediate RL step with weight 1.
    UniformBaseline,
}

/// Which response a sample is routed on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouteOn {
    /// The first rollout of the sampled group.
    #[default]
    FirstRollout,
    /// The policy's most likely candidate.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage3Config {
    pub route_on: RouteOn,
    pub group_size: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub steps: usize,
    pub eval_every: usize,
}

impl Default for Stage3Config {
    fn default() -> Self {
        Self {
            route_on: RouteOn::FirstRollout,
            group_size: 8,
            epsilon: 1e-6,
            seed: 0,
            steps: 2000,
            eval_every: 10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage3Report {
    pub metrics: Vec<StepMetrics>,
    pub routing: Vec<RoutedSample>,
    /// `(updates so far, mean expected reward, mean max reward)`.
    pub evals: Vec<(usize, f64, f64)>,
    pub sft_batches: usize,
    pub rl_batches: usize,
    pub sft_pushed: usize,
    pub sft_drained: usize,
    pub rl_pushed: usize,
    pub rl_drained: usize,
    pub final_components: RewardBreakdown,
}

impl Stage3Report {
    /// First evaluation point where expected reward reaches `fraction` of the maximum.
    pub fn updates_to_reach(&self, fraction: f64) -> Option<usize> {
        self.evals
            .iter()
            .find(|(_, e, m)| *e >= fraction * m)
            .map(|(step, _, _)| *step)
    }
}

/// Scores every dataset entry against its annotation, using dataset
/// positions as policy rows.
pub fn score_dataset(scorer: &Scorer, dataset: &ActiveDataset) -> Result<Vec<ScoredSample>, RouterError> {
    dataset
        .entries()
        .iter()
        .enumerate()
        .map(|(row, e)| {
            scorer
                .score_sample(row, &e.id, &e.candidates, &e.gt, e.correct_action)
                .map_err(RouterError::from)
        })
        .collect()
}

/// Runs the active stage over `samples` (rows of `policy`) with reward weights `weights`.
pub fn stage3_loop(
    policy: &mut ToyPolicy,
    samples: &[ScoredSample],
    order_source: &ActiveDataset,
    weights: &WeightVector,
    th: &RoutingThresholds,
    config: &Stage3Config,
    mode: Stage3Mode,
) -> Result<Stage3Report, RouterError> {
    th.validate()?;
    if samples.is_empty() {
        return Err(RouterError::EmptyDataset);
    }
    if config.steps == 0 || config.eval_every == 0 || config.group_size < 2 {
        return Err(RouterError::InvalidConfig(
            "steps and eval_every must be positive and group_size at least 2".into(),
        ));
    }
    if order_source.len() != samples.len() {
        return Err(RouterError::InvalidConfig(format!(
            "dataset has {} entries but {} scored samples",
            order_source.len(),
            samples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sft: TrainingBuffer<usize> = TrainingBuffer::new(BufferKind::Sft, th.batch_size);
    let mut rl: TrainingBuffer<RolloutGroup> = TrainingBuffer::new(BufferKind::Rl, th.batch_size);
    let mut report = Stage3Report {
        metrics: Vec::with_capacity(config.steps),
        routing: Vec::with_capacity(config.steps),
        evals: Vec::new(),
        sft_batches: 0,
        rl_batches: 0,
        sft_pushed: 0,
        sft_drained: 0,
        rl_pushed: 0,
        rl_drained: 0,
        final_components: RewardBreakdown::zero(),
    };
    let (e0, m0) = evaluate(policy, samples, weights)?;
    report.evals.push((0, e0, m0));

    let mut order: Vec<usize> = order_source.epoch_order(&mut rng);
    order.reverse();
    for step in 0..config.steps {
        let idx = match order.pop() {
            Some(i) => i,
            None => {
                let mut next: Vec<usize> = (0..samples.len()).collect();
                next.shuffle(&mut rng);
                next.reverse();
                order = next;
                order.pop().expect("dataset is non-empty")
            }
        };
        let sample = &samples[idx];
        let group = rollout_group(policy, sample, weights, config.group_size, config.epsilon, &mut rng)?;
        let breakdowns = group.breakdowns();
        let mean_reward = group.mean_reward();

        match mode {
            Stage3Mode::UniformBaseline => {
                rl_step(policy, &group, 1.0)?;
                report.routing.push(RoutedSample {
                    sample_id: sample.id.clone(),
                    destination: Destination::Standard,
                    trigger: Trigger::None,
                    weight: 1.0,
                    step,
                });
            }
            Stage3Mode::Active => {
                let action = match config.route_on {
                    RouteOn::Greedy => policy.greedy(sample.row)?,
                    RouteOn::FirstRollout => group.rollouts[0].action,
                };
                let scored = &sample.scores[action];
                let routed = route(&sample.id, &scored.parsed, &sample.gt, &scored.breakdown, th, step);
                report.routing.push(routed.clone());
                match routed.destination {
                    Destination::Standard => rl_step(policy, &group, th.standard_weight)?,
                    Destination::Sft => {
                        if let Some(batch) = sft.push_with(routed, idx)? {
                            report.sft_batches += 1;
                            for (_, i) in batch {
                                sft_step(policy, samples[i].row, samples[i].correct_action)?;
                            }
                        }
                    }
                    Destination::RlHard => {
                        if let Some(batch) = rl.push_with(routed, group)? {
                            report.rl_batches += 1;
                            for (s, g) in batch {
                                rl_step(policy, &g, s.weight)?;
                            }
                        }
                    }
                }
            }
        }

        let eval_reward = if (step + 1) % config.eval_every == 0 {
            let (e, m) = evaluate(policy, samples, weights)?;
            report.evals.push((step + 1, e, m));
            Some(e)
        } else {
            None
        };
        let n = breakdowns.len() as f64;
        let mut acc = [0.0; 6];
        for b in &breakdowns {
            for (slot, c) in acc.iter_mut().zip(b.as_array()) {
                *slot += c / n;
            }
        }
        let [format, violation, major, sub, ground, reason] = acc;
        report.metrics.push(StepMetrics {
            step,
            phase: Phase::Grounding,
            sample_id: sample.id.clone(),
            mean_reward,
            components: RewardBreakdown {
                format,
                violation,
                reason,
                major,
                sub,
                ground,
            },
            eval_reward,
        });
    }
    report.sft_pushed = sft.pushed();
    report.sft_drained = sft.drained();
    report.rl_pushed = rl.pushed();
    report.rl_drained = rl.drained();
    report.final_components = expected_breakdown(policy, samples)?;
    Ok(report)
}
