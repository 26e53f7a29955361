//! Group-relative advantages and a toy categorical policy.
//!
//! Each training sample has K pre-generated candidate responses and the
//! policy keeps one row of logits per sample. A rollout picks a candidate;
//! the reward engine scores it. Candidate scores are computed once per
//! (sample, reference annotation) pair since scoring is pure.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::{CurriculumError, CurriculumTracker, Phase, PhaseSchedule, PhaseTransition};
use crate::reward_engine::{
    aggregate, score_response, GroundTruth, RewardBreakdown, RewardConfig, ScoredResponse, WeightVector,
};
use crate::similarity::EmbeddingProvider;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GrpoError {
    #[error("a group needs at least two rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("sample has no candidate outputs")]
    NoCandidates,
    #[error("action {action} out of range for {k} candidates")]
    ActionOutOfRange { action: usize, k: usize },
    #[error("policy row {0} does not exist")]
    UnknownRow(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
}

/// `(r_i − mean) / (population std + ε)`; all zeros when every reward is equal.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.len() < 2 {
        return Err(GrpoError::GroupTooSmall(rewards.len()));
    }
    if rewards.iter().all(|r| *r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + epsilon;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Per-sample categorical policy over candidate indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    logits: Vec<Vec<f64>>,
    lr: f64,
    temperature: f64,
}

impl ToyPolicy {
    /// Uniform policy over `k` candidates for each of `rows` samples.
    pub fn uniform(rows: usize, k: usize, lr: f64, temperature: f64) -> Result<Self, GrpoError> {
        if k == 0 {
            return Err(GrpoError::NoCandidates);
        }
        if !(lr.is_finite() && lr >= 0.0) || !(temperature.is_finite() && temperature > 0.0) {
            return Err(GrpoError::InvalidConfig(format!(
                "lr must be >= 0 and temperature > 0, got lr={lr} temperature={temperature}"
            )));
        }
        Ok(Self {
            logits: vec![vec![0.0; k]; rows],
            lr,
            temperature,
        })
    }

    pub fn rows(&self) -> usize {
        self.logits.len()
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    /// Appends a uniform row; returns its index.
    pub fn push_row(&mut self, k: usize) -> usize {
        self.logits.push(vec![0.0; k]);
        self.logits.len() - 1
    }

    pub fn logits(&self, row: usize) -> Result<&[f64], GrpoError> {
        self.logits.get(row).map(|r| r.as_slice()).ok_or(GrpoError::UnknownRow(row))
    }

    pub fn set_logits(&mut self, row: usize, logits: Vec<f64>) -> Result<(), GrpoError> {
        let slot = self.logits.get_mut(row).ok_or(GrpoError::UnknownRow(row))?;
        if logits.is_empty() {
            return Err(GrpoError::NoCandidates);
        }
        *slot = logits;
        Ok(())
    }

    pub fn probs(&self, row: usize) -> Result<Vec<f64>, GrpoError> {
        Ok(softmax(self.logits(row)?, self.temperature))
    }

    pub fn sample_action(&self, row: usize, rng: &mut impl Rng) -> Result<usize, GrpoError> {
        let probs = self.probs(row)?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return Ok(i);
            }
        }
        Ok(probs.len() - 1)
    }

    /// Most likely candidate, lowest index on ties.
    pub fn greedy(&self, row: usize) -> Result<usize, GrpoError> {
        let logits = self.logits(row)?;
        let mut best = 0;
        for (i, z) in logits.iter().enumerate() {
            if *z > logits[best] {
                best = i;
            }
        }
        Ok(best)
    }
}

/// Candidates of one sample with their precomputed scores against one annotation.
#[derive(Debug, Clone)]
pub struct ScoredSample {
    pub id: String,
    /// Policy row holding this sample's logits.
    pub row: usize,
    pub gt: GroundTruth,
    pub candidates: Vec<String>,
    pub scores: Vec<ScoredResponse>,
    pub correct_action: usize,
}

impl ScoredSample {
    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    pub fn reward(&self, action: usize, weights: &WeightVector) -> f64 {
        aggregate(&self.scores[action].breakdown, weights)
    }

    pub fn max_reward(&self, weights: &WeightVector) -> f64 {
        (0..self.k()).map(|a| self.reward(a, weights)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Policy-expected aggregate reward for this sample.
    pub fn expected_reward(&self, policy: &ToyPolicy, weights: &WeightVector) -> Result<f64, GrpoError> {
        let probs = policy.probs(self.row)?;
        Ok(probs.iter().enumerate().map(|(a, p)| p * self.reward(a, weights)).sum())
    }
}

/// Scores candidate sets against reference annotations.
pub struct Scorer<'a> {
    pub config: RewardConfig,
    pub provider: &'a dyn EmbeddingProvider,
}

impl<'a> Scorer<'a> {
    pub fn new(config: RewardConfig, provider: &'a dyn EmbeddingProvider) -> Self {
        Self { config, provider }
    }

    pub fn score_sample(
        &self,
        row: usize,
        id: &str,
        candidates: &[String],
        gt: &GroundTruth,
        correct_action: usize,
    ) -> Result<ScoredSample, GrpoError> {
        if candidates.is_empty() {
            return Err(GrpoError::NoCandidates);
        }
        Ok(ScoredSample {
            id: id.to_string(),
            row,
            gt: gt.clone(),
            candidates: candidates.to_vec(),
            scores: candidates
                .iter()
                .map(|c| score_response(c, gt, &self.config, self.provider))
                .collect(),
            correct_action,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub sample_id: String,
    pub raw: String,
    pub breakdown: RewardBreakdown,
    pub reward: f64,
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub sample_id: String,
    pub row: usize,
    pub rollouts: Vec<Rollout>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn mean_reward(&self) -> f64 {
        self.rollouts.iter().map(|r| r.reward).sum::<f64>() / self.rollouts.len() as f64
    }

    pub fn breakdowns(&self) -> Vec<RewardBreakdown> {
        self.rollouts.iter().map(|r| r.breakdown).collect()
    }
}

/// Samples `group_size` candidates from the policy and attaches advantages.
pub fn rollout_group(
    policy: &ToyPolicy,
    sample: &ScoredSample,
    weights: &WeightVector,
    group_size: usize,
    epsilon: f64,
    rng: &mut impl Rng,
) -> Result<RolloutGroup, GrpoError> {
    if sample.k() == 0 {
        return Err(GrpoError::NoCandidates);
    }
    if group_size < 2 {
        return Err(GrpoError::GroupTooSmall(group_size));
    }
    let mut rollouts = Vec::with_capacity(group_size);
    for _ in 0..group_size {
        let action = policy.sample_action(sample.row, rng)?;
        let breakdown = sample.scores[action].breakdown;
        rollouts.push(Rollout {
            sample_id: sample.id.clone(),
            raw: sample.candidates[action].clone(),
            breakdown,
            reward: aggregate(&breakdown, weights),
            action,
        });
    }
    let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
    let advantages = group_advantages(&rewards, epsilon)?;
    Ok(RolloutGroup {
        sample_id: sample.id.clone(),
        row: sample.row,
        rollouts,
        advantages,
    })
}

/// `logit[a] += lr · weight · mean advantage of rollouts that chose a`.
pub fn rl_step(policy: &mut ToyPolicy, group: &RolloutGroup, sample_weight: f64) -> Result<(), GrpoError> {
    let lr = policy.lr;
    let row = policy
        .logits
        .get_mut(group.row)
        .ok_or(GrpoError::UnknownRow(group.row))?;
    let k = row.len();
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for (r, adv) in group.rollouts.iter().zip(&group.advantages) {
        if r.action >= k {
            return Err(GrpoError::ActionOutOfRange { action: r.action, k });
        }
        sums[r.action] += adv;
        counts[r.action] += 1;
    }
    for a in 0..k {
        if counts[a] > 0 {
            row[a] += lr * sample_weight * sums[a] / counts[a] as f64;
        }
    }
    Ok(())
}

/// One cross-entropy gradient step toward `gt_action`.
pub fn sft_step(policy: &mut ToyPolicy, row: usize, gt_action: usize) -> Result<(), GrpoError> {
    let probs = policy.probs(row)?;
    if gt_action >= probs.len() {
        return Err(GrpoError::ActionOutOfRange {
            action: gt_action,
            k: probs.len(),
        });
    }
    let scale = policy.lr / policy.temperature;
    let logits = &mut policy.logits[row];
    for (a, p) in probs.iter().enumerate() {
        let target = if a == gt_action { 1.0 } else { 0.0 };
        logits[a] += scale * (target - p);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub lr: f64,
    pub temperature: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub steps: usize,
    pub eval_every: usize,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            lr: 1.0,
            temperature: 1.0,
            epsilon: 1e-6,
            seed: 0,
            steps: 2000,
            eval_every: 50,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.group_size < 2 {
            return Err(GrpoError::GroupTooSmall(self.group_size));
        }
        if self.steps == 0 || self.eval_every == 0 {
            return Err(GrpoError::InvalidConfig("steps and eval_every must be positive".into()));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(GrpoError::InvalidConfig("epsilon must be >= 0".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) || !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(GrpoError::InvalidConfig("lr must be >= 0 and temperature > 0".into()));
        }
        Ok(())
    }
}

/// Mean policy-expected reward and mean per-sample maximum over an eval set.
pub fn evaluate(policy: &ToyPolicy, samples: &[ScoredSample], weights: &WeightVector) -> Result<(f64, f64), GrpoError> {
    if samples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut expected = 0.0;
    let mut best = 0.0;
    for s in samples {
        expected += s.expected_reward(policy, weights)?;
        best += s.max_reward(weights);
    }
    let n = samples.len() as f64;
    Ok((expected / n, best / n))
}

/// Mean policy-expected breakdown component by component.
pub fn expected_breakdown(policy: &ToyPolicy, samples: &[ScoredSample]) -> Result<RewardBreakdown, GrpoError> {
    let mut acc = [0.0; 6];
    for s in samples {
        let probs = policy.probs(s.row)?;
        for (a, p) in probs.iter().enumerate() {
            for (slot, c) in acc.iter_mut().zip(s.scores[a].breakdown.as_array()) {
                *slot += p * c;
            }
        }
    }
    let n = samples.len().max(1) as f64;
    let [format, violation, major, sub, ground, reason] = acc.map(|x| x / n);
    Ok(RewardBreakdown {
        format,
        violation,
        reason,
        major,
        sub,
        ground,
    })
}

/// One line of the training metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub phase: Phase,
    pub sample_id: String,
    pub mean_reward: f64,
    pub components: RewardBreakdown,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eval_reward: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PassiveReport {
    pub metrics: Vec<StepMetrics>,
    pub transitions: Vec<PhaseTransition>,
    /// `(step, mean expected reward, mean max reward)` at each evaluation.
    pub evals: Vec<(usize, f64, f64)>,
}

fn mean_breakdown(items: &[RewardBreakdown]) -> RewardBreakdown {
    let n = items.len().max(1) as f64;
    let mut acc = [0.0; 6];
    for b in items {
        for (slot, c) in acc.iter_mut().zip(b.as_array()) {
            *slot += c;
        }
    }
    let [format, violation, major, sub, ground, reason] = acc.map(|x| x / n);
    RewardBreakdown {
        format,
        violation,
        reason,
        major,
        sub,
        ground,
    }
}

/// Curriculum-scheduled passive GRPO over `train`, evaluated on `eval` under
/// `eval_weights`. Samples are visited in a seeded shuffled order per epoch.
pub fn passive_train(
    policy: &mut ToyPolicy,
    train: &[ScoredSample],
    eval: &[ScoredSample],
    schedule: &PhaseSchedule,
    eval_weights: &WeightVector,
    config: &GrpoConfig,
) -> Result<PassiveReport, GrpoError> {
    config.validate()?;
    if train.is_empty() {
        return Err(GrpoError::InvalidConfig("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tracker = CurriculumTracker::new(*schedule, config.steps)?;
    let mut order: Vec<usize> = Vec::new();
    let mut metrics = Vec::with_capacity(config.steps);
    let mut evals = Vec::new();

    let (e0, m0) = evaluate(policy, eval, eval_weights)?;
    evals.push((0, e0, m0));

    for step in 0..config.steps {
        if order.is_empty() {
            order = (0..train.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let idx = order.pop().expect("refilled above");
        tracker.advance(step)?;
        let weights = tracker.weights();
        let sample = &train[idx];
        let group = rollout_group(policy, sample, &weights, config.group_size, config.epsilon, &mut rng)?;
        rl_step(policy, &group, 1.0)?;
        let breakdowns = group.breakdowns();
        tracker.observe(&breakdowns);

        let eval_reward = if (step + 1) % config.eval_every == 0 {
            let (e, m) = evaluate(policy, eval, eval_weights)?;
            evals.push((step + 1, e, m));
            Some(e)
        } else {
            None
        };
        metrics.push(StepMetrics {
            step,
            phase: tracker.phase(),
            sample_id: sample.id.clone(),
            mean_reward: group.mean_reward(),
            components: mean_breakdown(&breakdowns),
            eval_reward,
        });
    }
    Ok(PassiveReport {
        metrics,
        transitions: tracker.transitions().to_vec(),
        evals,
    })
}
