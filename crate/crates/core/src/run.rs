//! Run configuration, the end-to-end training pipeline, and run persistence.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::active_router::{
    ingest_reviewer_feedback, parse_feedback_line, score_dataset, stage3_loop, ActiveDataset, DatasetEntry,
    RoutingThresholds, Stage3Config, Stage3Mode,
};
use crate::curriculum::{PhaseSchedule, PhaseTransition};
use crate::data_gen::{build_sft_mix, gen_ad_qa, gen_corpus, gen_rule_qa, NoiseModel, SummarizerClient, SyntheticSample};
use crate::grpo_sim::{evaluate, passive_train, GrpoConfig, ScoredSample, Scorer, StepMetrics, ToyPolicy};
use crate::reward_engine::RewardConfig;
use crate::similarity::EmbeddingProvider;
use crate::taxonomy::{load_taxonomy, LabelTree};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run config: {0}")]
    Config(String),
    #[error("invalid input data: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("training failed: {0}")]
    Runtime(String),
}

impl RunError {
    /// Process exit code: 2 for bad configs or data, 3 for runtime and IO failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Data(_) => 2,
            RunError::Io { .. } | RunError::Runtime(_) => 3,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusParams {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub noise: NoiseModel,
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            n: 200,
            k: 8,
            seed: 7,
            noise: NoiseModel::default(),
        }
    }
}

/// Which annotation the passive stage rewards against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSource {
    #[default]
    Noisy,
    Precise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActiveParams {
    /// Active-stage learning rate as a multiple of the passive one.
    pub lr_scale: f64,
    /// How many corpus samples form the precise set; all when absent.
    pub precise_n: Option<usize>,
    /// Reviewer feedback JSONL merged into the precise set.
    pub feedback: Option<PathBuf>,
    pub mode: Stage3Mode,
    pub loop_config: Stage3Config,
}

impl Default for ActiveParams {
    fn default() -> Self {
        Self {
            lr_scale: 0.1,
            precise_n: None,
            feedback: None,
            mode: Stage3Mode::Active,
            loop_config: Stage3Config::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftDataParams {
    /// QA records per precise annotation in the joint mix.
    pub qa_ratio: usize,
}

impl Default for SftDataParams {
    fn default() -> Self {
        Self { qa_ratio: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Taxonomy JSON; the built-in tree when absent.
    pub taxonomy: Option<PathBuf>,
    pub corpus: CorpusParams,
    pub reward: RewardConfig,
    pub schedule: PhaseSchedule,
    pub grpo: GrpoConfig,
    pub passive_labels: LabelSource,
    pub routing: RoutingThresholds,
    pub active: ActiveParams,
    pub sft_data: SftDataParams,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            taxonomy: None,
            corpus: CorpusParams::default(),
            reward: RewardConfig::default(),
            schedule: PhaseSchedule::default(),
            grpo: GrpoConfig::default(),
            passive_labels: LabelSource::default(),
            routing: RoutingThresholds::default(),
            active: ActiveParams::default(),
            sft_data: SftDataParams::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let config: RunConfig = serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let cfg = |e: &dyn std::fmt::Display| RunError::Config(e.to_string());
        if self.corpus.n == 0 || self.corpus.k < 2 {
            return Err(RunError::Config("corpus needs n >= 1 and k >= 2".into()));
        }
        self.corpus.noise.validate().map_err(|e| cfg(&e))?;
        self.schedule.validate().map_err(|e| cfg(&e))?;
        self.grpo.validate().map_err(|e| cfg(&e))?;
        self.routing.validate().map_err(|e| cfg(&e))?;
        let a = &self.active;
        if !(a.lr_scale.is_finite() && a.lr_scale >= 0.0) {
            return Err(RunError::Config("active.lr_scale must be >= 0".into()));
        }
        if a.precise_n == Some(0) || a.precise_n.is_some_and(|m| m > self.corpus.n) {
            return Err(RunError::Config("active.precise_n must be in 1..=corpus.n".into()));
        }
        let lc = &a.loop_config;
        if lc.steps == 0 || lc.eval_every == 0 || lc.group_size < 2 {
            return Err(RunError::Config(
                "active loop needs positive steps and eval_every and group_size >= 2".into(),
            ));
        }
        if self.sft_data.qa_ratio == 0 {
            return Err(RunError::Config("sft_data.qa_ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn load_taxonomy(&self) -> Result<LabelTree, RunError> {
        match &self.taxonomy {
            Some(path) => load_taxonomy(path).map_err(|e| RunError::Data(format!("{}: {e}", path.display()))),
            None => Ok(LabelTree::fixture()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    SftData,
    Passive,
    Active,
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "sft-data" => Ok(Stage::SftData),
            "passive" => Ok(Stage::Passive),
            "active" => Ok(Stage::Active),
            other => Err(format!("unknown stage `{other}` (expected sft-data, passive, active)")),
        }
    }
}

/// Parses a comma-separated stage list into run order without duplicates.
pub fn parse_stages(list: &str) -> Result<Vec<Stage>, String> {
    let mut stages = list
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(Stage::from_str)
        .collect::<Result<Vec<_>, _>>()?;
    if stages.is_empty() {
        return Err("no stages given".into());
    }
    stages.sort();
    stages.dedup();
    Ok(stages)
}

/// A file to write into the run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn json(name: &str, value: &impl Serialize) -> Self {
        let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
        bytes.push(b'\n');
        Self {
            name: name.to_string(),
            bytes,
        }
    }

    pub fn jsonl<T: Serialize>(name: &str, rows: impl IntoIterator<Item = T>) -> Self {
        let mut bytes = Vec::new();
        for row in rows {
            serde_json::to_writer(&mut bytes, &row).expect("artifact row serializes");
            bytes.push(b'\n');
        }
        Self {
            name: name.to_string(),
            bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<ManifestEntry>,
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Writes every artifact into `dir` (created if missing) plus a manifest of
/// their SHA-256 hashes.
pub fn persist_run(dir: &Path, artifacts: &[Artifact]) -> Result<Manifest, RunError> {
    fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    let mut files = Vec::with_capacity(artifacts.len());
    for a in artifacts {
        if a.name == MANIFEST_NAME || a.name.contains(['/', '\\']) {
            return Err(RunError::Runtime(format!("artifact name `{}` is not allowed", a.name)));
        }
        let path = dir.join(&a.name);
        fs::write(&path, &a.bytes).map_err(|e| RunError::io(&path, e))?;
        files.push(ManifestEntry {
            name: a.name.clone(),
            bytes: a.bytes.len(),
            sha256: hex::encode(Sha256::digest(&a.bytes)),
        });
    }
    let manifest = Manifest { files };
    let path = dir.join(MANIFEST_NAME);
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| RunError::io(&path, e))?;
    Ok(manifest)
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    stage: Stage,
    #[serde(flatten)]
    metrics: &'a StepMetrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageSummary {
    pub steps: usize,
    pub initial_reward: f64,
    pub final_reward: f64,
    pub max_reward: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RunSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sft_records: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub passive: Option<StageSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub transitions: Vec<PhaseTransition>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub active: Option<StageSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sft_batches: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rl_batches: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feedback_rejected: Option<usize>,
}

#[derive(Serialize)]
struct Seeds {
    corpus: u64,
    noise: u64,
    passive: u64,
    active: u64,
}

/// External services the pipeline may call.
pub struct Services<'a> {
    pub embedder: &'a dyn EmbeddingProvider,
    pub summarizer: Option<&'a dyn SummarizerClient>,
}

fn runtime(e: impl std::fmt::Display) -> RunError {
    RunError::Runtime(e.to_string())
}

fn score_all(
    scorer: &Scorer,
    corpus: &[SyntheticSample],
    labels: LabelSource,
) -> Result<Vec<ScoredSample>, RunError> {
    corpus
        .iter()
        .enumerate()
        .map(|(row, s)| {
            let gt = match labels {
                LabelSource::Noisy => &s.noisy,
                LabelSource::Precise => &s.gt,
            };
            scorer
                .score_sample(row, &s.id, &s.candidates, gt, s.correct_index())
                .map_err(runtime)
        })
        .collect()
}

fn read_feedback(path: &Path) -> Result<Vec<Result<crate::active_router::FeedbackRecord, crate::active_router::FeedbackRejection>>, RunError> {
    let text = fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_feedback_line(i + 1, l))
        .collect())
}

/// Runs the selected stages and returns the files that make up the run.
/// Output bytes depend only on the config, the seeds, and the services.
pub fn run_pipeline(config: &RunConfig, stages: &[Stage], services: &Services) -> Result<(Vec<Artifact>, RunSummary), RunError> {
    config.validate()?;
    let tree = config.load_taxonomy()?;
    let c = &config.corpus;
    let corpus = gen_corpus(&tree, c.n, &c.noise, c.k, c.seed).map_err(|e| RunError::Config(e.to_string()))?;
    let scorer = Scorer::new(config.reward, services.embedder);
    let eval_weights = config.schedule.phase3;

    let mut artifacts = vec![
        Artifact::json("config.json", config),
        Artifact::json(
            "seeds.json",
            &Seeds {
                corpus: c.seed,
                noise: c.noise.seed,
                passive: config.grpo.seed,
                active: config.active.loop_config.seed,
            },
        ),
    ];
    let mut summary = RunSummary::default();
    let mut metric_lines: Vec<u8> = Vec::new();
    let mut push_metrics = |stage: Stage, rows: &[StepMetrics]| {
        for m in rows {
            serde_json::to_writer(&mut metric_lines, &MetricsLine { stage, metrics: m }).expect("metrics serialize");
            metric_lines.push(b'\n');
        }
    };

    if stages.contains(&Stage::SftData) {
        let mut qa = gen_rule_qa(&tree);
        for s in &corpus {
            qa.extend(gen_ad_qa(&s.id, &s.ad, services.summarizer));
        }
        let precise_n = config.active.precise_n.unwrap_or(corpus.len());
        let mix = build_sft_mix(&qa, &corpus[..precise_n], config.sft_data.qa_ratio);
        summary.sft_records = Some(mix.len());
        artifacts.push(Artifact::jsonl("sft_mix.jsonl", &mix));
    }

    let mut policy = ToyPolicy::uniform(corpus.len(), c.k, config.grpo.lr, config.grpo.temperature).map_err(runtime)?;
    let precise = score_all(&scorer, &corpus, LabelSource::Precise)?;

    if stages.contains(&Stage::Passive) {
        let train = match config.passive_labels {
            LabelSource::Precise => precise.clone(),
            LabelSource::Noisy => score_all(&scorer, &corpus, LabelSource::Noisy)?,
        };
        let report = passive_train(&mut policy, &train, &precise, &config.schedule, &eval_weights, &config.grpo)
            .map_err(runtime)?;
        push_metrics(Stage::Passive, &report.metrics);
        let (_, first, max) = report.evals[0];
        let (_, last, _) = *report.evals.last().expect("initial evaluation is recorded");
        summary.passive = Some(StageSummary {
            steps: report.metrics.len(),
            initial_reward: first,
            final_reward: last,
            max_reward: max,
        });
        summary.transitions = report.transitions;
    }

    if stages.contains(&Stage::Active) {
        let precise_n = config.active.precise_n.unwrap_or(corpus.len());
        let mut dataset = ActiveDataset::new(
            corpus[..precise_n]
                .iter()
                .map(|s| DatasetEntry {
                    id: s.id.clone(),
                    gt: s.gt.clone(),
                    candidates: s.candidates.clone(),
                    correct_action: s.correct_index(),
                    priority: false,
                })
                .collect(),
        );
        let mut replaced = Vec::new();
        if let Some(path) = &config.active.feedback {
            let records = read_feedback(path)?;
            let report = ingest_reviewer_feedback(&mut dataset, &records, &tree, c.k, c.seed);
            for r in &report.rejected {
                log::warn!("feedback line {} rejected ({:?}): {}", r.line, r.reason, r.message);
            }
            summary.feedback_rejected = Some(report.rejected.len());
            artifacts.push(Artifact::jsonl("feedback_rejections.jsonl", &report.rejected));
            replaced = report.replaced;
        }
        let lr = config.grpo.lr * config.active.lr_scale;
        let mut stage3 = ToyPolicy::uniform(dataset.len(), c.k, lr, config.grpo.temperature).map_err(runtime)?;
        for row in 0..precise_n {
            if !replaced.contains(&row) {
                stage3.set_logits(row, policy.logits(row).map_err(runtime)?.to_vec()).map_err(runtime)?;
            }
        }
        for (row, e) in dataset.entries().iter().enumerate().skip(precise_n) {
            stage3.set_logits(row, vec![0.0; e.candidates.len()]).map_err(runtime)?;
        }
        let samples = score_dataset(&scorer, &dataset).map_err(runtime)?;
        let report = stage3_loop(
            &mut stage3,
            &samples,
            &dataset,
            &eval_weights,
            &config.routing,
            &config.active.loop_config,
            config.active.mode,
        )
        .map_err(runtime)?;
        push_metrics(Stage::Active, &report.metrics);
        let (_, first, max) = report.evals[0];
        let (final_reward, _) = evaluate(&stage3, &samples, &eval_weights).map_err(runtime)?;
        summary.active = Some(StageSummary {
            steps: report.metrics.len(),
            initial_reward: first,
            final_reward,
            max_reward: max,
        });
        summary.sft_batches = Some(report.sft_batches);
        summary.rl_batches = Some(report.rl_batches);
        artifacts.push(Artifact::jsonl("routing.jsonl", &report.routing));
        policy = stage3;
    }

    artifacts.push(Artifact {
        name: "metrics.jsonl".into(),
        bytes: metric_lines,
    });
    artifacts.push(Artifact::json("policy.json", &policy));
    artifacts.push(Artifact::json("summary.json", &summary));
    Ok((artifacts, summary))
}
