//! Knowledge-injection QA generation and the synthetic moderation corpus.
//!
//! Every corpus sample carries a precise annotation (`gt`), a noisy copy of
//! it (`noisy`), and K candidate responses: index 0 is the serialized
//! precise annotation, the rest each carry exactly one defect.

use std::time::Duration;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::{ClientError, JsonClient};
use crate::output_format::{serialize_output, ModerationOutput, ReasoningChain, ResultEntry, TimeInterval};
use crate::reward_engine::GroundTruth;
use crate::taxonomy::LabelTree;

pub const SUMMARIZER_URL_ENV: &str = "SUMMARIZER_URL";

#[derive(Debug, Error)]
pub enum DataGenError {
    #[error("invalid corpus parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QaKind {
    AdKnowledge,
    RuleKnowledge,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: String,
    pub answer: String,
    pub kind: QaKind,
}

fn quoted_list(items: impl Iterator<Item = String>) -> String {
    items.map(|s| format!("'{s}'")).collect::<Vec<_>>().join(", ")
}

/// One QA pair per major (listing its subs and rules) and one per sub.
pub fn gen_rule_qa(tree: &LabelTree) -> Vec<QAPair> {
    let mut out = Vec::with_capacity(tree.majors.len() + tree.sub_count());
    for major in &tree.majors {
        let subs = quoted_list(major.subs.iter().map(|s| s.name.clone()));
        let rules = major
            .subs
            .iter()
            .flat_map(|s| s.rules.iter().map(|r| r.as_str()))
            .collect::<Vec<_>>()
            .join(" ");
        out.push(QAPair {
            question: format!(
                "What are the sub-categories and rules for the main category '{}'?",
                major.name
            ),
            answer: format!("Sub-labels: {subs}. Rules: {rules}"),
            kind: QaKind::RuleKnowledge,
        });
    }
    for (_, sub) in tree.pairs() {
        out.push(QAPair {
            question: format!(
                "What constitutes a violation under the sub-category '{}'?",
                sub.name
            ),
            answer: sub.rules.join(" "),
            kind: QaKind::RuleKnowledge,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Audience {
    pub segment: String,
    pub ages: String,
}

/// Structured ad facts a summarizer would extract from a video.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdSummary {
    pub product_kind: Option<String>,
    pub product_name: Option<String>,
    pub audience: Option<Audience>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryResponse {
    pub summary: String,
    #[serde(default)]
    pub qa: Vec<RemoteQa>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteQa {
    pub question: String,
    pub answer: String,
}

pub trait SummarizerClient {
    fn summarize(&self, video_id: &str) -> Result<SummaryResponse, ClientError>;
}

/// `{"video_id"}` → `{"summary", "qa": [...]}` over HTTP.
#[derive(Debug, Clone)]
pub struct HttpSummarizer {
    client: JsonClient,
}

impl HttpSummarizer {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            client: JsonClient::new(url, timeout),
        }
    }

    pub fn from_env(timeout: Duration) -> Option<Self> {
        JsonClient::from_env(SUMMARIZER_URL_ENV, timeout).map(|client| Self { client })
    }
}

impl SummarizerClient for HttpSummarizer {
    fn summarize(&self, video_id: &str) -> Result<SummaryResponse, ClientError> {
        #[derive(Serialize)]
        struct Req<'a> {
            video_id: &'a str,
        }
        self.client.post(&Req { video_id })
    }
}

fn article(word: &str) -> &'static str {
    match word.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

fn template_ad_qa(summary: &AdSummary) -> Vec<QAPair> {
    let mut out = Vec::new();
    if let (Some(kind), Some(name)) = (&summary.product_kind, &summary.product_name) {
        out.push(QAPair {
            question: "What product is advertised in this video?".into(),
            answer: format!("The product is {} {kind} named {name}.", article(kind)),
            kind: QaKind::AdKnowledge,
        });
    }
    if let Some(aud) = &summary.audience {
        out.push(QAPair {
            question: "Who is the target audience for this advertisement?".into(),
            answer: format!("The target audience is {} aged about {}.", aud.segment, aud.ages),
            kind: QaKind::AdKnowledge,
        });
    }
    out
}

/// Ad-knowledge QA for one video. Uses the summarizer when one is given and
/// falls back to templates over `summary` on any client failure.
pub fn gen_ad_qa(video_id: &str, summary: &AdSummary, client: Option<&dyn SummarizerClient>) -> Vec<QAPair> {
    if let Some(client) = client {
        match client.summarize(video_id) {
            Ok(resp) => {
                return resp
                    .qa
                    .into_iter()
                    .filter(|q| !q.question.trim().is_empty() && !q.answer.trim().is_empty())
                    .map(|q| QAPair {
                        question: q.question,
                        answer: q.answer,
                        kind: QaKind::AdKnowledge,
                    })
                    .collect();
            }
            Err(e) => log::warn!("summarizer failed for {video_id} ({e}); using templates"),
        }
    }
    template_ad_qa(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Std-dev of Gaussian endpoint jitter, seconds.
    pub sigma: f64,
    pub p_sub: f64,
    pub p_v: f64,
    pub seed: u64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma: 1.0,
            p_sub: 0.1,
            p_v: 0.05,
            seed: 0,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            sigma: 0.0,
            p_sub: 0.0,
            p_v: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), DataGenError> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(DataGenError::InvalidParameter(format!("sigma {} must be >= 0", self.sigma)));
        }
        if !prob(self.p_sub) || !prob(self.p_v) {
            return Err(DataGenError::InvalidParameter(format!(
                "flip probabilities must lie in [0, 1], got p_sub={} p_v={}",
                self.p_sub, self.p_v
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Defect {
    WrongSub,
    ShiftedInterval,
    BrokenFormat,
    WrongViolation,
    DriftedReasoning,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub id: String,
    pub prompt: String,
    pub ad: AdSummary,
    /// Precise annotation Z.
    pub gt: GroundTruth,
    /// Noisy annotation Y.
    pub noisy: GroundTruth,
    pub candidates: Vec<String>,
    /// `None` for the correct candidate, the injected defect otherwise.
    pub defects: Vec<Option<Defect>>,
}

impl SyntheticSample {
    pub fn duration(&self) -> f64 {
        self.gt.duration
    }

    /// Index of the correct candidate.
    pub fn correct_index(&self) -> usize {
        0
    }
}

/// Annotation without duration, as stored under `gt`/`noisy` in corpus lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub violation: bool,
    pub results: Vec<ResultEntry>,
    pub reasoning: ReasoningChain,
}

impl Annotation {
    pub fn from_ground_truth(gt: &GroundTruth) -> Self {
        Self {
            violation: gt.violation,
            results: gt.results.clone(),
            reasoning: gt.reference_chain.clone(),
        }
    }

    pub fn into_ground_truth(self, duration: f64) -> Result<GroundTruth, crate::reward_engine::GroundTruthError> {
        GroundTruth::new(self.violation, self.results, self.reasoning, duration)
    }
}

/// One corpus JSONL line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub duration: f64,
    pub prompt: String,
    pub gt: Annotation,
    pub noisy: Annotation,
    pub candidates: Vec<String>,
    #[serde(default)]
    pub defects: Vec<Option<Defect>>,
    #[serde(default)]
    pub ad: AdSummary,
}

impl From<&SyntheticSample> for CorpusRecord {
    fn from(s: &SyntheticSample) -> Self {
        Self {
            id: s.id.clone(),
            duration: s.duration(),
            prompt: s.prompt.clone(),
            gt: Annotation::from_ground_truth(&s.gt),
            noisy: Annotation::from_ground_truth(&s.noisy),
            candidates: s.candidates.clone(),
            defects: s.defects.clone(),
            ad: s.ad.clone(),
        }
    }
}

impl TryFrom<CorpusRecord> for SyntheticSample {
    type Error = String;

    fn try_from(r: CorpusRecord) -> Result<Self, Self::Error> {
        let gt = r.gt.into_ground_truth(r.duration).map_err(|e| format!("{}: gt: {e}", r.id))?;
        let noisy = r
            .noisy
            .into_ground_truth(r.duration)
            .map_err(|e| format!("{}: noisy: {e}", r.id))?;
        if r.candidates.len() < 2 {
            return Err(format!("{}: need at least two candidates", r.id));
        }
        let defects = if r.defects.is_empty() {
            vec![None; r.candidates.len()]
        } else {
            r.defects
        };
        Ok(Self {
            id: r.id,
            prompt: r.prompt,
            ad: r.ad,
            gt,
            noisy,
            candidates: r.candidates,
            defects,
        })
    }
}

const PRODUCT_KINDS: &[&str] = &[
    "sunscreen",
    "face cream",
    "energy drink",
    "running shoe",
    "loan app",
    "phone case",
    "vitamin supplement",
    "kitchen knife",
    "online course",
    "hair dye",
];
const PRODUCT_NAMES: &[&str] = &[
    "Solara", "Vivid", "Nimbus", "Peakline", "Orchid", "Quanta", "Brisk", "Luma", "Tessel", "Corvo",
];
const AUDIENCES: &[(&str, &str)] = &[
    ("young adults", "18–60"),
    ("teenagers", "13–19"),
    ("parents", "25–45"),
    ("retirees", "60–80"),
    ("office workers", "22–50"),
];
const OFF_TOPIC: &[&str] = &[
    "Migratory geese cross northern lakes every autumn",
    "Granite quarries supplied stone for medieval cathedrals",
    "Jazz drummers often practice polyrhythms with metronomes",
    "Volcanic soil keeps vineyards unusually fertile",
    "Chess openings were catalogued by nineteenth century masters",
    "Coral reefs host thousands of fish species",
    "Tidal energy turbines spin beneath coastal straits",
    "Medieval scribes mixed inks from oak galls",
];

/// Centisecond grid keeps canonical serialization exact.
fn centis(v: i64) -> f64 {
    v as f64 / 100.0
}

fn round_centis(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn random_interval(rng: &mut ChaCha8Rng, duration_cs: i64) -> TimeInterval {
    let start = rng.random_range(0..=duration_cs - 200);
    let max_len = (duration_cs - start).min(1000);
    let len = rng.random_range(100..=max_len);
    TimeInterval::new(centis(start), centis(start + len)).expect("generated interval is ordered")
}

/// Strips characters the output grammar reserves.
fn plain(text: &str) -> String {
    text.replace(['<', '>', ':'], " ")
}

fn reasoning_for(tree: &LabelTree, ad: &AdSummary, results: &[ResultEntry]) -> ReasoningChain {
    let kind = ad.product_kind.as_deref().unwrap_or("product");
    let name = ad.product_name.as_deref().unwrap_or("unnamed");
    let summarization = match &ad.audience {
        Some(a) => format!(
            "The video advertises {} {kind} named {name} to {} aged about {}.",
            article(kind),
            a.segment,
            a.ages
        ),
        None => format!("The video advertises {} {kind} named {name}.", article(kind)),
    };
    if results.is_empty() {
        return ReasoningChain::new(
            summarization,
            "No scene matches any moderation rule.",
            "The ad is compliant.",
        );
    }
    let mut risk = Vec::new();
    let mut subs = Vec::new();
    for r in results {
        let sub = tree.lookup(&r.major, &r.sub).expect("entries come from the tree");
        risk.push(format!(
            "Between {:.2}s and {:.2}s the footage matches the rule {}",
            r.ground.start(),
            r.ground.end(),
            plain(sub.rules[0].trim_end_matches('.'))
        ));
        subs.push(plain(&sub.name));
    }
    ReasoningChain::new(
        summarization,
        format!("{}.", risk.join("; ")),
        format!("The ad violates {}.", subs.join(" and ")),
    )
}

fn random_entries(tree: &LabelTree, rng: &mut ChaCha8Rng, duration_cs: i64, count: usize) -> Vec<ResultEntry> {
    let majors: Vec<_> = tree.majors.choose_multiple(rng, count.min(tree.majors.len())).collect();
    majors
        .into_iter()
        .map(|m| {
            let sub = m.subs.choose(rng).expect("majors have subs");
            ResultEntry::new(m.id.clone(), sub.id.clone(), random_interval(rng, duration_cs))
        })
        .collect()
}

/// Gaussian endpoint jitter clipped to `[0, duration]` and snapped to the
/// centisecond grid, reordered if the ends cross.
pub fn jitter_interval(iv: &TimeInterval, duration: f64, sigma: f64, rng: &mut impl Rng) -> TimeInterval {
    if sigma == 0.0 {
        return *iv;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let a = round_centis(iv.start() + normal.sample(rng)).clamp(0.0, duration);
    let b = round_centis(iv.end() + normal.sample(rng)).clamp(0.0, duration);
    TimeInterval::new(a.min(b), a.max(b)).expect("clamped endpoints are valid")
}

fn other_sub(tree: &LabelTree, entry: &ResultEntry, rng: &mut impl Rng) -> Option<String> {
    let major = tree.major(&entry.major)?;
    let others: Vec<_> = major.subs.iter().filter(|s| s.id != entry.sub).collect();
    others.choose(rng).map(|s| s.id.clone())
}

fn apply_noise(tree: &LabelTree, z: &GroundTruth, noise: &NoiseModel, rng: &mut ChaCha8Rng) -> GroundTruth {
    let mut y = z.clone();
    if noise.p_v > 0.0 && rng.random_bool(noise.p_v) {
        if z.violation {
            y.violation = false;
            y.results.clear();
        } else {
            y.violation = true;
            y.results = random_entries(tree, rng, (z.duration * 100.0).round() as i64, 1);
        }
        return y;
    }
    for entry in &mut y.results {
        if noise.p_sub > 0.0 && rng.random_bool(noise.p_sub) {
            if let Some(sub) = other_sub(tree, entry, rng) {
                entry.sub = sub;
            }
        }
        entry.ground = jitter_interval(&entry.ground, z.duration, noise.sigma, rng);
    }
    y
}

fn break_format(text: &str, rng: &mut impl Rng) -> String {
    let variants: [fn(&str) -> String; 5] = [
        |t| t.replacen("</reason>", "", 1),
        |t| t.replacen("<violation>", "<verdict>", 1),
        |t| t.replacen("risk analysis:", "analysis -", 1),
        |t| t.replacen("<think></think>", "", 1).replacen("</reason>", "</reason><think></think>", 1),
        |t| format!("{t} Final answer follows."),
    ];
    variants.choose(rng).expect("non-empty")(text)
}

fn shift_interval(entry: &mut ResultEntry, duration: f64, rng: &mut impl Rng) {
    let len = entry.ground.len();
    let magnitude = round_centis(rng.random_range(1.0..5.0));
    let room_right = duration - entry.ground.end();
    let room_left = entry.ground.start();
    let go_right = if room_right >= magnitude && room_left >= magnitude {
        rng.random_bool(0.5)
    } else {
        room_right >= room_left
    };
    let start = if go_right {
        round_centis((entry.ground.start() + magnitude).min(duration - len))
    } else {
        round_centis((entry.ground.start() - magnitude).max(0.0))
    };
    let end = round_centis(start + len).min(duration);
    entry.ground = TimeInterval::new(start, end).expect("shifted interval stays ordered");
}

fn corrupt(
    tree: &LabelTree,
    z: &GroundTruth,
    correct: &str,
    defect: Defect,
    rng: &mut ChaCha8Rng,
) -> String {
    let mut out = z.as_output();
    match defect {
        Defect::BrokenFormat => return break_format(correct, rng),
        Defect::WrongSub => {
            let idx = rng.random_range(0..out.results.len());
            let sub = other_sub(tree, &out.results[idx], rng).expect("fixture majors have several subs");
            out.results[idx].sub = sub;
        }
        Defect::ShiftedInterval => {
            let idx = rng.random_range(0..out.results.len());
            shift_interval(&mut out.results[idx], z.duration, rng);
        }
        Defect::WrongViolation => {
            if out.violation {
                out.violation = false;
                out.results.clear();
            } else {
                out.violation = true;
                out.results = random_entries(tree, rng, (z.duration * 100.0).round() as i64, 1);
            }
        }
        Defect::DriftedReasoning => {
            let picks: Vec<&&str> = OFF_TOPIC.choose_multiple(rng, 3).collect();
            out.reason = ReasoningChain::new(
                format!("{}.", picks[0]),
                format!("{}.", picks[1]),
                format!("{}.", picks[2]),
            );
        }
    }
    serialize_output(&out).expect("corrupted outputs keep the grammar invariants")
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn prompt_for(tree: &LabelTree, id: &str, duration: f64) -> String {
    let majors = tree.majors.iter().map(|m| m.name.as_str()).collect::<Vec<_>>().join(", ");
    format!(
        "Review advertisement video {id} ({duration:.2} s) against the moderation categories: {majors}. \
         Reply with <think>, <reason>, <violation> and one <result> per violating sub-scene."
    )
}

/// Builds one sample from its own seed; samples are independent of each other.
fn gen_sample(tree: &LabelTree, index: usize, noise: &NoiseModel, k: usize, seed: u64) -> SyntheticSample {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix_seed(noise.seed ^ 0x006e_6f69_7365, index as u64));
    let id = format!("vid-{seed}-{index:05}");
    let duration_cs: i64 = rng.random_range(1500..=6000);
    let duration = centis(duration_cs);

    let (segment, ages) = *AUDIENCES.choose(&mut rng).expect("non-empty");
    let ad = AdSummary {
        product_kind: Some(PRODUCT_KINDS.choose(&mut rng).expect("non-empty").to_string()),
        product_name: Some(PRODUCT_NAMES.choose(&mut rng).expect("non-empty").to_string()),
        audience: Some(Audience {
            segment: segment.into(),
            ages: ages.into(),
        }),
    };

    let violation = rng.random_bool(0.7);
    let results = if violation {
        let count = rng.random_range(1..=3);
        random_entries(tree, &mut rng, duration_cs, count)
    } else {
        Vec::new()
    };
    let chain = reasoning_for(tree, &ad, &results);
    let gt = GroundTruth::new(violation, results, chain, duration).expect("generated annotation is valid");
    let noisy = apply_noise(tree, &gt, noise, &mut noise_rng);

    let correct = serialize_output(&gt.as_output()).expect("generated annotation serializes");
    let applicable: &[Defect] = if violation {
        &[
            Defect::WrongSub,
            Defect::ShiftedInterval,
            Defect::BrokenFormat,
            Defect::WrongViolation,
            Defect::DriftedReasoning,
        ]
    } else {
        &[Defect::BrokenFormat, Defect::WrongViolation, Defect::DriftedReasoning]
    };
    let mut defects: Vec<Defect> = (0..k - 1).map(|i| applicable[i % applicable.len()]).collect();
    defects.shuffle(&mut rng);

    let mut candidates = vec![correct.clone()];
    let mut labels = vec![None];
    for d in defects {
        candidates.push(corrupt(tree, &gt, &correct, d, &mut rng));
        labels.push(Some(d));
    }

    SyntheticSample {
        prompt: prompt_for(tree, &id, duration),
        id,
        ad,
        gt,
        noisy,
        candidates,
        defects: labels,
    }
}

/// Seeded synthetic corpus of `n` samples with `k` candidates each.
pub fn gen_corpus(
    tree: &LabelTree,
    n: usize,
    noise: &NoiseModel,
    k: usize,
    seed: u64,
) -> Result<Vec<SyntheticSample>, DataGenError> {
    if n == 0 {
        return Err(DataGenError::InvalidParameter("n must be at least 1".into()));
    }
    if k < 2 {
        return Err(DataGenError::InvalidParameter("k must be at least 2".into()));
    }
    noise.validate()?;
    Ok((0..n).map(|i| gen_sample(tree, i, noise, k, seed)).collect())
}

/// Candidate set for an externally supplied annotation (e.g. reviewer feedback).
pub fn candidates_for(tree: &LabelTree, gt: &GroundTruth, k: usize, seed: u64) -> (Vec<String>, Vec<Option<Defect>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let correct = serialize_output(&gt.as_output()).unwrap_or_else(|_| {
        serialize_output(&ModerationOutput {
            reason: ReasoningChain::default(),
            ..gt.as_output()
        })
        .expect("annotation with blank reasoning serializes")
    });
    let can_relabel = gt
        .results
        .iter()
        .all(|r| tree.major(&r.major).is_some_and(|m| m.subs.len() > 1));
    let mut applicable = vec![Defect::BrokenFormat, Defect::WrongViolation, Defect::DriftedReasoning];
    if gt.violation {
        applicable.push(Defect::ShiftedInterval);
        if can_relabel {
            applicable.push(Defect::WrongSub);
        }
    }
    let mut candidates = vec![correct.clone()];
    let mut labels = vec![None];
    for i in 0..k.saturating_sub(1) {
        let d = applicable[i % applicable.len()];
        candidates.push(corrupt(tree, gt, &correct, d, &mut rng));
        labels.push(Some(d));
    }
    (candidates, labels)
}

/// Joint-SFT training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum SftRecord {
    Qa {
        question: String,
        answer: String,
        kind: QaKind,
    },
    Annotation {
        id: String,
        prompt: String,
        target: String,
    },
}

/// Interleaves QA pairs with precise annotations, `ratio` QA records per annotation.
pub fn build_sft_mix(qa: &[QAPair], precise: &[SyntheticSample], ratio: usize) -> Vec<SftRecord> {
    let ratio = ratio.max(1);
    let wanted = qa.len().div_ceil(ratio).max(1).min(precise.len());
    let mut annotations = precise.iter().take(wanted).map(|s| SftRecord::Annotation {
        id: s.id.clone(),
        prompt: s.prompt.clone(),
        target: s.candidates[s.correct_index()].clone(),
    });
    let mut out = Vec::with_capacity(qa.len() + wanted);
    for (i, q) in qa.iter().enumerate() {
        out.push(SftRecord::Qa {
            question: q.question.clone(),
            answer: q.answer.clone(),
            kind: q.kind,
        });
        if (i + 1) % ratio == 0 {
            out.extend(annotations.next());
        }
    }
    out.extend(annotations);
    out
}
