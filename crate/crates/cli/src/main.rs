use std::collections::HashMap;
use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use vidmod_core::active_router::{route, RoutingThresholds};
use vidmod_core::curriculum::{Phase, PhaseSchedule};
use vidmod_core::data_gen::{gen_ad_qa, gen_corpus, gen_rule_qa, CorpusRecord, HttpSummarizer, NoiseModel};
use vidmod_core::eval_harness::{evaluate, welch_ttest, LabelRecord, PredictionRecord};
use vidmod_core::output_format::{parse_output, ModerationOutput};
use vidmod_core::reward_engine::{aggregate, score_response, GroundTruth, ReasonMode, RewardConfig, TverskyParams};
use vidmod_core::run::{parse_stages, persist_run, run_pipeline, RunConfig, Services};
use vidmod_core::similarity::{EmbeddingProvider, HttpEmbedder, ReferenceEmbedder};
use vidmod_core::taxonomy::{load_taxonomy, LabelTree};

const CLIENT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Parser)]
#[command(name = "vidmod", version, about = "Reward, curriculum and routing tools for video-ad moderation training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Taxonomy utilities.
    Taxonomy {
        #[command(subcommand)]
        command: TaxonomyCommand,
    },
    /// Generate training data.
    Gen {
        #[command(subcommand)]
        command: GenCommand,
    },
    /// Parse raw model outputs.
    Parse(ParseArgs),
    /// Score raw outputs against reference annotations.
    Score(ScoreArgs),
    /// Run training stages from a config file.
    Train(TrainArgs),
    /// Route scored outputs to SFT, hard RL, or standard RL.
    Route(RouteArgs),
    /// Category precision/recall and grounding mIoU.
    Eval(EvalArgs),
    /// Welch's two-sample t-test.
    Ttest(TtestArgs),
}

#[derive(Subcommand)]
enum TaxonomyCommand {
    /// Check a taxonomy file and print its size.
    Validate { path: PathBuf },
}

#[derive(Subcommand)]
enum GenCommand {
    /// Knowledge-injection QA pairs.
    Qa {
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Corpus JSONL whose ad summaries become ad-knowledge QA.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic moderation corpus.
    Corpus {
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 0.1)]
        p_sub: f64,
        #[arg(long, default_value_t = 0.05)]
        p_v: f64,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ParseArgs {
    /// JSONL of {"id", "raw"}; stdin when absent.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// A single raw output instead of a file.
    #[arg(long, conflicts_with = "input")]
    text: Option<String>,
}

#[derive(Args)]
struct RewardArgs {
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    /// Compare reasoning per section instead of as one text.
    #[arg(long)]
    per_section: bool,
}

impl RewardArgs {
    fn config(&self) -> anyhow::Result<RewardConfig> {
        Ok(RewardConfig {
            tversky: TverskyParams::new(self.alpha, self.beta).map_err(|e| usage(e.to_string()))?,
            reason_mode: if self.per_section {
                ReasonMode::PerSection
            } else {
                ReasonMode::FullChain
            },
        })
    }
}

#[derive(Args)]
struct ScoreArgs {
    /// Predictions JSONL ({"id", "raw"}), or {"raw", "gt"} pairs when --gt is absent.
    #[arg(long = "in")]
    input: PathBuf,
    /// Labels JSONL keyed by id (label records or corpus lines).
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Curriculum phase whose weights give the aggregate reward.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
    phase: u8,
    #[command(flatten)]
    reward: RewardArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated: sft-data, passive, active.
    #[arg(long, default_value = "sft-data,passive,active")]
    stages: String,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RouteArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// JSON file with routing thresholds; defaults otherwise.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    #[command(flatten)]
    reward: RewardArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Where to write the JSON report; the table always goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TtestArgs {
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    a: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    b: Vec<f64>,
}

/// Error classes mapped to exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Data(e) | Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for Failure {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Failure::Usage(msg.into()).into()
}

fn data(e: impl Into<anyhow::Error>) -> anyhow::Error {
    Failure::Data(e.into()).into()
}

fn runtime(e: impl Into<anyhow::Error>) -> anyhow::Error {
    Failure::Runtime(e.into()).into()
}

fn classify(err: anyhow::Error) -> Failure {
    match err.downcast::<Failure>() {
        Ok(f) => f,
        Err(other) => match other.downcast_ref::<io::Error>() {
            Some(_) => Failure::Runtime(other),
            None => Failure::Data(other),
        },
    }
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(data)
}

fn jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> anyhow::Result<Vec<T>> {
    read_text(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .with_context(|| format!("{}:{}", path.display(), i + 1))
                .map_err(data)
        })
        .collect()
}

/// Writes to `out` or stdout.
fn emit(out: Option<&Path>, bytes: &[u8]) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)
                    .with_context(|| format!("cannot create {}", parent.display()))
                    .map_err(runtime)?;
            }
            fs::write(path, bytes)
                .with_context(|| format!("cannot write {}", path.display()))
                .map_err(runtime)
        }
        None => io::stdout().write_all(bytes).context("stdout").map_err(runtime),
    }
}

fn to_jsonl<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Vec<u8> {
    let mut buf = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut buf, &r).expect("rows serialize");
        buf.push(b'\n');
    }
    buf
}

fn taxonomy(path: Option<&Path>) -> anyhow::Result<LabelTree> {
    match path {
        Some(p) => load_taxonomy(p).with_context(|| format!("taxonomy {}", p.display())).map_err(data),
        None => Ok(LabelTree::fixture()),
    }
}

fn embedder() -> Box<dyn EmbeddingProvider> {
    match HttpEmbedder::from_env(CLIENT_TIMEOUT) {
        Some(e) => Box::new(e),
        None => Box::new(ReferenceEmbedder::default()),
    }
}

/// Loads reference annotations keyed by id from label records or corpus lines.
fn load_labels(path: &Path) -> anyhow::Result<HashMap<String, GroundTruth>> {
    let mut out = HashMap::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = || format!("{}:{}", path.display(), i + 1);
        let value: serde_json::Value = serde_json::from_str(line).with_context(at).map_err(data)?;
        let (id, gt) = if value.get("gt").is_some() && value.get("candidates").is_some() {
            let rec: CorpusRecord = serde_json::from_value(value).with_context(at).map_err(data)?;
            let gt = rec.gt.into_ground_truth(rec.duration).with_context(at).map_err(data)?;
            (rec.id, gt)
        } else {
            let rec: LabelRecord = serde_json::from_value(value).with_context(at).map_err(data)?;
            let gt = rec.to_ground_truth().with_context(at).map_err(data)?;
            (rec.id, gt)
        };
        if out.insert(id.clone(), gt).is_some() {
            return Err(data(anyhow!("{}: duplicate id `{id}`", at())));
        }
    }
    Ok(out)
}

/// Predictions paired with their labels, in prediction-file order.
fn paired(pred: &Path, labels: &Path) -> anyhow::Result<Vec<(String, String, GroundTruth)>> {
    let labels = load_labels(labels)?;
    let preds: Vec<PredictionRecord> = jsonl(pred)?;
    preds
        .into_iter()
        .map(|p| {
            let gt = labels
                .get(&p.id)
                .cloned()
                .ok_or_else(|| data(anyhow!("no label for prediction `{}`", p.id)))?;
            Ok((p.id, p.raw, gt))
        })
        .collect()
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ScorePair {
    #[serde(default)]
    id: Option<String>,
    raw: String,
    gt: GroundTruth,
}

fn score_inputs(input: &Path, gt: Option<&Path>) -> anyhow::Result<Vec<(String, String, GroundTruth)>> {
    match gt {
        Some(gt) => paired(input, gt),
        None => jsonl::<ScorePair>(input)?
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                p.gt.validate().with_context(|| format!("record {}", i + 1)).map_err(data)?;
                Ok((p.id.unwrap_or_else(|| i.to_string()), p.raw, p.gt))
            })
            .collect(),
    }
}

fn cmd_taxonomy_validate(path: &Path) -> anyhow::Result<()> {
    let tree = load_taxonomy(path).with_context(|| path.display().to_string()).map_err(data)?;
    println!("ok: {} majors, {} sub-categories", tree.majors.len(), tree.sub_count());
    Ok(())
}

fn cmd_gen_qa(tax: Option<&Path>, corpus: Option<&Path>, out: Option<&Path>) -> anyhow::Result<()> {
    let tree = taxonomy(tax)?;
    let mut qa = gen_rule_qa(&tree);
    if let Some(path) = corpus {
        let summarizer = HttpSummarizer::from_env(CLIENT_TIMEOUT);
        let client = summarizer.as_ref().map(|s| s as &dyn vidmod_core::data_gen::SummarizerClient);
        for rec in jsonl::<CorpusRecord>(path)? {
            qa.extend(gen_ad_qa(&rec.id, &rec.ad, client));
        }
    }
    emit(out, &to_jsonl(&qa))
}

fn cmd_gen_corpus(
    tax: Option<&Path>,
    n: usize,
    k: usize,
    seed: u64,
    noise: NoiseModel,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let tree = taxonomy(tax)?;
    let corpus = gen_corpus(&tree, n, &noise, k, seed).map_err(data)?;
    emit(out, &to_jsonl(corpus.iter().map(CorpusRecord::from)))
}

#[derive(Serialize)]
struct ParseLine<'a> {
    id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    output: Option<ModerationOutput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<vidmod_core::output_format::ParseFailure>,
}

fn parse_line(id: &str, raw: &str) -> Vec<u8> {
    let (output, error) = match parse_output(raw) {
        Ok(o) => (Some(o), None),
        Err(e) => (None, Some(e)),
    };
    to_jsonl([ParseLine { id, output, error }])
}

fn cmd_parse(args: &ParseArgs) -> anyhow::Result<()> {
    if let Some(text) = &args.text {
        return emit(None, &parse_line("text", text));
    }
    let records: Vec<PredictionRecord> = match &args.input {
        Some(p) => jsonl(p)?,
        None => {
            let mut buf = String::new();
            io::stdin().read_to_string(&mut buf).context("stdin").map_err(runtime)?;
            buf.lines()
                .filter(|l| !l.trim().is_empty())
                .enumerate()
                .map(|(i, l)| {
                    serde_json::from_str(l)
                        .with_context(|| format!("stdin:{}", i + 1))
                        .map_err(data)
                })
                .collect::<anyhow::Result<_>>()?
        }
    };
    let mut out = Vec::new();
    for r in &records {
        out.extend(parse_line(&r.id, &r.raw));
    }
    emit(None, &out)
}

#[derive(Serialize)]
struct ScoreLine {
    id: String,
    breakdown: vidmod_core::reward_engine::RewardBreakdown,
    reward: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    parse_error: Option<String>,
}

fn cmd_score(args: &ScoreArgs) -> anyhow::Result<()> {
    let config = args.reward.config()?;
    let weights = PhaseSchedule::default().weights(Phase::try_from(args.phase).map_err(|e| usage(e.to_string()))?);
    let provider = embedder();
    let mut lines = Vec::new();
    for (id, raw, gt) in score_inputs(&args.input, args.gt.as_deref())? {
        let s = score_response(&raw, &gt, &config, provider.as_ref());
        lines.push(ScoreLine {
            id,
            reward: aggregate(&s.breakdown, &weights),
            breakdown: s.breakdown,
            mean_iou: s.grounding.mean_iou,
            parse_error: s.parsed.err().map(|e| e.to_string()),
        });
    }
    emit(args.out.as_deref(), &to_jsonl(&lines))
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let stages = parse_stages(&args.stages).map_err(usage)?;
    // An unreadable config is bad input, like any other missing input file.
    let mut config = RunConfig::load(&args.config).map_err(data)?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    let provider = embedder();
    let summarizer = HttpSummarizer::from_env(CLIENT_TIMEOUT);
    let services = Services {
        embedder: provider.as_ref(),
        summarizer: summarizer.as_ref().map(|s| s as &dyn vidmod_core::data_gen::SummarizerClient),
    };
    let run_err = |e: vidmod_core::run::RunError| match e.exit_code() {
        2 => data(e),
        _ => runtime(e),
    };
    let (artifacts, summary) = run_pipeline(&config, &stages, &services).map_err(run_err)?;
    let manifest = persist_run(&config.output_dir, &artifacts).map_err(run_err)?;
    log::info!("wrote {} files to {}", manifest.files.len(), config.output_dir.display());
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn cmd_route(args: &RouteArgs) -> anyhow::Result<()> {
    let th: RoutingThresholds = match &args.thresholds {
        Some(p) => serde_json::from_str(&read_text(p)?)
            .with_context(|| p.display().to_string())
            .map_err(data)?,
        None => RoutingThresholds::default(),
    };
    th.validate().map_err(data)?;
    let config = args.reward.config()?;
    let provider = embedder();
    let mut routed = Vec::new();
    for (step, (id, raw, gt)) in paired(&args.input, &args.gt)?.into_iter().enumerate() {
        let s = score_response(&raw, &gt, &config, provider.as_ref());
        routed.push(route(&id, &s.parsed, &gt, &s.breakdown, &th, step));
    }
    emit(args.out.as_deref(), &to_jsonl(&routed))
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut failures = 0;
    for (_, raw, gt) in paired(&args.pred, &args.labels)? {
        preds.push(parse_output(&raw).unwrap_or_else(|_| {
            failures += 1;
            ModerationOutput::empty()
        }));
        gts.push(gt);
    }
    let report = evaluate(&preds, &gts, failures).map_err(data)?;
    if let Some(out) = &args.out {
        let mut json = serde_json::to_vec_pretty(&report).expect("report serializes");
        json.push(b'\n');
        emit(Some(out), &json)?;
    }
    emit(None, report.to_table().as_bytes())
}

fn cmd_ttest(args: &TtestArgs) -> anyhow::Result<()> {
    let r = welch_ttest(&args.a, &args.b).map_err(data)?;
    println!("{}", serde_json::to_string(&r).expect("result serializes"));
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Taxonomy {
            command: TaxonomyCommand::Validate { path },
        } => cmd_taxonomy_validate(&path),
        Command::Gen { command } => match command {
            GenCommand::Qa { taxonomy, corpus, out } => cmd_gen_qa(taxonomy.as_deref(), corpus.as_deref(), out.as_deref()),
            GenCommand::Corpus {
                taxonomy,
                n,
                k,
                seed,
                sigma,
                p_sub,
                p_v,
                noise_seed,
                out,
            } => cmd_gen_corpus(
                taxonomy.as_deref(),
                n,
                k,
                seed,
                NoiseModel {
                    sigma,
                    p_sub,
                    p_v,
                    seed: noise_seed,
                },
                out.as_deref(),
            ),
        },
        Command::Parse(a) => cmd_parse(&a),
        Command::Score(a) => cmd_score(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Route(a) => cmd_route(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ttest(a) => cmd_ttest(&a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let failure = classify(err);
            eprintln!("error: {failure}");
            ExitCode::from(failure.code())
        }
    }
}

