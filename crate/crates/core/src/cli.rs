//! Command-line entry points. Every subcommand is a thin wrapper over one
//! library operation; all randomness comes from `--seed`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::corpus::{
    ingest_corpus, read_jsonl, split_by_date, write_jsonl, Corpus, DatasetSplit, SourceDocument,
    SourceRecord, SplitName,
};
use crate::encoder::{build_vocab, SubwordVocab};
use crate::error::{Error, Result};
use crate::fusion::{grid_search, FusionMetric, FusionWeights, PosteriorRecord};
use crate::metrics::{
    render_tables, sample_misranked, GoldRecord, PredictionRecord, RunEvaluation,
};
use crate::pipeline::{baseline_run, gold_records, split_outputs, Baseline, QuoteRecommender};
use crate::recsvc::{self, AppState, RecommendRequest, ServiceConfig};
use crate::sampling::SamplingScheme;
use crate::synth::{synthetic_records, SynthConfig, DEV_END, TRAIN_END};
use crate::trainer::{
    hyperparameter_search, run_ablation, train, AblationVariant, DevMetric, HyperGrid, ModelKind,
    TrainConfig, TrainData,
};

#[derive(Debug, Parser)]
#[command(
    name = "quotefuse",
    version,
    about = "Context-aware quote recommendation over a single source document"
)]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate source and article files and report corpus statistics.
    Ingest(IngestArgs),
    /// Split quotes by source date and write split lists and gold files.
    Split(SplitCmd),
    /// Build a subword vocabulary from the training split.
    BuildVocab(BuildVocabArgs),
    /// Train one model kind and write its checkpoint.
    Train(TrainArgs),
    /// Train every cell of a batch size x learning rate x negatives grid and keep the best.
    GridSearch(GridSearchArgs),
    /// Score a split with trained models and the lexical baselines.
    Predict(PredictArgs),
    /// Evaluate a run file against gold records.
    Evaluate(EvaluateArgs),
    /// Pick fusion weights on a dev posterior cache.
    Fuse(FuseArgs),
    /// Retrain without title and with shorter contexts and report deltas.
    Ablate(AblateArgs),
    /// Sample quotes whose top-ranked paragraph is wrong, for human review.
    SampleMisranked(SampleMisrankedArgs),
    /// Run the HTTP recommendation service.
    Serve(ServeArgs),
    /// Recommend paragraphs and spans for one title and context.
    Recommend(RecommendArgs),
    /// Write the seeded synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Source documents, JSON Lines.
    #[arg(long)]
    pub sources: PathBuf,
    /// Articles with aligned quotes, JSON Lines.
    #[arg(long)]
    pub articles: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Last source date (inclusive) of the training split, YYYY-MM-DD.
    #[arg(long)]
    pub train_end: String,
    /// Last source date (inclusive) of the dev split, YYYY-MM-DD.
    #[arg(long)]
    pub dev_end: String,
}

struct Loaded {
    corpus: Corpus,
    train: DatasetSplit,
    dev: DatasetSplit,
    test: DatasetSplit,
}

impl Loaded {
    fn split(&self, name: SplitName) -> &DatasetSplit {
        match name {
            SplitName::Train => &self.train,
            SplitName::Dev => &self.dev,
            SplitName::Test => &self.test,
        }
    }

    fn data<'a>(&'a self, vocab: &'a SubwordVocab) -> TrainData<'a> {
        TrainData {
            corpus: &self.corpus,
            train: &self.train,
            dev: &self.dev,
            vocab,
        }
    }
}

impl SplitArgs {
    fn load(&self) -> Result<Loaded> {
        let corpus = ingest_corpus(&self.corpus.sources, &self.corpus.articles)?;
        let (train, dev, test) = split_by_date(&corpus, &self.train_end, &self.dev_end)?;
        Ok(Loaded {
            corpus,
            train,
            dev,
            test,
        })
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Also write the statistics as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitCmd {
    #[command(flatten)]
    pub split: SplitArgs,
    /// Output directory for `<split>.quotes.json` and `<split>.gold.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value_t = 8000)]
    pub vocab_size: usize,
    /// Vocabulary file, one piece per line.
    #[arg(long)]
    pub out: PathBuf,
}

/// Training flags; each overrides the matching key of `--config`.
#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    /// JSON training config; flags below win over its keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// paragraph | span_positive_only | span_shared_norm
    #[arg(long)]
    pub model_kind: Option<ModelKind>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub n_negatives: Option<usize>,
    /// uniform | tfidf | positional
    #[arg(long)]
    pub scheme: Option<SamplingScheme>,
    #[arg(long)]
    pub title_cap: Option<usize>,
    #[arg(long)]
    pub context_cap: Option<usize>,
    #[arg(long)]
    pub paragraph_cap: Option<usize>,
    #[arg(long)]
    pub use_title: Option<bool>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// map | f1_top
    #[arg(long)]
    pub early_stopping_metric: Option<DevMetric>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ff_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    #[arg(long)]
    pub lr_decay: Option<bool>,
}

impl TrainFlags {
    pub fn resolve(&self) -> Result<TrainConfig> {
        let mut c = match &self.config {
            Some(p) => TrainConfig::from_json_file(p)?,
            None => TrainConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(
            model_kind => model_kind, batch_size => batch_size, lr => learning_rate,
            max_epochs => max_epochs, n_negatives => n_negatives, scheme => scheme,
            title_cap => title_cap, context_cap => context_cap, paragraph_cap => paragraph_cap,
            use_title => use_title, seed => seed, hidden_size => hidden_size, layers => layers,
            heads => heads, ff_size => ff_size, dropout => dropout, clip_norm => clip_norm,
            warmup_fraction => warmup_fraction, lr_decay => lr_decay,
        );
        if let Some(m) = self.early_stopping_metric {
            c.early_stopping_metric = Some(m);
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GridSearchArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub vocab: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Batch sizes to try [default: 16,32].
    #[arg(long, value_delimiter = ',')]
    pub batch_sizes: Vec<usize>,
    /// Learning rates to try [default: 5e-5,3e-5,2e-5].
    #[arg(long, value_delimiter = ',')]
    pub lrs: Vec<f64>,
    /// Negative counts to try [default: 3,6,9,12].
    #[arg(long, value_delimiter = ',')]
    pub negatives: Vec<usize>,
    /// Checkpoint path for the best cell.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    /// Split to score: train | dev | test.
    #[arg(long, default_value = "dev")]
    pub on: SplitName,
    #[arg(long)]
    pub paragraph_ckpt: Option<PathBuf>,
    #[arg(long)]
    pub span_ckpt: Option<PathBuf>,
    /// With --beta and both checkpoints, also write a fused run.
    #[arg(long, requires = "beta")]
    pub alpha: Option<f64>,
    #[arg(long, requires = "alpha")]
    pub beta: Option<f64>,
    /// Output directory for run files, the posterior cache and gold records.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Run file, JSON Lines of predictions.
    #[arg(long)]
    pub run: PathBuf,
    /// Gold file, JSON Lines.
    #[arg(long)]
    pub gold: PathBuf,
    /// Name of the run in the report [default: run file stem].
    #[arg(long)]
    pub run_id: Option<String>,
    #[arg(long, default_value = "test")]
    pub split_label: String,
    /// Baseline runs to test significance against.
    #[arg(long)]
    pub baseline: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Posterior cache of the dev split, JSON Lines.
    #[arg(long)]
    pub dev_cache: PathBuf,
    /// map | f1
    #[arg(long, default_value = "map")]
    pub metric: FusionMetric,
    /// Also write the chosen weights as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WeightArgs {
    /// Span posterior exponent.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Paragraph posterior exponent.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
}

impl WeightArgs {
    fn weights(&self) -> Result<FusionWeights> {
        FusionWeights::new(self.alpha, self.beta)
    }
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub paragraph_ckpt: PathBuf,
    #[arg(long)]
    pub span_ckpt: PathBuf,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Split the deltas are measured on.
    #[arg(long, default_value = "test")]
    pub on: SplitName,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleMisrankedArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Pieces of left context to show, widened to whole sentences.
    #[arg(long, default_value_t = 100)]
    pub context_cap: usize,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// JSON Lines output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Store root [default: $QF_DATA_DIR or ./qf-data].
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// [default: $QF_PORT or 8080]
    #[arg(long)]
    pub port: Option<u16>,
    /// Load and persist this model before serving.
    #[arg(long, requires = "span_ckpt")]
    pub paragraph_ckpt: Option<PathBuf>,
    #[arg(long, requires = "paragraph_ckpt")]
    pub span_ckpt: Option<PathBuf>,
    #[command(flatten)]
    pub weights: WeightArgs,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub paragraph_ckpt: PathBuf,
    #[arg(long)]
    pub span_ckpt: PathBuf,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// Source documents, JSON Lines.
    #[arg(long)]
    pub sources: PathBuf,
    #[arg(long)]
    pub source_id: String,
    #[arg(long, default_value = "")]
    pub title: String,
    #[arg(long, default_value = "")]
    pub context: String,
    #[arg(long, default_value_t = recsvc::DEFAULT_TOP_K)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = SynthConfig::default().seed)]
    pub seed: u64,
    /// Output directory for sources.jsonl and articles.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?).map_err(Error::file(path))?;
    Ok(())
}

fn load_source(path: &Path, id: &str) -> Result<SourceDocument> {
    let record = read_jsonl::<SourceRecord>(path)?
        .into_iter()
        .find(|r| r.id == id)
        .ok_or_else(|| Error::NotFound(format!("source {id:?} in {}", path.display())))?;
    SourceDocument::new(record.id, record.date, record.paragraphs)
}

#[derive(Serialize)]
struct CorpusStats {
    sources: usize,
    articles: usize,
    quotes: usize,
    rejected_articles: Vec<String>,
}

#[derive(Serialize)]
struct FuseOutput {
    alpha: f64,
    beta: f64,
    metric: FusionMetric,
    value: f64,
    points: usize,
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let c = ingest_corpus(&a.corpus.sources, &a.corpus.articles)?;
    let stats = CorpusStats {
        sources: c.sources().count(),
        articles: c.articles().count(),
        quotes: c.quotes().len(),
        rejected_articles: c.rejected_articles().to_vec(),
    };
    if let Some(out) = &a.out {
        write_json(out, &stats)?;
    }
    print_json(&stats)
}

fn split(a: &SplitCmd) -> Result<()> {
    let l = a.split.load()?;
    std::fs::create_dir_all(&a.out)?;
    for s in [&l.train, &l.dev, &l.test] {
        let name = s.name.as_str();
        write_json(&a.out.join(format!("{name}.quotes.json")), s)?;
        write_jsonl(
            &a.out.join(format!("{name}.gold.jsonl")),
            &gold_records(&l.corpus, s)?,
        )?;
        println!("{name}\t{}", s.len());
    }
    Ok(())
}

fn vocab_cmd(a: &BuildVocabArgs) -> Result<()> {
    let l = a.split.load()?;
    let vocab = build_vocab(l.corpus.split_token_sequences(&l.train), a.vocab_size)?;
    vocab.save(&a.out)?;
    println!("{} pieces\t{}", vocab.len(), vocab.hash());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = a.flags.resolve()?;
    let l = a.split.load()?;
    let vocab = SubwordVocab::load(&a.vocab)?;
    let ckpt = train(&l.data(&vocab), &cfg)?;
    ckpt.save(&a.out)?;
    print_json(&ckpt.history)
}

fn grid_cmd(a: &GridSearchArgs) -> Result<()> {
    let base = a.flags.resolve()?;
    let defaults = HyperGrid::fine_tuning();
    let pick = |v: &Vec<_>, d| if v.is_empty() { d } else { v.clone() };
    let grid = HyperGrid {
        batch_sizes: pick(&a.batch_sizes, defaults.batch_sizes),
        learning_rates: if a.lrs.is_empty() {
            defaults.learning_rates
        } else {
            a.lrs.clone()
        },
        n_negatives: pick(&a.negatives, defaults.n_negatives),
    };
    let l = a.split.load()?;
    let vocab = SubwordVocab::load(&a.vocab)?;
    let outcome = hyperparameter_search(&l.data(&vocab), &base, &grid)?;
    outcome.best.save(&a.out)?;
    print_json(&outcome.table)
}

fn predict(a: &PredictArgs) -> Result<()> {
    let l = a.split.load()?;
    let split = l.split(a.on);
    let para = a
        .paragraph_ckpt
        .as_deref()
        .map(Checkpoint::load)
        .transpose()?;
    let span = a.span_ckpt.as_deref().map(Checkpoint::load).transpose()?;
    std::fs::create_dir_all(&a.out)?;
    write_jsonl(&a.out.join("gold.jsonl"), &gold_records(&l.corpus, split)?)?;
    write_jsonl(
        &a.out.join("bm25.jsonl"),
        &baseline_run(&l.corpus, split, Baseline::Bm25)?,
    )?;
    write_jsonl(
        &a.out.join("tfidf.jsonl"),
        &baseline_run(&l.corpus, split, Baseline::Tfidf)?,
    )?;
    let outputs = split_outputs(&l.corpus, split, para.as_ref(), span.as_ref())?;
    if para.is_some() {
        let runs = outputs
            .iter()
            .map(|o| o.paragraph_run())
            .collect::<Result<Vec<_>>>()?;
        write_jsonl(&a.out.join("paragraph.jsonl"), &runs)?;
    }
    if span.is_some() {
        let runs = outputs
            .iter()
            .map(|o| o.span_run())
            .collect::<Result<Vec<_>>>()?;
        write_jsonl(&a.out.join("span.jsonl"), &runs)?;
    }
    if para.is_some() && span.is_some() {
        let cache = outputs
            .iter()
            .map(|o| o.posteriors())
            .collect::<Result<Vec<_>>>()?;
        write_jsonl(&a.out.join("posteriors.jsonl"), &cache)?;
        if let (Some(alpha), Some(beta)) = (a.alpha, a.beta) {
            let w = FusionWeights::new(alpha, beta)?;
            let runs = outputs
                .iter()
                .map(|o| o.fused_run(w))
                .collect::<Result<Vec<_>>>()?;
            write_jsonl(&a.out.join("fused.jsonl"), &runs)?;
        }
    }
    println!("{} quotes scored on {}", outputs.len(), a.on.as_str());
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let gold: Vec<GoldRecord> = read_jsonl(&a.gold)?;
    let run: Vec<PredictionRecord> = read_jsonl(&a.run)?;
    let eval = RunEvaluation::compute(&run, &gold)?;
    let stem = |p: &Path| {
        p.file_stem()
            .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
    };
    let run_id = a.run_id.clone().unwrap_or_else(|| stem(&a.run));
    let mut report = eval.report(&run_id, &a.split_label);
    let mut reports = Vec::new();
    for b in &a.baseline {
        let base = RunEvaluation::compute(&read_jsonl::<PredictionRecord>(b)?, &gold)?;
        report
            .significance
            .extend(eval.significance_against(&base, &stem(b), a.seed)?);
        reports.push(base.report(&stem(b), &a.split_label));
    }
    reports.push(report.clone());
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    print_json(&report)?;
    print!("{}", render_tables(&reports));
    Ok(())
}

fn fuse(a: &FuseArgs) -> Result<()> {
    let cache: Vec<PosteriorRecord> = read_jsonl(&a.dev_cache)?;
    let result = grid_search(&cache, a.metric)?;
    if let Some(out) = &a.out {
        write_json(out, &result.weights)?;
    }
    print_json(&FuseOutput {
        alpha: result.weights.alpha,
        beta: result.weights.beta,
        metric: a.metric,
        value: result.best_value,
        points: result.evaluated(),
    })
}

fn ablate(a: &AblateArgs) -> Result<()> {
    let weights = a.weights.weights()?;
    let para = Checkpoint::load(&a.paragraph_ckpt)?;
    let span = Checkpoint::load(&a.span_ckpt)?;
    let l = a.split.load()?;
    let vocab = para.vocab.clone();
    let report = run_ablation(
        &l.data(&vocab),
        l.split(a.on),
        &para,
        &span,
        weights,
        &AblationVariant::standard(),
    )?;
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    print!("{}", report.render());
    Ok(())
}

fn misranked(a: &SampleMisrankedArgs) -> Result<()> {
    let corpus = ingest_corpus(&a.corpus.sources, &a.corpus.articles)?;
    let vocab = SubwordVocab::load(&a.vocab)?;
    let run: Vec<PredictionRecord> = read_jsonl(&a.run)?;
    let gold: Vec<GoldRecord> = read_jsonl(&a.gold)?;
    let samples = sample_misranked(&run, &gold, &corpus, &vocab, a.context_cap, a.n, a.seed)?;
    write_jsonl(&a.out, &samples)?;
    println!("{} samples", samples.len());
    Ok(())
}

fn serve(a: &ServeArgs) -> Result<()> {
    let env = ServiceConfig::from_env()?;
    let data_dir = a.data_dir.clone().unwrap_or(env.data_dir);
    let port = a.port.unwrap_or(env.port);
    let state = AppState::open(&data_dir)?;
    if let (Some(p), Some(s)) = (&a.paragraph_ckpt, &a.span_ckpt) {
        state.load_model_files(p, s, a.weights.weights()?, true)?;
    }
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?;
    rt.block_on(recsvc::serve(Arc::new(state), port))
}

fn recommend(a: &RecommendArgs) -> Result<()> {
    let model = QuoteRecommender::new(
        Checkpoint::load(&a.paragraph_ckpt)?,
        Checkpoint::load(&a.span_ckpt)?,
        a.weights.weights()?,
    )?;
    let doc = load_source(&a.sources, &a.source_id)?;
    let req = RecommendRequest {
        source_id: a.source_id.clone(),
        title: a.title.clone(),
        context: a.context.clone(),
        top_k: a.top_k,
        include_spans: true,
    };
    print_json(&recsvc::recommend(&model, &doc, &req)?)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let (sources, articles) = synthetic_records(SynthConfig {
        seed: a.seed,
        ..SynthConfig::default()
    });
    std::fs::create_dir_all(&a.out)?;
    write_jsonl(&a.out.join("sources.jsonl"), &sources)?;
    write_jsonl(&a.out.join("articles.jsonl"), &articles)?;
    println!("train_end {TRAIN_END}\tdev_end {DEV_END}");
    Ok(())
}

/// Runs one parsed invocation.
pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Split(a) => split(a),
        Command::BuildVocab(a) => vocab_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::GridSearch(a) => grid_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Fuse(a) => fuse(a),
        Command::Ablate(a) => ablate(a),
        Command::SampleMisranked(a) => misranked(a),
        Command::Serve(a) => serve(a),
        Command::Recommend(a) => recommend(a),
        Command::Synth(a) => synth(a),
    }
}

/// Parses `argv` and runs it: 0 on success, 2 on usage errors, 1 when the
/// operation fails.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = if cli.verbose {
        tracing::Level::INFO
    } else {
        tracing::Level::WARN
    };
    let _ = tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
