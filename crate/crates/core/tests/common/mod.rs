//! Shared fixtures and independent reference implementations for the
//! integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::HashMap;

use quotefuse::checkpoint::Checkpoint;
use quotefuse::checkpoint::TrainedModel;
use quotefuse::corpus::{split_by_date, Corpus, DatasetSplit, QuoteQuery, SourceDocument};
use quotefuse::encoder::{build_vocab, PackedInput, SubwordVocab, TensorSet};
use quotefuse::fusion::{FusionMetric, FusionWeights, PosteriorRecord};
use quotefuse::metrics::{GoldRecord, PredictionRecord};
use quotefuse::spanpred::{DecodeOptions, SpanLogits};
use quotefuse::synth::{overfit_train_config, synthetic_corpus, SynthConfig, DEV_END, TRAIN_END};
use quotefuse::trainer::{example_loss_grad, init_model, train, ModelKind, TrainConfig, TrainData};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

// ---------------------------------------------------------------------------
// Gradient oracle

pub const GRAD_VOCAB: usize = 40;

/// 2-layer, h = 16 model of the given kind, without dropout.
pub fn small_config(kind: ModelKind, seed: u64) -> TrainConfig {
    TrainConfig {
        model_kind: kind,
        hidden_size: 16,
        layers: 2,
        heads: 2,
        ff_size: 32,
        dropout: 0.0,
        seed,
        ..TrainConfig::default()
    }
}

/// A random packed input: `[CLS] q.. [body_start] q.. [SEP] p.. [SEP]`.
pub fn random_packed(rng: &mut ChaCha8Rng, vocab: usize) -> PackedInput {
    let title = rng.gen_range(0..4);
    let context = rng.gen_range(0..6);
    let para = rng.gen_range(2..8);
    let mut ids = vec![2u32];
    ids.extend((0..title).map(|_| rng.gen_range(5..vocab as u32)));
    ids.push(4);
    ids.extend((0..context).map(|_| rng.gen_range(5..vocab as u32)));
    ids.push(3);
    let first = ids.len();
    ids.extend((0..para).map(|_| rng.gen_range(5..vocab as u32)));
    let last = ids.len() - 1;
    ids.push(3);
    let mut segment_ids = vec![0u8; first];
    segment_ids.resize(ids.len(), 1);
    PackedInput {
        attention_mask: vec![1; ids.len()],
        segment_ids,
        paragraph_piece_range: (first, last),
        piece_to_token: (0..para).collect(),
        title_pieces: title,
        context_pieces: context,
        ids,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

/// Denominator floor for the relative error. A central difference with
/// eps = 1e-5 resolves the loss to about one ulp / 2eps ≈ 1e-11, so
/// coordinates whose true gradient is zero (key biases, biases feeding a
/// shift-invariant softmax) are judged on an absolute error of 1e-10.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Analytic vs central-difference gradients of one loss through the full
/// model, on `instances` random examples with `n` negatives each. Every
/// tensor is probed at `per_tensor` random coordinates per instance.
pub fn gradient_check(
    kind: ModelKind,
    instances: usize,
    n: usize,
    per_tensor: usize,
    seed: u64,
) -> GradReport {
    let mut r = rng(seed);
    let eps = 1e-5;
    let mut max_rel: f64 = 0.0;
    let mut coordinates = 0;
    for inst in 0..instances {
        let model = init_model(&small_config(kind, seed + inst as u64), GRAD_VOCAB).unwrap();
        let n_pairs = if kind == ModelKind::SpanPositiveOnly {
            1
        } else {
            n + 1
        };
        let inputs: Vec<PackedInput> = (0..n_pairs)
            .map(|_| random_packed(&mut r, GRAD_VOCAB))
            .collect();
        let positive = r.gen_range(0..n_pairs);
        let (a, b) = inputs[positive].paragraph_piece_range;
        let s = r.gen_range(a..=b);
        let gold = Some((s, r.gen_range(s..=b)));
        let loss = |m: &TrainedModel| {
            example_loss_grad(m, &inputs, positive, gold, kind, None)
                .unwrap()
                .0
        };
        let (_, grads) = example_loss_grad(&model, &inputs, positive, gold, kind, None).unwrap();
        for t in 0..model.tensors().len() {
            let size = model.tensors()[t].len();
            for _ in 0..per_tensor {
                let idx = r.gen_range(0..size);
                let mut plus = model.clone();
                plus.tensors_mut()[t].as_slice_mut().unwrap()[idx] += eps;
                let mut minus = model.clone();
                minus.tensors_mut()[t].as_slice_mut().unwrap()[idx] -= eps;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * eps);
                let analytic = grads.tensors()[t].as_slice().unwrap()[idx];
                max_rel = max_rel.max(rel_error(analytic, numeric));
                coordinates += 1;
            }
        }
    }
    GradReport {
        instances,
        coordinates,
        max_rel_error: max_rel,
    }
}

pub fn random_logits(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> SpanLogits {
    SpanLogits {
        start: (0..len).map(|_| rng.gen_range(-scale..scale)).collect(),
        end: (0..len).map(|_| rng.gen_range(-scale..scale)).collect(),
    }
}

// ---------------------------------------------------------------------------
// Span decode oracle

/// Exhaustive O(L²) search with the same validity and tie-break rules:
/// maximize `start[i] + end[j]` over `j > i` (or `j >= i`) within the
/// length limit, smallest `(i, j)` on ties.
#[allow(clippy::needless_range_loop)]
pub fn brute_decode(
    start: &[f64],
    end: &[f64],
    range: (usize, usize),
    opts: DecodeOptions,
) -> Option<(usize, usize, f64)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for i in range.0..=range.1 {
        for j in i..=range.1 {
            if (j == i && !opts.allow_equal) || opts.max_len.is_some_and(|m| j - i + 1 > m) {
                continue;
            }
            let s = start[i] + end[j];
            if best.is_none_or(|(_, _, b)| s > b) {
                best = Some((i, j, s));
            }
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Metric oracles

/// Precision at every rank holding a positive, averaged over positives.
pub fn ref_average_precision(order: &[usize], positives: &[usize]) -> f64 {
    let mut hits = 0.0;
    let mut total = 0.0;
    for (k, p) in order.iter().enumerate() {
        if positives.contains(p) {
            hits += 1.0;
            total += hits / (k + 1) as f64;
        }
    }
    total / positives.len() as f64
}

pub fn ref_hit(order: &[usize], positives: &[usize], k: usize) -> f64 {
    let top: Vec<usize> = order.iter().copied().take(k).collect();
    if positives.iter().any(|p| top.contains(p)) {
        1.0
    } else {
        0.0
    }
}

pub fn ref_em(pred: &[String], gold: &[String]) -> f64 {
    let p: Vec<String> = pred.iter().map(|t| t.to_lowercase()).collect();
    let g: Vec<String> = gold.iter().map(|t| t.to_lowercase()).collect();
    if p == g {
        1.0
    } else {
        0.0
    }
}

pub fn ref_f1(pred: &[String], gold: &[String]) -> f64 {
    let count = |xs: &[String]| {
        let mut m: HashMap<String, usize> = HashMap::new();
        for x in xs {
            *m.entry(x.to_lowercase()).or_default() += 1;
        }
        m
    };
    let (cp, cg) = (count(pred), count(gold));
    let overlap: usize = cp
        .iter()
        .map(|(t, &c)| c.min(cg.get(t).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / pred.len() as f64;
    let recall = overlap as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Reference span under a setting: positive paragraphs in ascending order,
/// or the top `|positives|` paragraphs in rank order.
pub fn ref_predicted(pred: &PredictionRecord, gold: &GoldRecord, top: bool) -> Vec<String> {
    let mut paras: Vec<usize> = if top {
        pred.ranking
            .iter()
            .copied()
            .take(gold.positive_paragraphs.len())
            .collect()
    } else {
        let mut v = gold.positive_paragraphs.clone();
        v.sort_unstable();
        v
    };
    if !top {
        paras.dedup();
    }
    let mut out = Vec::new();
    for p in paras {
        if let Some(s) = pred.spans.get(p) {
            out.extend(s.iter().cloned());
        }
    }
    out
}

const WORDS: [&str; 6] = ["a", "b", "C", "c", "d", "."];

fn random_tokens(rng: &mut ChaCha8Rng, max: usize) -> Vec<String> {
    let n = rng.gen_range(0..=max);
    (0..n)
        .map(|_| WORDS[rng.gen_range(0..WORDS.len())].to_string())
        .collect()
}

/// A random run and gold set: ≤ 10 paragraphs, ≤ 20 tokens per span.
pub fn random_run(rng: &mut ChaCha8Rng, quotes: usize) -> (Vec<PredictionRecord>, Vec<GoldRecord>) {
    use rand::seq::SliceRandom;
    let mut preds = Vec::new();
    let mut gold = Vec::new();
    for q in 0..quotes {
        let n = rng.gen_range(1..=10);
        let mut ranking: Vec<usize> = (0..n).collect();
        ranking.shuffle(rng);
        let k = rng.gen_range(1..=n.min(3));
        let mut positives: Vec<usize> = (0..n).collect::<Vec<_>>();
        positives.shuffle(rng);
        positives.truncate(k);
        positives.sort_unstable();
        let spans: Vec<Vec<String>> = (0..n).map(|_| random_tokens(rng, 20)).collect();
        let gold_spans: Vec<Vec<String>> = positives
            .iter()
            .map(|&p| {
                if rng.gen_bool(0.4) {
                    spans[p].clone()
                } else {
                    random_tokens(rng, 20)
                }
            })
            .collect();
        let id = format!("q{q}");
        preds.push(PredictionRecord {
            quote_id: id.clone(),
            ranking,
            spans,
        });
        gold.push(GoldRecord {
            quote_id: id,
            positive_paragraphs: positives,
            gold_spans,
        });
    }
    (preds, gold)
}

// ---------------------------------------------------------------------------
// Lexical baseline oracle

/// Three hand-built paragraphs and a query whose baseline terms are
/// `economy border we discuss the growing economy and border security today`.
pub fn toy_document() -> (SourceDocument, QuoteQuery) {
    let doc = SourceDocument::new(
        "toy",
        "2020-01-01",
        vec![
            toks("the economy is growing and the economy is strong"),
            toks("border security is a priority"),
            toks("the economy and the border"),
        ],
    )
    .unwrap();
    let query = QuoteQuery::new(
        toks("economy border"),
        toks("we discuss the growing economy and border security today"),
    );
    (doc, query)
}

/// Values of the BM25 (k1 = 1.2, b = 0.75, IDF floored at 0, each distinct
/// query term once) and TF-IDF cosine (raw tf, idf = ln((1+N)/(1+df)) + 1)
/// formulas on [`toy_document`], evaluated by hand outside this crate.
pub const TOY_BM25: [f64; 3] = [0.4357655321105799, 0.5589662584664506, 0.0];
pub const TOY_TFIDF: [f64; 3] = [0.44141357367129974, 0.2853566885446875, 0.5427762878510012];

/// Straightforward BM25 evaluation used as a second, independent oracle.
pub fn ref_bm25(query: &[String], paragraphs: &[Vec<String>], k1: f64, b: f64) -> Vec<f64> {
    let n = paragraphs.len() as f64;
    let avgdl = paragraphs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let mut terms: Vec<&String> = query.iter().collect();
    terms.sort();
    terms.dedup();
    paragraphs
        .iter()
        .map(|p| {
            let mut score = 0.0;
            for t in &terms {
                let df = paragraphs.iter().filter(|q| q.contains(t)).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5)).ln().max(0.0);
                let tf = p.iter().filter(|w| w == t).count() as f64;
                score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * p.len() as f64 / avgdl));
            }
            score
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Fusion fixtures

/// Two-paragraph quotes whose positive (index 1) wins only when
/// 3.9 α < β < 4.1 α. Several grid points reach mAP 1; the first in
/// ascending (β, α) order is (α, β) = (0.5, 2).
pub fn ratio_window_dev_set() -> Vec<PosteriorRecord> {
    let pair = |log_ratio: f64| {
        let pos = 1.0 / (1.0 + (-log_ratio).exp());
        vec![1.0 - pos, pos]
    };
    let record = |id: &str, span_lr: f64, para_lr: f64| PosteriorRecord {
        quote_id: id.into(),
        p_paragraph: pair(para_lr),
        p_span: pair(span_lr),
        best_spans: vec![None, None],
        positive_paragraphs: vec![1],
        span_tokens: None,
        gold_tokens: None,
    };
    vec![record("lower", -3.9, 1.0), record("upper", 4.1, -1.0)]
}

pub const FUSION_METRIC: FusionMetric = FusionMetric::Map;

// ---------------------------------------------------------------------------
// Synthetic corpus fixture

pub struct Synthetic {
    pub corpus: Corpus,
    pub train: DatasetSplit,
    pub dev: DatasetSplit,
    pub test: DatasetSplit,
    pub vocab: SubwordVocab,
}

impl Synthetic {
    pub fn new() -> Self {
        let corpus = synthetic_corpus(SynthConfig::default()).unwrap();
        let (train, dev, test) = split_by_date(&corpus, TRAIN_END, DEV_END).unwrap();
        let vocab = build_vocab(corpus.split_token_sequences(&train), 200).unwrap();
        Self {
            corpus,
            train,
            dev,
            test,
            vocab,
        }
    }

    pub fn data(&self) -> TrainData<'_> {
        TrainData {
            corpus: &self.corpus,
            train: &self.train,
            dev: &self.dev,
            vocab: &self.vocab,
        }
    }

    /// Trains one model with the overfit settings.
    pub fn train(&self, kind: ModelKind, seed: u64) -> Checkpoint {
        train(&self.data(), &overfit_train_config(kind, seed)).unwrap()
    }

    /// Untrained checkpoint of the given kind over this vocabulary.
    pub fn untrained(&self, kind: ModelKind, seed: u64) -> Checkpoint {
        let config = TrainConfig {
            model_kind: kind,
            seed,
            ..TrainConfig::default()
        };
        Checkpoint {
            model: init_model(&config, self.vocab.len()).unwrap(),
            config,
            vocab: self.vocab.clone(),
            history: vec![],
            best_epoch: 0,
        }
    }
}

impl Default for Synthetic {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// CLI driver

pub struct CliOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn cli<I, S>(args: I) -> CliOutput
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_quotefuse"))
        .args(args)
        .output()
        .expect("run quotefuse binary");
    CliOutput {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Runs a command in `dir` and panics with its stderr unless it succeeds.
pub fn cli_ok(dir: &std::path::Path, args: &str) -> String {
    let argv: Vec<String> = args
        .split_whitespace()
        .map(|a| a.replace("{d}", &dir.display().to_string()))
        .collect();
    let out = cli(&argv);
    assert_eq!(out.code, 0, "quotefuse {args} failed: {}", out.stderr);
    out.stdout
}

/// Tiny model flags for CLI runs that only need to exercise the plumbing.
pub const TINY_FLAGS: &str =
    "--hidden-size 16 --layers 1 --heads 2 --ff-size 32 --max-epochs 1 --batch-size 8 --n-negatives 3 --seed 5";

/// synth → ingest → split → build-vocab → train (both kinds) → predict →
/// fuse → evaluate, all inside `dir`. Returns the evaluation report bytes.
pub fn cli_pipeline(dir: &std::path::Path) -> Vec<u8> {
    let corpus = "--sources {d}/sources.jsonl --articles {d}/articles.jsonl";
    let split = format!("{corpus} --train-end {TRAIN_END} --dev-end {DEV_END}");
    cli_ok(dir, "synth --out {d}");
    cli_ok(dir, &format!("ingest {corpus} --out {{d}}/stats.json"));
    cli_ok(dir, &format!("split {split} --out {{d}}/splits"));
    cli_ok(
        dir,
        &format!("build-vocab {split} --vocab-size 200 --out {{d}}/vocab.txt"),
    );
    for kind in ["paragraph", "span_shared_norm"] {
        cli_ok(
            dir,
            &format!("train {split} --vocab {{d}}/vocab.txt --model-kind {kind} {TINY_FLAGS} --out {{d}}/{kind}.qfck"),
        );
    }
    let ckpts = "--paragraph-ckpt {d}/paragraph.qfck --span-ckpt {d}/span_shared_norm.qfck";
    cli_ok(
        dir,
        &format!("predict {split} {ckpts} --on dev --out {{d}}/dev"),
    );
    cli_ok(
        dir,
        "fuse --dev-cache {d}/dev/posteriors.jsonl --out {d}/weights.json",
    );
    let w: FusionWeights =
        serde_json::from_slice(&std::fs::read(dir.join("weights.json")).unwrap()).unwrap();
    cli_ok(
        dir,
        &format!(
            "predict {split} {ckpts} --on test --alpha {} --beta {} --out {{d}}/test",
            w.alpha, w.beta
        ),
    );
    cli_ok(
        dir,
        "evaluate --run {d}/test/fused.jsonl --gold {d}/test/gold.jsonl --baseline {d}/test/bm25.jsonl --out {d}/report.json",
    );
    std::fs::read(dir.join("report.json")).unwrap()
}
