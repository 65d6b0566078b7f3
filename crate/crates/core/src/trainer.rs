//! Training loops for the paragraph ranker and the two span models,
//! hyperparameter search, and context ablations.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainedModel};
use crate::corpus::{expand_multiparagraph, Corpus, DatasetSplit, QuoteQuery, SourceDocument};
use crate::encoder::{
    pack_pieces, EncoderConfig, EncoderParams, PackCaps, PackedInput, ParagraphPieces, QueryPieces,
    SubwordVocab, TensorSet,
};
use crate::error::{Error, Result};
use crate::fusion::FusionWeights;
use crate::metrics::{average_precision, RunEvaluation};
use crate::pararank::{listwise_loss_grad, pooled_grad};
use crate::pipeline::{gold_records, split_outputs};
use crate::sampling::{assemble_example_excluding, derive_seed, SamplingConfig, SamplingScheme};
use crate::spanpred::{
    backprop_logits, positive_only_loss_grad, shared_norm_loss_grad, span_logits, LogitGrads,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Paragraph,
    SpanPositiveOnly,
    SpanSharedNorm,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Paragraph => "paragraph",
            Self::SpanPositiveOnly => "span_positive_only",
            Self::SpanSharedNorm => "span_shared_norm",
        }
    }

    pub fn is_span(self) -> bool {
        self != Self::Paragraph
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "paragraph" => Ok(Self::Paragraph),
            "span_positive_only" | "positive_only" => Ok(Self::SpanPositiveOnly),
            "span_shared_norm" | "shared_norm" => Ok(Self::SpanSharedNorm),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Dev metric used for early stopping and model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevMetric {
    Map,
    F1Top,
}

impl std::str::FromStr for DevMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Self::Map),
            "f1_top" | "f1" => Ok(Self::F1Top),
            other => Err(Error::Config(format!("unknown dev metric {other:?}"))),
        }
    }
}

/// Flat training configuration; also the JSON config file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model_kind: ModelKind,
    /// Listwise rows per optimizer step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Ignored by `span_positive_only`.
    pub n_negatives: usize,
    pub scheme: SamplingScheme,
    pub title_cap: usize,
    pub context_cap: usize,
    pub paragraph_cap: usize,
    /// When false the title is dropped from every query.
    pub use_title: bool,
    pub seed: u64,
    /// Defaults to mAP for the paragraph kind and top-setting F1 otherwise.
    pub early_stopping_metric: Option<DevMetric>,
    pub hidden_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_size: usize,
    pub dropout: f64,
    pub clip_norm: f64,
    /// Fraction of all optimizer steps spent warming the learning rate up
    /// linearly from 0; afterwards it decays linearly to 0. A value of 0
    /// with `lr_decay` false keeps the rate constant.
    pub warmup_fraction: f64,
    pub lr_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let caps = PackCaps::default();
        Self {
            model_kind: ModelKind::Paragraph,
            batch_size: 32,
            learning_rate: 1e-3,
            max_epochs: 4,
            n_negatives: 12,
            scheme: SamplingScheme::Uniform,
            title_cap: caps.title,
            context_cap: caps.context,
            paragraph_cap: caps.paragraph,
            use_title: true,
            seed: 0,
            early_stopping_metric: None,
            hidden_size: 64,
            layers: 2,
            heads: 4,
            ff_size: 256,
            dropout: 0.1,
            clip_norm: 1.0,
            warmup_fraction: 0.1,
            lr_decay: true,
        }
    }
}

impl TrainConfig {
    pub fn for_kind(kind: ModelKind) -> Self {
        Self {
            model_kind: kind,
            ..Self::default()
        }
    }

    pub fn caps(&self) -> PackCaps {
        PackCaps {
            title: if self.use_title { self.title_cap } else { 0 },
            context: self.context_cap,
            paragraph: self.paragraph_cap,
        }
    }

    pub fn view(&self, query: &QuoteQuery) -> QuoteQuery {
        if self.use_title {
            query.clone()
        } else {
            QuoteQuery::new(vec![], query.left_context.clone())
        }
    }

    pub fn dev_metric(&self) -> DevMetric {
        self.early_stopping_metric.unwrap_or(match self.model_kind {
            ModelKind::Paragraph => DevMetric::Map,
            _ => DevMetric::F1Top,
        })
    }

    /// Negatives actually drawn per row.
    pub fn effective_negatives(&self) -> usize {
        match self.model_kind {
            ModelKind::SpanPositiveOnly => 0,
            _ => self.n_negatives,
        }
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            hidden_size: self.hidden_size,
            layers: self.layers,
            heads: self.heads,
            ff_size: self.ff_size,
            max_len: EncoderConfig::desk_scale(vocab_size).max_len,
            vocab_size,
            dropout: self.dropout,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if self.model_kind == ModelKind::Paragraph && self.n_negatives == 0 {
            return fail("the paragraph ranker needs at least one negative");
        }
        if self.paragraph_cap == 0 {
            return fail("paragraph_cap must be at least 1");
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return fail("clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return fail("warmup_fraction must lie in [0, 1)");
        }
        self.encoder_config(32).validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the dev split is empty.
    pub dev_metric: Option<f64>,
}

/// Splits and vocabulary a training run reads from.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub corpus: &'a Corpus,
    pub train: &'a DatasetSplit,
    pub dev: &'a DatasetSplit,
    pub vocab: &'a SubwordVocab,
}

/// One positive paragraph of one training quote.
#[derive(Debug, Clone)]
pub struct TrainingRow<'a> {
    /// `quote_id/paragraph`, used to derive per-row seeds.
    pub key: String,
    pub query: QuoteQuery,
    pub doc: &'a SourceDocument,
    pub positive: usize,
    /// Other positive paragraphs of the same quote; never used as negatives.
    pub other_positives: Vec<usize>,
    /// Paragraph-local token span of the quote.
    pub token_span: (usize, usize),
    /// Gold start and end positions in the packed positive input.
    pub gold_pieces: Option<(usize, usize)>,
    query_pieces: Arc<QueryPieces>,
    paragraph_pieces: Arc<Vec<ParagraphPieces>>,
}

impl TrainingRow<'_> {
    pub fn pack(&self, paragraph: usize, vocab: &SubwordVocab, caps: PackCaps) -> PackedInput {
        pack_pieces(
            &self.query_pieces,
            &self.paragraph_pieces[paragraph],
            vocab,
            caps,
        )
    }
}

/// Counts of training rows that could not be used.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowStats {
    pub rows: usize,
    pub single_paragraph_skipped: usize,
    pub truncated_span_skipped: usize,
}

/// Expands every train quote into per-paragraph rows. Paragraph-kind rows
/// from single-paragraph sources and span rows whose gold span was cut by
/// the paragraph cap are skipped.
pub fn training_rows<'a>(
    data: &TrainData<'a>,
    cfg: &TrainConfig,
) -> Result<(Vec<TrainingRow<'a>>, RowStats)> {
    let caps = cfg.caps();
    let mut piece_cache: HashMap<&str, Arc<Vec<ParagraphPieces>>> = HashMap::new();
    let mut rows = Vec::new();
    let mut stats = RowStats::default();
    for qid in &data.train.quotes {
        let (query, doc, quote) = data.corpus.resolve(qid)?;
        let query = cfg.view(&query);
        let query_pieces = Arc::new(QueryPieces::new(&query, data.vocab));
        let paragraph_pieces = piece_cache
            .entry(doc.id.as_str())
            .or_insert_with(|| {
                Arc::new(
                    doc.paragraphs
                        .iter()
                        .map(|p| ParagraphPieces::new(&p.tokens, data.vocab))
                        .collect(),
                )
            })
            .clone();
        for ps in expand_multiparagraph(quote, doc) {
            if cfg.model_kind == ModelKind::Paragraph && doc.len() < 2 {
                tracing::warn!(quote = %qid, "single-paragraph source, row skipped");
                stats.single_paragraph_skipped += 1;
                continue;
            }
            let mut row = TrainingRow {
                key: format!("{qid}/{}", ps.paragraph),
                query: query.clone(),
                doc,
                positive: ps.paragraph,
                other_positives: quote
                    .positive_paragraphs
                    .iter()
                    .copied()
                    .filter(|&p| p != ps.paragraph)
                    .collect(),
                token_span: ps.span,
                gold_pieces: None,
                query_pieces: query_pieces.clone(),
                paragraph_pieces: paragraph_pieces.clone(),
            };
            if cfg.model_kind.is_span() {
                match row
                    .pack(ps.paragraph, data.vocab, caps)
                    .token_span_to_pieces(ps.span.0, ps.span.1)
                {
                    Ok(g) => row.gold_pieces = Some(g),
                    Err(_) => {
                        stats.truncated_span_skipped += 1;
                        continue;
                    }
                }
            }
            rows.push(row);
        }
    }
    stats.rows = rows.len();
    Ok((rows, stats))
}

/// Paragraphs of one listwise example and the position of the positive.
pub fn row_paragraphs(
    row: &TrainingRow<'_>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(Vec<usize>, usize)> {
    let n = cfg.effective_negatives();
    if n == 0 {
        return Ok((vec![row.positive], 0));
    }
    let sc = SamplingConfig::new(
        n,
        cfg.scheme,
        derive_seed(cfg.seed, &format!("neg/{epoch}/{}", row.key)),
    )?;
    let ex = assemble_example_excluding(
        &row.query,
        row.doc,
        row.positive,
        row.token_span,
        &sc,
        &row.other_positives,
    )?;
    Ok((ex.paragraphs, ex.positive_position))
}

/// Initial weights: seeded encoder and N(0, 0.02) head vectors.
pub fn init_model(cfg: &TrainConfig, vocab_size: usize) -> Result<TrainedModel> {
    let encoder = EncoderParams::init(cfg.encoder_config(vocab_size))?;
    let h = encoder.hidden_size();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "head"));
    let dist = Normal::new(0.0, 0.02).expect("valid std");
    let mut vec = || Array2::from_shape_simple_fn((1, h), || dist.sample(&mut rng));
    Ok(match cfg.model_kind {
        ModelKind::Paragraph => TrainedModel::Paragraph(crate::pararank::ParagraphModel {
            encoder,
            head: crate::pararank::RankHead { v: vec() },
        }),
        _ => {
            let s = vec();
            let e = vec();
            TrainedModel::Span(crate::spanpred::SpanModel {
                encoder,
                head: crate::spanpred::SpanHead { s, e },
            })
        }
    })
}

fn zeros_like(model: &TrainedModel) -> TrainedModel {
    let mut z = model.clone();
    z.zero();
    z
}

/// Loss of one listwise example and its gradient with respect to every
/// weight. Dropout is applied when `dropout_seed` is given.
pub fn example_loss_grad(
    model: &TrainedModel,
    inputs: &[PackedInput],
    positive: usize,
    gold_pieces: Option<(usize, usize)>,
    kind: ModelKind,
    dropout_seed: Option<u64>,
) -> Result<(f64, TrainedModel)> {
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let enc = model.encoder();
    let mut outs = Vec::with_capacity(inputs.len());
    for x in inputs {
        outs.push(enc.forward(x, rng.as_mut())?);
    }
    let mut grads = zeros_like(model);
    let loss = match (model, &mut grads) {
        (TrainedModel::Paragraph(m), TrainedModel::Paragraph(g)) => {
            let scores: Vec<f64> = outs.iter().map(|(o, _)| m.head.score(o)).collect();
            let (loss, d) = listwise_loss_grad(&scores, positive)?;
            for ((o, cache), &ds) in outs.iter().zip(&d) {
                let mut gv = g.head.v.row_mut(0);
                gv.scaled_add(ds, &o.pooled);
                let mut dt = Array2::zeros(o.token_vectors.raw_dim());
                dt.row_mut(0).assign(&pooled_grad(&m.head, ds));
                enc.backward(cache, &dt, &mut g.encoder);
            }
            loss
        }
        (TrainedModel::Span(m), TrainedModel::Span(g)) => {
            let gold = gold_pieces
                .ok_or_else(|| Error::Config("span training needs a gold span".into()))?;
            let logits: Vec<_> = outs.iter().map(|(o, _)| span_logits(o, &m.head)).collect();
            let range = inputs[positive].paragraph_piece_range;
            let (loss, lg): (f64, Vec<LogitGrads>) = match kind {
                ModelKind::SpanSharedNorm => shared_norm_loss_grad(&logits, positive, gold, range)?,
                _ => {
                    let (l, g) = positive_only_loss_grad(&logits[positive], gold, range)?;
                    let mut all: Vec<LogitGrads> = logits
                        .iter()
                        .map(|x| LogitGrads {
                            start: vec![0.0; x.len()],
                            end: vec![0.0; x.len()],
                        })
                        .collect();
                    all[positive] = g;
                    (l, all)
                }
            };
            for ((o, cache), gl) in outs.iter().zip(&lg) {
                let dt = backprop_logits(o, &m.head, gl, &mut g.head);
                enc.backward(cache, &dt, &mut g.encoder);
            }
            loss
        }
        _ => unreachable!("gradient buffer mirrors the model"),
    };
    Ok((loss, grads))
}

/// Loss and gradient of one training row at a given epoch.
pub fn row_loss_grad(
    model: &TrainedModel,
    row: &TrainingRow<'_>,
    cfg: &TrainConfig,
    vocab: &SubwordVocab,
    epoch: usize,
    train_mode: bool,
) -> Result<(f64, TrainedModel)> {
    let (paragraphs, positive) = row_paragraphs(row, cfg, epoch)?;
    let caps = cfg.caps();
    let inputs: Vec<PackedInput> = paragraphs
        .iter()
        .map(|&p| row.pack(p, vocab, caps))
        .collect();
    let seed = (train_mode && cfg.dropout > 0.0)
        .then(|| derive_seed(cfg.seed, &format!("drop/{epoch}/{}", row.key)));
    example_loss_grad(
        model,
        &inputs,
        positive,
        row.gold_pieces,
        cfg.model_kind,
        seed,
    )
}

/// Mean loss and mean gradient over a batch. Rows run in parallel; their
/// gradients are summed in row order so results do not depend on scheduling.
pub fn batch_loss_grad(
    model: &TrainedModel,
    rows: &[&TrainingRow<'_>],
    cfg: &TrainConfig,
    vocab: &SubwordVocab,
    epoch: usize,
    train_mode: bool,
) -> Result<(f64, TrainedModel)> {
    let parts: Vec<(f64, TrainedModel)> = rows
        .par_iter()
        .map(|r| row_loss_grad(model, r, cfg, vocab, epoch, train_mode))
        .collect::<Result<_>>()?;
    let mut iter = parts.into_iter();
    let (mut loss, mut grads) = iter
        .next()
        .ok_or_else(|| Error::Empty("training batch".into()))?;
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    let k = 1.0 / rows.len() as f64;
    grads.scale(k);
    Ok((loss * k, grads))
}

/// Rescales `grads` to global norm `max_norm` when it is larger.
pub fn clip_grad_norm(grads: &mut TrainedModel, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Learning-rate multiplier for optimizer step `step` (0-based) of `total`.
pub fn lr_multiplier(step: usize, total: usize, warmup_fraction: f64, decay: bool) -> f64 {
    let warmup = (warmup_fraction * total as f64).round() as usize;
    let t = step + 1;
    if t <= warmup {
        return t as f64 / warmup as f64;
    }
    if decay && total > warmup {
        return (total - step) as f64 / (total - warmup) as f64;
    }
    1.0
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: TrainedModel,
    v: TrainedModel,
}

impl Adam {
    pub fn new(model: &TrainedModel, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros_like(model),
            v: zeros_like(model),
        }
    }

    pub fn step(&mut self, model: &mut TrainedModel, grads: &TrainedModel) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.lr;
        for (((p, g), m), v) in model
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}

/// The kind's dev metric for a model on a split: mAP of the paragraph
/// ranking, or top-setting BOW-F1 of the span ranking.
pub fn dev_metric(
    model: &TrainedModel,
    cfg: &TrainConfig,
    vocab: &SubwordVocab,
    corpus: &Corpus,
    split: &DatasetSplit,
) -> Result<Option<f64>> {
    if split.is_empty() {
        return Ok(None);
    }
    let ckpt = Checkpoint {
        config: cfg.clone(),
        vocab: vocab.clone(),
        model: model.clone(),
        history: vec![],
        best_epoch: 0,
    };
    let metric = cfg.dev_metric();
    let (para, span) = if cfg.model_kind.is_span() {
        (None, Some(&ckpt))
    } else {
        (Some(&ckpt), None)
    };
    let outputs = split_outputs(corpus, split, para, span)?;
    let value = match (metric, cfg.model_kind.is_span()) {
        (DevMetric::Map, false) => {
            let mut total = 0.0;
            for o in &outputs {
                let run = o.paragraph_run()?;
                total += average_precision(&run.ranking, &o.positive_paragraphs)?;
            }
            total / outputs.len() as f64
        }
        (metric, is_span) => {
            let runs = outputs
                .iter()
                .map(|o| {
                    if is_span {
                        o.span_run()
                    } else {
                        o.paragraph_run()
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let eval = RunEvaluation::compute(&runs, &gold_records(corpus, split)?)?;
            match metric {
                DevMetric::Map => eval.ranking.map,
                DevMetric::F1Top => eval.top.f1,
            }
        }
    };
    Ok(Some(value))
}

/// Trains one model. After each epoch the dev metric is computed and the
/// weights of the best epoch (strictly greater metric) are kept.
pub fn train(data: &TrainData<'_>, cfg: &TrainConfig) -> Result<Checkpoint> {
    cfg.validate()?;
    let (rows, stats) = training_rows(data, cfg)?;
    if data.train.is_empty() || rows.is_empty() {
        return Err(Error::Empty("train split has no usable rows".into()));
    }
    tracing::info!(
        kind = cfg.model_kind.as_str(),
        rows = stats.rows,
        skipped_single = stats.single_paragraph_skipped,
        skipped_truncated = stats.truncated_span_skipped,
        "training"
    );
    let mut model = init_model(cfg, data.vocab.len())?;
    let mut adam = Adam::new(&model, cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, TrainedModel)> = None;
    let mut last_epoch = 0;
    let steps_per_epoch = rows.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.max_epochs;
    let mut global_step = 0;

    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<&TrainingRow<'_>> = rows.iter().collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            cfg.seed,
            &format!("shuffle/{epoch}"),
        )));
        let mut total = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, mut grads) = batch_loss_grad(&model, batch, cfg, data.vocab, epoch, true)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    value: loss,
                });
            }
            clip_grad_norm(&mut grads, cfg.clip_norm);
            adam.lr = cfg.learning_rate
                * lr_multiplier(global_step, total_steps, cfg.warmup_fraction, cfg.lr_decay);
            adam.step(&mut model, &grads);
            global_step += 1;
            total += loss * batch.len() as f64;
        }
        let train_loss = total / rows.len() as f64;
        let dev = dev_metric(&model, cfg, data.vocab, data.corpus, data.dev)?;
        tracing::info!(epoch, train_loss, dev_metric = ?dev, "epoch done");
        history.push(EpochLog {
            epoch,
            train_loss,
            dev_metric: dev,
        });
        if let Some(d) = dev {
            if best.as_ref().is_none_or(|(b, _, _)| d > *b) {
                best = Some((d, epoch, model.clone()));
            }
        }
        last_epoch = epoch;
    }

    let (best_epoch, model) = match best {
        Some((_, e, m)) => (e, m),
        None => (last_epoch, model),
    };
    Ok(Checkpoint {
        config: cfg.clone(),
        vocab: data.vocab.clone(),
        model,
        history,
        best_epoch,
    })
}

/// Best dev metric recorded in a checkpoint's history.
pub fn best_dev_metric(ckpt: &Checkpoint) -> Option<f64> {
    ckpt.history
        .iter()
        .filter_map(|h| h.dev_metric)
        .fold(None, |acc: Option<f64>, x| {
            Some(acc.map_or(x, |a| a.max(x)))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub n_negatives: Vec<usize>,
}

impl HyperGrid {
    /// Batch {16, 32} × lr {5e-5, 3e-5, 2e-5} × n {3, 6, 9, 12}.
    pub fn fine_tuning() -> Self {
        Self {
            batch_sizes: vec![16, 32],
            learning_rates: vec![5e-5, 3e-5, 2e-5],
            n_negatives: vec![3, 6, 9, 12],
        }
    }

    /// Every (batch, lr, n) combination in grid order.
    pub fn cells(&self) -> Vec<(usize, f64, usize)> {
        let mut out = Vec::new();
        for &b in &self.batch_sizes {
            for &lr in &self.learning_rates {
                for &n in &self.n_negatives {
                    out.push((b, lr, n));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchCell {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub n_negatives: usize,
    pub dev_metric: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best_config: TrainConfig,
    pub best: Checkpoint,
    pub table: Vec<SearchCell>,
}

/// Trains every grid cell and keeps the one with the best dev metric; ties
/// go to fewer negatives, then the smaller batch. Failing cells are logged
/// and skipped.
pub fn hyperparameter_search(
    data: &TrainData<'_>,
    base: &TrainConfig,
    grid: &HyperGrid,
) -> Result<SearchOutcome> {
    let cells = grid.cells();
    if cells.is_empty() {
        return Err(Error::Empty("hyperparameter grid".into()));
    }
    let mut table = Vec::with_capacity(cells.len());
    let mut best: Option<(f64, TrainConfig, Checkpoint)> = None;
    for (batch_size, learning_rate, n_negatives) in cells {
        let cfg = TrainConfig {
            batch_size,
            learning_rate,
            n_negatives,
            ..base.clone()
        };
        let mut cell = SearchCell {
            batch_size,
            learning_rate,
            n_negatives,
            dev_metric: None,
            error: None,
        };
        match train(data, &cfg) {
            Ok(ckpt) => {
                let m = best_dev_metric(&ckpt).unwrap_or(f64::NEG_INFINITY);
                cell.dev_metric = Some(m);
                let better = match &best {
                    None => true,
                    Some((bm, bc, _)) => {
                        m > *bm
                            || (m == *bm
                                && (cfg.n_negatives, cfg.batch_size)
                                    < (bc.n_negatives, bc.batch_size))
                    }
                };
                if better {
                    best = Some((m, cfg, ckpt));
                }
            }
            Err(e) => {
                tracing::warn!(batch_size, learning_rate, n_negatives, error = %e, "grid cell failed");
                cell.error = Some(e.to_string());
            }
        }
        tracing::info!(?cell, "grid cell");
        table.push(cell);
    }
    let (_, best_config, best) =
        best.ok_or_else(|| Error::Empty("every grid cell failed".into()))?;
    Ok(SearchOutcome {
        best_config,
        best,
        table,
    })
}

/// One ablated query configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub use_title: bool,
    pub context_cap: usize,
}

impl AblationVariant {
    /// No title; then title with 50, 25 and 10 context pieces.
    pub fn standard() -> Vec<Self> {
        let mut v = vec![Self {
            name: "No Title".into(),
            use_title: false,
            context_cap: 100,
        }];
        for c in [50, 25, 10] {
            v.push(Self {
                name: format!("Context: {c}"),
                use_title: true,
                context_cap: c,
            });
        }
        v
    }

    pub fn apply(&self, cfg: &TrainConfig) -> TrainConfig {
        TrainConfig {
            use_title: self.use_title,
            context_cap: self.context_cap,
            ..cfg.clone()
        }
    }
}

/// Acc@1, Acc@5, F1 (positive) and F1 (top) of a fused system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationScores {
    pub acc1: f64,
    pub acc5: f64,
    pub f1_positive: f64,
    pub f1_top: f64,
}

impl AblationScores {
    fn from_eval(e: &RunEvaluation) -> Self {
        Self {
            acc1: e.ranking.acc[&1],
            acc5: e.ranking.acc[&5],
            f1_positive: e.positive.f1,
            f1_top: e.top.f1,
        }
    }

    fn minus(&self, other: &Self) -> Self {
        Self {
            acc1: self.acc1 - other.acc1,
            acc5: self.acc5 - other.acc5,
            f1_positive: self.f1_positive - other.f1_positive,
            f1_top: self.f1_top - other.f1_top,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub scores: AblationScores,
    /// Variant minus full model.
    pub delta: AblationScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub full: AblationScores,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Text table: full model scores, then one delta row per variant, in
    /// percentage points.
    pub fn render(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<20} | {:>7} {:>7} | {:>9} {:>9}",
            "", "Paragraph", "Ranking", "Span", "Prediction"
        );
        let _ = writeln!(
            s,
            "{:<20} | {:>7} {:>7} | {:>9} {:>9}",
            "", "Acc@1", "Acc@5", "F1 (Pos)", "F1 (Top)"
        );
        let f = |x: f64| format!("{:.1}", 100.0 * x);
        let d = |x: f64| format!("{:+.1}", 100.0 * x);
        let full = &self.full;
        let _ = writeln!(
            s,
            "{:<20} | {:>7} {:>7} | {:>9} {:>9}",
            "1. Full Model",
            f(full.acc1),
            f(full.acc5),
            f(full.f1_positive),
            f(full.f1_top)
        );
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(
                s,
                "{:<20} | {:>7} {:>7} | {:>9} {:>9}",
                format!("{}. {}", i + 2, r.name),
                d(r.delta.acc1),
                d(r.delta.acc5),
                d(r.delta.f1_positive),
                d(r.delta.f1_top)
            );
        }
        s
    }
}

/// Fused-system scores of a paragraph and span checkpoint on a split.
pub fn fused_scores(
    corpus: &Corpus,
    split: &DatasetSplit,
    paragraph: &Checkpoint,
    span: &Checkpoint,
    weights: FusionWeights,
) -> Result<AblationScores> {
    let outputs = split_outputs(corpus, split, Some(paragraph), Some(span))?;
    let runs = outputs
        .iter()
        .map(|o| o.fused_run(weights))
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationScores::from_eval(&RunEvaluation::compute(
        &runs,
        &gold_records(corpus, split)?,
    )?))
}

/// Retrains the paragraph and span models for every variant, recombines them
/// with the base fusion weights, and reports deltas against the full model
/// on `eval_split`.
pub fn run_ablation(
    data: &TrainData<'_>,
    eval_split: &DatasetSplit,
    base_paragraph: &Checkpoint,
    base_span: &Checkpoint,
    weights: FusionWeights,
    variants: &[AblationVariant],
) -> Result<AblationReport> {
    let full = fused_scores(data.corpus, eval_split, base_paragraph, base_span, weights)?;
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        tracing::info!(variant = %v.name, "ablation");
        let p = train(data, &v.apply(&base_paragraph.config))?;
        let s = train(data, &v.apply(&base_span.config))?;
        let scores = fused_scores(data.corpus, eval_split, &p, &s, weights)?;
        rows.push(AblationRow {
            name: v.name.clone(),
            delta: scores.minus(&full),
            scores,
        });
    }
    Ok(AblationReport { full, rows })
}
