//! Paragraph ranking: the neural scoring head, its listwise loss, and the
//! TF-IDF cosine and BM25 lexical baselines.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{QuoteQuery, SourceDocument};
use crate::encoder::{
    pack_pieces, EncoderOutput, EncoderParams, PackCaps, ParagraphPieces, QueryPieces,
    SubwordVocab, TensorSet,
};
use crate::error::{Error, Result};

/// Scoring vector `V`; a paragraph's score is `V · C`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankHead {
    pub v: Array2<f64>,
}

impl RankHead {
    pub fn zeros(h: usize) -> Self {
        Self {
            v: Array2::zeros((1, h)),
        }
    }

    pub fn score(&self, out: &EncoderOutput) -> f64 {
        self.v.row(0).dot(&out.pooled)
    }
}

impl TensorSet for RankHead {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.v]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.v]
    }
    fn names(&self) -> Vec<String> {
        vec!["rank_head.v".into()]
    }
}

/// Encoder plus ranking head.
#[derive(Debug, Clone, PartialEq)]
pub struct ParagraphModel {
    pub encoder: EncoderParams,
    pub head: RankHead,
}

impl TensorSet for ParagraphModel {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut v = self.encoder.tensors();
        v.extend(self.head.tensors());
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.head.tensors_mut());
        v
    }
    fn names(&self) -> Vec<String> {
        let mut v = self.encoder.names();
        v.extend(self.head.names());
        v
    }
}

/// Raw `V · C` score of every paragraph of `doc`, each pair encoded on its own.
pub fn score_paragraphs(
    query: &QuoteQuery,
    doc: &SourceDocument,
    model: &ParagraphModel,
    vocab: &SubwordVocab,
    caps: PackCaps,
) -> Result<Vec<f64>> {
    let qp = QueryPieces::new(query, vocab);
    doc.paragraphs
        .par_iter()
        .map(|p| {
            let packed = pack_pieces(&qp, &ParagraphPieces::new(&p.tokens, vocab), vocab, caps);
            Ok(model.head.score(&model.encoder.encode(&packed)?))
        })
        .collect()
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `-log softmax(scores)[positive]`.
pub fn listwise_loss(scores: &[f64], positive: usize) -> Result<f64> {
    Ok(listwise_loss_grad(scores, positive)?.0)
}

/// Loss and its gradient `softmax(scores) - onehot(positive)`.
pub fn listwise_loss_grad(scores: &[f64], positive: usize) -> Result<(f64, Vec<f64>)> {
    if scores.len() < 2 {
        return Err(Error::Config(format!(
            "listwise loss needs at least 2 scores, got {}",
            scores.len()
        )));
    }
    if positive >= scores.len() {
        return Err(Error::OutOfRange {
            what: "positive position",
            index: positive,
            len: scores.len(),
        });
    }
    let lse = log_sum_exp(scores);
    let mut grad: Vec<f64> = scores.iter().map(|s| (s - lse).exp()).collect();
    grad[positive] -= 1.0;
    Ok((lse - scores[positive], grad))
}

/// Paragraphs ordered by descending score, ties by ascending index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub entries: Vec<(usize, f64)>,
}

impl Ranking {
    pub fn order(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.0).collect()
    }

    /// 1-based rank of a paragraph.
    pub fn rank_of(&self, paragraph: usize) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.0 == paragraph)
            .map(|r| r + 1)
    }

    pub fn top(&self) -> Option<usize> {
        self.entries.first().map(|e| e.0)
    }
}

pub fn rank(scores: &[f64]) -> Ranking {
    let mut entries: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ranking { entries }
}

/// Anything that can score every paragraph of a source for a query.
pub trait ParagraphScorer: Sync {
    fn name(&self) -> &str;
    fn score(&self, query: &QuoteQuery, doc: &SourceDocument) -> Result<Vec<f64>>;

    fn rank(&self, query: &QuoteQuery, doc: &SourceDocument) -> Result<Ranking> {
        Ok(rank(&self.score(query, doc)?))
    }
}

/// The neural ranker with its vocabulary and caps.
pub struct NeuralRanker<'a> {
    pub model: &'a ParagraphModel,
    pub vocab: &'a SubwordVocab,
    pub caps: PackCaps,
}

impl ParagraphScorer for NeuralRanker<'_> {
    fn name(&self) -> &str {
        "neural"
    }
    fn score(&self, query: &QuoteQuery, doc: &SourceDocument) -> Result<Vec<f64>> {
        score_paragraphs(query, doc, self.model, self.vocab, self.caps)
    }
}

// ---------------------------------------------------------------------------
// Lexical baselines

/// Trailing context words appended to the title for baseline queries.
pub const BASELINE_CONTEXT_TOKENS: usize = 40;

/// Title plus the last 40 context tokens, lowercased.
pub fn baseline_query_terms(query: &QuoteQuery) -> Vec<String> {
    let ctx = &query.left_context;
    query
        .title
        .iter()
        .chain(&ctx[ctx.len().saturating_sub(BASELINE_CONTEXT_TOKENS)..])
        .map(|t| t.to_lowercase())
        .collect()
}

fn lower(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

fn term_counts(tokens: &[String]) -> BTreeMap<&str, f64> {
    let mut m = BTreeMap::new();
    for t in tokens {
        *m.entry(t.as_str()).or_insert(0.0) += 1.0;
    }
    m
}

/// TF-IDF statistics over the paragraphs of one source document.
///
/// `tf` is the raw count; `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, which
/// stays finite for terms absent from every paragraph.
#[derive(Debug, Clone)]
pub struct TfIdfIndex {
    n_docs: usize,
    df: HashMap<String, usize>,
    paragraphs: Vec<Vec<String>>,
}

impl TfIdfIndex {
    pub fn new(doc: &SourceDocument) -> Self {
        let paragraphs: Vec<Vec<String>> =
            doc.paragraphs.iter().map(|p| lower(&p.tokens)).collect();
        let mut df = HashMap::new();
        for p in &paragraphs {
            for t in p.iter().collect::<BTreeSet<_>>() {
                *df.entry(t.clone()).or_insert(0) += 1;
            }
        }
        Self {
            n_docs: paragraphs.len(),
            df,
            paragraphs,
        }
    }

    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df.get(term).copied().unwrap_or(0) as f64;
        ((1.0 + self.n_docs as f64) / (1.0 + df)).ln() + 1.0
    }

    pub fn vector(&self, tokens: &[String]) -> BTreeMap<String, f64> {
        term_counts(tokens)
            .into_iter()
            .map(|(t, c)| (t.to_string(), c * self.idf(t)))
            .collect()
    }

    /// Cosine similarity of the (lowercased) query terms with each paragraph.
    pub fn cosine_scores(&self, query_terms: &[String]) -> Vec<f64> {
        let q = self.vector(&lower(query_terms));
        self.paragraphs
            .iter()
            .map(|p| cosine(&q, &self.vector(p)))
            .collect()
    }
}

fn cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(t, x)| b.get(t).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

pub struct TfIdfScorer;

impl ParagraphScorer for TfIdfScorer {
    fn name(&self) -> &str {
        "tfidf"
    }
    fn score(&self, query: &QuoteQuery, doc: &SourceDocument) -> Result<Vec<f64>> {
        Ok(TfIdfIndex::new(doc).cosine_scores(&baseline_query_terms(query)))
    }
}

pub fn tfidf_rank(query: &QuoteQuery, doc: &SourceDocument) -> Ranking {
    rank(
        &TfIdfScorer
            .score(query, doc)
            .expect("tfidf scoring is infallible"),
    )
}

/// Okapi BM25 with paragraph = document and the source's paragraphs as the
/// collection. Each distinct query term contributes once; IDF is floored at 0.
#[derive(Debug, Clone, Copy)]
pub struct Bm25Scorer {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Scorer {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Scorer {
    pub fn scores(&self, query_terms: &[String], doc: &SourceDocument) -> Vec<f64> {
        let paragraphs: Vec<Vec<String>> =
            doc.paragraphs.iter().map(|p| lower(&p.tokens)).collect();
        let n = paragraphs.len() as f64;
        let avgdl = paragraphs.iter().map(|p| p.len()).sum::<usize>() as f64 / n;
        let counts: Vec<BTreeMap<&str, f64>> = paragraphs.iter().map(|p| term_counts(p)).collect();
        let terms: BTreeSet<String> = lower(query_terms).into_iter().collect();
        let idf: Vec<(&str, f64)> = terms
            .iter()
            .map(|t| {
                let df = counts.iter().filter(|c| c.contains_key(t.as_str())).count() as f64;
                (t.as_str(), ((n - df + 0.5) / (df + 0.5)).ln().max(0.0))
            })
            .collect();
        paragraphs
            .iter()
            .zip(&counts)
            .map(|(p, c)| {
                let norm = self.k1 * (1.0 - self.b + self.b * p.len() as f64 / avgdl);
                idf.iter()
                    .map(|(t, w)| {
                        let tf = c.get(t).copied().unwrap_or(0.0);
                        w * tf * (self.k1 + 1.0) / (tf + norm)
                    })
                    .sum()
            })
            .collect()
    }
}

impl ParagraphScorer for Bm25Scorer {
    fn name(&self) -> &str {
        "bm25"
    }
    fn score(&self, query: &QuoteQuery, doc: &SourceDocument) -> Result<Vec<f64>> {
        Ok(self.scores(&baseline_query_terms(query), doc))
    }
}

pub fn bm25_rank(query: &QuoteQuery, doc: &SourceDocument, k1: f64, b: f64) -> Ranking {
    rank(&Bm25Scorer { k1, b }.scores(&baseline_query_terms(query), doc))
}

/// One line of a score dump file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDump {
    pub quote_id: String,
    pub scorer: String,
    pub scores: Vec<f64>,
}

/// Gradient of a loss with respect to the pooled vector: `dL/dscore * V`.
pub(crate) fn pooled_grad(head: &RankHead, d_score: f64) -> Array1<f64> {
    head.v.row(0).mapv(|v| v * d_score)
}
