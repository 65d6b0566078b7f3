//! Inference over whole splits: per-quote model outputs, prediction records
//! for each system, dev posterior caches, and the fused recommender.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{gold_span_tokens, Corpus, DatasetSplit, QuoteQuery, SourceDocument, Tokens};
use crate::error::{Error, Result};
use crate::fusion::{
    fused_order, log_fuse, paragraph_posteriors, span_posteriors, FusionWeights, PosteriorRecord,
    Recommendation,
};
use crate::metrics::{GoldRecord, PredictionRecord};
use crate::pararank::{bm25_rank, rank, score_paragraphs, tfidf_rank};
use crate::spanpred::{best_spans, DecodeOptions, SpanPrediction};

/// Raw paragraph scores from a paragraph checkpoint.
pub fn paragraph_scores(
    ckpt: &Checkpoint,
    query: &QuoteQuery,
    doc: &SourceDocument,
) -> Result<Vec<f64>> {
    score_paragraphs(
        &ckpt.view(query),
        doc,
        ckpt.model.as_paragraph()?,
        &ckpt.vocab,
        ckpt.caps(),
    )
}

/// Best span per paragraph from a span checkpoint.
pub fn paragraph_spans(
    ckpt: &Checkpoint,
    query: &QuoteQuery,
    doc: &SourceDocument,
) -> Result<Vec<Option<SpanPrediction>>> {
    best_spans(
        &ckpt.view(query),
        doc,
        ckpt.model.as_span()?,
        &ckpt.vocab,
        ckpt.caps(),
        DecodeOptions::default(),
    )
}

/// Raw best-span scores, `-inf` where a paragraph has no valid span.
pub fn span_scores(spans: &[Option<SpanPrediction>]) -> Vec<f64> {
    spans
        .iter()
        .map(|s| s.as_ref().map_or(f64::NEG_INFINITY, |s| s.raw_score))
        .collect()
}

/// Token text of each paragraph's best span (empty when none).
pub fn span_texts(doc: &SourceDocument, spans: &[Option<SpanPrediction>]) -> Vec<Tokens> {
    spans
        .iter()
        .map(|s| match s {
            Some(s) => doc.paragraphs[s.paragraph].tokens[s.token_start..=s.token_end].to_vec(),
            None => vec![],
        })
        .collect()
}

/// Order of paragraphs by descending score, ties by index.
pub fn order_by_score(scores: &[f64]) -> Vec<usize> {
    rank(scores).order()
}

/// Everything the neural models say about one quote.
#[derive(Debug, Clone, PartialEq)]
pub struct QuoteOutputs {
    pub quote_id: String,
    pub positive_paragraphs: Vec<usize>,
    pub gold_tokens: Tokens,
    pub paragraph_scores: Option<Vec<f64>>,
    pub spans: Option<Vec<Option<SpanPrediction>>>,
    pub span_tokens: Option<Vec<Tokens>>,
}

impl QuoteOutputs {
    fn need_paragraph(&self) -> Result<&[f64]> {
        self.paragraph_scores
            .as_deref()
            .ok_or_else(|| Error::Config("paragraph model outputs are required".into()))
    }

    fn need_spans(&self) -> Result<(&[Option<SpanPrediction>], &[Tokens])> {
        match (&self.spans, &self.span_tokens) {
            (Some(s), Some(t)) => Ok((s, t)),
            _ => Err(Error::Config("span model outputs are required".into())),
        }
    }

    pub fn posteriors(&self) -> Result<PosteriorRecord> {
        let scores = self.need_paragraph()?;
        let (spans, texts) = self.need_spans()?;
        Ok(PosteriorRecord {
            quote_id: self.quote_id.clone(),
            p_paragraph: paragraph_posteriors(scores),
            p_span: span_posteriors(&span_scores(spans)),
            best_spans: spans
                .iter()
                .map(|s| s.as_ref().map(|s| [s.token_start, s.token_end]))
                .collect(),
            positive_paragraphs: self.positive_paragraphs.clone(),
            span_tokens: Some(texts.to_vec()),
            gold_tokens: Some(self.gold_tokens.clone()),
        })
    }

    fn spans_or_empty(&self, n: usize) -> Vec<Tokens> {
        self.span_tokens.clone().unwrap_or_else(|| vec![vec![]; n])
    }

    /// Paragraph-only system: paragraph score order, span model spans if any.
    pub fn paragraph_run(&self) -> Result<PredictionRecord> {
        let scores = self.need_paragraph()?;
        Ok(PredictionRecord {
            quote_id: self.quote_id.clone(),
            ranking: order_by_score(scores),
            spans: self.spans_or_empty(scores.len()),
        })
    }

    /// Span-only system: paragraphs ordered by their best span's score.
    pub fn span_run(&self) -> Result<PredictionRecord> {
        let (spans, texts) = self.need_spans()?;
        Ok(PredictionRecord {
            quote_id: self.quote_id.clone(),
            ranking: order_by_score(&span_scores(spans)),
            spans: texts.to_vec(),
        })
    }

    pub fn fused_run(&self, w: FusionWeights) -> Result<PredictionRecord> {
        let post = self.posteriors()?;
        Ok(PredictionRecord {
            quote_id: self.quote_id.clone(),
            ranking: fused_order(&post.p_span, &post.p_paragraph, w),
            spans: post.span_tokens.unwrap_or_default(),
        })
    }
}

/// Gold records for every quote of a split, in split order.
pub fn gold_records(corpus: &Corpus, split: &DatasetSplit) -> Result<Vec<GoldRecord>> {
    split
        .quotes
        .iter()
        .map(|qid| {
            let (_, doc, quote) = corpus.resolve(qid)?;
            Ok(GoldRecord {
                quote_id: qid.clone(),
                positive_paragraphs: quote.positive_paragraphs.clone(),
                gold_spans: gold_span_tokens(quote, doc),
            })
        })
        .collect()
}

/// Runs whichever models are given over every quote of a split.
pub fn split_outputs(
    corpus: &Corpus,
    split: &DatasetSplit,
    paragraph: Option<&Checkpoint>,
    span: Option<&Checkpoint>,
) -> Result<Vec<QuoteOutputs>> {
    split
        .quotes
        .par_iter()
        .map(|qid| {
            let (query, doc, quote) = corpus.resolve(qid)?;
            let paragraph_scores = paragraph
                .map(|c| paragraph_scores(c, &query, doc))
                .transpose()?;
            let spans = span.map(|c| paragraph_spans(c, &query, doc)).transpose()?;
            let span_tokens = spans.as_ref().map(|s| span_texts(doc, s));
            Ok(QuoteOutputs {
                quote_id: qid.clone(),
                positive_paragraphs: quote.positive_paragraphs.clone(),
                gold_tokens: gold_span_tokens(quote, doc).concat(),
                paragraph_scores,
                spans,
                span_tokens,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Bm25,
    Tfidf,
}

/// Lexical baseline runs (rankings only, no spans).
pub fn baseline_run(
    corpus: &Corpus,
    split: &DatasetSplit,
    which: Baseline,
) -> Result<Vec<PredictionRecord>> {
    split
        .quotes
        .iter()
        .map(|qid| {
            let (query, doc, _) = corpus.resolve(qid)?;
            let ranking = match which {
                Baseline::Bm25 => bm25_rank(&query, doc, 1.2, 0.75),
                Baseline::Tfidf => tfidf_rank(&query, doc),
            };
            Ok(PredictionRecord {
                quote_id: qid.clone(),
                ranking: ranking.order(),
                spans: vec![vec![]; doc.len()],
            })
        })
        .collect()
}

/// Paragraph checkpoint, span checkpoint and fusion weights served together.
#[derive(Debug, Clone)]
pub struct QuoteRecommender {
    pub paragraph: Checkpoint,
    pub span: Checkpoint,
    pub weights: FusionWeights,
}

impl QuoteRecommender {
    /// Checks that both checkpoints are of the right kind and share a vocabulary.
    pub fn new(paragraph: Checkpoint, span: Checkpoint, weights: FusionWeights) -> Result<Self> {
        paragraph.model.as_paragraph()?;
        span.model.as_span()?;
        let (a, b) = (paragraph.vocab_hash(), span.vocab_hash());
        if a != b {
            return Err(Error::VocabMismatch(a, b));
        }
        Ok(Self {
            paragraph,
            span,
            weights,
        })
    }

    /// All paragraphs with their posteriors, sorted by fused score.
    pub fn recommend(
        &self,
        query: &QuoteQuery,
        doc: &SourceDocument,
    ) -> Result<Vec<Recommendation>> {
        let scores = paragraph_scores(&self.paragraph, query, doc)?;
        let spans = paragraph_spans(&self.span, query, doc)?;
        let pp = paragraph_posteriors(&scores);
        let ps = span_posteriors(&span_scores(&spans));
        Ok(fused_order(&ps, &pp, self.weights)
            .into_iter()
            .map(|i| Recommendation {
                paragraph: i,
                span: spans[i].clone(),
                p_paragraph: pp[i],
                p_span: ps[i],
                fused: log_fuse(ps[i], pp[i], self.weights).exp(),
            })
            .collect())
    }
}
