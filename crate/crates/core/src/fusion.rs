//! Late fusion of paragraph and span posteriors, and the (α, β) grid search.
//!
//! A paragraph and its best span are scored as
//! `p_span^α · p_paragraph^β`, where both posteriors are softmaxes over the
//! source's paragraphs. The product is evaluated in log space.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Tokens;
use crate::error::{Error, Result};
use crate::metrics::{average_precision, bow_f1};
use crate::pararank::log_sum_exp;
use crate::spanpred::SpanPrediction;

/// Lower bound on `ln p` so zero posteriors stay finite.
pub const LOG_FLOOR: f64 = -745.0;

/// Grid values `0, 0.5, ..., 10`.
pub fn grid_values() -> Vec<f64> {
    (0..=20).map(|i| f64::from(i) * 0.5).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    /// Exponent on the span posterior.
    pub alpha: f64,
    /// Exponent on the paragraph posterior.
    pub beta: f64,
}

impl FusionWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Config(format!(
                "fusion weights must be finite and non-negative, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub const PARAGRAPH_ONLY: FusionWeights = FusionWeights {
        alpha: 0.0,
        beta: 1.0,
    };
    pub const SPAN_ONLY: FusionWeights = FusionWeights {
        alpha: 1.0,
        beta: 0.0,
    };
}

/// Softmax over raw scores. `-inf` entries get probability 0; if every entry
/// is `-inf` all probabilities are 0.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(scores);
    if lse == f64::NEG_INFINITY {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| (s - lse).exp()).collect()
}

/// `p(p_i | q)`: softmax over the raw scores of all paragraphs.
pub fn paragraph_posteriors(scores: &[f64]) -> Vec<f64> {
    softmax(scores)
}

/// `p(s_i | p_i, q)`: softmax over the best-span raw score of each paragraph.
pub fn span_posteriors(best_span_scores: &[f64]) -> Vec<f64> {
    softmax(best_span_scores)
}

fn weighted_log(p: f64, w: f64) -> f64 {
    if w == 0.0 {
        // 0^0 = 1
        return 0.0;
    }
    let lp = if p > 0.0 {
        p.ln().max(LOG_FLOOR)
    } else {
        LOG_FLOOR
    };
    w * lp
}

/// `α ln p_span + β ln p_paragraph` with the log floor.
pub fn log_fuse(p_span: f64, p_paragraph: f64, w: FusionWeights) -> f64 {
    weighted_log(p_span, w.alpha) + weighted_log(p_paragraph, w.beta)
}

/// `p_span^α · p_paragraph^β`.
pub fn fuse(p_span: f64, p_paragraph: f64, w: FusionWeights) -> f64 {
    log_fuse(p_span, p_paragraph, w).exp()
}

/// Paragraph order by fused score, ties by ascending index.
pub fn fused_order(p_span: &[f64], p_paragraph: &[f64], w: FusionWeights) -> Vec<usize> {
    let scores: Vec<f64> = p_span
        .iter()
        .zip(p_paragraph)
        .map(|(&s, &p)| log_fuse(s, p, w))
        .collect();
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// One fused recommendation: a paragraph and its best span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub paragraph: usize,
    pub span: Option<SpanPrediction>,
    pub p_paragraph: f64,
    pub p_span: f64,
    pub fused: f64,
}

/// Cached dev/test posteriors for one quote.
///
/// `positive_paragraphs`, `span_tokens` and `gold_tokens` are optional
/// extensions used by the grid search; `span_tokens` and `gold_tokens` are
/// needed only for the F1 objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRecord {
    pub quote_id: String,
    pub p_paragraph: Vec<f64>,
    pub p_span: Vec<f64>,
    /// Token offsets of each paragraph's best span, `null` when none.
    pub best_spans: Vec<Option<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub positive_paragraphs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span_tokens: Option<Vec<Tokens>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_tokens: Option<Tokens>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMetric {
    /// Dev mAP, for ranking deployment.
    Map,
    /// Dev top-setting BOW-F1, for span recommendation.
    F1Top,
}

impl std::str::FromStr for FusionMetric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "map" => Ok(Self::Map),
            "f1" | "f1_top" | "f1-top" => Ok(Self::F1Top),
            other => Err(Error::Config(format!("unknown fusion metric {other:?}"))),
        }
    }
}

/// Mean of the metric over `items` with the given weights.
pub fn fusion_metric(
    items: &[PosteriorRecord],
    metric: FusionMetric,
    w: FusionWeights,
) -> Result<f64> {
    let mut total = 0.0;
    for r in items {
        if r.positive_paragraphs.is_empty() {
            return Err(Error::validation(
                &r.quote_id,
                "posterior record lacks positive_paragraphs",
            ));
        }
        let order = fused_order(&r.p_span, &r.p_paragraph, w);
        total += match metric {
            FusionMetric::Map => average_precision(&order, &r.positive_paragraphs)?,
            FusionMetric::F1Top => {
                let (Some(spans), Some(gold)) = (&r.span_tokens, &r.gold_tokens) else {
                    return Err(Error::validation(
                        &r.quote_id,
                        "F1 objective needs span_tokens and gold_tokens",
                    ));
                };
                let pred: Tokens = order
                    .iter()
                    .take(r.positive_paragraphs.len())
                    .flat_map(|&p| spans.get(p).cloned().unwrap_or_default())
                    .collect();
                bow_f1(&pred, gold)
            }
        };
    }
    Ok(total / items.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub beta: f64,
    pub metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub weights: FusionWeights,
    pub metric: FusionMetric,
    pub best_value: f64,
    pub points: Vec<GridPoint>,
}

impl GridSearchResult {
    pub fn evaluated(&self) -> usize {
        self.points.len()
    }

    pub fn value_at(&self, alpha: f64, beta: f64) -> Option<f64> {
        self.points
            .iter()
            .find(|p| p.alpha == alpha && p.beta == beta)
            .map(|p| p.metric)
    }
}

/// Exhaustive search over the 21 × 21 grid; ties go to the smaller
/// `(β, α)`.
pub fn grid_search(items: &[PosteriorRecord], metric: FusionMetric) -> Result<GridSearchResult> {
    if items.is_empty() {
        return Err(Error::Empty("dev set for fusion grid search".into()));
    }
    let values = grid_values();
    let mut candidates: Vec<(f64, f64)> = Vec::with_capacity(values.len() * values.len());
    for &beta in &values {
        for &alpha in &values {
            candidates.push((alpha, beta));
        }
    }
    let points: Vec<GridPoint> = candidates
        .par_iter()
        .map(|&(alpha, beta)| {
            Ok(GridPoint {
                alpha,
                beta,
                metric: fusion_metric(items, metric, FusionWeights { alpha, beta })?,
            })
        })
        .collect::<Result<_>>()?;
    // candidates are in ascending (β, α) order, so the first maximum wins
    let best = points
        .iter()
        .fold(None::<&GridPoint>, |best, p| match best {
            Some(b) if b.metric >= p.metric => Some(b),
            _ => Some(p),
        })
        .expect("non-empty grid");
    Ok(GridSearchResult {
        weights: FusionWeights {
            alpha: best.alpha,
            beta: best.beta,
        },
        metric,
        best_value: best.metric,
        points,
    })
}
