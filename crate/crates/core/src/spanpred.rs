//! Span prediction: start/end heads, the positive-only and shared-normalization
//! losses, and decoding of the best valid span in a paragraph.

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{QuoteQuery, SourceDocument};
use crate::encoder::{
    pack_pieces, EncoderOutput, EncoderParams, PackCaps, PackedInput, ParagraphPieces, QueryPieces,
    SubwordVocab, TensorSet,
};
use crate::error::{Error, Result};
use crate::pararank::log_sum_exp;

/// Start and end vectors `S` and `E`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanHead {
    pub s: Array2<f64>,
    pub e: Array2<f64>,
}

impl SpanHead {
    pub fn zeros(h: usize) -> Self {
        Self {
            s: Array2::zeros((1, h)),
            e: Array2::zeros((1, h)),
        }
    }
}

impl TensorSet for SpanHead {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.s, &self.e]
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.s, &mut self.e]
    }
    fn names(&self) -> Vec<String> {
        vec!["span_head.s".into(), "span_head.e".into()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanModel {
    pub encoder: EncoderParams,
    pub head: SpanHead,
}

impl TensorSet for SpanModel {
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

/// Start and end logits over every position of one packed input.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanLogits {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl SpanLogits {
    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }
}

/// `start[i] = S · T_i`, `end[i] = E · T_i`.
pub fn span_logits(out: &EncoderOutput, head: &SpanHead) -> SpanLogits {
    let t = &out.token_vectors;
    SpanLogits {
        start: t.dot(&head.s.row(0)).to_vec(),
        end: t.dot(&head.e.row(0)).to_vec(),
    }
}

/// Gradients of a span loss with respect to one pair's logits.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrads {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

fn check_gold(gold: (usize, usize), range: (usize, usize), len: usize) -> Result<()> {
    let (a, b) = range;
    for pos in [gold.0, gold.1] {
        if pos < a || pos > b || pos >= len {
            return Err(Error::OutOfRange {
                what: "gold position in paragraph range",
                index: pos,
                len: b + 1,
            });
        }
    }
    Ok(())
}

/// `½ [−log softmax(start)[s] − log softmax(end)[e]]` with the softmax over
/// every position of the single positive input.
pub fn positive_only_loss(
    logits: &SpanLogits,
    gold: (usize, usize),
    paragraph_range: (usize, usize),
) -> Result<f64> {
    Ok(positive_only_loss_grad(logits, gold, paragraph_range)?.0)
}

pub fn positive_only_loss_grad(
    logits: &SpanLogits,
    gold: (usize, usize),
    paragraph_range: (usize, usize),
) -> Result<(f64, LogitGrads)> {
    check_gold(gold, paragraph_range, logits.len())?;
    let side = |xs: &[f64], g: usize| {
        let lse = log_sum_exp(xs);
        let mut grad: Vec<f64> = xs.iter().map(|x| 0.5 * (x - lse).exp()).collect();
        grad[g] -= 0.5;
        (lse - xs[g], grad)
    };
    let (ls, gs) = side(&logits.start, gold.0);
    let (le, ge) = side(&logits.end, gold.1);
    Ok((0.5 * (ls + le), LogitGrads { start: gs, end: ge }))
}

/// Shared-normalization loss: the start (and end) softmax runs over every
/// position of every one of the n+1 inputs, and the loss is the mean NLL of
/// the gold start and end inside the positive input.
pub fn shared_norm_loss(
    pairs: &[SpanLogits],
    positive: usize,
    gold: (usize, usize),
    paragraph_range: (usize, usize),
) -> Result<f64> {
    Ok(shared_norm_loss_grad(pairs, positive, gold, paragraph_range)?.0)
}

pub fn shared_norm_loss_grad(
    pairs: &[SpanLogits],
    positive: usize,
    gold: (usize, usize),
    paragraph_range: (usize, usize),
) -> Result<(f64, Vec<LogitGrads>)> {
    if positive >= pairs.len() {
        return Err(Error::OutOfRange {
            what: "positive pair",
            index: positive,
            len: pairs.len(),
        });
    }
    check_gold(gold, paragraph_range, pairs[positive].len())?;
    let lse_start = shared_log_sum_exp(pairs.iter().map(|p| p.start.as_slice()));
    let lse_end = shared_log_sum_exp(pairs.iter().map(|p| p.end.as_slice()));
    let mut grads: Vec<LogitGrads> = pairs
        .iter()
        .map(|p| LogitGrads {
            start: p
                .start
                .iter()
                .map(|x| 0.5 * (x - lse_start).exp())
                .collect(),
            end: p.end.iter().map(|x| 0.5 * (x - lse_end).exp()).collect(),
        })
        .collect();
    grads[positive].start[gold.0] -= 0.5;
    grads[positive].end[gold.1] -= 0.5;
    let ls = lse_start - pairs[positive].start[gold.0];
    let le = lse_end - pairs[positive].end[gold.1];
    Ok((0.5 * (ls + le), grads))
}

/// Log-sum-exp over the concatenation of several slices, in order.
fn shared_log_sum_exp<'a>(parts: impl Iterator<Item = &'a [f64]> + Clone) -> f64 {
    let max = parts
        .clone()
        .flatten()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + parts.flatten().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Shared start and end distributions over all positions of all inputs.
pub fn shared_probabilities(pairs: &[SpanLogits]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let ls = shared_log_sum_exp(pairs.iter().map(|p| p.start.as_slice()));
    let le = shared_log_sum_exp(pairs.iter().map(|p| p.end.as_slice()));
    (
        pairs
            .iter()
            .map(|p| p.start.iter().map(|x| (x - ls).exp()).collect())
            .collect(),
        pairs
            .iter()
            .map(|p| p.end.iter().map(|x| (x - le).exp()).collect())
            .collect(),
    )
}

/// Gradient of a loss with respect to the token vectors, plus the head
/// gradients, given the logit gradients.
pub(crate) fn backprop_logits(
    out: &EncoderOutput,
    head: &SpanHead,
    g: &LogitGrads,
    head_grad: &mut SpanHead,
) -> Array2<f64> {
    let ds = Array1::from(g.start.clone());
    let de = Array1::from(g.end.clone());
    let t = &out.token_vectors;
    let mut hs = head_grad.s.row_mut(0);
    hs += &t.t().dot(&ds);
    let mut he = head_grad.e.row_mut(0);
    he += &t.t().dot(&de);
    let ds2 = ds.insert_axis(ndarray::Axis(1));
    let de2 = de.insert_axis(ndarray::Axis(1));
    &ds2 * &head.s + &de2 * &head.e
}

/// Options for span decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DecodeOptions {
    /// Accept `end == start` (single-piece spans).
    pub allow_equal: bool,
    /// Maximum span length in pieces.
    pub max_len: Option<usize>,
}

/// Best span `(start, end, score)` in absolute positions.
///
/// Maximizes `start[i] + end[j]` over `i, j` in the paragraph range with
/// `j > i` (or `j >= i`), breaking ties by smallest `i`, then smallest `j`.
pub fn decode_best_span(
    start: &[f64],
    end: &[f64],
    paragraph_range: (usize, usize),
    opts: DecodeOptions,
) -> Result<(usize, usize, f64)> {
    let (first, last) = paragraph_range;
    let no_span = Error::NoValidSpan { first, last };
    if last >= start.len() || last >= end.len() || first > last {
        return Err(no_span);
    }
    let gap = usize::from(!opts.allow_equal);
    let min_len = gap + 1;
    if opts.max_len.is_some_and(|m| m < min_len) || last - first + 1 < min_len {
        return Err(no_span);
    }

    let mut best: Option<(usize, usize, f64)> = None;
    let consider = |i: usize, j: usize, best: &mut Option<(usize, usize, f64)>| {
        let score = start[i] + end[j];
        let better = match *best {
            None => true,
            Some((bi, bj, bs)) => score > bs || (score == bs && (i, j) < (bi, bj)),
        };
        if better {
            *best = Some((i, j, score));
        }
    };

    match opts.max_len {
        None => {
            // running argmax of start over [first, j - gap], smallest index on ties
            let mut arg = first;
            for j in first + gap..=last {
                let cand = j - gap;
                if start[cand] > start[arg] {
                    arg = cand;
                }
                consider(arg, j, &mut best);
            }
        }
        Some(max_len) => {
            for j in first + gap..=last {
                let lo = (j + 1).saturating_sub(max_len).max(first);
                let mut arg = lo;
                for i in lo..=j - gap {
                    if start[i] > start[arg] {
                        arg = i;
                    }
                }
                consider(arg, j, &mut best);
            }
        }
    }
    best.ok_or(no_span)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub paragraph: usize,
    /// Piece positions in the packed input.
    pub start: usize,
    pub end: usize,
    /// Paragraph token offsets, inclusive.
    pub token_start: usize,
    pub token_end: usize,
    /// `S · T_start + E · T_end`.
    pub raw_score: f64,
}

/// Decodes the best span of one packed paragraph and maps it to tokens.
pub fn predict_span(
    paragraph: usize,
    packed: &PackedInput,
    logits: &SpanLogits,
    opts: DecodeOptions,
) -> Result<SpanPrediction> {
    let (i, j, raw_score) = decode_best_span(
        &logits.start,
        &logits.end,
        packed.paragraph_piece_range,
        opts,
    )?;
    let (token_start, token_end) = packed.map_span(i, j)?;
    Ok(SpanPrediction {
        paragraph,
        start: i,
        end: j,
        token_start,
        token_end,
        raw_score,
    })
}

/// Best span in every paragraph (each encoded independently), sorted by raw
/// score descending with ties by paragraph index. Paragraphs without a
/// valid span are left out.
pub fn rank_spans(
    query: &QuoteQuery,
    doc: &SourceDocument,
    model: &SpanModel,
    vocab: &SubwordVocab,
    caps: PackCaps,
    opts: DecodeOptions,
) -> Result<Vec<SpanPrediction>> {
    let mut spans = best_spans(query, doc, model, vocab, caps, opts)?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();
    sort_spans(&mut spans);
    Ok(spans)
}

pub(crate) fn sort_spans(spans: &mut [SpanPrediction]) {
    spans.sort_by(|a, b| {
        b.raw_score
            .total_cmp(&a.raw_score)
            .then(a.paragraph.cmp(&b.paragraph))
    });
}

/// Best span per paragraph in paragraph order; `None` where no span is valid.
pub fn best_spans(
    query: &QuoteQuery,
    doc: &SourceDocument,
    model: &SpanModel,
    vocab: &SubwordVocab,
    caps: PackCaps,
    opts: DecodeOptions,
) -> Result<Vec<Option<SpanPrediction>>> {
    let qp = QueryPieces::new(query, vocab);
    doc.paragraphs
        .par_iter()
        .map(|p| {
            let packed = pack_pieces(&qp, &ParagraphPieces::new(&p.tokens, vocab), vocab, caps);
            let out = model.encoder.encode(&packed)?;
            let logits = span_logits(&out, &model.head);
            match predict_span(p.index, &packed, &logits, opts) {
                Ok(sp) => Ok(Some(sp)),
                Err(Error::NoValidSpan { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(start: &[f64], end: &[f64]) -> SpanLogits {
        SpanLogits {
            start: start.to_vec(),
            end: end.to_vec(),
        }
    }

    #[test]
    fn uniform_positive_only() {
        let l = logits(&[0.0; 323], &[0.0; 323]);
        let loss = positive_only_loss(&l, (10, 20), (5, 300)).unwrap();
        assert!((loss - 323f64.ln()).abs() < 1e-12);
        assert!((loss - 5.778).abs() < 1e-3);
    }

    #[test]
    fn dominant_gold_gives_zero_loss() {
        let mut s = vec![0.0; 10];
        let mut e = vec![0.0; 10];
        s[3] = 1e4;
        e[6] = 1e4;
        let loss = positive_only_loss(&logits(&s, &e), (3, 6), (2, 9)).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn positive_only_closed_form() {
        let l = logits(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]);
        let loss = positive_only_loss(&l, (0, 0), (0, 2)).unwrap();
        let expected = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((expected - 0.55144).abs() < 1e-5);
    }

    #[test]
    fn gold_outside_paragraph_rejected() {
        let l = logits(&[0.0; 8], &[0.0; 8]);
        assert!(positive_only_loss(&l, (1, 5), (3, 6)).is_err());
        assert!(shared_norm_loss(&[l], 0, (3, 7), (3, 6)).is_err());
    }

    #[test]
    fn shared_uniform_two_pairs() {
        let pairs = vec![
            logits(&[0.0; 10], &[0.0; 10]),
            logits(&[0.0; 10], &[0.0; 10]),
        ];
        let loss = shared_norm_loss(&pairs, 1, (4, 6), (2, 8)).unwrap();
        assert!((loss - 20f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn decode_dominant_endpoints() {
        let (i, j, s) = decode_best_span(
            &[5.0, 0.0, 0.0],
            &[0.0, 0.0, 5.0],
            (0, 2),
            DecodeOptions::default(),
        )
        .unwrap();
        assert_eq!((i, j, s), (0, 2, 10.0));
    }

    #[test]
    fn decode_zero_logits_tie_break() {
        let z = [0.0; 12];
        let (i, j, _) = decode_best_span(&z, &z, (4, 9), DecodeOptions::default()).unwrap();
        assert_eq!((i, j), (4, 5));
        let opts = DecodeOptions {
            allow_equal: true,
            max_len: None,
        };
        let (i, j, _) = decode_best_span(&z, &z, (4, 9), opts).unwrap();
        assert_eq!((i, j), (4, 4));
    }

    #[test]
    fn decode_prefers_smaller_start_on_score_tie() {
        // (0,3), (0,5), (2,3) and (2,5) all score 5
        let start = [3.0, 0.0, 3.0, 0.0, 0.0, 0.0];
        let end = [0.0, 0.0, 0.0, 2.0, 0.0, 2.0];
        let (i, j, _) = decode_best_span(&start, &end, (0, 5), DecodeOptions::default()).unwrap();
        assert_eq!((i, j), (0, 3));
    }

    #[test]
    fn decode_single_piece_paragraph() {
        assert!(decode_best_span(&[0.0; 4], &[0.0; 4], (2, 2), DecodeOptions::default()).is_err());
        let opts = DecodeOptions {
            allow_equal: true,
            max_len: None,
        };
        assert_eq!(
            decode_best_span(&[0.0; 4], &[0.0; 4], (2, 2), opts)
                .unwrap()
                .0,
            2
        );
    }

    #[test]
    fn decode_max_len() {
        let start = [9.0, 0.0, 0.0, 0.0, 0.0];
        let end = [0.0, 0.0, 0.0, 0.0, 9.0];
        let opts = DecodeOptions {
            allow_equal: false,
            max_len: Some(3),
        };
        let (i, j, _) = decode_best_span(&start, &end, (0, 4), opts).unwrap();
        assert!(j - i < 3);
    }

    #[test]
    fn zero_head_gives_zero_logits() {
        let out = EncoderOutput {
            pooled: Array1::ones(4),
            token_vectors: Array2::ones((6, 4)),
        };
        let l = span_logits(&out, &SpanHead::zeros(4));
        assert_eq!(l.start, vec![0.0; 6]);
        assert_eq!(l.end.len(), 6);
    }
}
