//! Ranking and span metrics, the positive/top evaluation settings, the paired
//! permutation test and error-analysis helpers.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{detokenize, Corpus, Tokens};
use crate::encoder::SubwordVocab;
use crate::error::{Error, Result};

pub const ACC_CUTOFFS: [usize; 3] = [1, 3, 5];

/// Mean over positives of precision at each positive's rank.
pub fn average_precision(order: &[usize], positives: &[usize]) -> Result<f64> {
    if positives.is_empty() {
        return Err(Error::Empty("positive set".into()));
    }
    let mut ranks = Vec::with_capacity(positives.len());
    for p in positives {
        let r = order.iter().position(|x| x == p).ok_or(Error::OutOfRange {
            what: "positive paragraph in ranking",
            index: *p,
            len: order.len(),
        })?;
        ranks.push(r + 1);
    }
    ranks.sort_unstable();
    ranks.dedup();
    let sum: f64 = ranks
        .iter()
        .enumerate()
        .map(|(hits, &rank)| (hits + 1) as f64 / rank as f64)
        .sum();
    Ok(sum / ranks.len() as f64)
}

/// Whether any positive is ranked within the first `k`.
pub fn hit_at_k(order: &[usize], positives: &[usize], k: usize) -> bool {
    order.iter().take(k).any(|p| positives.contains(p))
}

/// Fraction of quotes with at least one positive in the top `k`.
pub fn top_k_accuracy<'a>(
    runs: impl IntoIterator<Item = (&'a [usize], &'a [usize])>,
    k: usize,
) -> f64 {
    let (mut hits, mut n) = (0usize, 0usize);
    for (order, positives) in runs {
        n += 1;
        hits += usize::from(hit_at_k(order, positives, k));
    }
    if n == 0 {
        0.0
    } else {
        hits as f64 / n as f64
    }
}

fn lowered(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

/// 1.0 iff the lowercased token sequences are identical.
pub fn exact_match(pred: &[String], gold: &[String]) -> f64 {
    f64::from(u8::from(lowered(pred) == lowered(gold)))
}

/// Multiset token-overlap F1; 0 when either side is empty.
pub fn bow_f1(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<String, i64> = HashMap::new();
    for t in lowered(gold) {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0usize;
    for t in lowered(pred) {
        if let Some(c) = counts.get_mut(&t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanSetting {
    /// Spans on the known positive paragraph(s).
    Positive,
    /// Spans from the top-ranked paragraph(s).
    Top,
}

/// One system's output for one quote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub quote_id: String,
    /// Paragraph indices, best first.
    pub ranking: Vec<usize>,
    /// Predicted span tokens for each paragraph index (empty when none).
    pub spans: Vec<Tokens>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldRecord {
    pub quote_id: String,
    pub positive_paragraphs: Vec<usize>,
    /// Quote tokens in each positive paragraph, in paragraph order.
    pub gold_spans: Vec<Tokens>,
}

impl GoldRecord {
    pub fn gold_tokens(&self) -> Tokens {
        self.gold_spans.concat()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEval {
    pub map: f64,
    pub acc: BTreeMap<usize, f64>,
    pub per_quote_ap: Vec<f64>,
    pub per_quote_hits: BTreeMap<usize, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanEval {
    pub setting: SpanSetting,
    pub em: f64,
    pub f1: f64,
    pub per_quote_em: Vec<f64>,
    pub per_quote_f1: Vec<f64>,
}

/// Concatenated predicted span under a setting: the positive paragraphs in
/// paragraph order, or the top `p` ranked paragraphs in rank order.
pub fn predicted_span(pred: &PredictionRecord, gold: &GoldRecord, setting: SpanSetting) -> Tokens {
    let span_of = |p: &usize| pred.spans.get(*p).cloned().unwrap_or_default();
    match setting {
        SpanSetting::Positive => gold.positive_paragraphs.iter().flat_map(span_of).collect(),
        SpanSetting::Top => pred
            .ranking
            .iter()
            .take(gold.positive_paragraphs.len())
            .flat_map(span_of)
            .collect(),
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Macro-averaged ranking and span metrics over the gold quotes.
pub fn evaluate_run(
    predictions: &[PredictionRecord],
    gold: &[GoldRecord],
    setting: SpanSetting,
) -> Result<(RankingEval, SpanEval)> {
    let by_id: HashMap<&str, &PredictionRecord> = predictions
        .iter()
        .map(|p| (p.quote_id.as_str(), p))
        .collect();
    let mut aps = Vec::with_capacity(gold.len());
    let mut hits: BTreeMap<usize, Vec<f64>> = ACC_CUTOFFS.iter().map(|&k| (k, vec![])).collect();
    let mut ems = Vec::with_capacity(gold.len());
    let mut f1s = Vec::with_capacity(gold.len());
    for g in gold {
        let p = by_id
            .get(g.quote_id.as_str())
            .ok_or_else(|| Error::MissingPrediction(g.quote_id.clone()))?;
        aps.push(average_precision(&p.ranking, &g.positive_paragraphs)?);
        for (&k, v) in hits.iter_mut() {
            v.push(f64::from(u8::from(hit_at_k(
                &p.ranking,
                &g.positive_paragraphs,
                k,
            ))));
        }
        let pred_tokens = predicted_span(p, g, setting);
        let gold_tokens = g.gold_tokens();
        ems.push(exact_match(&pred_tokens, &gold_tokens));
        f1s.push(bow_f1(&pred_tokens, &gold_tokens));
    }
    let ranking = RankingEval {
        map: mean(&aps),
        acc: hits.iter().map(|(&k, v)| (k, mean(v))).collect(),
        per_quote_ap: aps,
        per_quote_hits: hits,
    };
    let span = SpanEval {
        setting,
        em: mean(&ems),
        f1: mean(&f1s),
        per_quote_em: ems,
        per_quote_f1: f1s,
    };
    Ok((ranking, span))
}

/// Two-sided paired sign-flip permutation test on the difference in means.
///
/// Returns `(count + 1) / (iterations + 1)` where `count` is the number of
/// random sign assignments whose absolute mean difference reaches the
/// observed one.
pub fn permutation_test(a: &[f64], b: &[f64], iterations: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Ok(1.0);
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diffs.len() as f64;
    let observed = (diffs.iter().sum::<f64>() / n).abs();
    let tol = 1e-12 * (1.0 + observed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = 0usize;
    for _ in 0..iterations {
        let s: f64 = diffs
            .iter()
            .map(|d| if rng.gen::<bool>() { *d } else { -*d })
            .sum();
        if (s / n).abs() >= observed - tol {
            count += 1;
        }
    }
    Ok((count + 1) as f64 / (iterations + 1) as f64)
}

/// Normalized histogram of `|top1 - nearest positive|` over quotes whose
/// top-ranked paragraph is not a positive.
pub fn rank_distance_histogram(
    predictions: &[PredictionRecord],
    gold: &[GoldRecord],
) -> Result<BTreeMap<usize, f64>> {
    let by_id: HashMap<&str, &PredictionRecord> = predictions
        .iter()
        .map(|p| (p.quote_id.as_str(), p))
        .collect();
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    let mut total = 0usize;
    for g in gold {
        let p = by_id
            .get(g.quote_id.as_str())
            .ok_or_else(|| Error::MissingPrediction(g.quote_id.clone()))?;
        let Some(&top) = p.ranking.first() else {
            continue;
        };
        if g.positive_paragraphs.contains(&top) {
            continue;
        }
        let d = g
            .positive_paragraphs
            .iter()
            .map(|&q| q.abs_diff(top))
            .min()
            .unwrap_or(0);
        *counts.entry(d).or_default() += 1;
        total += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(d, c)| (d, c as f64 / total as f64))
        .collect())
}

/// A mis-ranked quote prepared for human review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisrankedSample {
    pub quote_id: String,
    pub title: String,
    pub context: String,
    pub paragraph_index: usize,
    pub paragraph_text: String,
}

/// The trailing sentences of a left context holding its last `cap` pieces,
/// widened to whole sentences.
pub fn display_context(sentences: &[Tokens], vocab: &SubwordVocab, cap: usize) -> String {
    let mut seen = 0usize;
    let mut first = sentences.len();
    for (i, s) in sentences.iter().enumerate().rev() {
        if seen >= cap {
            break;
        }
        seen += vocab.tokenize(s).0.len();
        first = i;
    }
    let words: Vec<String> = sentences[first..].iter().flatten().cloned().collect();
    detokenize(&words)
}

/// Seeded uniform sample of `n` quotes whose top-ranked paragraph is not a
/// positive.
pub fn sample_misranked(
    predictions: &[PredictionRecord],
    gold: &[GoldRecord],
    corpus: &Corpus,
    vocab: &SubwordVocab,
    context_cap: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<MisrankedSample>> {
    let by_id: HashMap<&str, &PredictionRecord> = predictions
        .iter()
        .map(|p| (p.quote_id.as_str(), p))
        .collect();
    let mut candidates = Vec::new();
    for g in gold {
        let p = by_id
            .get(g.quote_id.as_str())
            .ok_or_else(|| Error::MissingPrediction(g.quote_id.clone()))?;
        if let Some(&top) = p.ranking.first() {
            if !g.positive_paragraphs.contains(&top) {
                candidates.push((g.quote_id.as_str(), top));
            }
        }
    }
    if n > candidates.len() {
        return Err(Error::TooFewMisranked {
            requested: n,
            available: candidates.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, candidates.len(), n)
        .into_iter()
        .map(|i| {
            let (qid, top) = candidates[i];
            let q = corpus
                .quote(qid)
                .ok_or_else(|| Error::NotFound(format!("quote {qid}")))?;
            let article = corpus
                .article(&q.article_id)
                .ok_or_else(|| Error::NotFound(format!("article {}", q.article_id)))?;
            let doc = corpus
                .source(&q.source_id)
                .ok_or_else(|| Error::NotFound(format!("source {}", q.source_id)))?;
            let para = doc.paragraphs.get(top).ok_or(Error::OutOfRange {
                what: "paragraph",
                index: top,
                len: doc.len(),
            })?;
            Ok(MisrankedSample {
                quote_id: qid.to_string(),
                title: detokenize(&article.title),
                context: display_context(
                    &article.sentences[..q.quote_sentence_index],
                    vocab,
                    context_cap,
                ),
                paragraph_index: top,
                paragraph_text: para.raw_text.clone(),
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub metric: String,
    pub against: String,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub run_id: String,
    pub split: String,
    pub map: f64,
    pub acc: BTreeMap<String, f64>,
    pub em: BTreeMap<String, f64>,
    pub f1: BTreeMap<String, f64>,
    pub significance: Vec<SignificanceRow>,
}

/// Full evaluation of a run in both span settings.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEvaluation {
    pub ranking: RankingEval,
    pub positive: SpanEval,
    pub top: SpanEval,
}

impl RunEvaluation {
    pub fn compute(predictions: &[PredictionRecord], gold: &[GoldRecord]) -> Result<Self> {
        let (ranking, positive) = evaluate_run(predictions, gold, SpanSetting::Positive)?;
        let (_, top) = evaluate_run(predictions, gold, SpanSetting::Top)?;
        Ok(Self {
            ranking,
            positive,
            top,
        })
    }

    pub fn report(&self, run_id: &str, split: &str) -> EvaluationReport {
        EvaluationReport {
            run_id: run_id.into(),
            split: split.into(),
            map: self.ranking.map,
            acc: self
                .ranking
                .acc
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            em: [
                ("positive".to_string(), self.positive.em),
                ("top".to_string(), self.top.em),
            ]
            .into_iter()
            .collect(),
            f1: [
                ("positive".to_string(), self.positive.f1),
                ("top".to_string(), self.top.f1),
            ]
            .into_iter()
            .collect(),
            significance: vec![],
        }
    }

    /// Permutation p-values of this run against a baseline on mAP and the
    /// top-setting F1.
    pub fn significance_against(
        &self,
        other: &RunEvaluation,
        name: &str,
        seed: u64,
    ) -> Result<Vec<SignificanceRow>> {
        let rows = [
            (
                "map",
                &self.ranking.per_quote_ap,
                &other.ranking.per_quote_ap,
            ),
            ("f1_top", &self.top.per_quote_f1, &other.top.per_quote_f1),
        ];
        rows.into_iter()
            .map(|(metric, a, b)| {
                Ok(SignificanceRow {
                    metric: metric.into(),
                    against: name.into(),
                    p_value: permutation_test(a, b, 10_000, seed)?,
                })
            })
            .collect()
    }
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

fn get(m: &BTreeMap<String, f64>, k: &str) -> f64 {
    m.get(k).copied().unwrap_or(f64::NAN)
}

/// Plain-text paragraph ranking and span prediction tables, one numbered row
/// per report, values in percent.
pub fn render_tables(reports: &[EvaluationReport]) -> String {
    let name_w = reports
        .iter()
        .map(|r| r.run_id.len())
        .max()
        .unwrap_or(6)
        .max(6)
        + 4;
    let mut s = String::new();
    let _ = writeln!(s, "Paragraph ranking results");
    let _ = writeln!(
        s,
        "{:<name_w$} {:>6} {:>6} {:>6} {:>6}",
        "Method", "mAP", "Acc@1", "Acc@3", "Acc@5"
    );
    for (i, r) in reports.iter().enumerate() {
        let label = format!("{}. {}", i + 1, r.run_id);
        let _ = writeln!(
            s,
            "{:<name_w$} {:>6} {:>6} {:>6} {:>6}",
            label,
            pct(r.map),
            pct(get(&r.acc, "1")),
            pct(get(&r.acc, "3")),
            pct(get(&r.acc, "5")),
        );
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Span prediction results");
    let _ = writeln!(
        s,
        "{:<name_w$} {:>8} {:>8} {:>8} {:>8}",
        "Method", "EM(pos)", "F1(pos)", "EM(top)", "F1(top)"
    );
    for (i, r) in reports.iter().enumerate() {
        let label = format!("{}. {}", i + 1, r.run_id);
        let _ = writeln!(
            s,
            "{:<name_w$} {:>8} {:>8} {:>8} {:>8}",
            label,
            pct(get(&r.em, "positive")),
            pct(get(&r.f1, "positive")),
            pct(get(&r.em, "top")),
            pct(get(&r.f1, "top")),
        );
    }
    s
}
