//! Negative paragraph sampling and listwise example assembly.

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{QuoteQuery, SourceDocument};
use crate::error::{Error, Result};
use crate::pararank::{baseline_query_terms, TfIdfIndex};

/// Floor on TF-IDF sampling weights so every negative stays reachable.
pub const TFIDF_WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingScheme {
    #[default]
    Uniform,
    Tfidf,
    Positional,
}

impl std::str::FromStr for SamplingScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "tfidf" => Ok(Self::Tfidf),
            "positional" => Ok(Self::Positional),
            other => Err(Error::Config(format!("unknown sampling scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n: usize,
    pub scheme: SamplingScheme,
    pub seed: u64,
}

impl SamplingConfig {
    pub fn new(n: usize, scheme: SamplingScheme, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config(
                "number of negatives must be at least 1".into(),
            ));
        }
        Ok(Self { n, scheme, seed })
    }
}

/// `global ^ first 8 bytes of sha256(key)`: stable per-item seeds.
pub fn derive_seed(global: u64, key: &str) -> u64 {
    let d = Sha256::digest(key.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&d[..8]);
    global ^ u64::from_le_bytes(b)
}

/// Sampling weight of every paragraph; the positive gets 0.
pub fn sampling_weights(
    doc: &SourceDocument,
    positive: usize,
    scheme: SamplingScheme,
    query: &QuoteQuery,
) -> Vec<f64> {
    let mut w: Vec<f64> = match scheme {
        SamplingScheme::Uniform => vec![1.0; doc.len()],
        SamplingScheme::Positional => (0..doc.len())
            .map(|i| 1.0 / (1.0 + i.abs_diff(positive) as f64))
            .collect(),
        SamplingScheme::Tfidf => TfIdfIndex::new(doc)
            .cosine_scores(&baseline_query_terms(query))
            .into_iter()
            .map(|c| c.max(TFIDF_WEIGHT_FLOOR))
            .collect(),
    };
    w[positive] = 0.0;
    w
}

/// Sampled negatives. `single_paragraph` is set when the document had no
/// candidates at all.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Negatives {
    pub indices: Vec<usize>,
    pub single_paragraph: bool,
}

fn draw(weights: &[f64], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let dist = WeightedIndex::new(&w).expect("positive total weight");
        let i = dist.sample(rng);
        out.push(i);
        w[i] = 0.0;
    }
    out
}

/// Draws `min(n, len - 1)` distinct non-positive paragraphs without
/// replacement under the scheme's weights.
pub fn sample_negatives(
    doc: &SourceDocument,
    positive: usize,
    cfg: &SamplingConfig,
    query: &QuoteQuery,
) -> Result<Negatives> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sample_with(doc, positive, &[], cfg, query, &mut rng)
}

fn sample_with(
    doc: &SourceDocument,
    positive: usize,
    exclude: &[usize],
    cfg: &SamplingConfig,
    query: &QuoteQuery,
    rng: &mut ChaCha8Rng,
) -> Result<Negatives> {
    if positive >= doc.len() {
        return Err(Error::OutOfRange {
            what: "positive paragraph",
            index: positive,
            len: doc.len(),
        });
    }
    if doc.len() < 2 {
        return Ok(Negatives {
            indices: vec![],
            single_paragraph: true,
        });
    }
    let mut weights = sampling_weights(doc, positive, cfg.scheme, query);
    for &i in exclude {
        if let Some(w) = weights.get_mut(i) {
            *w = 0.0;
        }
    }
    let k = cfg.n.min(weights.iter().filter(|&&w| w > 0.0).count());
    Ok(Negatives {
        indices: draw(&weights, k, rng),
        single_paragraph: false,
    })
}

/// One positive and its sampled negatives for listwise training.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListwiseExample {
    pub query: QuoteQuery,
    pub paragraphs: Vec<usize>,
    pub positive_position: usize,
    /// Paragraph-local token span of the quote in the positive paragraph.
    pub gold_span: (usize, usize),
}

impl ListwiseExample {
    pub fn positive(&self) -> usize {
        self.paragraphs[self.positive_position]
    }
}

/// Samples negatives and inserts the positive at a seeded random position.
pub fn assemble_example(
    query: &QuoteQuery,
    doc: &SourceDocument,
    positive: usize,
    gold_span: (usize, usize),
    cfg: &SamplingConfig,
) -> Result<ListwiseExample> {
    assemble_example_excluding(query, doc, positive, gold_span, cfg, &[])
}

/// As [`assemble_example`], but paragraphs in `exclude` (other quoted
/// paragraphs of the same quote) are never drawn as negatives.
pub fn assemble_example_excluding(
    query: &QuoteQuery,
    doc: &SourceDocument,
    positive: usize,
    gold_span: (usize, usize),
    cfg: &SamplingConfig,
    exclude: &[usize],
) -> Result<ListwiseExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let negatives = sample_with(doc, positive, exclude, cfg, query, &mut rng)?;
    let mut paragraphs = negatives.indices;
    let positive_position = rng.gen_range(0..=paragraphs.len());
    paragraphs.insert(positive_position, positive);
    Ok(ListwiseExample {
        query: query.clone(),
        paragraphs,
        positive_position,
        gold_span,
    })
}
