//! Seeded synthetic corpus with planted quote signals.
//!
//! Every paragraph names its topic word three times; the last mention
//! opens a run of "quotable" words, and topic plus run is the quote. An
//! article quoting paragraph `p` names `p`'s topic in its title and twice
//! in the sentence before the quote, and mentions other topics of the same
//! source once each earlier on. Term-once lexical scorers see a three-way
//! tie; a model that counts mentions can separate them.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ArticleRecord, Corpus, QuoteRecord, SourceRecord, Tokens};
use crate::error::Result;
use crate::trainer::{ModelKind, TrainConfig};

const TOPICS: [&str; 40] = [
    "economy",
    "border",
    "health",
    "energy",
    "school",
    "farm",
    "river",
    "taxes",
    "army",
    "court",
    "housing",
    "climate",
    "trade",
    "rail",
    "ocean",
    "prison",
    "bank",
    "vaccine",
    "highway",
    "wages",
    "pension",
    "oil",
    "forest",
    "church",
    "police",
    "water",
    "airport",
    "museum",
    "harbor",
    "bridge",
    "coal",
    "steel",
    "wheat",
    "mining",
    "tourism",
    "fishing",
    "satellite",
    "library",
    "hospital",
    "stadium",
];

const FILLER: [&str; 24] = [
    "the", "we", "and", "of", "to", "in", "that", "this", "is", "our", "for", "on", "with", "they",
    "was", "it", "as", "at", "by", "are", "from", "about", "have", "has",
];

const QUOTABLE: [&str; 20] = [
    "freedom",
    "never",
    "together",
    "future",
    "hope",
    "proud",
    "strong",
    "believe",
    "justice",
    "courage",
    "dream",
    "forward",
    "united",
    "promise",
    "truth",
    "honor",
    "greatness",
    "spirit",
    "victory",
    "faith",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub sources: usize,
    pub paragraphs: usize,
    /// Size of the topic word pool each source draws its paragraphs' topics from.
    pub topic_pool: usize,
    /// Other topics of the same source mentioned once each in the context.
    pub distractors: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sources: 20,
            paragraphs: 10,
            topic_pool: 10,
            distractors: 2,
            seed: 7,
        }
    }
}

/// Last train date and last dev date for the default 20-source corpus
/// (14 train, 3 dev, 3 test sources).
pub const TRAIN_END: &str = "2020-01-14";
pub const DEV_END: &str = "2020-01-17";

fn date(i: usize) -> String {
    format!("2020-{:02}-{:02}", 1 + i / 28, 1 + i % 28)
}

fn words(rng: &mut ChaCha8Rng, pool: &[&str], n: std::ops::RangeInclusive<usize>) -> Tokens {
    let n = rng.gen_range(n);
    (0..n)
        .map(|_| pool[rng.gen_range(0..pool.len())].to_string())
        .collect()
}

/// Source and article records; one single-paragraph quote per paragraph.
pub fn synthetic_records(cfg: SynthConfig) -> (Vec<SourceRecord>, Vec<ArticleRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sources = Vec::with_capacity(cfg.sources);
    let mut articles = Vec::with_capacity(cfg.sources * cfg.paragraphs);
    for s in 0..cfg.sources {
        let id = format!("src{s:02}");
        let d = date(s);
        let mut topics: Vec<&str> =
            TOPICS[..cfg.topic_pool.clamp(cfg.paragraphs, TOPICS.len())].to_vec();
        topics.shuffle(&mut rng);
        let topics = &topics[..cfg.paragraphs.min(topics.len())];

        let mut paragraphs = Vec::with_capacity(topics.len());
        let mut spans = Vec::with_capacity(topics.len());
        for &topic in topics {
            let mut p = words(&mut rng, &FILLER, 1..=2);
            p.push(topic.to_string());
            p.extend(words(&mut rng, &FILLER, 1..=1));
            p.push(topic.to_string());
            p.extend(words(&mut rng, &FILLER, 1..=1));
            let start = p.len();
            p.push(topic.to_string());
            p.extend(words(&mut rng, &QUOTABLE, 3..=5));
            let end = p.len() - 1;
            p.extend(words(&mut rng, &FILLER, 1..=2));
            p.push(".".into());
            paragraphs.push(p);
            spans.push((start, end));
        }

        for (k, &topic) in topics.iter().enumerate() {
            let mut others: Vec<&str> = topics.iter().copied().filter(|&t| t != topic).collect();
            others.shuffle(&mut rng);
            let mut title = vec![topic.to_string()];
            title.extend(words(&mut rng, &FILLER, 1..=1));
            let mut sentences = Vec::new();
            for &other in others.iter().take(cfg.distractors) {
                let mut sent = words(&mut rng, &FILLER, 1..=1);
                sent.push(other.to_string());
                sent.extend(words(&mut rng, &FILLER, 1..=1));
                sent.push(".".into());
                sentences.push(sent);
            }
            let mut lead = words(&mut rng, &FILLER, 1..=1);
            lead.push(topic.to_string());
            lead.extend(words(&mut rng, &FILLER, 1..=1));
            lead.push(topic.to_string());
            lead.push(".".into());
            sentences.push(lead);
            let (a, b) = spans[k];
            let mut quote_sentence = vec!["she".to_string(), "said".to_string()];
            quote_sentence.extend(paragraphs[k][a..=b].iter().cloned());
            quote_sentence.push(".".into());
            sentences.push(quote_sentence);
            articles.push(ArticleRecord {
                id: format!("{id}-a{k}"),
                date: d.clone(),
                source_id: id.clone(),
                title,
                quotes: vec![QuoteRecord {
                    sentence_index: sentences.len() - 1,
                    positive_paragraphs: vec![k],
                    span_start: a,
                    span_end: b,
                    source_id: None,
                }],
                sentences,
            });
        }
        sources.push(SourceRecord {
            id,
            date: d,
            paragraphs,
        });
    }
    (sources, articles)
}

pub fn synthetic_corpus(cfg: SynthConfig) -> Result<Corpus> {
    let (s, a) = synthetic_records(cfg);
    Corpus::from_records(s, a)
}

/// Training settings that fit the default synthetic corpus within four
/// epochs: single-row batches, nine negatives, no dropout, short warmup and
/// a constant rate. The span kinds take a larger step than the ranker.
pub fn overfit_train_config(kind: ModelKind, seed: u64) -> TrainConfig {
    TrainConfig {
        model_kind: kind,
        batch_size: 1,
        learning_rate: if kind.is_span() { 1.5e-3 } else { 5e-4 },
        max_epochs: 4,
        n_negatives: 9,
        dropout: 0.0,
        warmup_fraction: 0.05,
        lr_decay: false,
        seed,
        ..TrainConfig::default()
    }
}
