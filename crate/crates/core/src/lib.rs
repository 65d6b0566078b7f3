//! Context-aware quote recommendation over a single source document.
//!
//! Given an article's title and the text before a quote slot, the library
//! ranks the paragraphs of a source document (speech, transcript, report)
//! and proposes a quotable span inside each. A transformer encoder reads the
//! packed `[CLS] title [body_start] context [SEP] paragraph [SEP]` input; a
//! paragraph head is trained with a listwise softmax loss over sampled
//! negatives, and a span head with positive-only or shared-normalization
//! start/end losses. The two posteriors are combined as
//! `p_span^α · p_paragraph^β` with weights chosen on a dev grid.
//!
//! Modules:
//! - [`corpus`]: sources, articles, aligned quotes, date splits, JSON Lines I/O
//! - [`sampling`]: seeded uniform, TF-IDF and positional negative sampling
//! - [`encoder`]: WordPiece vocabulary, input packing, transformer with backward pass
//! - [`pararank`]: paragraph ranking loss and head, BM25 and TF-IDF baselines
//! - [`spanpred`]: span losses and best-span decoding
//! - [`fusion`]: posterior fusion and the weight grid search
//! - [`metrics`]: mAP, Acc@k, EM, BOW-F1, permutation tests, report tables
//! - [`trainer`]: training loop, hyperparameter search, ablations
//! - [`checkpoint`]: binary checkpoint format
//! - [`pipeline`]: split-level inference and the combined recommender
//! - [`recsvc`]: HTTP recommendation service
//! - [`synth`]: seeded synthetic corpus with planted quotes
//! - [`cli`]: the `quotefuse` command line

pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod pararank;
pub mod pipeline;
pub mod recsvc;
pub mod sampling;
pub mod spanpred;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
