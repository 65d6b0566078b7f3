//! Trained model artifacts.
//!
//! File layout: the 8-byte magic `QFCKPT01`, a little-endian `u64` header
//! length, a JSON header (configs, vocabulary, history, tensor names and
//! shapes), then every tensor as raw little-endian `f64` in header order.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::QuoteQuery;
use crate::encoder::{EncoderConfig, EncoderParams, PackCaps, SubwordVocab, TensorSet};
use crate::error::{Error, Result};
use crate::pararank::{ParagraphModel, RankHead};
use crate::spanpred::{SpanHead, SpanModel};
use crate::trainer::{EpochLog, ModelKind, TrainConfig};

const MAGIC: &[u8; 8] = b"QFCKPT01";

/// Encoder plus whichever head the model kind uses.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Paragraph(ParagraphModel),
    Span(SpanModel),
}

impl TrainedModel {
    /// Zero-valued model with the right shapes for `kind`.
    pub fn zeros(kind: ModelKind, config: EncoderConfig) -> Result<Self> {
        let mut encoder = EncoderParams::init(config)?;
        encoder.zero();
        let h = encoder.hidden_size();
        Ok(match kind {
            ModelKind::Paragraph => Self::Paragraph(ParagraphModel {
                encoder,
                head: RankHead::zeros(h),
            }),
            ModelKind::SpanPositiveOnly | ModelKind::SpanSharedNorm => Self::Span(SpanModel {
                encoder,
                head: SpanHead::zeros(h),
            }),
        })
    }

    pub fn encoder(&self) -> &EncoderParams {
        match self {
            Self::Paragraph(m) => &m.encoder,
            Self::Span(m) => &m.encoder,
        }
    }

    pub fn as_paragraph(&self) -> Result<&ParagraphModel> {
        match self {
            Self::Paragraph(m) => Ok(m),
            Self::Span(_) => Err(Error::Checkpoint(
                "expected a paragraph ranking model, found a span model".into(),
            )),
        }
    }

    pub fn as_span(&self) -> Result<&SpanModel> {
        match self {
            Self::Span(m) => Ok(m),
            Self::Paragraph(_) => Err(Error::Checkpoint(
                "expected a span model, found a paragraph ranking model".into(),
            )),
        }
    }
}

impl TensorSet for TrainedModel {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        match self {
            Self::Paragraph(m) => m.tensors(),
            Self::Span(m) => m.tensors(),
        }
    }
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        match self {
            Self::Paragraph(m) => m.tensors_mut(),
            Self::Span(m) => m.tensors_mut(),
        }
    }
    fn names(&self) -> Vec<String> {
        match self {
            Self::Paragraph(m) => m.names(),
            Self::Span(m) => m.names(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab: SubwordVocab,
    pub model: TrainedModel,
    pub history: Vec<EpochLog>,
    /// Epoch whose weights are stored; 0 for the untrained initialization.
    pub best_epoch: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header {
    train_config: TrainConfig,
    encoder_config: EncoderConfig,
    vocab_hash: String,
    vocab: Vec<String>,
    history: Vec<EpochLog>,
    best_epoch: usize,
    tensors: Vec<TensorMeta>,
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        self.config.model_kind
    }

    pub fn caps(&self) -> PackCaps {
        self.config.caps()
    }

    pub fn vocab_hash(&self) -> String {
        self.vocab.hash()
    }

    /// The query as this model sees it (title dropped for no-title models).
    pub fn view(&self, query: &QuoteQuery) -> QuoteQuery {
        self.config.view(query)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.model.tensors();
        let header = Header {
            train_config: self.config.clone(),
            encoder_config: self.model.encoder().config.clone(),
            vocab_hash: self.vocab.hash(),
            vocab: self.vocab.pieces().to_vec(),
            history: self.history.clone(),
            best_epoch: self.best_epoch,
            tensors: self
                .model
                .names()
                .into_iter()
                .zip(&tensors)
                .map(|(name, t)| TensorMeta {
                    name,
                    shape: [t.nrows(), t.ncols()],
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let n: usize = tensors.iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in tensors {
            for &x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let vocab = SubwordVocab::from_pieces(header.vocab)?;
        if vocab.hash() != header.vocab_hash {
            return Err(Error::VocabMismatch(header.vocab_hash, vocab.hash()));
        }
        let mut model = TrainedModel::zeros(header.train_config.model_kind, header.encoder_config)?;
        let names = model.names();
        if names.len() != header.tensors.len() {
            return Err(bad("tensor count does not match the model kind"));
        }
        let mut data = &bytes[16 + hlen..];
        for ((t, name), meta) in model
            .tensors_mut()
            .into_iter()
            .zip(&names)
            .zip(&header.tensors)
        {
            if *name != meta.name || [t.nrows(), t.ncols()] != meta.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    meta.name,
                    meta.shape,
                    name,
                    [t.nrows(), t.ncols()]
                )));
            }
            let need = 8 * t.len();
            if data.len() < need {
                return Err(bad("truncated tensor data"));
            }
            for (x, chunk) in t.iter_mut().zip(data[..need].chunks_exact(8)) {
                *x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            data = &data[need..];
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Self {
            config: header.train_config,
            vocab,
            model,
            history: header.history,
            best_epoch: header.best_epoch,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(Error::file(path))?;
        f.write_all(&bytes).map_err(Error::file(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}
