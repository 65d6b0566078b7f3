//! Subword vocabulary, packed (query, paragraph) inputs and the transformer
//! encoder that turns them into a pooled vector and per-position vectors.

mod pack;
mod transformer;
mod vocab;

pub use pack::{
    map_span, pack_input, pack_pieces, PackCaps, PackedInput, ParagraphPieces, QueryPieces,
    MAX_PACKED_LEN,
};
pub use transformer::{
    EncoderConfig, EncoderOutput, EncoderParams, ForwardCache, LayerParams, TensorSet,
};
pub use vocab::{build_vocab, SubwordVocab, BODY_START, CLS, PAD, SEP, UNK};
