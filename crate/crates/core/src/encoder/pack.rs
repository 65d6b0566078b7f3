use serde::{Deserialize, Serialize};

use super::vocab::SubwordVocab;
use crate::corpus::QuoteQuery;
use crate::error::{Error, Result};

/// Per-segment subword caps: title keeps its first pieces, context its last,
/// paragraph its first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackCaps {
    pub title: usize,
    pub context: usize,
    pub paragraph: usize,
}

impl Default for PackCaps {
    fn default() -> Self {
        Self {
            title: 20,
            context: 100,
            paragraph: 200,
        }
    }
}

/// Hard ceiling on packed length. With full title and context segments the
/// paragraph gives up pieces to stay under it.
pub const MAX_PACKED_LEN: usize = 323;

impl PackCaps {
    /// Longest packed sequence these caps can produce.
    pub fn max_len(&self) -> usize {
        (self.title + self.context + self.paragraph + 4).min(MAX_PACKED_LEN)
    }
}

/// Query side already segmented into pieces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryPieces {
    pub title: Vec<u32>,
    pub context: Vec<u32>,
}

impl QueryPieces {
    pub fn new(query: &QuoteQuery, vocab: &SubwordVocab) -> Self {
        Self {
            title: vocab.tokenize(&query.title).0,
            context: vocab.tokenize(&query.left_context).0,
        }
    }
}

/// Paragraph already segmented into pieces, with each piece's owning token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParagraphPieces {
    pub ids: Vec<u32>,
    pub owners: Vec<usize>,
}

impl ParagraphPieces {
    pub fn new(tokens: &[String], vocab: &SubwordVocab) -> Self {
        let (ids, owners) = vocab.tokenize(tokens);
        Self { ids, owners }
    }
}

/// `[CLS] title [body_start] context [SEP] paragraph [SEP]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedInput {
    pub ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub attention_mask: Vec<u8>,
    /// Inclusive first and last positions of the paragraph pieces.
    pub paragraph_piece_range: (usize, usize),
    /// Paragraph token index for each position in `paragraph_piece_range`.
    pub piece_to_token: Vec<usize>,
    pub title_pieces: usize,
    pub context_pieces: usize,
}

impl PackedInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn in_paragraph(&self, pos: usize) -> bool {
        let (a, b) = self.paragraph_piece_range;
        (a..=b).contains(&pos)
    }

    /// Maps a paragraph piece span (absolute positions) to the original
    /// paragraph token span.
    pub fn map_span(&self, start: usize, end: usize) -> Result<(usize, usize)> {
        map_span(
            (start, end),
            self.paragraph_piece_range,
            &self.piece_to_token,
        )
    }

    /// Smallest piece span (absolute positions) covering a token span.
    /// Fails when either token was cut by the paragraph cap.
    pub fn token_span_to_pieces(&self, start: usize, end: usize) -> Result<(usize, usize)> {
        let first = self.paragraph_piece_range.0;
        let s = self.piece_to_token.iter().position(|&t| t == start);
        let e = self.piece_to_token.iter().rposition(|&t| t == end);
        match (s, e) {
            (Some(s), Some(e)) if s <= e => Ok((first + s, first + e)),
            _ => Err(Error::OutOfRange {
                what: "token span in packed paragraph",
                index: end,
                len: self.piece_to_token.last().map_or(0, |t| t + 1),
            }),
        }
    }
}

/// Maps absolute piece positions inside the paragraph range to paragraph
/// token indices.
pub fn map_span(
    span: (usize, usize),
    paragraph_piece_range: (usize, usize),
    piece_to_token: &[usize],
) -> Result<(usize, usize)> {
    let (first, last) = paragraph_piece_range;
    let lookup = |pos: usize| {
        if pos < first || pos > last {
            Err(Error::OutOfRange {
                what: "paragraph piece position",
                index: pos,
                len: last + 1,
            })
        } else {
            Ok(piece_to_token[pos - first])
        }
    };
    Ok((lookup(span.0)?, lookup(span.1)?))
}

pub fn pack_input(
    query: &QuoteQuery,
    paragraph: &[String],
    vocab: &SubwordVocab,
    caps: PackCaps,
) -> PackedInput {
    pack_pieces(
        &QueryPieces::new(query, vocab),
        &ParagraphPieces::new(paragraph, vocab),
        vocab,
        caps,
    )
}

pub fn pack_pieces(
    query: &QueryPieces,
    paragraph: &ParagraphPieces,
    vocab: &SubwordVocab,
    caps: PackCaps,
) -> PackedInput {
    let title = &query.title[..query.title.len().min(caps.title)];
    let context = &query.context[query.context.len().saturating_sub(caps.context)..];
    let budget = MAX_PACKED_LEN.saturating_sub(title.len() + context.len() + 4);
    let n_para = paragraph.ids.len().min(caps.paragraph).min(budget);

    let total = title.len() + context.len() + n_para + 4;
    let mut ids = Vec::with_capacity(total);
    ids.push(vocab.cls);
    ids.extend_from_slice(title);
    ids.push(vocab.body_start);
    ids.extend_from_slice(context);
    ids.push(vocab.sep);
    let query_len = ids.len();
    ids.extend_from_slice(&paragraph.ids[..n_para]);
    ids.push(vocab.sep);

    let mut segment_ids = vec![0u8; query_len];
    segment_ids.resize(ids.len(), 1);
    let range = if n_para == 0 {
        // empty paragraph: degenerate range pointing at the final [SEP]
        (query_len, query_len.saturating_sub(1))
    } else {
        (query_len, query_len + n_para - 1)
    };
    PackedInput {
        attention_mask: vec![1; ids.len()],
        segment_ids,
        paragraph_piece_range: range,
        piece_to_token: paragraph.owners[..n_para].to_vec(),
        title_pieces: title.len(),
        context_pieces: context.len(),
        ids,
    }
}
