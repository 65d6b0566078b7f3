use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::Tokens;
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const BODY_START: &str = "[body_start]";

const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, BODY_START];
const CONTINUATION: &str = "##";
const MAX_WORD_CHARS: usize = 100;

/// WordPiece vocabulary: word-initial pieces, `##`-prefixed continuation
/// pieces, and the five special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
    pub body_start: u32,
}

impl SubwordVocab {
    pub fn from_pieces(pieces: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() || p.contains('\n') {
                return Err(Error::Config(format!(
                    "invalid vocabulary piece at line {}",
                    i + 1
                )));
            }
            if index.insert(p.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary piece {p:?}")));
            }
        }
        let special = |s: &str| {
            index
                .get(s)
                .copied()
                .ok_or_else(|| Error::Config(format!("vocabulary lacks special token {s}")))
        };
        Ok(Self {
            pad: special(PAD)?,
            unk: special(UNK)?,
            cls: special(CLS)?,
            sep: special(SEP)?,
            body_start: special(BODY_START)?,
            pieces,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: u32) -> &str {
        &self.pieces[id as usize]
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    /// Greedy longest-match-first segmentation of one lowercased word. Words
    /// that cannot be covered become a single `[UNK]`.
    pub fn tokenize_word(&self, word: &str) -> Vec<u32> {
        let word = word.to_lowercase();
        let chars: Vec<char> = word.chars().collect();
        if chars.is_empty() || chars.len() > MAX_WORD_CHARS {
            return vec![self.unk];
        }
        let mut out = Vec::new();
        let mut start = 0;
        let mut candidate = String::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while end > start {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.extend(&chars[start..end]);
                if let Some(&id) = self.index.get(candidate.as_str()) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => out.push(id),
                None => return vec![self.unk],
            }
            start = end;
        }
        out
    }

    /// Segments a word sequence, returning piece ids and, for each piece, the
    /// index of the word it came from.
    pub fn tokenize(&self, tokens: &[String]) -> (Vec<u32>, Vec<usize>) {
        let mut ids = Vec::with_capacity(tokens.len());
        let mut owners = Vec::with_capacity(tokens.len());
        for (t, word) in tokens.iter().enumerate() {
            for id in self.tokenize_word(word) {
                ids.push(id);
                owners.push(t);
            }
        }
        (ids, owners)
    }

    /// One piece per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.pieces {
            s.push_str(p);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_pieces(text.lines().map(String::from).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(Error::file(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path).map_err(Error::file(path))?)
    }

    /// Hex SHA-256 of the vocabulary file contents.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Builds a frequency-ranked vocabulary of at most `vocab_size` pieces.
///
/// Order: specials, word-initial characters, continuation characters, then
/// whole words and frequent `##` suffixes, each group by descending frequency
/// with lexical tie-break. Characters come first so that any word built from
/// seen characters segments without `[UNK]`.
pub fn build_vocab<'a>(
    corpus: impl IntoIterator<Item = &'a Tokens>,
    vocab_size: usize,
) -> Result<SubwordVocab> {
    let min = SPECIALS.len() + 26;
    if vocab_size < min {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} is below the minimum of {min}"
        )));
    }
    let mut words: BTreeMap<String, u64> = BTreeMap::new();
    for seq in corpus {
        for w in seq {
            let w = w.to_lowercase();
            if !w.is_empty() && w.chars().count() <= MAX_WORD_CHARS {
                *words.entry(w).or_default() += 1;
            }
        }
    }
    if words.is_empty() {
        return Err(Error::Empty("vocabulary corpus".into()));
    }

    let mut initial: BTreeMap<String, u64> = BTreeMap::new();
    let mut cont: BTreeMap<String, u64> = BTreeMap::new();
    let mut longer: BTreeMap<String, u64> = BTreeMap::new();
    for (w, &n) in &words {
        let chars: Vec<char> = w.chars().collect();
        *initial.entry(chars[0].to_string()).or_default() += n;
        for c in &chars[1..] {
            *cont.entry(format!("{CONTINUATION}{c}")).or_default() += n;
        }
        if chars.len() > 1 {
            *longer.entry(w.clone()).or_default() += n;
            // suffixes of 2-4 characters help segment unseen inflections
            for k in 2..=4.min(chars.len() - 1) {
                let suffix: String = chars[chars.len() - k..].iter().collect();
                *longer.entry(format!("{CONTINUATION}{suffix}")).or_default() += n;
            }
        }
    }
    let ranked = |m: BTreeMap<String, u64>| {
        let mut v: Vec<(String, u64)> = m.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.into_iter().map(|(p, _)| p)
    };

    let mut pieces: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
    let mut seen: std::collections::HashSet<String> = pieces.iter().cloned().collect();
    for p in ranked(initial).chain(ranked(cont)).chain(ranked(longer)) {
        if pieces.len() >= vocab_size {
            break;
        }
        if seen.insert(p.clone()) {
            pieces.push(p);
        }
    }
    SubwordVocab::from_pieces(pieces)
}
