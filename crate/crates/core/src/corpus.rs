//! Source documents, news articles and their aligned quotes.
//!
//! Input files are pre-tokenized JSON Lines. Span offsets are inclusive word
//! token indices counted from the first token of the first positive paragraph,
//! so a quote spanning two paragraphs continues its offsets across the
//! paragraph boundary.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};

pub type Tokens = Vec<String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceParagraph {
    pub index: usize,
    pub tokens: Tokens,
    pub raw_text: String,
}

impl SourceParagraph {
    pub fn new(index: usize, tokens: Tokens) -> Self {
        let raw_text = detokenize(&tokens);
        Self {
            index,
            tokens,
            raw_text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub id: String,
    pub date: String,
    pub paragraphs: Vec<SourceParagraph>,
}

impl SourceDocument {
    /// Builds a document from per-paragraph token lists, checking the
    /// non-empty invariants.
    pub fn new(
        id: impl Into<String>,
        date: impl Into<String>,
        paragraphs: Vec<Tokens>,
    ) -> Result<Self> {
        let id = id.into();
        let date = date.into();
        check_date(&id, &date)?;
        if paragraphs.is_empty() {
            return Err(Error::validation(&id, "source has no paragraphs"));
        }
        if let Some(i) = paragraphs.iter().position(|p| p.is_empty()) {
            return Err(Error::validation(
                &id,
                format!("paragraph {i} has no tokens"),
            ));
        }
        let paragraphs = paragraphs
            .into_iter()
            .enumerate()
            .map(|(i, t)| SourceParagraph::new(i, t))
            .collect();
        Ok(Self {
            id,
            date,
            paragraphs,
        })
    }

    pub fn len(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paragraphs.is_empty()
    }

    pub fn to_record(&self) -> SourceRecord {
        SourceRecord {
            id: self.id.clone(),
            date: self.date.clone(),
            paragraphs: self.paragraphs.iter().map(|p| p.tokens.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Article {
    pub id: String,
    pub date: String,
    pub title: Tokens,
    pub sentences: Vec<Tokens>,
    pub source_id: String,
}

/// Ground-truth link between a sentence of an article and a token span of
/// its source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedQuote {
    /// `<article id>#<ordinal within article>`.
    pub id: String,
    pub article_id: String,
    pub source_id: String,
    pub quote_sentence_index: usize,
    pub positive_paragraphs: Vec<usize>,
    pub positive_span: (usize, usize),
}

/// The query side of one recommendation point.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct QuoteQuery {
    pub title: Tokens,
    pub left_context: Tokens,
}

impl QuoteQuery {
    pub fn new(title: Tokens, left_context: Tokens) -> Self {
        Self {
            title,
            left_context,
        }
    }

    /// Tokenizes raw strings with [`simple_tokenize`].
    pub fn from_text(title: &str, context: &str) -> Self {
        Self::new(simple_tokenize(title), simple_tokenize(context))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "dev" => Ok(Self::Dev),
            "test" => Ok(Self::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: SplitName,
    /// Quote ids in corpus order.
    pub quotes: Vec<String>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.quotes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quotes.is_empty()
    }
}

/// One positive paragraph of a quote with the part of the span it holds,
/// as paragraph-local inclusive token offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphSpan {
    pub paragraph: usize,
    pub span: (usize, usize),
}

// ---------------------------------------------------------------------------
// Wire records

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub id: String,
    pub date: String,
    pub paragraphs: Vec<Tokens>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuoteRecord {
    pub sentence_index: usize,
    pub positive_paragraphs: Vec<usize>,
    pub span_start: usize,
    pub span_end: usize,
    /// Overrides the article's source for this quote. Articles whose quotes
    /// resolve to more than one source are rejected at ingestion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticleRecord {
    pub id: String,
    pub date: String,
    pub source_id: String,
    pub title: Tokens,
    pub sentences: Vec<Tokens>,
    pub quotes: Vec<QuoteRecord>,
}

// ---------------------------------------------------------------------------

/// Immutable collection of sources, articles and aligned quotes with all
/// cross references resolved.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    sources: BTreeMap<String, SourceDocument>,
    articles: BTreeMap<String, Article>,
    quotes: Vec<AlignedQuote>,
    quote_index: BTreeMap<String, usize>,
    rejected_articles: Vec<String>,
}

impl Corpus {
    /// Assembles a corpus from already-built parts, validating every quote.
    pub fn from_parts(
        sources: Vec<SourceDocument>,
        articles: Vec<Article>,
        quotes: Vec<AlignedQuote>,
    ) -> Result<Self> {
        let mut corpus = Corpus::default();
        for s in sources {
            if corpus.sources.contains_key(&s.id) {
                return Err(Error::validation(&s.id, "duplicate source id"));
            }
            corpus.sources.insert(s.id.clone(), s);
        }
        for a in articles {
            if corpus.articles.contains_key(&a.id) {
                return Err(Error::validation(&a.id, "duplicate article id"));
            }
            if !corpus.sources.contains_key(&a.source_id) {
                return Err(Error::validation(
                    &a.id,
                    format!("unknown source id {:?}", a.source_id),
                ));
            }
            corpus.articles.insert(a.id.clone(), a);
        }
        for q in quotes {
            corpus.validate_quote(&q)?;
            if corpus.quote_index.contains_key(&q.id) {
                return Err(Error::validation(&q.id, "duplicate quote id"));
            }
            corpus.quote_index.insert(q.id.clone(), corpus.quotes.len());
            corpus.quotes.push(q);
        }
        Ok(corpus)
    }

    /// Builds a corpus from wire records. Articles whose quotes point into
    /// more than one source are dropped with a warning.
    pub fn from_records(sources: Vec<SourceRecord>, articles: Vec<ArticleRecord>) -> Result<Self> {
        let sources = sources
            .into_iter()
            .map(|r| SourceDocument::new(r.id, r.date, r.paragraphs))
            .collect::<Result<Vec<_>>>()?;
        let mut arts = Vec::with_capacity(articles.len());
        let mut quotes = Vec::new();
        let mut rejected = Vec::new();
        for rec in articles {
            check_date(&rec.id, &rec.date)?;
            let distinct: BTreeSet<&str> = rec
                .quotes
                .iter()
                .map(|q| q.source_id.as_deref().unwrap_or(&rec.source_id))
                .collect();
            if distinct.len() > 1 {
                warn!(article = %rec.id, sources = ?distinct, "article quotes several sources; skipped");
                rejected.push(rec.id.clone());
                continue;
            }
            for (k, q) in rec.quotes.iter().enumerate() {
                quotes.push(AlignedQuote {
                    id: format!("{}#{}", rec.id, k),
                    article_id: rec.id.clone(),
                    source_id: q.source_id.clone().unwrap_or_else(|| rec.source_id.clone()),
                    quote_sentence_index: q.sentence_index,
                    positive_paragraphs: q.positive_paragraphs.clone(),
                    positive_span: (q.span_start, q.span_end),
                });
            }
            arts.push(Article {
                id: rec.id,
                date: rec.date,
                title: rec.title,
                sentences: rec.sentences,
                source_id: rec.source_id,
            });
        }
        let mut corpus = Self::from_parts(sources, arts, quotes)?;
        corpus.rejected_articles = rejected;
        Ok(corpus)
    }

    fn validate_quote(&self, q: &AlignedQuote) -> Result<()> {
        let article = self.articles.get(&q.article_id).ok_or_else(|| {
            Error::validation(&q.id, format!("unknown article {:?}", q.article_id))
        })?;
        let doc = self.sources.get(&q.source_id).ok_or_else(|| {
            Error::validation(&q.id, format!("unknown source id {:?}", q.source_id))
        })?;
        if q.quote_sentence_index >= article.sentences.len() {
            return Err(Error::validation(
                &q.id,
                format!(
                    "sentence index {} out of range ({} sentences)",
                    q.quote_sentence_index,
                    article.sentences.len()
                ),
            ));
        }
        let pos = &q.positive_paragraphs;
        if pos.is_empty() {
            return Err(Error::validation(&q.id, "no positive paragraphs"));
        }
        if pos.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::validation(
                &q.id,
                "positive paragraphs must be sorted and contiguous",
            ));
        }
        if let Some(&bad) = pos.iter().find(|&&p| p >= doc.len()) {
            return Err(Error::validation(
                &q.id,
                format!("paragraph {bad} out of range ({} paragraphs)", doc.len()),
            ));
        }
        let (start, end) = q.positive_span;
        if start > end {
            return Err(Error::validation(
                &q.id,
                format!("span start {start} > end {end}"),
            ));
        }
        let total: usize = pos.iter().map(|&p| doc.paragraphs[p].tokens.len()).sum();
        if end >= total {
            return Err(Error::validation(
                &q.id,
                format!("span end {end} beyond positive paragraphs ({total} tokens)"),
            ));
        }
        // every named paragraph must hold part of the span
        let first_len = doc.paragraphs[pos[0]].tokens.len();
        let last_offset = total - doc.paragraphs[*pos.last().unwrap()].tokens.len();
        if start >= first_len || end < last_offset {
            return Err(Error::validation(
                &q.id,
                "span does not touch every positive paragraph",
            ));
        }
        Ok(())
    }

    pub fn sources(&self) -> impl Iterator<Item = &SourceDocument> {
        self.sources.values()
    }

    pub fn articles(&self) -> impl Iterator<Item = &Article> {
        self.articles.values()
    }

    pub fn quotes(&self) -> &[AlignedQuote] {
        &self.quotes
    }

    pub fn source(&self, id: &str) -> Option<&SourceDocument> {
        self.sources.get(id)
    }

    pub fn article(&self, id: &str) -> Option<&Article> {
        self.articles.get(id)
    }

    pub fn quote(&self, id: &str) -> Option<&AlignedQuote> {
        self.quote_index.get(id).map(|&i| &self.quotes[i])
    }

    /// Article ids skipped at ingestion because they quote several sources.
    pub fn rejected_articles(&self) -> &[String] {
        &self.rejected_articles
    }

    /// Query, source and quote for a quote id.
    pub fn resolve(&self, quote_id: &str) -> Result<(QuoteQuery, &SourceDocument, &AlignedQuote)> {
        let q = self
            .quote(quote_id)
            .ok_or_else(|| Error::NotFound(format!("quote {quote_id}")))?;
        let article = &self.articles[&q.article_id];
        let query = build_quote_query(article, q)?;
        Ok((query, &self.sources[&q.source_id], q))
    }

    /// Word tokens of every source paragraph plus every article title and
    /// sentence, for vocabulary building.
    pub fn all_token_sequences(&self) -> impl Iterator<Item = &Tokens> {
        self.sources
            .values()
            .flat_map(|s| s.paragraphs.iter().map(|p| &p.tokens))
            .chain(
                self.articles
                    .values()
                    .flat_map(|a| std::iter::once(&a.title).chain(a.sentences.iter())),
            )
    }

    /// Token sequences reachable from one split: the articles and sources
    /// its quotes refer to, each once.
    pub fn split_token_sequences(&self, split: &DatasetSplit) -> Vec<&Tokens> {
        let mut articles = BTreeSet::new();
        let mut sources = BTreeSet::new();
        for qid in &split.quotes {
            if let Some(q) = self.quote(qid) {
                articles.insert(q.article_id.as_str());
                sources.insert(q.source_id.as_str());
            }
        }
        let mut out: Vec<&Tokens> = Vec::new();
        for s in sources {
            out.extend(self.sources[s].paragraphs.iter().map(|p| &p.tokens));
        }
        for a in articles {
            let a = &self.articles[a];
            out.push(&a.title);
            out.extend(a.sentences.iter());
        }
        out
    }
}

// ---------------------------------------------------------------------------

fn check_date(subject: &str, date: &str) -> Result<()> {
    let b = date.as_bytes();
    let ok = b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter()
            .enumerate()
            .all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit());
    if ok {
        Ok(())
    } else {
        Err(Error::validation(
            subject,
            format!("date {date:?} is not YYYY-MM-DD"),
        ))
    }
}

/// Reads a JSON Lines file, skipping blank lines.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path).map_err(Error::file(path))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(Error::file(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Writes records as JSON Lines.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r)?);
        buf.push('\n');
    }
    std::fs::write(path, buf).map_err(Error::file(path))?;
    Ok(())
}

pub fn ingest_corpus(sources_path: &Path, articles_path: &Path) -> Result<Corpus> {
    let sources = read_jsonl(sources_path)?;
    let articles = read_jsonl(articles_path)?;
    Corpus::from_records(sources, articles)
}

/// Title plus every sentence strictly before the quoting sentence.
pub fn build_quote_query(article: &Article, quote: &AlignedQuote) -> Result<QuoteQuery> {
    if quote.article_id != article.id {
        return Err(Error::validation(
            &quote.id,
            format!(
                "quote belongs to {:?}, not {:?}",
                quote.article_id, article.id
            ),
        ));
    }
    let idx = quote.quote_sentence_index;
    if idx >= article.sentences.len() {
        return Err(Error::OutOfRange {
            what: "quote sentence",
            index: idx,
            len: article.sentences.len(),
        });
    }
    let left_context = article.sentences[..idx].iter().flatten().cloned().collect();
    Ok(QuoteQuery::new(article.title.clone(), left_context))
}

/// Assigns each quote to train/dev/test by its source's date. Boundaries are
/// inclusive: `date <= train_end` is train, `date <= dev_end` is dev.
pub fn split_by_date(
    corpus: &Corpus,
    train_end: &str,
    dev_end: &str,
) -> Result<(DatasetSplit, DatasetSplit, DatasetSplit)> {
    check_date("train_end", train_end)?;
    check_date("dev_end", dev_end)?;
    if train_end >= dev_end {
        return Err(Error::Config(format!(
            "train_end {train_end} must precede dev_end {dev_end}"
        )));
    }
    let assign = |date: &str| {
        if date <= train_end {
            SplitName::Train
        } else if date <= dev_end {
            SplitName::Dev
        } else {
            SplitName::Test
        }
    };
    let mut by_article: BTreeMap<&str, BTreeSet<SplitName>> = BTreeMap::new();
    let mut splits = [
        DatasetSplit {
            name: SplitName::Train,
            quotes: vec![],
        },
        DatasetSplit {
            name: SplitName::Dev,
            quotes: vec![],
        },
        DatasetSplit {
            name: SplitName::Test,
            quotes: vec![],
        },
    ];
    for q in corpus.quotes() {
        let name = assign(&corpus.sources[&q.source_id].date);
        by_article.entry(&q.article_id).or_default().insert(name);
        splits[name as usize].quotes.push(q.id.clone());
    }
    let offenders: Vec<String> = by_article
        .into_iter()
        .filter(|(_, s)| s.len() > 1)
        .map(|(a, _)| a.to_string())
        .collect();
    if !offenders.is_empty() {
        return Err(Error::SplitViolation { offenders });
    }
    let [train, dev, test] = splits;
    Ok((train, dev, test))
}

/// Splits a quote into one record per positive paragraph, each carrying its
/// part of the span in paragraph-local offsets.
pub fn expand_multiparagraph(quote: &AlignedQuote, doc: &SourceDocument) -> Vec<ParagraphSpan> {
    let (start, end) = quote.positive_span;
    let mut offset = 0;
    let mut out = Vec::with_capacity(quote.positive_paragraphs.len());
    for &p in &quote.positive_paragraphs {
        let len = doc.paragraphs[p].tokens.len();
        let lo = start.max(offset);
        let hi = end.min(offset + len - 1);
        if lo <= hi {
            out.push(ParagraphSpan {
                paragraph: p,
                span: (lo - offset, hi - offset),
            });
        }
        offset += len;
    }
    out
}

/// Gold quote tokens, one list per positive paragraph in paragraph order.
pub fn gold_span_tokens(quote: &AlignedQuote, doc: &SourceDocument) -> Vec<Tokens> {
    expand_multiparagraph(quote, doc)
        .into_iter()
        .map(|ps| doc.paragraphs[ps.paragraph].tokens[ps.span.0..=ps.span.1].to_vec())
        .collect()
}

/// Joins tokens with single spaces.
pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Lowercasing word tokenizer for raw request text: splits on whitespace and
/// separates punctuation characters into their own tokens.
pub fn simple_tokenize(text: &str) -> Tokens {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if ch.is_ascii_punctuation() && ch != '\'' && ch != '_' {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        } else {
            cur.extend(ch.to_lowercase());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Tokens {
        s.split_whitespace().map(String::from).collect()
    }

    fn article(n_sent: usize) -> Article {
        Article {
            id: "a".into(),
            date: "2013-01-02".into(),
            title: toks("the title"),
            sentences: (0..n_sent).map(|i| toks(&format!("s{i} w{i}"))).collect(),
            source_id: "s".into(),
        }
    }

    fn quote(sentence: usize) -> AlignedQuote {
        AlignedQuote {
            id: format!("a#{sentence}"),
            article_id: "a".into(),
            source_id: "s".into(),
            quote_sentence_index: sentence,
            positive_paragraphs: vec![0],
            positive_span: (0, 0),
        }
    }

    #[test]
    fn query_in_first_sentence_is_title_only() {
        let q = build_quote_query(&article(3), &quote(0)).unwrap();
        assert_eq!(q.title, toks("the title"));
        assert!(q.left_context.is_empty());
    }

    #[test]
    fn query_context_stops_before_quoting_sentence() {
        let q = build_quote_query(&article(5), &quote(2)).unwrap();
        assert_eq!(q.left_context, toks("s0 w0 s1 w1"));
    }

    #[test]
    fn two_quotes_give_nested_contexts() {
        let a = article(5);
        let q1 = build_quote_query(&a, &quote(1)).unwrap();
        let q3 = build_quote_query(&a, &quote(3)).unwrap();
        assert_ne!(q1, q3);
        assert!(q3.left_context.starts_with(&q1.left_context));
    }

    #[test]
    fn query_sentence_out_of_range() {
        assert!(build_quote_query(&article(2), &quote(2)).is_err());
    }

    #[test]
    fn expansion_of_single_paragraph_is_identity() {
        let doc = SourceDocument::new("s", "2013-01-01", vec![toks("a b c"), toks("d e")]).unwrap();
        let mut q = quote(0);
        q.positive_paragraphs = vec![1];
        q.positive_span = (0, 1);
        let recs = expand_multiparagraph(&q, &doc);
        assert_eq!(
            recs,
            vec![ParagraphSpan {
                paragraph: 1,
                span: (0, 1)
            }]
        );
    }

    #[test]
    fn expansion_splits_at_paragraph_boundary() {
        let paras: Vec<Tokens> = (0..6)
            .map(|i| toks(&format!("p{i}a p{i}b p{i}c")))
            .collect();
        let doc = SourceDocument::new("s", "2013-01-01", paras).unwrap();
        let mut q = quote(0);
        q.positive_paragraphs = vec![4, 5];
        q.positive_span = (1, 4);
        let recs = expand_multiparagraph(&q, &doc);
        assert_eq!(
            recs,
            vec![
                ParagraphSpan {
                    paragraph: 4,
                    span: (1, 2)
                },
                ParagraphSpan {
                    paragraph: 5,
                    span: (0, 1)
                },
            ]
        );
        let gold = gold_span_tokens(&q, &doc);
        assert_eq!(gold.concat(), toks("p4b p4c p5a p5b"));
    }

    #[test]
    fn simple_tokenizer_lowercases_and_splits_punctuation() {
        assert_eq!(
            simple_tokenize("Hello, World! It's  fine."),
            toks("hello , world ! it's fine .")
        );
    }

    #[test]
    fn bad_date_rejected() {
        assert!(SourceDocument::new("s", "2013/01/01", vec![toks("a")]).is_err());
    }
}
