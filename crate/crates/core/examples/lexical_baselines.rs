//! Scores a small source document with BM25 and TF-IDF cosine for a quote
//! query and prints both rankings.

use quotefuse::corpus::{QuoteQuery, SourceDocument};
use quotefuse::pararank::{baseline_query_terms, rank, Bm25Scorer, TfIdfIndex};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn main() -> quotefuse::Result<()> {
    let doc = SourceDocument::new(
        "speech",
        "2020-01-01",
        vec![
            words("the economy is growing and the economy is strong"),
            words("border security is a priority"),
            words("the economy and the border"),
        ],
    )?;
    let query = QuoteQuery::new(
        words("economy border"),
        words("we discuss the growing economy and border security today"),
    );
    let terms = baseline_query_terms(&query);
    println!("query terms: {}", terms.join(" "));

    let bm25 = Bm25Scorer::default().scores(&terms, &doc);
    let tfidf = TfIdfIndex::new(&doc).cosine_scores(&terms);
    for (name, scores) in [("bm25", &bm25), ("tfidf", &tfidf)] {
        println!("{name:>5}: order {:?}", rank(scores).order());
        for (i, s) in scores.iter().enumerate() {
            println!("       paragraph {i}: {s:.6}");
        }
    }
    Ok(())
}
