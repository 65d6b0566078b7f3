//! BM25 and TF-IDF scores against hand-evaluated formulas.

mod common;

use common::{ref_bm25, toks, toy_document, TOY_BM25, TOY_TFIDF};
use quotefuse::pararank::{baseline_query_terms, bm25_rank, tfidf_rank, Bm25Scorer, TfIdfIndex};

#[test]
fn baseline_terms_are_title_plus_context() {
    let (_, query) = toy_document();
    assert_eq!(
        baseline_query_terms(&query),
        toks("economy border we discuss the growing economy and border security today")
    );
}

#[test]
fn bm25_matches_literal_values() {
    let (doc, query) = toy_document();
    let got = Bm25Scorer::default().scores(&baseline_query_terms(&query), &doc);
    for (g, w) in got.iter().zip(TOY_BM25) {
        assert!((g - w).abs() < 1e-9, "{got:?}");
    }
}

#[test]
fn bm25_matches_direct_evaluation() {
    let (doc, query) = toy_document();
    let paragraphs: Vec<Vec<String>> = doc.paragraphs.iter().map(|p| p.tokens.clone()).collect();
    let terms = baseline_query_terms(&query);
    for (k1, b) in [(1.2, 0.75), (0.9, 0.4), (2.0, 1.0)] {
        let got = Bm25Scorer { k1, b }.scores(&terms, &doc);
        let want = ref_bm25(&terms, &paragraphs, k1, b);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "k1 {k1} b {b}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn tfidf_matches_literal_values() {
    let (doc, query) = toy_document();
    let got = TfIdfIndex::new(&doc).cosine_scores(&baseline_query_terms(&query));
    for (g, w) in got.iter().zip(TOY_TFIDF) {
        assert!((g - w).abs() < 1e-9, "{got:?}");
    }
}

#[test]
fn tfidf_idf_formula() {
    let (doc, _) = toy_document();
    let index = TfIdfIndex::new(&doc);
    assert!((index.idf("economy") - ((4.0f64 / 3.0).ln() + 1.0)).abs() < 1e-15);
    assert!((index.idf("priority") - (2.0f64.ln() + 1.0)).abs() < 1e-15);
    assert!((index.idf("absent") - (4.0f64.ln() + 1.0)).abs() < 1e-15);
}

#[test]
fn rankings_follow_scores() {
    let (doc, query) = toy_document();
    assert_eq!(bm25_rank(&query, &doc, 1.2, 0.75).order(), vec![1, 0, 2]);
    assert_eq!(tfidf_rank(&query, &doc).order(), vec![2, 0, 1]);
}

#[test]
fn scoring_is_case_insensitive() {
    let (doc, query) = toy_document();
    let upper: Vec<String> = baseline_query_terms(&query)
        .iter()
        .map(|t| t.to_uppercase())
        .collect();
    assert_eq!(
        Bm25Scorer::default().scores(&upper, &doc),
        Bm25Scorer::default().scores(&baseline_query_terms(&query), &doc)
    );
}
