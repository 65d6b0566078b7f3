//! Fuses paragraph and span posteriors and searches the 21 x 21 weight grid
//! on a tiny dev set.

use quotefuse::fusion::{
    fused_order, grid_search, paragraph_posteriors, span_posteriors, FusionMetric, FusionWeights,
    PosteriorRecord,
};

fn main() -> quotefuse::Result<()> {
    let record = |id: &str, para: &[f64], span: &[f64], positive: usize| PosteriorRecord {
        quote_id: id.into(),
        p_paragraph: paragraph_posteriors(para),
        p_span: span_posteriors(span),
        best_spans: vec![None; para.len()],
        positive_paragraphs: vec![positive],
        span_tokens: None,
        gold_tokens: None,
    };
    let dev = vec![
        record("a", &[2.0, 1.0, 0.0], &[0.0, 3.0, 0.0], 1),
        record("b", &[0.0, 2.5, 0.0], &[1.0, 0.5, 0.0], 1),
        record("c", &[1.0, 0.0, 0.8], &[0.0, 0.0, 2.0], 2),
    ];
    for w in [
        FusionWeights::PARAGRAPH_ONLY,
        FusionWeights::SPAN_ONLY,
        FusionWeights {
            alpha: 1.0,
            beta: 1.0,
        },
    ] {
        let orders: Vec<_> = dev
            .iter()
            .map(|r| fused_order(&r.p_span, &r.p_paragraph, w))
            .collect();
        println!("alpha {} beta {}: {orders:?}", w.alpha, w.beta);
    }
    let result = grid_search(&dev, FusionMetric::Map)?;
    println!(
        "best (alpha, beta) = ({}, {}) with dev mAP {:.3} over {} grid points",
        result.weights.alpha,
        result.weights.beta,
        result.best_value,
        result.evaluated()
    );
    Ok(())
}
