//! Trains the paragraph ranker and the shared-norm span model on the
//! synthetic corpus and prints train and dev numbers next to the lexical
//! baselines.

use std::time::Instant;

use quotefuse::corpus::split_by_date;
use quotefuse::encoder::build_vocab;
use quotefuse::fusion::{grid_search, FusionMetric, FusionWeights};
use quotefuse::metrics::RunEvaluation;
use quotefuse::pipeline::{baseline_run, gold_records, split_outputs, Baseline};
use quotefuse::synth::{overfit_train_config, synthetic_corpus, SynthConfig, DEV_END, TRAIN_END};
use quotefuse::trainer::{train, ModelKind, TrainData};

fn main() -> quotefuse::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let corpus = synthetic_corpus(SynthConfig::default())?;
    let (train_split, dev, _test) = split_by_date(&corpus, TRAIN_END, DEV_END)?;
    let vocab = build_vocab(corpus.split_token_sequences(&train_split), 200)?;
    let data = TrainData {
        corpus: &corpus,
        train: &train_split,
        dev: &dev,
        vocab: &vocab,
    };

    let t = Instant::now();
    let para = train(&data, &overfit_train_config(ModelKind::Paragraph, seed))?;
    println!("paragraph model trained in {:.1?}", t.elapsed());
    let t = Instant::now();
    let span = train(
        &data,
        &overfit_train_config(ModelKind::SpanSharedNorm, seed),
    )?;
    println!("shared-norm model trained in {:.1?}", t.elapsed());

    let train_out = split_outputs(&corpus, &train_split, Some(&para), Some(&span))?;
    let train_gold = gold_records(&corpus, &train_split)?;
    let p_runs: Vec<_> = train_out
        .iter()
        .map(|o| o.paragraph_run())
        .collect::<Result<_, _>>()?;
    let s_runs: Vec<_> = train_out
        .iter()
        .map(|o| o.span_run())
        .collect::<Result<_, _>>()?;
    let p_eval = RunEvaluation::compute(&p_runs, &train_gold)?;
    let s_eval = RunEvaluation::compute(&s_runs, &train_gold)?;
    println!("train Acc@1 (paragraph) {:.3}", p_eval.ranking.acc[&1]);
    println!("train EM top (shared-norm) {:.3}", s_eval.top.em);

    let dev_out = split_outputs(&corpus, &dev, Some(&para), Some(&span))?;
    let dev_gold = gold_records(&corpus, &dev)?;
    let posteriors: Vec<_> = dev_out
        .iter()
        .map(|o| o.posteriors())
        .collect::<Result<_, _>>()?;
    let grid = grid_search(&posteriors, FusionMetric::Map)?;
    println!(
        "fusion weights {:?} (dev mAP {:.3})",
        grid.weights, grid.best_value
    );
    let map = |runs: Vec<_>| RunEvaluation::compute(&runs, &dev_gold).map(|e| e.ranking.map);
    let fused_with = |w| {
        dev_out
            .iter()
            .map(|o| o.fused_run(w))
            .collect::<Result<Vec<_>, _>>()
    };
    println!("dev mAP fused {:.3}", map(fused_with(grid.weights)?)?);
    println!(
        "dev mAP paragraph {:.3}",
        map(fused_with(FusionWeights::PARAGRAPH_ONLY)?)?
    );
    println!(
        "dev mAP span {:.3}",
        map(fused_with(FusionWeights::SPAN_ONLY)?)?
    );
    println!(
        "dev mAP bm25 {:.3}",
        map(baseline_run(&corpus, &dev, Baseline::Bm25)?)?
    );
    println!(
        "dev mAP tfidf {:.3}",
        map(baseline_run(&corpus, &dev, Baseline::Tfidf)?)?
    );
    Ok(())
}
