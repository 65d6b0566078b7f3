//! Runs the no-title and reduced-context ablations with small models on the
//! synthetic corpus and prints the delta table.

use quotefuse::corpus::split_by_date;
use quotefuse::encoder::build_vocab;
use quotefuse::fusion::FusionWeights;
use quotefuse::synth::{synthetic_corpus, SynthConfig, DEV_END, TRAIN_END};
use quotefuse::trainer::{run_ablation, train, AblationVariant, ModelKind, TrainConfig, TrainData};

fn main() -> quotefuse::Result<()> {
    let corpus = synthetic_corpus(SynthConfig::default())?;
    let (train_split, dev, test) = split_by_date(&corpus, TRAIN_END, DEV_END)?;
    let vocab = build_vocab(corpus.split_token_sequences(&train_split), 200)?;
    let data = TrainData {
        corpus: &corpus,
        train: &train_split,
        dev: &dev,
        vocab: &vocab,
    };
    let small = |kind| TrainConfig {
        model_kind: kind,
        hidden_size: 32,
        layers: 1,
        heads: 2,
        ff_size: 64,
        max_epochs: 2,
        batch_size: 4,
        n_negatives: 4,
        learning_rate: 1e-3,
        dropout: 0.0,
        ..TrainConfig::default()
    };
    let para = train(&data, &small(ModelKind::Paragraph))?;
    let span = train(&data, &small(ModelKind::SpanSharedNorm))?;
    let report = run_ablation(
        &data,
        &test,
        &para,
        &span,
        FusionWeights {
            alpha: 1.0,
            beta: 1.0,
        },
        &AblationVariant::standard(),
    )?;
    print!("{}", report.render());
    Ok(())
}
