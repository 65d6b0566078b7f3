//! Draws negatives for one synthetic training quote under each sampling
//! scheme and assembles the listwise example.

use quotefuse::corpus::split_by_date;
use quotefuse::sampling::{assemble_example, sampling_weights, SamplingConfig, SamplingScheme};
use quotefuse::synth::{synthetic_corpus, SynthConfig, DEV_END, TRAIN_END};

fn main() -> quotefuse::Result<()> {
    let corpus = synthetic_corpus(SynthConfig::default())?;
    let (train, _, _) = split_by_date(&corpus, TRAIN_END, DEV_END)?;
    let (query, doc, quote) = corpus.resolve(&train.quotes[0])?;
    let positive = quote.positive_paragraphs[0];
    println!("quote {} -> paragraph {positive} of {}", quote.id, doc.id);
    for scheme in [
        SamplingScheme::Uniform,
        SamplingScheme::Tfidf,
        SamplingScheme::Positional,
    ] {
        let w = sampling_weights(doc, positive, scheme, &query);
        let ex = assemble_example(
            &query,
            doc,
            positive,
            quote.positive_span,
            &SamplingConfig::new(4, scheme, 7)?,
        )?;
        let w: Vec<String> = w.iter().map(|x| format!("{x:.2}")).collect();
        println!("{scheme:?}: weights [{}]", w.join(", "));
        println!(
            "    example paragraphs {:?}, positive at position {}",
            ex.paragraphs, ex.positive_position
        );
    }
    Ok(())
}
