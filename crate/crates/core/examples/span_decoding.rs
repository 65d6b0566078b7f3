//! Shared-normalization span probabilities over several packed inputs and
//! best-span decoding inside one paragraph range.

use quotefuse::spanpred::{
    decode_best_span, shared_norm_loss, shared_probabilities, DecodeOptions, SpanLogits,
};

fn main() -> quotefuse::Result<()> {
    // two inputs of eight positions; paragraph pieces occupy positions 3..=6
    let pairs = vec![
        SpanLogits {
            start: vec![0.0, 0.0, 0.0, 0.5, 2.5, 0.1, -1.0, 0.0],
            end: vec![0.0, 0.0, 0.0, -1.0, 0.3, 0.2, 2.0, 0.0],
        },
        SpanLogits {
            start: vec![0.0, 0.0, 0.0, 1.5, 0.0, 0.0, 0.0, 0.0],
            end: vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        },
    ];
    let range = (3, 6);
    let (ps, pe) = shared_probabilities(&pairs);
    let total: f64 = ps.iter().flatten().sum();
    println!("shared start mass over both inputs: {total:.6}");
    for (k, (s, e)) in ps.iter().zip(&pe).enumerate() {
        let in_para: f64 = s[range.0..=range.1].iter().sum();
        println!(
            "input {k}: start mass in paragraph {in_para:.3}, end argmax {:?}",
            argmax(e)
        );
    }
    let loss = shared_norm_loss(&pairs, 0, (4, 6), range)?;
    println!("shared-norm loss with gold (4, 6) in input 0: {loss:.4}");

    for (k, p) in pairs.iter().enumerate() {
        let (i, j, score) = decode_best_span(&p.start, &p.end, range, DecodeOptions::default())?;
        println!("input {k}: best span ({i}, {j}) score {score:.2}");
    }
    let single = DecodeOptions {
        allow_equal: true,
        max_len: Some(1),
    };
    let (i, j, _) = decode_best_span(&pairs[0].start, &pairs[0].end, range, single)?;
    println!("single-piece span in input 0: ({i}, {j})");
    Ok(())
}

fn argmax(xs: &[f64]) -> usize {
    (0..xs.len()).fold(0, |b, i| if xs[i] > xs[b] { i } else { b })
}
