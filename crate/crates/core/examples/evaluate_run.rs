//! Evaluates two small runs against gold, prints the report tables and a
//! paired permutation test.

use quotefuse::metrics::{render_tables, GoldRecord, PredictionRecord, RunEvaluation};

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn main() -> quotefuse::Result<()> {
    let gold: Vec<GoldRecord> = (0..6)
        .map(|q| GoldRecord {
            quote_id: format!("q{q}"),
            positive_paragraphs: vec![q % 4],
            gold_spans: vec![words("we will never give up")],
        })
        .collect();
    let run = |shift: usize, span: &str| -> Vec<PredictionRecord> {
        gold.iter()
            .enumerate()
            .map(|(q, g)| {
                let mut ranking: Vec<usize> = (0..4).collect();
                ranking.rotate_left((g.positive_paragraphs[0] + 4 - (q * shift) % 4) % 4);
                PredictionRecord {
                    quote_id: g.quote_id.clone(),
                    ranking,
                    spans: vec![words(span); 4],
                }
            })
            .collect()
    };
    let strong = RunEvaluation::compute(&run(0, "we will never give up"), &gold)?;
    let weak = RunEvaluation::compute(&run(1, "we will give"), &gold)?;
    let mut report = strong.report("strong", "demo");
    report.significance = strong.significance_against(&weak, "weak", 0)?;
    print!(
        "{}",
        render_tables(&[weak.report("weak", "demo"), report.clone()])
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&report.significance).expect("serializable")
    );
    Ok(())
}
