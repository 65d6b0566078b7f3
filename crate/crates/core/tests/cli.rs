//! Command-line interface: exit codes and the file-based pipeline.

mod common;

use common::{cli, cli_ok, cli_pipeline, TINY_FLAGS};
use quotefuse::corpus::{read_jsonl, write_jsonl};
use quotefuse::metrics::{EvaluationReport, GoldRecord, PredictionRecord};
use quotefuse::synth::{DEV_END, TRAIN_END};
use serde_json::Value;

#[test]
fn usage_errors_exit_2() {
    assert_eq!(cli(["bogus"]).code, 2);
    assert_eq!(cli::<[&str; 0], &str>([]).code, 2);
    assert_eq!(cli(["evaluate", "--run", "x.jsonl"]).code, 2);
    assert_eq!(
        cli(["fuse", "--dev-cache", "c.jsonl", "--metric", "nope"]).code,
        2
    );
    assert_eq!(cli(["--help"]).code, 0);
    assert_eq!(cli(["--version"]).code, 0);
}

#[test]
fn operation_errors_exit_1_and_name_the_file() {
    let out = cli([
        "evaluate",
        "--run",
        "/nonexistent/run.jsonl",
        "--gold",
        "/nonexistent/gold.jsonl",
    ]);
    assert_eq!(out.code, 1);
    assert!(out.stderr.contains("/nonexistent/"), "{}", out.stderr);

    let dir = tempfile::tempdir().unwrap();
    cli_ok(dir.path(), "synth --out {d}");
    let bad_split = format!(
        "--sources {0}/sources.jsonl --articles {0}/articles.jsonl --train-end {DEV_END} --dev-end {TRAIN_END}",
        dir.path().display()
    );
    let argv: Vec<String> = format!("split {bad_split} --out {}/s", dir.path().display())
        .split_whitespace()
        .map(String::from)
        .collect();
    assert_eq!(cli(&argv).code, 1);
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let report: EvaluationReport = serde_json::from_slice(&cli_pipeline(d)).unwrap();
    assert_eq!(report.split, "test");
    assert!(!report.significance.is_empty());

    let stats: Value =
        serde_json::from_slice(&std::fs::read(d.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["quotes"], 200);
    for split in ["train", "dev", "test"] {
        assert!(d.join(format!("splits/{split}.gold.jsonl")).exists());
    }

    let fuse = cli_ok(d, "fuse --dev-cache {d}/dev/posteriors.jsonl");
    let fuse: Value = serde_json::from_str(&fuse).unwrap();
    assert_eq!(fuse["points"], 441);

    // a perfect run scores mAP 1 and EM 1
    let gold: Vec<GoldRecord> = read_jsonl(&d.join("test/gold.jsonl")).unwrap();
    let perfect: Vec<PredictionRecord> = gold
        .iter()
        .map(|g| {
            let n = 10;
            let mut ranking = g.positive_paragraphs.clone();
            ranking.extend((0..n).filter(|p| !g.positive_paragraphs.contains(p)));
            let mut spans = vec![vec![]; n];
            for (p, s) in g.positive_paragraphs.iter().zip(&g.gold_spans) {
                spans[*p] = s.clone();
            }
            PredictionRecord {
                quote_id: g.quote_id.clone(),
                ranking,
                spans,
            }
        })
        .collect();
    write_jsonl(&d.join("perfect.jsonl"), &perfect).unwrap();
    cli_ok(
        d,
        "evaluate --run {d}/perfect.jsonl --gold {d}/test/gold.jsonl --out {d}/perfect.json",
    );
    let r: Value = serde_json::from_slice(&std::fs::read(d.join("perfect.json")).unwrap()).unwrap();
    assert_eq!(r["map"], 1.0);
    assert_eq!(r["acc"]["1"], 1.0);
    assert_eq!(r["em"]["top"], 1.0);
    assert_eq!(r["f1"]["positive"], 1.0);

    let out = cli_ok(
        d,
        "recommend --paragraph-ckpt {d}/paragraph.qfck --span-ckpt {d}/span_shared_norm.qfck \
         --sources {d}/sources.jsonl --source-id src18 --title energy --context discussed --top-k 2",
    );
    let rec: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(rec["recommendations"].as_array().unwrap().len(), 2);

    let out = cli(
        format!(
            "recommend --paragraph-ckpt {0}/paragraph.qfck --span-ckpt {0}/span_shared_norm.qfck --sources {0}/sources.jsonl --source-id missing",
            d.display()
        )
        .split_whitespace(),
    );
    assert_eq!(out.code, 1);

    cli_ok(
        d,
        "sample-misranked --sources {d}/sources.jsonl --articles {d}/articles.jsonl --run {d}/test/fused.jsonl \
         --gold {d}/test/gold.jsonl --vocab {d}/vocab.txt --n 5 --out {d}/misranked.jsonl",
    );
    assert!(d.join("misranked.jsonl").exists());
}

#[test]
fn grid_search_subcommand_writes_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let split = format!("--sources {{d}}/sources.jsonl --articles {{d}}/articles.jsonl --train-end {TRAIN_END} --dev-end {DEV_END}");
    cli_ok(d, "synth --out {d}");
    cli_ok(
        d,
        &format!("build-vocab {split} --vocab-size 200 --out {{d}}/vocab.txt"),
    );
    let table = cli_ok(
        d,
        &format!(
            "grid-search {split} --vocab {{d}}/vocab.txt {TINY_FLAGS} --batch-sizes 8,16 --lrs 0.001 --negatives 3 --out {{d}}/best.qfck"
        ),
    );
    let table: Value = serde_json::from_str(&table).unwrap();
    assert_eq!(table.as_array().unwrap().len(), 2, "{table}");
    let best = quotefuse::checkpoint::Checkpoint::load(&d.join("best.qfck")).unwrap();
    assert!([8, 16].contains(&best.config.batch_size));
}
