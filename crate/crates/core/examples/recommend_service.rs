//! Indexes a synthetic source in a temporary store, installs a freshly
//! initialized model and sends one recommendation request through the HTTP
//! router in-process. `quotefuse serve` runs the same router on a port.

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use http_body_util::BodyExt;
use quotefuse::checkpoint::Checkpoint;
use quotefuse::corpus::split_by_date;
use quotefuse::encoder::build_vocab;
use quotefuse::fusion::FusionWeights;
use quotefuse::pipeline::QuoteRecommender;
use quotefuse::recsvc::{router, AppState};
use quotefuse::synth::{synthetic_corpus, SynthConfig, DEV_END, TRAIN_END};
use quotefuse::trainer::{init_model, ModelKind, TrainConfig};
use tower::ServiceExt;

#[tokio::main(flavor = "current_thread")]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let corpus = synthetic_corpus(SynthConfig::default())?;
    let (train, _, _) = split_by_date(&corpus, TRAIN_END, DEV_END)?;
    let vocab = build_vocab(corpus.split_token_sequences(&train), 200)?;
    let untrained = |kind| -> quotefuse::Result<Checkpoint> {
        let config = TrainConfig::for_kind(kind);
        Ok(Checkpoint {
            model: init_model(&config, vocab.len())?,
            config,
            vocab: vocab.clone(),
            history: vec![],
            best_epoch: 0,
        })
    };

    let dir = tempfile::tempdir()?;
    let state = Arc::new(AppState::open(dir.path())?);
    state.install_model(QuoteRecommender::new(
        untrained(ModelKind::Paragraph)?,
        untrained(ModelKind::SpanSharedNorm)?,
        FusionWeights {
            alpha: 1.0,
            beta: 1.0,
        },
    )?);
    let app = router(state);

    let source = serde_json::to_string(
        &corpus
            .source("src18")
            .expect("synthetic source")
            .to_record(),
    )?;
    let post = |uri: &str, body: String| {
        Request::post(uri)
            .header("content-type", "application/json")
            .body(Body::from(body))
            .expect("request")
    };
    let resp = app.clone().oneshot(post("/sources", source)).await?;
    println!("POST /sources -> {}", resp.status());
    let req = r#"{"source_id": "src18", "title": "energy", "context": "she spoke about energy", "top_k": 3}"#;
    let resp = app.oneshot(post("/recommend", req.into())).await?;
    println!("POST /recommend -> {}", resp.status());
    let body: serde_json::Value =
        serde_json::from_slice(&resp.into_body().collect().await?.to_bytes())?;
    println!("{}", serde_json::to_string_pretty(&body)?);
    Ok(())
}
