//! HTTP contract of the recommendation service, exercised in-process.

mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use common::Synthetic;
use http_body_util::BodyExt;
use quotefuse::corpus::{QuoteQuery, SourceRecord};
use quotefuse::fusion::FusionWeights;
use quotefuse::pipeline::{order_by_score, paragraph_scores, QuoteRecommender};
use quotefuse::recsvc::{router, AppState};
use quotefuse::trainer::ModelKind;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(
    app: &axum::Router,
    method: Method,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

struct Fixture {
    _dir: tempfile::TempDir,
    state: Arc<AppState>,
    app: axum::Router,
    synth: Synthetic,
}

fn fixture(weights: Option<FusionWeights>) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let state = Arc::new(AppState::open(dir.path()).unwrap());
    let synth = Synthetic::new();
    if let Some(w) = weights {
        let model = QuoteRecommender::new(
            synth.untrained(ModelKind::Paragraph, 1),
            synth.untrained(ModelKind::SpanSharedNorm, 2),
            w,
        )
        .unwrap();
        state.install_model(model);
    }
    Fixture {
        app: router(state.clone()),
        _dir: dir,
        state,
        synth,
    }
}

fn source_json(f: &Fixture, id: &str) -> Value {
    serde_json::to_value(f.synth.corpus.source(id).unwrap().to_record()).unwrap()
}

#[tokio::test]
async fn index_then_recommend_round_trip() {
    let f = fixture(Some(FusionWeights {
        alpha: 1.0,
        beta: 1.0,
    }));
    let (status, body) = call(
        &f.app,
        Method::POST,
        "/sources",
        Some(source_json(&f, "src15")),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body, json!({"id": "src15"}));

    let (status, body) = call(&f.app, Method::GET, "/sources/src15", None).await;
    assert_eq!(status, StatusCode::OK);
    let record: SourceRecord = serde_json::from_value(body).unwrap();
    assert_eq!(record, f.synth.corpus.source("src15").unwrap().to_record());

    let (status, body) = call(&f.app, Method::GET, "/sources", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["sources"][0]["id"], "src15");
    assert_eq!(body["sources"][0]["paragraphs"], 10);

    let req = json!({"source_id": "src15", "title": "energy policy", "context": "we talked about energy", "top_k": 3});
    let (status, body) = call(&f.app, Method::POST, "/recommend", Some(req)).await;
    assert_eq!(status, StatusCode::OK);
    let recs = body["recommendations"].as_array().unwrap();
    assert_eq!(recs.len(), 3);
    let fused: Vec<f64> = recs.iter().map(|r| r["fused"].as_f64().unwrap()).collect();
    assert!(fused.windows(2).all(|w| w[0] >= w[1]), "{fused:?}");
    for r in recs {
        let p = r["p_paragraph"].as_f64().unwrap() * r["p_span"].as_f64().unwrap();
        assert!((r["fused"].as_f64().unwrap() - p).abs() <= 1e-12 * p.max(1e-300));
        let span = &r["span"];
        let (a, b) = (
            span["token_start"].as_u64().unwrap(),
            span["token_end"].as_u64().unwrap(),
        );
        assert!(a < b);
        let para = &f.synth.corpus.source("src15").unwrap().paragraphs
            [r["paragraph_index"].as_u64().unwrap() as usize];
        assert_eq!(span["text"], para.tokens[a as usize..=b as usize].join(" "));
    }
}

#[tokio::test]
async fn top_k_is_clamped_and_spans_optional() {
    let f = fixture(Some(FusionWeights {
        alpha: 1.0,
        beta: 1.0,
    }));
    call(
        &f.app,
        Method::POST,
        "/sources",
        Some(source_json(&f, "src00")),
    )
    .await;
    let req = json!({"source_id": "src00", "title": "x", "context": "y", "top_k": 50, "include_spans": false});
    let (status, body) = call(&f.app, Method::POST, "/recommend", Some(req)).await;
    assert_eq!(status, StatusCode::OK);
    let recs = body["recommendations"].as_array().unwrap();
    assert_eq!(recs.len(), 10);
    assert!(recs.iter().all(|r| r["span"].is_null()));
    let mut seen: Vec<u64> = recs
        .iter()
        .map(|r| r["paragraph_index"].as_u64().unwrap())
        .collect();
    seen.sort_unstable();
    assert_eq!(seen, (0..10).collect::<Vec<_>>());

    let (_, body) = call(
        &f.app,
        Method::POST,
        "/recommend",
        Some(json!({"source_id": "src00"})),
    )
    .await;
    assert_eq!(body["recommendations"].as_array().unwrap().len(), 5);
}

#[tokio::test]
async fn paragraph_only_weights_follow_paragraph_scores() {
    let f = fixture(Some(FusionWeights::PARAGRAPH_ONLY));
    let model = f.state.model().unwrap();
    for id in ["src15", "src16", "src17"] {
        call(&f.app, Method::POST, "/sources", Some(source_json(&f, id))).await;
        let (title, context) = (
            "trade talks",
            "the minister spoke about trade and wages today",
        );
        let req = json!({"source_id": id, "title": title, "context": context, "top_k": 10});
        let (_, body) = call(&f.app, Method::POST, "/recommend", Some(req)).await;
        let got: Vec<usize> = body["recommendations"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r["paragraph_index"].as_u64().unwrap() as usize)
            .collect();
        let doc = f.synth.corpus.source(id).unwrap();
        let scores = paragraph_scores(
            &model.paragraph,
            &QuoteQuery::from_text(title, context),
            doc,
        )
        .unwrap();
        assert_eq!(got, order_by_score(&scores));
    }
}

#[tokio::test]
async fn error_statuses() {
    let f = fixture(None);
    let (status, body) = call(&f.app, Method::GET, "/healthz", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok", "model_loaded": false}));

    let (status, body) = call(
        &f.app,
        Method::POST,
        "/recommend",
        Some(json!({"source_id": "nope"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "not_found");
    let (status, _) = call(&f.app, Method::GET, "/sources/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    call(
        &f.app,
        Method::POST,
        "/sources",
        Some(source_json(&f, "src01")),
    )
    .await;
    let (status, body) = call(
        &f.app,
        Method::POST,
        "/recommend",
        Some(json!({"source_id": "src01"})),
    )
    .await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["error"], "service_unavailable");

    let (status, body) = call(
        &f.app,
        Method::POST,
        "/sources",
        Some(source_json(&f, "src01")),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "conflict");

    let bad = json!({"id": "../evil", "date": "2020-01-01", "paragraphs": [["a"]]});
    let (status, body) = call(&f.app, Method::POST, "/sources", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "validation");
    let empty = json!({"id": "e", "date": "2020-01-01", "paragraphs": []});
    assert_eq!(
        call(&f.app, Method::POST, "/sources", Some(empty)).await.0,
        StatusCode::UNPROCESSABLE_ENTITY
    );

    let (status, body) = call(&f.app, Method::POST, "/sources", Some(json!({"id": 3}))).await;
    assert!(status.is_client_error(), "{status}");
    assert!(body["detail"].is_string());
    let (status, _) = call(
        &f.app,
        Method::POST,
        "/recommend",
        Some(json!({"source_id": "src01", "bogus": 1})),
    )
    .await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn zero_top_k_is_a_validation_error() {
    let f = fixture(Some(FusionWeights::PARAGRAPH_ONLY));
    call(
        &f.app,
        Method::POST,
        "/sources",
        Some(source_json(&f, "src02")),
    )
    .await;
    let (status, body) = call(
        &f.app,
        Method::POST,
        "/recommend",
        Some(json!({"source_id": "src02", "top_k": 0})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "validation");
}

#[tokio::test]
async fn persisted_model_and_sources_survive_restart() {
    let f = fixture(None);
    let dir = tempfile::tempdir().unwrap();
    let (pp, sp) = (dir.path().join("p.qfck"), dir.path().join("s.qfck"));
    f.synth
        .untrained(ModelKind::Paragraph, 1)
        .save(&pp)
        .unwrap();
    f.synth
        .untrained(ModelKind::SpanSharedNorm, 2)
        .save(&sp)
        .unwrap();
    assert!(f
        .state
        .load_model_files(&sp, &pp, FusionWeights::PARAGRAPH_ONLY, true)
        .is_err());
    assert!(f.state.model().is_none());
    f.state
        .load_model_files(
            &pp,
            &sp,
            FusionWeights {
                alpha: 1.5,
                beta: 0.5,
            },
            true,
        )
        .unwrap();
    f.state
        .index_source(f.synth.corpus.source("src03").unwrap().to_record())
        .unwrap();

    let reopened = AppState::open(f._dir.path()).unwrap();
    assert_eq!(
        reopened.model().unwrap().weights,
        FusionWeights {
            alpha: 1.5,
            beta: 0.5
        }
    );
    assert_eq!(reopened.sources().len(), 1);
    let app = router(Arc::new(reopened));
    let (_, body) = call(&app, Method::GET, "/healthz", None).await;
    assert_eq!(body["model_loaded"], true);
}
