//! HTTP recommendation service: a directory-backed source store, a
//! swappable fused model and the JSON API over both.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::checkpoint::Checkpoint;
use crate::corpus::{detokenize, QuoteQuery, SourceDocument, SourceRecord};
use crate::error::{Error, Result};
use crate::fusion::FusionWeights;
use crate::pipeline::QuoteRecommender;

pub const DATA_DIR_ENV: &str = "QF_DATA_DIR";
pub const PORT_ENV: &str = "QF_PORT";
pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_TOP_K: usize = 5;

const PARAGRAPH_CKPT: &str = "paragraph.qfck";
const SPAN_CKPT: &str = "span.qfck";
const WEIGHTS_FILE: &str = "weights.json";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub port: u16,
}

impl ServiceConfig {
    /// Reads `QF_DATA_DIR` (default `./qf-data`) and `QF_PORT` (default 8080).
    pub fn from_env() -> Result<Self> {
        let data_dir =
            std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("qf-data"), PathBuf::from);
        let port = match std::env::var(PORT_ENV) {
            Ok(p) => p
                .parse()
                .map_err(|_| Error::Config(format!("{PORT_ENV}={p:?} is not a port number")))?,
            Err(_) => DEFAULT_PORT,
        };
        Ok(Self { data_dir, port })
    }
}

// ---------------------------------------------------------------------------
// Source store

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceSummary {
    pub id: String,
    pub date: String,
    pub paragraphs: usize,
}

/// Indexed source documents, one JSON file per source under `<root>/sources`.
#[derive(Debug)]
pub struct SourceStore {
    dir: PathBuf,
    docs: BTreeMap<String, Arc<SourceDocument>>,
}

/// Ids double as file names, so they are restricted to a portable alphabet.
fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::validation(
            id,
            "source id must be 1-128 characters of [A-Za-z0-9._-] not starting with '.'",
        ))
    }
}

impl SourceStore {
    /// Opens (creating if needed) the store and loads every persisted source.
    pub fn open(root: &Path) -> Result<Self> {
        let dir = root.join("sources");
        std::fs::create_dir_all(&dir)?;
        let mut docs = BTreeMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let record: SourceRecord = serde_json::from_slice(&std::fs::read(&path)?)?;
            let doc = SourceDocument::new(record.id, record.date, record.paragraphs)?;
            docs.insert(doc.id.clone(), Arc::new(doc));
        }
        info!(sources = docs.len(), dir = %dir.display(), "source store opened");
        Ok(Self { dir, docs })
    }

    /// Validates, persists and indexes one source.
    pub fn insert(&mut self, record: SourceRecord) -> Result<Arc<SourceDocument>> {
        check_id(&record.id)?;
        if self.docs.contains_key(&record.id) {
            return Err(Error::Conflict(format!("source {:?}", record.id)));
        }
        let doc = Arc::new(SourceDocument::new(
            record.id,
            record.date,
            record.paragraphs,
        )?);
        let path = self.dir.join(format!("{}.json", doc.id));
        let tmp = self.dir.join(format!(".{}.json.tmp", doc.id));
        std::fs::write(&tmp, serde_json::to_vec(&doc.to_record())?)?;
        std::fs::rename(&tmp, &path)?;
        self.docs.insert(doc.id.clone(), doc.clone());
        Ok(doc)
    }

    pub fn get(&self, id: &str) -> Option<Arc<SourceDocument>> {
        self.docs.get(id).cloned()
    }

    pub fn list(&self) -> Vec<SourceSummary> {
        self.docs
            .values()
            .map(|d| SourceSummary {
                id: d.id.clone(),
                date: d.date.clone(),
                paragraphs: d.len(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Requests and responses

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendRequest {
    pub source_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub context: String,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_true")]
    pub include_spans: bool,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanOut {
    pub token_start: usize,
    pub token_end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationOut {
    pub paragraph_index: usize,
    pub paragraph_text: String,
    pub span: Option<SpanOut>,
    pub p_paragraph: f64,
    pub p_span: f64,
    pub fused: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendResponse {
    pub recommendations: Vec<RecommendationOut>,
}

/// The top `req.top_k` fused recommendations for one request; raw title and
/// context are tokenized here with the request tokenizer.
pub fn recommend(
    model: &QuoteRecommender,
    doc: &SourceDocument,
    req: &RecommendRequest,
) -> Result<RecommendResponse> {
    if req.top_k == 0 {
        return Err(Error::validation("top_k", "must be at least 1"));
    }
    let query = QuoteQuery::from_text(&req.title, &req.context);
    let recommendations = model
        .recommend(&query, doc)?
        .into_iter()
        .take(req.top_k)
        .map(|r| {
            let para = &doc.paragraphs[r.paragraph];
            let span = r.span.filter(|_| req.include_spans).map(|s| SpanOut {
                token_start: s.token_start,
                token_end: s.token_end,
                text: detokenize(&para.tokens[s.token_start..=s.token_end]),
            });
            RecommendationOut {
                paragraph_index: r.paragraph,
                paragraph_text: para.raw_text.clone(),
                span,
                p_paragraph: r.p_paragraph,
                p_span: r.p_span,
                fused: r.fused,
            }
        })
        .collect();
    Ok(RecommendResponse { recommendations })
}

// ---------------------------------------------------------------------------
// Service state

/// Shared service state. Readers clone the model `Arc`, so a swap never
/// disturbs requests already running on the previous model.
#[derive(Debug)]
pub struct AppState {
    root: PathBuf,
    store: RwLock<SourceStore>,
    model: RwLock<Option<Arc<QuoteRecommender>>>,
}

impl AppState {
    /// Opens the store under `root` and loads a previously persisted model
    /// from `<root>/model` if one is there.
    pub fn open(root: &Path) -> Result<Self> {
        let state = Self {
            root: root.to_path_buf(),
            store: RwLock::new(SourceStore::open(root)?),
            model: RwLock::new(None),
        };
        let dir = state.model_dir();
        if [PARAGRAPH_CKPT, SPAN_CKPT, WEIGHTS_FILE]
            .iter()
            .all(|f| dir.join(f).exists())
        {
            let weights: FusionWeights =
                serde_json::from_slice(&std::fs::read(dir.join(WEIGHTS_FILE))?)?;
            state.load_model_files(
                &dir.join(PARAGRAPH_CKPT),
                &dir.join(SPAN_CKPT),
                weights,
                false,
            )?;
        }
        Ok(state)
    }

    fn model_dir(&self) -> PathBuf {
        self.root.join("model")
    }

    /// Swaps in a checked model.
    pub fn install_model(&self, model: QuoteRecommender) {
        *self.model.write().expect("model lock") = Some(Arc::new(model));
    }

    /// Loads both checkpoints, checks them and swaps them in atomically; on
    /// any error the serving model is left untouched. With `persist`, they are also copied into the store so a restart
    /// serves the same model.
    pub fn load_model_files(
        &self,
        paragraph: &Path,
        span: &Path,
        weights: FusionWeights,
        persist: bool,
    ) -> Result<()> {
        let weights = FusionWeights::new(weights.alpha, weights.beta)?;
        let para = Checkpoint::load(paragraph)?;
        let span_ck = Checkpoint::load(span)?;
        let model = QuoteRecommender::new(para, span_ck, weights)?;
        if persist {
            let dir = self.model_dir();
            std::fs::create_dir_all(&dir)?;
            model.paragraph.save(&dir.join(PARAGRAPH_CKPT))?;
            model.span.save(&dir.join(SPAN_CKPT))?;
            std::fs::write(dir.join(WEIGHTS_FILE), serde_json::to_vec(&weights)?)?;
        }
        info!(alpha = weights.alpha, beta = weights.beta, "model loaded");
        self.install_model(model);
        Ok(())
    }

    pub fn model(&self) -> Option<Arc<QuoteRecommender>> {
        self.model.read().expect("model lock").clone()
    }

    pub fn index_source(&self, record: SourceRecord) -> Result<String> {
        Ok(self
            .store
            .write()
            .expect("store lock")
            .insert(record)?
            .id
            .clone())
    }

    pub fn source(&self, id: &str) -> Option<Arc<SourceDocument>> {
        self.store.read().expect("store lock").get(id)
    }

    pub fn sources(&self) -> Vec<SourceSummary> {
        self.store.read().expect("store lock").list()
    }
}

// ---------------------------------------------------------------------------
// HTTP

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub detail: String,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub detail: String,
}

impl ApiError {
    fn new(status: StatusCode, kind: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            kind,
            detail: detail.into(),
        }
    }

    fn no_model() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "service_unavailable",
            "no model is loaded",
        )
    }

    fn unknown_source(id: &str) -> Self {
        Self::new(
            StatusCode::NOT_FOUND,
            "not_found",
            format!("source {id:?} is not indexed"),
        )
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::Validation { .. } | Error::Config(_) | Error::Empty(_) | Error::Json(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "validation")
            }
            Error::Conflict(_) => (StatusCode::CONFLICT, "conflict"),
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self::new(status, kind, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", r.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: self.kind.to_string(),
            detail: self.detail,
        };
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexedSource {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceList {
    pub sources: Vec<SourceSummary>,
}

async fn post_source(
    State(state): State<Arc<AppState>>,
    body: std::result::Result<Json<SourceRecord>, JsonRejection>,
) -> std::result::Result<(StatusCode, Json<IndexedSource>), ApiError> {
    let Json(record) = body?;
    let id = state.index_source(record)?;
    Ok((StatusCode::CREATED, Json(IndexedSource { id })))
}

async fn list_sources(State(state): State<Arc<AppState>>) -> Json<SourceList> {
    Json(SourceList {
        sources: state.sources(),
    })
}

async fn get_source(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<SourceRecord> {
    let doc = state
        .source(&id)
        .ok_or_else(|| ApiError::unknown_source(&id))?;
    Ok(Json(doc.to_record()))
}

async fn post_recommend(
    State(state): State<Arc<AppState>>,
    body: std::result::Result<Json<RecommendRequest>, JsonRejection>,
) -> ApiResult<RecommendResponse> {
    let Json(req) = body?;
    let doc = state
        .source(&req.source_id)
        .ok_or_else(|| ApiError::unknown_source(&req.source_id))?;
    let model = state.model().ok_or_else(ApiError::no_model)?;
    let out = tokio::task::spawn_blocking(move || recommend(&model, &doc, &req))
        .await
        .map_err(|e| {
            ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
        })??;
    Ok(Json(out))
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_loaded: state.model().is_some(),
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sources", post(post_source).get(list_sources))
        .route("/sources/{id}", get(get_source))
        .route("/recommend", post(post_recommend))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>, port: u16) -> Result<()> {
    let addr = SocketAddr::from(([0, 0, 0, 0], port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
