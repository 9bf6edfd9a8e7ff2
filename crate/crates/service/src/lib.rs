//! HTTP facade over the schema, verbalizer and inference engine.
//!
//! Routes:
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/schema` | schema file text (`?format=json` for JSON) |
//! | PUT | `/schema/{relation}/templates` | `{"version": n, "templates": [...]}` |
//! | GET/PUT | `/probes/{relation}` | probe examples for the authoring loop |
//! | POST | `/probe-template` | `{"template", "relation", "examples"}` |
//! | POST | `/classify-one` | a relation example; `?threshold=` overrides |
//!
//! Every schema response carries the current version token in the
//! `x-schema-version` header. Writes must quote the version they were based on
//! and are refused with 409 when another write got there first.
//!
//! [`nli_router`] separately exposes any [`Backend`] over the wire protocol the
//! remote backend speaks.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use relent::backend::{RawTriple, ScoreRequest, ScoreResponse, SCORE_PATH};
use relent::schema::check_pattern;
use relent::{
    classify, mention_text, premise_of, verbalize, Argument, Backend, BackendError, EntailmentScore,
    InferenceConfig, InferenceError, NorelMode, PremiseHypothesisPair, RelationExample, RelationSchema,
    SchemaError, Template, TemplateId,
};
use serde::{Deserialize, Serialize};

pub const VERSION_HEADER: &str = "x-schema-version";

/// An error rendered as `{"error": "..."}` with a status code.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::EmptyBatch | BackendError::EmptyText { .. } => ApiError::bad_request(e.to_string()),
            _ => ApiError::new(StatusCode::BAD_GATEWAY, e.to_string()),
        }
    }
}

impl From<InferenceError> for ApiError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Backend(b) => b.into(),
            InferenceError::Example { source, .. } => (*source).into(),
            other => ApiError::bad_request(other.to_string()),
        }
    }
}

/// Parses a JSON body, answering 400 (not axum's 422) on failure.
fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

#[derive(Clone)]
struct Snapshot {
    schema: Arc<RelationSchema>,
    version: u64,
}

struct Shared {
    current: RwLock<Snapshot>,
    probes: RwLock<BTreeMap<String, Vec<RelationExample>>>,
    /// Serializes writers; readers never take it.
    writer: tokio::sync::Mutex<()>,
    schema_path: Option<PathBuf>,
    probes_path: Option<PathBuf>,
    inference: InferenceConfig,
}

/// Server state: the live schema snapshot, probe examples, and the inference
/// configuration used by `/classify-one` and `/probe-template`.
#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

/// Where the service persists edits. `None` keeps everything in memory.
#[derive(Debug, Clone, Default)]
pub struct Persistence {
    pub schema_path: Option<PathBuf>,
    pub probes_path: Option<PathBuf>,
}

impl Persistence {
    /// Persists to `schema_path` and to a `<schema_path>.probes.json` sidecar.
    pub fn beside(schema_path: impl Into<PathBuf>) -> Self {
        let schema_path = schema_path.into();
        let mut probes = schema_path.clone().into_os_string();
        probes.push(".probes.json");
        Persistence {
            schema_path: Some(schema_path),
            probes_path: Some(probes.into()),
        }
    }
}

impl AppState {
    /// Builds the state; probe examples are read from `persistence.probes_path`
    /// when that file exists.
    pub fn new(schema: RelationSchema, inference: InferenceConfig, persistence: Persistence) -> std::io::Result<Self> {
        let probes = match &persistence.probes_path {
            Some(p) if p.exists() => {
                let text = std::fs::read_to_string(p)?;
                serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?
            }
            _ => BTreeMap::new(),
        };
        Ok(AppState {
            shared: Arc::new(Shared {
                current: RwLock::new(Snapshot {
                    schema: Arc::new(schema),
                    version: 1,
                }),
                probes: RwLock::new(probes),
                writer: tokio::sync::Mutex::new(()),
                schema_path: persistence.schema_path,
                probes_path: persistence.probes_path,
                inference,
            }),
        })
    }

    fn snapshot(&self) -> Snapshot {
        self.shared.current.read().expect("schema lock").clone()
    }

    /// The current schema and its version token.
    pub fn schema(&self) -> (Arc<RelationSchema>, u64) {
        let s = self.snapshot();
        (s.schema, s.version)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/schema", get(get_schema))
        .route("/schema/{relation}/templates", put(put_templates))
        .route("/probes/{relation}", get(get_probes).put(put_probes))
        .route("/probe-template", post(probe_template))
        .route("/classify-one", post(classify_one))
        .with_state(state)
}

/// Serves `backend` over the NLI wire protocol at `POST /nli/score`.
pub fn nli_router(backend: Arc<dyn Backend>) -> Router {
    Router::new().route(SCORE_PATH, post(nli_score)).with_state(backend)
}

async fn nli_score(State(backend): State<Arc<dyn Backend>>, body: axum::body::Bytes) -> Result<Json<ScoreResponse>, ApiError> {
    let req: ScoreRequest = parse_json(&body)?;
    let pairs: Vec<PremiseHypothesisPair> = req
        .pairs
        .into_iter()
        .map(|p| PremiseHypothesisPair::new(p.premise, p.hypothesis))
        .collect();
    let scores = score_blocking(backend, pairs).await?;
    Ok(Json(ScoreResponse {
        scores: scores.into_iter().map(RawTriple::from).collect(),
    }))
}

async fn score_blocking(
    backend: Arc<dyn Backend>,
    pairs: Vec<PremiseHypothesisPair>,
) -> Result<Vec<EntailmentScore>, ApiError> {
    tokio::task::spawn_blocking(move || backend.score_batch(&pairs))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationDoc {
    pub templates: Vec<String>,
    pub subj_types: Vec<String>,
    pub obj_types: Vec<String>,
}

/// JSON view of a schema plus its version token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemaView {
    pub version: u64,
    pub negative_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norel_template: Option<String>,
    pub relations: BTreeMap<String, RelationDoc>,
}

impl SchemaView {
    fn of(schema: &RelationSchema, version: u64) -> Self {
        SchemaView {
            version,
            negative_label: schema.negative_label().to_string(),
            norel_template: schema.norel_template().map(|t| t.pattern().to_string()),
            relations: schema
                .relations()
                .map(|e| {
                    (
                        e.label().to_string(),
                        RelationDoc {
                            templates: e.templates().iter().map(|t| t.pattern().to_string()).collect(),
                            subj_types: e.subj_types().iter().cloned().collect(),
                            obj_types: e.obj_types().iter().cloned().collect(),
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Deserialize)]
struct FormatQuery {
    format: Option<String>,
}

fn schema_response(snapshot: &Snapshot, json: bool) -> Response {
    let mut headers = HeaderMap::new();
    headers.insert(VERSION_HEADER, HeaderValue::from(snapshot.version));
    if json {
        (headers, Json(SchemaView::of(&snapshot.schema, snapshot.version))).into_response()
    } else {
        headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/toml"));
        (headers, snapshot.schema.to_toml_string()).into_response()
    }
}

async fn get_schema(State(state): State<AppState>, Query(q): Query<FormatQuery>) -> Result<Response, ApiError> {
    let json = match q.format.as_deref() {
        None | Some("toml") => false,
        Some("json") => true,
        Some(other) => return Err(ApiError::bad_request(format!("unknown format `{other}`"))),
    };
    Ok(schema_response(&state.snapshot(), json))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateUpdate {
    /// Version token the edit is based on.
    pub version: u64,
    pub templates: Vec<String>,
}

async fn put_templates(
    State(state): State<AppState>,
    UrlPath(relation): UrlPath<String>,
    body: axum::body::Bytes,
) -> Result<Response, ApiError> {
    let update: TemplateUpdate = parse_json(&body)?;
    let shared = &state.shared;
    let _guard = shared.writer.lock().await;
    let current = state.snapshot();
    if !current.schema.contains(&relation) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown relation `{relation}`")));
    }
    if update.version != current.version {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("schema is at version {}, edit was based on {}", current.version, update.version),
        ));
    }
    let next = current
        .schema
        .with_templates(&relation, update.templates)
        .map_err(|e: SchemaError| ApiError::bad_request(e.to_string()))?;
    if let Some(path) = &shared.schema_path {
        let text = next.to_toml_string();
        write_atomically(path, text.as_bytes())
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("persisting schema: {e}")))?;
    }
    let snapshot = Snapshot {
        schema: Arc::new(next),
        version: current.version + 1,
    };
    *shared.current.write().expect("schema lock") = snapshot.clone();
    tracing::info!(relation, version = snapshot.version, "templates updated");
    Ok(schema_response(&snapshot, true))
}

/// Writes to a temporary file in the target directory, then renames over it.
pub fn write_atomically(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

async fn get_probes(State(state): State<AppState>, UrlPath(relation): UrlPath<String>) -> Result<Response, ApiError> {
    let (schema, _) = state.schema();
    if !schema.contains(&relation) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown relation `{relation}`")));
    }
    let probes = state.shared.probes.read().expect("probe lock");
    Ok(Json(probes.get(&relation).cloned().unwrap_or_default()).into_response())
}

async fn put_probes(
    State(state): State<AppState>,
    UrlPath(relation): UrlPath<String>,
    body: axum::body::Bytes,
) -> Result<Response, ApiError> {
    let examples: Vec<RelationExample> = parse_json(&body)?;
    let (schema, _) = state.schema();
    if !schema.contains(&relation) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown relation `{relation}`")));
    }
    let shared = &state.shared;
    let _guard = shared.writer.lock().await;
    let mut all = shared.probes.read().expect("probe lock").clone();
    all.insert(relation, examples.clone());
    if let Some(path) = &shared.probes_path {
        let text = serde_json::to_vec_pretty(&all).expect("examples serialize");
        write_atomically(path, &text)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("persisting probes: {e}")))?;
    }
    *shared.probes.write().expect("probe lock") = all;
    Ok(Json(examples).into_response())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateProbeRequest {
    pub template: String,
    pub relation: String,
    pub examples: Vec<RelationExample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub example_id: String,
    pub hypothesis: String,
    pub score: EntailmentScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResponse {
    pub results: Vec<ProbeResult>,
}

async fn probe_template(State(state): State<AppState>, body: axum::body::Bytes) -> Result<Json<ProbeResponse>, ApiError> {
    let req: TemplateProbeRequest = parse_json(&body)?;
    check_pattern(&req.template)
        .map_err(|p| ApiError::bad_request(format!("template `{}` {p}", req.template)))?;
    if req.examples.is_empty() {
        return Err(ApiError::bad_request("at least one probe example is required"));
    }
    let (schema, _) = state.schema();
    if !schema.contains(&req.relation) {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown relation `{}`", req.relation)));
    }
    let template = Template::new(TemplateId(0), req.template.as_str()).expect("pattern checked above");
    let pairs: Vec<PremiseHypothesisPair> = req
        .examples
        .iter()
        .map(|e| {
            let h = verbalize(
                &template,
                &mention_text(e, Argument::Subject),
                &mention_text(e, Argument::Object),
            );
            PremiseHypothesisPair::new(premise_of(e), h)
        })
        .collect();
    let hypotheses: Vec<String> = pairs.iter().map(|p| p.hypothesis.clone()).collect();
    let scores = score_blocking(state.shared.inference.backend.clone(), pairs).await?;
    Ok(Json(ProbeResponse {
        results: req
            .examples
            .iter()
            .zip(hypotheses)
            .zip(scores)
            .map(|((e, hypothesis), score)| ProbeResult {
                example_id: e.id().to_string(),
                hypothesis,
                score,
            })
            .collect(),
    }))
}

#[derive(Debug, Deserialize)]
struct ClassifyQuery {
    threshold: Option<f64>,
    norel_mode: Option<NorelMode>,
}

async fn classify_one(
    State(state): State<AppState>,
    Query(q): Query<ClassifyQuery>,
    body: axum::body::Bytes,
) -> Result<Response, ApiError> {
    let example: RelationExample = parse_json(&body)?;
    let (schema, _) = state.schema();
    let mut config = state.shared.inference.clone();
    if let Some(t) = q.threshold {
        config = config.with_threshold(t);
    }
    if let Some(m) = q.norel_mode {
        config = config.with_norel_mode(m);
    }
    let prediction = tokio::task::spawn_blocking(move || classify(&example, &schema, &config))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(prediction).into_response())
}
