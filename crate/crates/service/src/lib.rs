//! HTTP session API for interactive planning.
//!
//! Sessions live in memory. Every mutation is appended to an optional
//! newline-delimited JSON journal, and starting with an existing journal
//! replays it, so a restarted service holds the same sessions. Each session
//! sits behind its own lock; planning runs on the blocking pool so health
//! checks and other sessions stay responsive.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::future::Future;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use assayplan_core::belief::{compute_weights, BeliefWeights, CandidateState, Functionals};
use assayplan_core::config::{candidate_from_names, RunConfig, SERVE_ITERS, SERVE_NE};
use assayplan_core::data::Dataset;
use assayplan_core::env::{measured_set, Problem};
use assayplan_core::report::plan_report;
use assayplan_core::{Error as CoreError, SCHEMA_VERSION};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};
use tower_http::cors::CorsLayer;

/// Analogs returned by the belief endpoint when `top_k` is not given.
pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("journal {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("journal {path} line {line}: {message}")]
    Replay {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Error body: status code plus a message, serialized with the schema
/// version like every other body.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("unknown session `{id}`"))
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match e {
            CoreError::UnknownFeature(_) | CoreError::UnknownAssay(_) => StatusCode::BAD_REQUEST,
            CoreError::AlreadyIncorporated(_) | CoreError::AlreadyMeasured(_) => {
                StatusCode::CONFLICT
            }
            CoreError::MissingRequired(_) | CoreError::Config(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "status": self.status.as_u16(),
            "error": self.message,
        });
        (self.status, Json(body)).into_response()
    }
}

/// Settings a recommendation request may override.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ne: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    /// Include the tolerance sweep (default true).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pareto: Option<bool>,
}

impl Overrides {
    fn apply(&self, config: &RunConfig) -> RunConfig {
        config.clone().overlay(RunConfig {
            tau: self.tau,
            epsilon: self.epsilon,
            ne: self.ne,
            iters: self.iters,
            ..RunConfig::default()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Created {
        features: BTreeMap<String, f64>,
        config: RunConfig,
    },
    Outcome {
        outcomes: BTreeMap<String, f64>,
    },
    Replanned {
        overrides: Overrides,
    },
}

/// One journal line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub schema_version: u32,
    /// Milliseconds since the Unix epoch.
    pub ts: u64,
    pub session_id: String,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Session {
    pub session_id: String,
    pub state: CandidateState,
    pub weights: BeliefWeights,
    /// Server defaults overlaid with the overrides given at creation.
    pub config: RunConfig,
    pub events: Vec<Event>,
    /// Recommendation bodies keyed by their overrides; cleared on change.
    #[serde(skip)]
    cache: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analog {
    pub rank: usize,
    pub index: usize,
    pub record_id: String,
    pub weight: f64,
    pub target: Option<f64>,
}

/// Belief summary returned by create, outcome and belief requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefView {
    pub schema_version: u32,
    pub session_id: String,
    pub h: f64,
    pub l: f64,
    pub mean: f64,
    pub step: usize,
    pub measured: Vec<String>,
    pub unmeasured: Vec<String>,
    pub terminal: bool,
    pub analogs: Vec<Analog>,
}

impl Session {
    fn create(
        session_id: String,
        dataset: &Dataset,
        base: &RunConfig,
        features: &BTreeMap<String, f64>,
        overrides: &RunConfig,
    ) -> Result<Self, ApiError> {
        let config = base.clone().overlay(overrides.clone());
        Problem::new(dataset, config.kernel(), config.reward())?;
        let state = candidate_from_names(features, dataset)?;
        let weights = compute_weights(&state, dataset, &config.kernel())?;
        Ok(Self {
            session_id,
            state,
            weights,
            config,
            events: Vec::new(),
            cache: BTreeMap::new(),
        })
    }

    /// Folds one batch of measured outcomes, keyed by assay name, into the
    /// state and belief. Nothing changes when any entry is rejected.
    fn record(
        &mut self,
        dataset: &Dataset,
        outcomes: &BTreeMap<String, f64>,
    ) -> Result<(), ApiError> {
        if outcomes.is_empty() {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "no outcomes given"));
        }
        let mut observations = BTreeMap::new();
        let mut assays = Vec::new();
        for (name, &value) in outcomes {
            let a = dataset
                .assay_by_name(name)
                .ok_or_else(|| CoreError::UnknownAssay(name.clone()))?;
            if self.state.measured.contains(&a) {
                return Err(CoreError::AlreadyMeasured(name.clone()).into());
            }
            if !value.is_finite() {
                return Err(ApiError::new(
                    StatusCode::BAD_REQUEST,
                    format!("outcome for `{name}` is not finite"),
                ));
            }
            observations.insert(dataset.assay(a).outcome_feature, value);
            assays.push(a);
        }
        let weights = self
            .weights
            .update(&observations, dataset, &self.config.kernel())?;
        self.weights = weights;
        self.state.known.extend(observations);
        self.state.measured.extend(assays);
        self.state.step += 1;
        self.cache.clear();
        Ok(())
    }

    fn functionals(&self, dataset: &Dataset) -> Result<Functionals, ApiError> {
        let mut f = Functionals::of(&self.weights, dataset)?;
        if dataset
            .target_assay()
            .is_some_and(|a| self.state.measured.contains(&a))
        {
            f.h = 0.0;
        }
        Ok(f)
    }

    fn terminal(&self, dataset: &Dataset, config: &RunConfig) -> Result<bool, ApiError> {
        let problem = Problem::new(dataset, config.kernel(), config.reward())?;
        let h = self.functionals(dataset)?.h;
        Ok(problem.terminal(
            h,
            self.state.step,
            measured_set(&self.state),
            self.state.stopped,
        ))
    }

    pub fn belief(&self, dataset: &Dataset, top_k: usize) -> Result<BeliefView, ApiError> {
        let f = self.functionals(dataset)?;
        let names = |measured: bool| {
            dataset
                .assays()
                .iter()
                .enumerate()
                .filter(|(j, _)| {
                    self.state
                        .measured
                        .contains(&assayplan_core::data::AssayId(*j))
                        == measured
                })
                .map(|(_, a)| a.name.clone())
                .collect()
        };
        let analogs = self
            .weights
            .ranked()
            .into_iter()
            .take(top_k)
            .enumerate()
            .map(|(rank, (index, weight))| Analog {
                rank: rank + 1,
                index,
                record_id: dataset.records()[index].record_id.clone(),
                weight,
                target: dataset.records()[index].target,
            })
            .collect();
        Ok(BeliefView {
            schema_version: SCHEMA_VERSION,
            session_id: self.session_id.clone(),
            h: f.h,
            l: f.l,
            mean: f.mean,
            step: self.state.step,
            measured: names(true),
            unmeasured: names(false),
            terminal: self.terminal(dataset, &self.config)?,
            analogs,
        })
    }
}

struct Journal {
    path: PathBuf,
    file: File,
}

struct Inner {
    dataset: Arc<Dataset>,
    base: RunConfig,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    journal: Option<std::sync::Mutex<Journal>>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

impl AppState {
    /// Service over `dataset` (feature statistics already computed). With a
    /// journal path, existing events are replayed and new ones appended.
    pub fn new(
        dataset: Dataset,
        base: RunConfig,
        journal: Option<&Path>,
    ) -> Result<Self, ServiceError> {
        let mut sessions = BTreeMap::new();
        let mut max_id = 0;
        let journal = match journal {
            None => None,
            Some(path) => {
                if path.exists() {
                    max_id = replay(path, &dataset, &base, &mut sessions)?;
                }
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(path)
                    .map_err(|source| ServiceError::Io {
                        path: path.to_path_buf(),
                        source,
                    })?;
                Some(std::sync::Mutex::new(Journal {
                    path: path.to_path_buf(),
                    file,
                }))
            }
        };
        let sessions = sessions
            .into_iter()
            .map(|(id, s)| (id, Arc::new(Mutex::new(s))))
            .collect();
        Ok(Self {
            inner: Arc::new(Inner {
                dataset: Arc::new(dataset),
                base,
                sessions: RwLock::new(sessions),
                next_id: AtomicU64::new(max_id + 1),
                journal,
            }),
        })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.inner.dataset
    }

    /// Snapshot of every session, by id.
    pub async fn snapshot(&self) -> BTreeMap<String, Session> {
        let sessions = self.inner.sessions.read().await;
        let mut out = BTreeMap::new();
        for (id, s) in sessions.iter() {
            out.insert(id.clone(), s.lock().await.clone());
        }
        out
    }

    async fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.inner
            .sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn append(&self, session: &mut Session, kind: EventKind) -> Result<(), ApiError> {
        let event = Event {
            schema_version: SCHEMA_VERSION,
            ts: now_ms(),
            session_id: session.session_id.clone(),
            kind,
        };
        if let Some(journal) = &self.inner.journal {
            let mut j = journal.lock().unwrap_or_else(|e| e.into_inner());
            let line = serde_json::to_string(&event).expect("event serializes");
            writeln!(j.file, "{line}")
                .and_then(|()| j.file.flush())
                .map_err(|e| {
                    ApiError::new(
                        StatusCode::INTERNAL_SERVER_ERROR,
                        format!("journal {}: {e}", j.path.display()),
                    )
                })?;
        }
        session.events.push(event);
        Ok(())
    }
}

fn replay(
    path: &Path,
    dataset: &Dataset,
    base: &RunConfig,
    sessions: &mut BTreeMap<String, Session>,
) -> Result<u64, ServiceError> {
    let file = File::open(path).map_err(|source| ServiceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let fail = |line: usize, message: String| ServiceError::Replay {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut max_id = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ServiceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line).map_err(|e| fail(i + 1, e.to_string()))?;
        let id = event.session_id.clone();
        if let Some(n) = id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
            max_id = max_id.max(n);
        }
        match &event.kind {
            EventKind::Created { features, config } => {
                let session = Session::create(id.clone(), dataset, base, features, config)
                    .map_err(|e| fail(i + 1, e.message))?;
                sessions.insert(id.clone(), session);
            }
            EventKind::Outcome { outcomes } => {
                let session = sessions
                    .get_mut(&id)
                    .ok_or_else(|| fail(i + 1, format!("unknown session `{id}`")))?;
                session
                    .record(dataset, outcomes)
                    .map_err(|e| fail(i + 1, e.message))?;
            }
            EventKind::Replanned { .. } => {}
        }
        sessions
            .get_mut(&id)
            .ok_or_else(|| fail(i + 1, format!("unknown session `{id}`")))?
            .events
            .push(event);
    }
    Ok(max_id)
}

fn check_version(version: Option<u32>) -> Result<(), ApiError> {
    match version {
        Some(v) if v != SCHEMA_VERSION => Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("schema_version {v} is not supported (expected {SCHEMA_VERSION})"),
        )),
        _ => Ok(()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    schema_version: Option<u32>,
    #[serde(default)]
    features: BTreeMap<String, f64>,
    #[serde(default)]
    config: RunConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutcomeRequest {
    schema_version: Option<u32>,
    outcomes: BTreeMap<String, f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BeliefQuery {
    top_k: Option<usize>,
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
    }))
}

async fn create_session(
    State(app): State<AppState>,
    Json(req): Json<CreateRequest>,
) -> Result<(StatusCode, Json<BeliefView>), ApiError> {
    check_version(req.schema_version)?;
    if req.config.candidate.is_some() {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "give candidate values in `features`, not in `config`",
        ));
    }
    let mut sessions = app.inner.sessions.write().await;
    let id = format!("s{}", app.inner.next_id.load(Ordering::SeqCst));
    let mut session = Session::create(
        id.clone(),
        app.dataset(),
        &app.inner.base,
        &req.features,
        &req.config,
    )?;
    let view = session.belief(app.dataset(), DEFAULT_TOP_K)?;
    app.append(
        &mut session,
        EventKind::Created {
            features: req.features,
            config: req.config,
        },
    )?;
    app.inner.next_id.fetch_add(1, Ordering::SeqCst);
    sessions.insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(view)))
}

async fn record_outcome(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<OutcomeRequest>,
) -> Result<Json<BeliefView>, ApiError> {
    check_version(req.schema_version)?;
    let session = app.session(&id).await?;
    let mut session = session.lock().await;
    let mut updated = session.clone();
    updated.record(app.dataset(), &req.outcomes)?;
    let view = updated.belief(app.dataset(), DEFAULT_TOP_K)?;
    app.append(
        &mut updated,
        EventKind::Outcome {
            outcomes: req.outcomes,
        },
    )?;
    *session = updated;
    Ok(Json(view))
}

async fn get_belief(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<BeliefQuery>,
) -> Result<Json<BeliefView>, ApiError> {
    let session = app.session(&id).await?;
    let session = session.lock().await;
    Ok(Json(
        session.belief(app.dataset(), q.top_k.unwrap_or(DEFAULT_TOP_K))?,
    ))
}

async fn get_recommendation(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(overrides): Query<Overrides>,
) -> Result<Response, ApiError> {
    let session = app.session(&id).await?;
    let mut session = session.lock().await;
    let key = serde_json::to_string(&overrides).expect("overrides serialize");
    let body = match session.cache.get(&key) {
        Some(body) => body.clone(),
        None => {
            let config = overrides.apply(&session.config);
            if session.terminal(app.dataset(), &config)? {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    format!("session `{id}` is terminal; nothing left to recommend"),
                ));
            }
            let dataset = Arc::clone(&app.inner.dataset);
            let state = session.state.clone();
            let with_pareto = overrides.pareto.unwrap_or(true);
            let report = tokio::task::spawn_blocking(move || {
                plan_report(
                    &dataset,
                    &config,
                    &state,
                    SERVE_NE,
                    SERVE_ITERS,
                    with_pareto,
                )
            })
            .await
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
            let mut value = serde_json::to_value(&report).expect("report serializes");
            value["session_id"] = serde_json::Value::String(id.clone());
            let body = serde_json::to_string(&value).expect("report serializes");
            app.append(&mut session, EventKind::Replanned { overrides })?;
            session.cache.insert(key, body.clone());
            body
        }
    };
    Ok(([(header::CONTENT_TYPE, "application/json")], body).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/recommendation", get(get_recommendation))
        .route("/sessions/{id}/outcomes", post(record_outcome))
        .route("/sessions/{id}/belief", get(get_belief))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
