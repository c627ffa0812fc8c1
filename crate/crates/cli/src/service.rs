//! HTTP annotation sessions.
//!
//! Each session wraps one [`Experiment`]. Mutations on a session are
//! serialized by a per-session async mutex; readers see the last published
//! snapshot. Every settled state is written to `<state_dir>/<id>.json` and
//! reloaded on startup.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use anyhow::Context;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fewlabel::io::{load_clustering, load_embeddings, load_truth};
use fewlabel::metrics::exact_metric;
use fewlabel::pipeline::{MlpTrainer, Status, SurrogateTrainer};
use fewlabel::{Clustering, EmbeddingDataset, ErrorCurve, Experiment, ExperimentConfig};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;

use crate::ServeArgs;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session {id:?}"))
    }

    fn internal(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, message.to_string())
    }
}

impl From<fewlabel::Error> for ApiError {
    fn from(e: fewlabel::Error) -> Self {
        use fewlabel::Error as E;
        let status = match &e {
            E::NotPending(_) | E::UnknownId(_) => StatusCode::CONFLICT,
            E::Shape(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        Self::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// What a session file records: the input paths and the loop state.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoredSession {
    id: String,
    dataset: PathBuf,
    clustering: PathBuf,
    #[serde(default)]
    truth: Option<PathBuf>,
    experiment: Experiment,
}

struct Session {
    id: String,
    dataset_path: PathBuf,
    clustering_path: PathBuf,
    truth_path: Option<PathBuf>,
    dataset: Arc<EmbeddingDataset>,
    test: Arc<Clustering>,
    writer: Mutex<()>,
    snapshot: RwLock<Experiment>,
}

impl Session {
    fn snapshot(&self) -> Experiment {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    fn publish(&self, exp: Experiment) {
        *self.snapshot.write().expect("snapshot lock") = exp;
    }

    fn stored(&self, experiment: Experiment) -> StoredSession {
        StoredSession {
            id: self.id.clone(),
            dataset: self.dataset_path.clone(),
            clustering: self.clustering_path.clone(),
            truth: self.truth_path.clone(),
            experiment,
        }
    }
}

pub struct AppState {
    state_dir: PathBuf,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    trainer: Arc<dyn SurrogateTrainer>,
}

impl AppState {
    /// Opens the state directory and reloads every session found in it.
    pub fn open(state_dir: &Path) -> anyhow::Result<Arc<Self>> {
        Self::open_with(state_dir, Arc::new(MlpTrainer))
    }

    pub fn open_with(state_dir: &Path, trainer: Arc<dyn SurrogateTrainer>) -> anyhow::Result<Arc<Self>> {
        fs::create_dir_all(state_dir).with_context(|| format!("creating {}", state_dir.display()))?;
        let mut sessions = HashMap::new();
        for entry in fs::read_dir(state_dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|e| e != "json") {
                continue;
            }
            match load_session(&path) {
                Ok(s) => {
                    sessions.insert(s.id.clone(), Arc::new(s));
                }
                Err(e) => tracing::warn!(path = %path.display(), "skipping session file: {e:#}"),
            }
        }
        tracing::info!(count = sessions.len(), "sessions loaded");
        Ok(Arc::new(Self {
            state_dir: state_dir.to_path_buf(),
            sessions: RwLock::new(sessions),
            trainer,
        }))
    }

    fn get(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    fn persist(&self, stored: &StoredSession) -> Result<(), ApiError> {
        let path = self.state_dir.join(format!("{}.json", stored.id));
        let tmp = path.with_extension("json.tmp");
        let body = serde_json::to_vec(stored).map_err(ApiError::internal)?;
        fs::write(&tmp, body)
            .and_then(|()| fs::rename(&tmp, &path))
            .map_err(|e| ApiError::internal(format!("writing {}: {e}", path.display())))
    }
}

fn load_session(path: &Path) -> anyhow::Result<Session> {
    let stored: StoredSession = serde_json::from_slice(&fs::read(path)?)?;
    let dataset = load_embeddings(&stored.dataset)?;
    let test = load_clustering(&stored.clustering, &dataset)?;
    Ok(Session {
        id: stored.id,
        dataset_path: stored.dataset,
        clustering_path: stored.clustering,
        truth_path: stored.truth,
        dataset: Arc::new(dataset),
        test: Arc::new(test),
        writer: Mutex::new(()),
        snapshot: RwLock::new(stored.experiment),
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/queries", get(queries))
        .route("/sessions/{id}/labels", post(submit_labels))
        .route("/sessions/{id}/curve", get(curve))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub config: ExperimentConfig,
    pub dataset: PathBuf,
    pub clustering: PathBuf,
    /// Full reference labels, used only to report the true value.
    #[serde(default)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

fn absolute(p: &Path) -> Result<PathBuf, ApiError> {
    std::path::absolute(p).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("{}: {e}", p.display())))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let Json(req) = body?;
    let dataset_path = absolute(&req.dataset)?;
    let clustering_path = absolute(&req.clustering)?;
    let truth_path = req.truth.as_deref().map(absolute).transpose()?;
    let config = req.config;
    let (dp, cp, tp) = (dataset_path.clone(), clustering_path.clone(), truth_path.clone());
    let (dataset, test, experiment) = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let dataset = load_embeddings(&dp)?;
        let test = load_clustering(&cp, &dataset)?;
        let true_value = match &tp {
            Some(p) => Some(exact_metric(config.metric, &test, &load_truth(p, &dataset)?, config.k_ref)?),
            None => None,
        };
        let exp = Experiment::start(config, &dataset, &test, true_value)?;
        Ok((dataset, test, exp))
    })
    .await
    .map_err(ApiError::internal)??;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session {
        id: id.clone(),
        dataset_path,
        clustering_path,
        truth_path,
        dataset: Arc::new(dataset),
        test: Arc::new(test),
        writer: Mutex::new(()),
        snapshot: RwLock::new(experiment.clone()),
    };
    state.persist(&session.stored(experiment))?;
    state.sessions.write().expect("session map lock").insert(id.clone(), Arc::new(session));
    tracing::info!(session = %id, "session created");
    Ok((StatusCode::CREATED, Json(Created { session_id: id })))
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    let mut ids: Vec<String> = state.sessions.read().expect("session map lock").keys().cloned().collect();
    ids.sort();
    Json(ids)
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct QueryItem {
    pub id: String,
    pub payload: Option<String>,
    /// Label already received for this item in the current round.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Queries {
    pub round: usize,
    pub status: Status,
    pub items: Vec<QueryItem>,
}

async fn queries(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Queries> {
    let session = state.get(&id)?;
    let exp = session.snapshot();
    let items = exp
        .pending()
        .iter()
        .map(|&i| QueryItem {
            id: session.dataset.id(i).to_owned(),
            payload: session.dataset.payload(i).map(str::to_owned),
            label: exp.received().get(&i).copied(),
        })
        .collect();
    Ok(Json(Queries {
        round: exp.round(),
        status: exp.status(),
        items,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelItem {
    pub id: String,
    pub label: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelBatch {
    pub labels: Vec<LabelItem>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct LabelOutcome {
    pub estimate: Option<f64>,
    pub labels_used: usize,
    pub status: Status,
    pub round: usize,
    /// Pending items still without a label.
    pub outstanding: usize,
}

fn outcome(exp: &Experiment) -> LabelOutcome {
    LabelOutcome {
        estimate: exp.estimate(),
        labels_used: exp.store().human_count(),
        status: exp.status(),
        round: exp.round(),
        outstanding: exp.outstanding().len(),
    }
}

async fn submit_labels(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<LabelBatch>, JsonRejection>,
) -> ApiResult<LabelOutcome> {
    let Json(batch) = body?;
    let session = state.get(&id)?;
    let _guard = session.writer.lock().await;
    let before = session.snapshot();
    if before.status() == Status::Done {
        return Err(ApiError::new(StatusCode::CONFLICT, "the label budget is spent"));
    }
    let labels = batch
        .labels
        .iter()
        .map(|l| {
            session
                .dataset
                .index_of(&l.id)
                .map(|i| (i, l.label))
                .ok_or_else(|| fewlabel::Error::UnknownId(l.id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut exp = before.clone();
    if !exp.record(&labels)? {
        if exp != before {
            state.persist(&session.stored(exp.clone()))?;
            session.publish(exp.clone());
        }
        return Ok(Json(outcome(&exp)));
    }
    session.publish(exp.clone());
    let (dataset, test, trainer) = (session.dataset.clone(), session.test.clone(), state.trainer.clone());
    let advanced = tokio::task::spawn_blocking(move || {
        exp.advance(&dataset, &test, trainer.as_ref()).map(|()| exp)
    })
    .await;
    let exp = match advanced {
        Ok(Ok(exp)) => exp,
        Ok(Err(e)) => {
            session.publish(before);
            tracing::error!(session = %id, "training failed: {e}");
            return Err(ApiError::internal(format!("round failed, labels not applied: {e}")));
        }
        Err(e) => {
            session.publish(before);
            return Err(ApiError::internal(e));
        }
    };
    if let Err(e) = state.persist(&session.stored(exp.clone())) {
        session.publish(before);
        return Err(e);
    }
    session.publish(exp.clone());
    tracing::info!(session = %id, round = exp.round(), estimate = exp.estimate(), "round complete");
    Ok(Json(outcome(&exp)))
}

async fn curve(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<ErrorCurve> {
    Ok(Json(state.get(&id)?.snapshot().curve().clone()))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct HumanLabel {
    pub id: String,
    pub label: usize,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SessionSummary {
    pub session_id: String,
    pub dataset: PathBuf,
    pub clustering: PathBuf,
    pub config: ExperimentConfig,
    pub status: Status,
    pub round: usize,
    pub estimate: Option<f64>,
    pub true_value: Option<f64>,
    pub labels_used: usize,
    pub pseudo_labels: usize,
    pub pending: Vec<String>,
    pub received: usize,
    /// False when some point has no payload for a person to look at.
    pub human_annotatable: bool,
    pub labels: Vec<HumanLabel>,
}

async fn session_summary(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<SessionSummary> {
    let session = state.get(&id)?;
    let exp = session.snapshot();
    let ds = &session.dataset;
    Ok(Json(SessionSummary {
        session_id: session.id.clone(),
        dataset: session.dataset_path.clone(),
        clustering: session.clustering_path.clone(),
        config: exp.config().clone(),
        status: exp.status(),
        round: exp.round(),
        estimate: exp.estimate(),
        true_value: exp.curve().true_value,
        labels_used: exp.store().human_count(),
        pseudo_labels: exp.store().pseudo().len(),
        pending: exp.pending().iter().map(|&i| ds.id(i).to_owned()).collect(),
        received: exp.received().len(),
        human_annotatable: ds.fully_annotatable(),
        labels: exp
            .store()
            .human()
            .iter()
            .map(|(&i, &label)| HumanLabel {
                id: ds.id(i).to_owned(),
                label,
            })
            .collect(),
    }))
}

/// Binds the listener and serves until interrupted.
pub async fn serve_on(listener: tokio::net::TcpListener, state: Arc<AppState>) -> anyhow::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

pub fn serve(args: &ServeArgs) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async {
        let state = AppState::open(&args.state_dir)?;
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.host, args.port))?;
        let addr = listener.local_addr()?;
        println!("listening on http://{addr}");
        tracing::info!(%addr, state_dir = %args.state_dir.display(), "serving");
        serve_on(listener, state).await
    })
}
