//! JSON routes over [`TutorService`].

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use super::{ClickResponse, CreateSession, Curriculum, DemoTrace, RouteResponse, TrialView, TutorError, TutorService};
use crate::env::NodeId;
use crate::error::Error;

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

impl TutorError {
    pub fn status(&self) -> StatusCode {
        match self {
            TutorError::UnknownSession(_) | TutorError::TrialOutOfRange { .. } => StatusCode::NOT_FOUND,
            TutorError::Rejected(_) | TutorError::Core(Error::AlreadyObserved(_)) => StatusCode::CONFLICT,
            TutorError::Core(
                Error::InvalidPath(_) | Error::UnknownSelector(_) | Error::UnknownPolicy(_) | Error::InvalidEnv(_),
            ) => StatusCode::BAD_REQUEST,
            TutorError::Core(Error::BeliefSpaceTooLarge { .. }) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for TutorError {
    fn into_response(self) -> Response {
        (self.status(), Json(ErrorBody { error: self.to_string() })).into_response()
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClickBody {
    pub node: NodeId,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RouteBody {
    pub path: Vec<NodeId>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DemoQuery {
    pub env: String,
    #[serde(default = "default_policy")]
    pub policy: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_step")]
    pub step: Curriculum,
}

fn default_policy() -> String {
    "greedy_hier".into()
}

fn default_step() -> Curriculum {
    Curriculum::Full
}

type Svc = State<Arc<TutorService>>;
type Reply<T> = Result<Json<T>, TutorError>;

/// Parses a trial index; anything that is not an index is not found.
fn trial_index(k: &str) -> Result<usize, TutorError> {
    k.parse().map_err(|_| TutorError::TrialOutOfRange { index: usize::MAX, trials: 0 })
}

// Handlers block on the session mutex and may solve an oracle, so they run
// on the blocking pool.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, TutorError> + Send + 'static,
) -> Result<T, TutorError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| TutorError::Rejected(format!("worker failed: {e}")))?
}

async fn create(State(svc): Svc, Json(req): Json<CreateSession>) -> Result<(StatusCode, Json<Created>), TutorError> {
    let s = blocking(move || svc.create_session(&req)).await?;
    Ok((StatusCode::CREATED, Json(Created { id: s.id })))
}

async fn trial(State(svc): Svc, Path((id, k)): Path<(String, String)>) -> Reply<TrialView> {
    let k = trial_index(&k)?;
    Ok(Json(blocking(move || svc.get_trial(&id, k)).await?))
}

async fn click(
    State(svc): Svc,
    Path((id, k)): Path<(String, String)>,
    Json(body): Json<ClickBody>,
) -> Reply<ClickResponse> {
    let k = trial_index(&k)?;
    Ok(Json(blocking(move || svc.register_click(&id, k, body.node)).await?))
}

async fn route(
    State(svc): Svc,
    Path((id, k)): Path<(String, String)>,
    Json(body): Json<RouteBody>,
) -> Reply<RouteResponse> {
    let k = trial_index(&k)?;
    Ok(Json(blocking(move || svc.submit_route(&id, k, &body.path)).await?))
}

async fn demos(State(svc): Svc, Query(q): Query<DemoQuery>) -> Reply<DemoTrace> {
    Ok(Json(blocking(move || svc.get_demo(&q.env, &q.policy, q.seed, q.step)).await?))
}

pub fn router(svc: Arc<TutorService>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/:id/trials/:k", get(trial))
        .route("/sessions/:id/trials/:k/clicks", post(click))
        .route("/sessions/:id/trials/:k/route", post(route))
        .route("/demos", get(demos))
        .with_state(svc)
}

/// Serves the tutor on `addr` until the process exits.
pub async fn serve(svc: Arc<TutorService>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(svc)).await
}
