//! HTTP front end. Every session mutation goes through one actor thread, so
//! `/next` is never answered while an update is running.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tokio::sync::oneshot;

use super::{open_session, SessionConfig};
use crate::active::{Answer, LabelingSession, StepRecord, Strategy};
use crate::{IrsError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Candidate {
    pub rank: usize,
    pub gallery_index: usize,
    pub distance: f64,
    pub thumbnail: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeView {
    pub index: usize,
    pub thumbnail: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NextView {
    pub session_id: String,
    pub done: bool,
    pub step: usize,
    pub budget_left: usize,
    pub probe: Option<ProbeView>,
    pub chosen_by: Option<Strategy>,
    /// Raw diversity, discrepancy and uncertainty of the probe.
    pub scores: Option<[f64; 3]>,
    /// Top candidates of the unlabeled gallery, nearest first.
    pub ranked: Vec<Candidate>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StateView {
    pub session_id: String,
    pub step: usize,
    pub budget: usize,
    pub budget_left: usize,
    pub done: bool,
    pub strategy: Strategy,
    pub rank_window: usize,
    pub pending_probe: Option<usize>,
    pub probes_left: usize,
    pub gallery_left: usize,
    /// True-match rank per step (`null` for skips).
    pub rank_history: Vec<Option<usize>>,
    pub mean_true_match_rank: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotateRequest {
    pub probe_index: usize,
    #[serde(default)]
    pub gallery_index: Option<usize>,
    #[serde(default)]
    pub skip: bool,
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotateResponse {
    pub updated: bool,
    /// Steps completed, including this one.
    pub step: usize,
    pub true_match_rank: Option<usize>,
}

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
}

impl From<IrsError> for ApiError {
    fn from(e: IrsError) -> Self {
        let status = match &e {
            IrsError::Session(_) => StatusCode::CONFLICT,
            IrsError::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

enum Command {
    State(oneshot::Sender<StateView>),
    Next(oneshot::Sender<ApiResult<NextView>>),
    Annotate(AnnotateRequest, oneshot::Sender<ApiResult<AnnotateResponse>>),
    Log(oneshot::Sender<Vec<StepRecord>>),
}

struct Actor {
    session: LabelingSession,
    session_id: String,
    rank_window: usize,
    /// Manifest thumbnail entries as written, per sample.
    thumbnails: Arc<Vec<Option<String>>>,
    checkpoint_out: Option<PathBuf>,
    log_out: Option<PathBuf>,
}

impl Actor {
    fn thumb(&self, i: usize) -> Option<String> {
        self.thumbnails.get(i).cloned().flatten()
    }

    fn state(&self) -> StateView {
        let s = &self.session;
        let rank_history: Vec<Option<usize>> = s.log().iter().map(|r| r.true_match_rank).collect();
        let ranks: Vec<f64> = rank_history.iter().flatten().map(|&r| r as f64).collect();
        StateView {
            session_id: self.session_id.clone(),
            step: s.steps_taken(),
            budget: s.config().budget,
            budget_left: s.budget_left(),
            done: s.is_done(),
            strategy: s.config().strategy,
            rank_window: self.rank_window,
            pending_probe: s.pending().map(|p| p.probe_index),
            probes_left: s.probe_pool().len(),
            gallery_left: s.gallery_pool().len(),
            rank_history,
            mean_true_match_rank: (!ranks.is_empty()).then(|| ranks.iter().sum::<f64>() / ranks.len() as f64),
        }
    }

    fn next(&mut self) -> ApiResult<NextView> {
        let issued = self.session.issue()?;
        let mut view = NextView {
            session_id: self.session_id.clone(),
            done: issued.is_none(),
            step: self.session.steps_taken(),
            budget_left: self.session.budget_left(),
            probe: None,
            chosen_by: None,
            scores: None,
            ranked: Vec::new(),
        };
        if let Some(issued) = issued {
            view.probe = Some(ProbeView {
                index: issued.probe_index,
                thumbnail: self.thumb(issued.probe_index),
            });
            view.chosen_by = Some(issued.chosen_by);
            view.scores = Some(issued.epsilon);
            view.ranked = issued
                .ranked
                .iter()
                .take(self.rank_window)
                .enumerate()
                .map(|(r, c)| Candidate {
                    rank: r + 1,
                    gallery_index: c.gallery_index,
                    distance: c.distance,
                    thumbnail: self.thumb(c.gallery_index),
                })
                .collect();
        }
        Ok(view)
    }

    fn annotate(&mut self, req: AnnotateRequest) -> ApiResult<AnnotateResponse> {
        if let Some(id) = &req.session_id {
            if *id != self.session_id {
                return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id:?}")));
            }
        }
        let answer = match (req.skip, req.gallery_index) {
            (true, _) => Answer::Skip,
            (false, Some(g)) => Answer::Match(g),
            (false, None) => {
                return Err(ApiError::new(StatusCode::BAD_REQUEST, "gallery_index is required unless skip is set"))
            }
        };
        let record = self.session.annotate(req.probe_index, answer)?;
        self.persist(&record)?;
        Ok(AnnotateResponse {
            updated: !record.skipped,
            step: self.session.steps_taken(),
            true_match_rank: record.true_match_rank,
        })
    }

    fn persist(&self, record: &StepRecord) -> Result<()> {
        if let Some(path) = &self.log_out {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| IrsError::io(path, e))?;
            f.write_all(crate::active::write_log_jsonl(std::slice::from_ref(record)).as_bytes())
                .map_err(|e| IrsError::io(path, e))?;
        }
        if let Some(path) = &self.checkpoint_out {
            if !record.skipped {
                self.session.state().save_checkpoint(path)?;
            }
        }
        Ok(())
    }

    fn run(mut self, rx: mpsc::Receiver<Command>) {
        for cmd in rx {
            // A dropped receiver just means the client went away.
            match cmd {
                Command::State(tx) => {
                    let _ = tx.send(self.state());
                }
                Command::Next(tx) => {
                    let _ = tx.send(self.next());
                }
                Command::Annotate(req, tx) => {
                    let _ = tx.send(self.annotate(req));
                }
                Command::Log(tx) => {
                    let _ = tx.send(self.session.log().to_vec());
                }
            }
        }
    }
}

/// Sender side of the session actor.
#[derive(Clone)]
pub struct SessionHandle {
    tx: mpsc::Sender<Command>,
    session_id: String,
}

impl SessionHandle {
    /// Moves `session` onto its own thread.
    pub fn spawn(
        session: LabelingSession,
        rank_window: usize,
        thumbnails: Vec<Option<String>>,
        checkpoint_out: Option<PathBuf>,
        log_out: Option<PathBuf>,
    ) -> Self {
        let nanos = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos()).unwrap_or(0);
        let digest = Sha256::digest(format!("{nanos}:{}:{}", std::process::id(), session.config().seed));
        let session_id = hex::encode(&digest[..8]);
        let actor = Actor {
            session,
            session_id: session_id.clone(),
            rank_window,
            thumbnails: Arc::new(thumbnails),
            checkpoint_out,
            log_out,
        };
        let (tx, rx) = mpsc::channel();
        std::thread::Builder::new()
            .name("irs-session".into())
            .spawn(move || actor.run(rx))
            .expect("spawn session thread");
        SessionHandle { tx, session_id }
    }

    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    async fn call<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> ApiResult<T> {
        let (tx, rx) = oneshot::channel();
        self.tx
            .send(make(tx))
            .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "session has stopped"))?;
        rx.await
            .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "session has stopped"))
    }
}

#[derive(Clone)]
pub struct AppState {
    pub handle: SessionHandle,
    /// Resolved thumbnail files, per sample.
    pub thumbnail_files: Arc<Vec<Option<PathBuf>>>,
}

async fn get_state(State(app): State<AppState>) -> ApiResult<Json<StateView>> {
    Ok(Json(app.handle.call(Command::State).await?))
}

async fn get_next(State(app): State<AppState>) -> ApiResult<Json<NextView>> {
    Ok(Json(app.handle.call(Command::Next).await??))
}

async fn post_annotate(State(app): State<AppState>, Json(req): Json<AnnotateRequest>) -> ApiResult<Json<AnnotateResponse>> {
    Ok(Json(app.handle.call(|tx| Command::Annotate(req, tx)).await??))
}

async fn get_log(State(app): State<AppState>) -> ApiResult<Json<Vec<StepRecord>>> {
    Ok(Json(app.handle.call(Command::Log).await?))
}

async fn get_thumbnail(State(app): State<AppState>, Path(index): Path<usize>) -> ApiResult<Response> {
    let path = app
        .thumbnail_files
        .get(index)
        .cloned()
        .flatten()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no thumbnail for sample {index}")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, format!("{}: {e}", path.display())))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/session/state", get(get_state))
        .route("/api/session/next", get(get_next))
        .route("/api/session/annotate", post(post_annotate))
        .route("/api/session/log", get(get_log))
        .route("/api/thumbnails/{index}", get(get_thumbnail))
        .with_state(state)
}

impl AppState {
    /// Opens the configured session and starts its actor.
    pub fn open(config: &SessionConfig) -> Result<AppState> {
        let (ds, _, session) = open_session(config)?;
        let n = ds.features.len();
        let thumbnails: Vec<Option<String>> = (0..n)
            .map(|i| {
                ds.manifest
                    .thumbnails
                    .as_ref()
                    .and_then(|t| t.get(i))
                    .map(|p| p.display().to_string())
            })
            .collect();
        let files: Vec<Option<PathBuf>> = (0..n).map(|i| ds.thumbnail(i)).collect();
        let handle = SessionHandle::spawn(
            session,
            config.rank_window,
            thumbnails,
            config.checkpoint_out.clone(),
            config.log_out.clone(),
        );
        Ok(AppState {
            handle,
            thumbnail_files: Arc::new(files),
        })
    }
}

/// Runs the service until the process is stopped.
pub async fn serve(config: &SessionConfig) -> Result<()> {
    let app = AppState::open(config)?;
    log::info!("session {} listening on http://{}", app.handle.session_id(), config.listen);
    let listener = tokio::net::TcpListener::bind(config.listen)
        .await
        .map_err(|e| IrsError::io(config.listen.to_string(), e))?;
    axum::serve(listener, router(app))
        .await
        .map_err(|e| IrsError::io(config.listen.to_string(), e))
}
