//! JSON-over-HTTP API for the console.

use std::collections::{BTreeMap, VecDeque};
use std::convert::Infallible;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dynamics::ModelPhase;
use crate::error::Error;

use super::config::Config;
use super::scene::{RenderRequest, Scene};
use super::session::{default_session, SessionRegistry, SessionUpdate, UpdateError};

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
    Core(Error),
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError::Core(e)
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

/// HTTP status for an engine error.
pub fn status_of(e: &Error) -> StatusCode {
    match e {
        Error::InvalidPose(_) | Error::DegeneratePose => StatusCode::UNPROCESSABLE_ENTITY,
        Error::InvalidParameter(_) | Error::Bounds(_) | Error::Format(_) | Error::Json(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

/// `{"error": {"kind", "message"}}`, shared with the CLI.
pub fn error_body(kind: &str, message: &str) -> serde_json::Value {
    json!({ "error": { "kind": kind, "message": message } })
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, msg) = match &self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m.clone()),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "not_found", m.clone()),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, "conflict", m.clone()),
            ApiError::Core(e) => (status_of(e), e.kind(), e.to_string()),
        };
        (status, Json(error_body(kind, &msg))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Frames announced on the stream, rendered on first fetch.
#[derive(Default)]
struct FrameStore {
    specs: BTreeMap<u64, (String, RenderRequest)>,
    png: BTreeMap<u64, Arc<Vec<u8>>>,
    order: VecDeque<u64>,
}

pub struct AppState {
    pub config: Config,
    scenes: BTreeMap<String, Arc<Scene>>,
    default_scene: String,
    pub sessions: SessionRegistry,
    frames: Mutex<FrameStore>,
    next_frame: AtomicU64,
}

impl AppState {
    /// The first scene is the default for requests that do not name one.
    pub fn new(config: Config, scenes: Vec<Scene>) -> crate::Result<Self> {
        let default_scene = scenes
            .first()
            .map(|s| s.id().to_string())
            .ok_or_else(|| Error::InsufficientData("service needs at least one scene".into()))?;
        let mut map = BTreeMap::new();
        for s in scenes {
            let id = s.id().to_string();
            if map.insert(id.clone(), Arc::new(s)).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate scene id {id:?}")));
            }
        }
        Ok(AppState {
            config,
            scenes: map,
            default_scene,
            sessions: SessionRegistry::default(),
            frames: Mutex::new(FrameStore::default()),
            next_frame: AtomicU64::new(1),
        })
    }

    fn scene(&self, id: Option<&str>) -> ApiResult<Arc<Scene>> {
        let id = id.unwrap_or(&self.default_scene);
        self.scenes.get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("unknown scene {id:?}")))
    }

    fn register_frame(&self, scene: &str, req: RenderRequest) -> u64 {
        let id = self.next_frame.fetch_add(1, Ordering::Relaxed);
        let mut f = self.frames.lock().unwrap();
        f.specs.insert(id, (scene.to_string(), req));
        f.order.push_back(id);
        while f.order.len() > self.config.service.frame_cache.max(1) {
            if let Some(old) = f.order.pop_front() {
                f.specs.remove(&old);
                f.png.remove(&old);
            }
        }
        id
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/scene", get(get_scene))
        .route("/api/render", get(get_render))
        .route("/api/ecg", get(get_ecg))
        .route("/api/hemodynamics", get(get_hemodynamics))
        .route("/api/session", get(get_session).post(post_session))
        .route("/api/stream", get(get_stream))
        .route("/api/frame/{id}", get(get_frame))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}

#[derive(Debug, Deserialize)]
struct SceneQuery {
    scene: Option<String>,
}

async fn get_scene(State(st): State<Arc<AppState>>, q: Result<Query<SceneQuery>, QueryRejection>) -> ApiResult<Json<serde_json::Value>> {
    let Query(q) = q?;
    let sc = st.scene(q.scene.as_deref())?;
    let mut v = serde_json::to_value(sc.info()).map_err(Error::from)?;
    v["scenes"] = json!(st.scenes.keys().collect::<Vec<_>>());
    Ok(Json(v))
}

#[derive(Debug, Deserialize)]
struct RenderQuery {
    scene: Option<String>,
    alpha_deg: Option<f64>,
    beta_deg: Option<f64>,
    phase: Option<f64>,
    enhance: Option<bool>,
    w: Option<usize>,
    h: Option<usize>,
}

fn png_response(bytes: Arc<Vec<u8>>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes.as_ref().clone()).into_response()
}

async fn render_png(scene: Arc<Scene>, req: RenderRequest, config: Config) -> ApiResult<Arc<Vec<u8>>> {
    let bytes = tokio::task::spawn_blocking(move || scene.render(&req, &config).and_then(|img| img.encode_png()))
        .await
        .map_err(|e| ApiError::Core(Error::Numerical(format!("render task failed: {e}"))))??;
    Ok(Arc::new(bytes))
}

fn check_size(st: &AppState, w: Option<usize>, h: Option<usize>) -> ApiResult<()> {
    let max = st.config.service.max_detector_px;
    for s in [w, h].into_iter().flatten() {
        if !(2..=max).contains(&s) {
            return Err(ApiError::BadRequest(format!("detector size must be in [2, {max}], got {s}")));
        }
    }
    Ok(())
}

async fn get_render(State(st): State<Arc<AppState>>, q: Result<Query<RenderQuery>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = q?;
    let sc = st.scene(q.scene.as_deref())?;
    check_size(&st, q.w, q.h)?;
    let req = RenderRequest {
        alpha_deg: q.alpha_deg.unwrap_or(0.0),
        beta_deg: q.beta_deg.unwrap_or(0.0),
        phase: q.phase.unwrap_or(0.0),
        enhance: q.enhance.unwrap_or(false),
        width: q.w,
        height: q.h,
    };
    let bytes = render_png(sc, req, st.config.clone()).await?;
    Ok(png_response(bytes))
}

#[derive(Debug, Deserialize)]
struct EcgQuery {
    scene: Option<String>,
    from: Option<f64>,
    to: Option<f64>,
}

async fn get_ecg(State(st): State<Arc<AppState>>, q: Result<Query<EcgQuery>, QueryRejection>) -> ApiResult<Json<serde_json::Value>> {
    let Query(q) = q?;
    let sc = st.scene(q.scene.as_deref())?;
    let from = q.from.unwrap_or(0.0);
    let to = q.to.unwrap_or(sc.ecg.duration_s());
    if !(from.is_finite() && to.is_finite() && from <= to) {
        return Err(ApiError::BadRequest(format!("need finite from <= to, got {from}..{to}")));
    }
    let samples = sc.ecg.window(from, to);
    let peaks: Vec<f64> = sc.ecg.r_peaks_s.iter().copied().filter(|&t| t >= from && t < to).collect();
    Ok(Json(json!({
        "from": from,
        "to": to,
        "sample_rate_hz": sc.ecg.sample_rate_hz,
        "t_s": samples.iter().map(|s| s.0).collect::<Vec<_>>(),
        "mv": samples.iter().map(|s| s.1).collect::<Vec<_>>(),
        "r_peaks_s": peaks,
    })))
}

async fn get_hemodynamics(
    State(st): State<Arc<AppState>>,
    q: Result<Query<SceneQuery>, QueryRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let Query(q) = q?;
    let sc = st.scene(q.scene.as_deref())?;
    if sc.meshes.is_empty() {
        return Err(ApiError::NotFound(format!("scene {:?} has no mesh cycle", sc.id())));
    }
    let report = sc.hemodynamics(&st.config.hemo)?;
    Ok(Json(serde_json::to_value(report).map_err(Error::from)?))
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    id: Option<String>,
}

async fn get_session(State(st): State<Arc<AppState>>, q: Result<Query<SessionQuery>, QueryRejection>) -> ApiResult<Json<serde_json::Value>> {
    let Query(q) = q?;
    let id = q.id.unwrap_or_else(default_session);
    let (s, t) = st.sessions.now(&id).ok_or_else(|| ApiError::NotFound(format!("no session {id:?}")))?;
    let sc = st.scene(Some(&s.scene))?;
    let phase = sc.clock.model_phase_at(t);
    let mut v = serde_json::to_value(&s).map_err(Error::from)?;
    v["ecg_time_s"] = json!(t);
    v["phase"] = serde_json::to_value(phase).map_err(Error::from)?;
    Ok(Json(v))
}

async fn post_session(State(st): State<Arc<AppState>>, body: Result<Json<SessionUpdate>, JsonRejection>) -> ApiResult<Json<serde_json::Value>> {
    let Json(u) = body?;
    if let Some(sc) = &u.scene {
        st.scene(Some(sc))?;
    }
    let res = st.sessions.update(&u, &st.default_scene, |s| {
        let sc = st.scenes.get(&s.scene).ok_or_else(|| Error::InvalidParameter(format!("unknown scene {:?}", s.scene)))?;
        if !s.ecg_offset_s.is_finite() {
            return Err(Error::InvalidParameter("ecg_offset_s must be finite".into()));
        }
        sc.pose_for(&RenderRequest {
            alpha_deg: s.alpha_deg,
            beta_deg: s.beta_deg,
            ..Default::default()
        })
        .map(|_| ())
    });
    match res {
        Ok(s) => Ok(Json(serde_json::to_value(s).map_err(Error::from)?)),
        Err(UpdateError::Conflict { current }) => Err(ApiError::Conflict(format!(
            "session {:?} is at revision {current}, update was based on {}",
            u.id, u.revision
        ))),
        Err(UpdateError::Invalid(e)) => Err(e.into()),
    }
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    fps: Option<f64>,
    session: Option<String>,
    scene: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct FrameEvent {
    frame_id: u64,
    ecg_time_s: f64,
    phase: ModelPhase,
}

async fn get_stream(
    State(st): State<Arc<AppState>>,
    q: Result<Query<StreamQuery>, QueryRejection>,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let Query(q) = q?;
    let fps = q.fps.unwrap_or(st.config.service.stream_fps);
    if !(fps > 0.0 && fps <= st.config.service.max_fps) {
        return Err(ApiError::BadRequest(format!("fps must be in (0, {}]", st.config.service.max_fps)));
    }
    let session = q.session;
    if let Some(id) = &session {
        if st.sessions.get(id).is_none() {
            return Err(ApiError::NotFound(format!("no session {id:?}")));
        }
    }
    let fixed_scene = st.scene(q.scene.as_deref())?;
    let tick = tokio::time::interval(Duration::from_secs_f64(1.0 / fps));
    let started = std::time::Instant::now();
    let stream = futures::stream::unfold((st, tick), move |(st, mut tick)| {
        let session = session.clone();
        let fixed_scene = fixed_scene.clone();
        async move {
            tick.tick().await;
            let (scene, req, t) = match session.as_deref().and_then(|id| st.sessions.now(id)) {
                Some((s, t)) => {
                    let sc = st.scenes.get(&s.scene).cloned().unwrap_or(fixed_scene);
                    let req = RenderRequest {
                        alpha_deg: s.alpha_deg,
                        beta_deg: s.beta_deg,
                        enhance: s.enhance,
                        ..Default::default()
                    };
                    (sc, req, t)
                }
                None => (fixed_scene, RenderRequest::default(), started.elapsed().as_secs_f64()),
            };
            let phase = scene.clock.model_phase_at(t);
            let req = RenderRequest {
                phase: phase.ecg_phase,
                ..req
            };
            let id = st.register_frame(scene.id(), req);
            if let Some(sid) = session.as_deref() {
                st.sessions.set_last_frame(sid, id);
            }
            let ev = FrameEvent {
                frame_id: id,
                ecg_time_s: t,
                phase,
            };
            let event = Event::default().event("frame").json_data(&ev).unwrap_or_else(|_| Event::default());
            Some((Ok(event), (st, tick)))
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn get_frame(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let id: u64 = id.parse().map_err(|_| ApiError::BadRequest(format!("bad frame id {id:?}")))?;
    let (spec, cached) = {
        let f = st.frames.lock().unwrap();
        (f.specs.get(&id).cloned(), f.png.get(&id).cloned())
    };
    if let Some(bytes) = cached {
        return Ok(png_response(bytes));
    }
    let (scene_id, req) = spec.ok_or_else(|| ApiError::NotFound(format!("unknown or expired frame {id}")))?;
    let sc = st.scene(Some(&scene_id))?;
    let bytes = render_png(sc, req, st.config.clone()).await?;
    {
        let mut f = st.frames.lock().unwrap();
        if f.specs.contains_key(&id) {
            f.png.insert(id, bytes.clone());
        }
    }
    Ok(png_response(bytes))
}
