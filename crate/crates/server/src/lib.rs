//! HTTP session service: load scenes, render frames, submit strokes, grow,
//! undo, stack session-scoped edits and export masks.
//!
//! Mutations on one session are single-writer: a second mutation that
//! arrives while one is running is rejected with 409. Renders of a session
//! wait for a running mutation to finish.

mod error;

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, OnceLock, RwLock};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use isrf_core::edit::{apply_edits, Edit, EditOp};
use isrf_core::grid::Bitmap3D;
use isrf_core::grow::{BilateralParams, SegmentParams, SegmentationSession, StepStats, Stroke};
use isrf_core::io::{encode_rgb, load_scene, Scene};
use isrf_core::render::{render_frame, Camera, FieldSource, FrameMode, RenderOptions};
use isrf_core::semantic::{preview_basis, DEFAULT_OCCUPANCY_ALPHA};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

pub use error::ApiError;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7860";
pub const SCENE_ROOT_ENV: &str = "ISRF_SCENE_ROOT";
/// Mask name that edit ops use to refer to the session's current mask.
pub const SESSION_MASK: &str = "session";
const PREVIEW_SAMPLES: usize = 20_000;
const MAX_FRAME_PIXELS: u64 = 4096 * 4096;

struct SceneEntry {
    scene: Scene,
    dir: PathBuf,
    basis: OnceLock<Option<[Vec<f64>; 3]>>,
}

impl SceneEntry {
    fn basis(&self) -> Option<&[Vec<f64>; 3]> {
        self.basis
            .get_or_init(|| preview_basis(&self.scene.field, DEFAULT_OCCUPANCY_ALPHA, PREVIEW_SAMPLES).ok())
            .as_ref()
    }
}

struct SessionState {
    segmentation: SegmentationSession,
    edits: Vec<(u64, Edit)>,
}

struct Session {
    scene_id: String,
    scene: Arc<SceneEntry>,
    busy: AtomicBool,
    state: RwLock<SessionState>,
}

/// Marks a session as mutating until dropped.
pub struct MutationGuard {
    session: Arc<Session>,
}

impl Drop for MutationGuard {
    fn drop(&mut self) {
        self.session.busy.store(false, Ordering::Release);
    }
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    scenes: RwLock<HashMap<String, Arc<SceneEntry>>>,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    next_id: AtomicU64,
    scene_root: Option<PathBuf>,
    opts: RenderOptions,
}

impl AppState {
    /// `scene_root` restricts which directories may be loaded.
    pub fn new(scene_root: Option<PathBuf>, opts: RenderOptions) -> std::io::Result<Self> {
        let scene_root = scene_root.map(|r| r.canonicalize()).transpose()?;
        Ok(Self {
            inner: Arc::new(Inner {
                scenes: RwLock::default(),
                sessions: RwLock::default(),
                next_id: AtomicU64::new(1),
                scene_root,
                opts,
            }),
        })
    }

    /// Reads the scene root from `ISRF_SCENE_ROOT` when set.
    pub fn from_env() -> std::io::Result<Self> {
        let root = std::env::var_os(SCENE_ROOT_ENV).map(PathBuf::from);
        Self::new(root, RenderOptions::default())
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}-{}", self.inner.next_id.fetch_add(1, Ordering::Relaxed))
    }

    /// Canonical form of `path` if it exists and lies under the scene root.
    fn admit(&self, path: &Path) -> Result<PathBuf, ApiError> {
        let canonical = path.canonicalize().map_err(|_| ApiError::from(isrf_core::Error::MissingFile(path.into())))?;
        match &self.inner.scene_root {
            Some(root) if !canonical.starts_with(root) => {
                Err(ApiError::forbidden(format!("{} is outside the scene root", path.display())))
            }
            _ => Ok(canonical),
        }
    }

    fn scene(&self, id: &str) -> Result<Arc<SceneEntry>, ApiError> {
        self.inner.scenes.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found(format!("scene {id}")))
    }

    fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.inner.sessions.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::not_found(format!("session {id}")))
    }

    /// Claims the single mutation slot of a session, or fails with 409.
    pub fn begin_mutation(&self, session_id: &str) -> Result<MutationGuard, ApiError> {
        let session = self.session(session_id)?;
        session
            .busy
            .compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire)
            .map_err(|_| ApiError::busy(session_id))?;
        Ok(MutationGuard { session })
    }

    /// Loads a scene archive (reusing an already loaded copy of the same directory).
    pub fn load_scene(&self, path: &Path) -> Result<String, ApiError> {
        let dir = self.admit(path)?;
        if let Some((id, _)) = self.inner.scenes.read().unwrap().iter().find(|(_, e)| e.dir == dir) {
            return Ok(id.clone());
        }
        let loaded = load_scene(&dir)?;
        for w in &loaded.warnings {
            log::warn!("{}: {w}", dir.display());
        }
        let id = self.fresh_id("scene");
        let entry = SceneEntry { scene: loaded.scene, dir, basis: OnceLock::new() };
        self.inner.scenes.write().unwrap().insert(id.clone(), Arc::new(entry));
        Ok(id)
    }

    pub fn open_session(&self, scene_id: &str) -> Result<String, ApiError> {
        let scene = self.scene(scene_id)?;
        let session = Session {
            scene_id: scene_id.to_string(),
            state: RwLock::new(SessionState {
                segmentation: SegmentationSession::new(&scene.scene.field),
                edits: Vec::new(),
            }),
            scene,
            busy: AtomicBool::new(false),
        };
        let id = self.fresh_id("session");
        self.inner.sessions.write().unwrap().insert(id.clone(), Arc::new(session));
        Ok(id)
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/healthz", get(healthz))
            .route("/scenes", post(post_scene))
            .route("/scenes/{id}", get(get_scene))
            .route("/scenes/{id}/frame", get(get_frame))
            .route("/sessions", post(post_session))
            .route("/sessions/{id}/stroke", post(post_stroke))
            .route("/sessions/{id}/grow", post(post_grow))
            .route("/sessions/{id}/undo", post(post_undo))
            .route("/sessions/{id}/mask", get(get_mask))
            .route("/sessions/{id}/log", get(get_log))
            .route("/sessions/{id}/edit", post(post_edit))
            .with_state(self.clone())
    }
}

/// Serves until the process receives Ctrl-C.
pub async fn serve(listen: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, state.router())
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Bodies are parsed by hand so malformed JSON gets the same error shape as
/// every other failure.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::from(isrf_core::Error::Format { what: "request body".into(), detail: e.to_string() }))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Deserialize)]
struct SceneRequest {
    path: PathBuf,
}

async fn post_scene(State(state): State<AppState>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let req: SceneRequest = parse_body(&body)?;
    let id = blocking(move || state.load_scene(&req.path)).await?;
    Ok(Json(serde_json::json!({ "scene_id": id })))
}

#[derive(Serialize)]
struct SceneInfo {
    scene_id: String,
    resolution: [usize; 3],
    bbox_min: [f64; 3],
    bbox_max: [f64; 3],
    feature_dim: usize,
    masks: Vec<String>,
}

async fn get_scene(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<SceneInfo>, ApiError> {
    let entry = state.scene(&id)?;
    let geo = entry.scene.field.geometry();
    Ok(Json(SceneInfo {
        scene_id: id,
        resolution: geo.resolution(),
        bbox_min: geo.bbox_min().into(),
        bbox_max: geo.bbox_max().into(),
        feature_dim: entry.scene.field.feature_dim(),
        masks: entry.scene.masks.keys().cloned().collect(),
    }))
}

#[derive(Deserialize)]
struct FrameQuery {
    /// JSON-encoded camera.
    cam: String,
    #[serde(default)]
    mode: Option<String>,
    width: Option<u32>,
    height: Option<u32>,
    /// Session whose mask and edits apply.
    session: Option<String>,
}

async fn get_frame(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<FrameQuery>,
) -> Result<Response, ApiError> {
    let entry = state.scene(&id)?;
    let mut camera: Camera = serde_json::from_str(&q.cam)
        .map_err(|e| ApiError::from(isrf_core::Error::Format { what: "camera".into(), detail: e.to_string() }))?;
    camera.validate()?;
    if q.width.is_some() || q.height.is_some() {
        camera = camera.resized(q.width.unwrap_or(camera.width), q.height.unwrap_or(camera.height));
        camera.validate()?;
    }
    if camera.width as u64 * camera.height as u64 > MAX_FRAME_PIXELS {
        return Err(isrf_core::Error::InvalidInput("frame is too large".into()).into());
    }
    let mode: FrameMode = q.mode.as_deref().unwrap_or("rgb").parse()?;
    let session = match &q.session {
        Some(sid) => {
            let s = state.session(sid)?;
            if s.scene_id != id {
                return Err(isrf_core::Error::InvalidInput(format!("session {sid} belongs to another scene")).into());
            }
            Some(s)
        }
        None => None,
    };
    let opts = state.inner.opts.clone();
    let png = blocking(move || {
        let base = FieldSource::new(&entry.scene.field, &entry.scene.decoder);
        let empty = Bitmap3D::empty(entry.scene.field.geometry().clone());
        let guard = session.as_ref().map(|s| s.state.read().unwrap());
        let (mask, edits): (&Bitmap3D, Vec<Edit>) = match &guard {
            Some(g) => (g.segmentation.current(), g.edits.iter().map(|(_, e)| e.clone()).collect()),
            None => (&empty, Vec::new()),
        };
        let basis = entry.basis();
        let rgb = apply_edits(&base, &edits, &mut |src| render_frame(src, &camera, mode, Some(mask), basis, &opts))??;
        Ok(encode_rgb(camera.width, camera.height, rgb)?)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Deserialize)]
struct SessionRequest {
    scene_id: String,
}

async fn post_session(State(state): State<AppState>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let req: SessionRequest = parse_body(&body)?;
    let id = state.open_session(&req.scene_id)?;
    Ok(Json(serde_json::json!({ "session_id": id })))
}

#[derive(Serialize)]
struct MaskStats {
    voxels: usize,
    history: usize,
}

#[derive(Serialize)]
struct StepResponse {
    voxels_added_or_removed: usize,
    iterations: usize,
    mask_stats: MaskStats,
}

fn step_response(stats: StepStats, segmentation: &SegmentationSession) -> StepResponse {
    StepResponse {
        voxels_added_or_removed: stats.changed,
        iterations: stats.iterations,
        mask_stats: MaskStats { voxels: stats.mask_voxels, history: segmentation.history().len() },
    }
}

/// Runs `f` on the session's state while holding its mutation slot.
async fn mutate<T: Send + 'static>(
    state: &AppState,
    id: &str,
    f: impl FnOnce(&SceneEntry, &mut SessionState) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let guard = state.begin_mutation(id)?;
    blocking(move || {
        let session = &guard.session;
        let mut st = session.state.write().unwrap();
        f(&session.scene, &mut st)
    })
    .await
}

#[derive(Deserialize)]
struct StrokeRequest {
    #[serde(flatten)]
    stroke: Stroke,
    #[serde(default)]
    params: Option<SegmentParams>,
}

async fn post_stroke(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<StepResponse>, ApiError> {
    let req: StrokeRequest = parse_body(&body)?;
    let opts = state.inner.opts.clone();
    let resp = mutate(&state, &id, move |scene, st| {
        let params = req.params.unwrap_or_default();
        let stats =
            st.segmentation.apply_stroke(&scene.scene.field, &scene.scene.decoder, &req.stroke, &params, &opts)?;
        Ok(step_response(stats, &st.segmentation))
    })
    .await?;
    Ok(Json(resp))
}

#[derive(Deserialize)]
struct GrowRequest {
    extra_iters: usize,
    #[serde(default)]
    params: Option<BilateralParams>,
}

async fn post_grow(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<StepResponse>, ApiError> {
    let req: GrowRequest = parse_body(&body)?;
    let resp = mutate(&state, &id, move |scene, st| {
        let params = req.params.unwrap_or_default();
        let stats = st.segmentation.grow_more(&scene.scene.field, req.extra_iters, &params)?;
        Ok(step_response(stats, &st.segmentation))
    })
    .await?;
    Ok(Json(resp))
}

async fn post_undo(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<StepResponse>, ApiError> {
    let resp = mutate(&state, &id, |_, st| {
        let stats = st.segmentation.undo()?;
        Ok(step_response(stats, &st.segmentation))
    })
    .await?;
    Ok(Json(resp))
}

async fn get_mask(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let bytes = session.state.read().unwrap().segmentation.current().to_bytes();
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

/// The session's replay log, loadable by the headless `segment` command.
async fn get_log(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let session = state.session(&id)?;
    let text = session.state.read().unwrap().segmentation.log().to_json();
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

async fn post_edit(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Json<serde_json::Value>, ApiError> {
    let op: EditOp = parse_body(&body)?;
    let admit = state.clone();
    let edit_id = state.inner.next_id.fetch_add(1, Ordering::Relaxed);
    mutate(&state, &id, move |scene, st| {
        let mut extra = BTreeMap::new();
        extra.insert(SESSION_MASK.to_string(), st.segmentation.current().clone());
        for path in op.referenced_paths(&scene.scene, &scene.dir) {
            if !extra.keys().any(|k| scene.dir.join(k) == path) {
                admit.admit(&path)?;
            }
        }
        let edit = op.resolve(&scene.scene, &extra, &scene.dir)?;
        st.edits.push((edit_id, edit));
        Ok(())
    })
    .await?;
    Ok(Json(serde_json::json!({ "edit_id": edit_id })))
}
