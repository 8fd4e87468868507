//! Sketch-to-placed-object requests and the HTTP API.

use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sketchforge::fusion::{load_scene_mesh, SceneDocument};
use sketchforge::geometry::write_obj;
use sketchforge::placement::{place_sketch, PlacementTransform, SketchRequest, Timing};
use sketchforge::raster::decode_gray_png;
use sketchforge::CameraPose;

use crate::error::ServiceError;
use crate::registry::Registry;
use crate::store::Store;

pub const DEFAULT_FOV_DEG: f64 = 60.0;

fn default_fov() -> f64 {
    DEFAULT_FOV_DEG
}

fn default_upright() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub scene_id: String,
    /// Orbit pose of the view the sketch was drawn over.
    pub view_pose: CameraPose,
    /// Point the view orbits.
    #[serde(default)]
    pub target: [f64; 3],
    #[serde(default = "default_fov")]
    pub fov_deg: f64,
    /// Base64 PNG; dark pixels are strokes. Its size is the view's size.
    pub sketch: String,
    pub class: String,
    #[serde(default = "default_upright")]
    pub upright: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub object_id: String,
    /// Canonical-space mesh as OBJ text.
    pub mesh: String,
    pub predicted_pose: CameraPose,
    pub transform: PlacementTransform,
    pub timing: Timing,
}

/// Generates an object from the sketch and stores it in the scene. The
/// placement ray is cast against the scene mesh only, so the result does not
/// depend on other objects already placed.
pub fn handle_generate(store: &Store, registry: &Registry, req: &GenerateRequest) -> Result<GenerateResponse, ServiceError> {
    let start = Instant::now();
    let scene_mesh = store.scene_mesh(&req.scene_id)?;
    let model = registry.get(&req.class)?;
    let view_pose = CameraPose::new(req.view_pose.elevation, req.view_pose.azimuth, req.view_pose.distance)
        .map_err(|e| ServiceError::BadRequest(e.to_string()))?;
    let png = STANDARD
        .decode(req.sketch.trim())
        .map_err(|e| ServiceError::BadRequest(format!("sketch is not base64: {e}")))?;
    let img = decode_gray_png(&png).map_err(|e| ServiceError::BadRequest(format!("sketch: {e}")))?;
    let scene = SceneDocument::new(req.scene_id.clone(), (*scene_mesh).clone());
    let placed = place_sketch(
        &model.weights,
        &model.template,
        &scene,
        &SketchRequest {
            width: img.width() as usize,
            height: img.height() as usize,
            gray: img.as_raw(),
            view_pose,
            target: req.target,
            fov_deg: req.fov_deg,
            upright: req.upright,
            forced_pose: None,
        },
    )?;
    let object_id = store.add_object(&req.scene_id, &placed.mesh, placed.transform, &req.class)?;
    Ok(GenerateResponse {
        object_id,
        mesh: write_obj(&placed.mesh),
        predicted_pose: placed.predicted_pose,
        transform: placed.transform,
        timing: Timing {
            total_ms: start.elapsed().as_secs_f64() * 1e3,
            ..placed.timing
        },
    })
}

pub struct AppState {
    pub store: Store,
    pub registry: Registry,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    code: &'a str,
    message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = serde_json::json!({ "error": ErrorBody { code: self.code(), message: self.to_string() } });
        (status, Json(body)).into_response()
    }
}

#[derive(Serialize, Deserialize)]
pub struct SceneCreated {
    pub scene_id: String,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

fn obj_response(text: String) -> Response {
    ([(header::CONTENT_TYPE, "model/obj")], text).into_response()
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_scene(State(app): State<Arc<AppState>>, body: Bytes) -> Result<Response, ServiceError> {
    let id = blocking(move || {
        let doc = load_scene_mesh("", &body).map_err(|e| ServiceError::BadRequest(e.to_string()))?;
        app.store.create_scene(&doc.mesh)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(SceneCreated { scene_id: id })).into_response())
}

async fn scene_mesh(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(obj_response(blocking(move || app.store.scene_obj(&id)).await?))
}

async fn merged_mesh(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    Ok(obj_response(blocking(move || app.store.merged_obj(&id)).await?))
}

async fn generate(
    State(app): State<Arc<AppState>>,
    req: Result<Json<GenerateRequest>, JsonRejection>,
) -> Result<Json<GenerateResponse>, ServiceError> {
    let Json(req) = req.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    Ok(Json(blocking(move || handle_generate(&app.store, &app.registry, &req)).await?))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/healthz", get(healthz))
        .route("/api/scenes", post(create_scene))
        .route("/api/scenes/{id}/mesh.obj", get(scene_mesh))
        .route("/api/scenes/{id}/merged.obj", get(merged_mesh))
        .route("/api/generate", post(generate))
        .layer(DefaultBodyLimit::max(256 << 20))
        .with_state(state)
}
