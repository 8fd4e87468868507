mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use sketchforge::geometry::{parse_obj, write_obj};
use sketchforge_cli::{router, AppState, GenerateRequest, GenerateResponse};
use tower::ServiceExt;

fn app() -> (tempfile::TempDir, Router) {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState {
        store: sketchforge_cli::Store::open(dir.path()).unwrap(),
        registry: common::registry(),
    };
    (dir, router(Arc::new(state)))
}

async fn send(app: &Router, method: &str, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn upload_floor(app: &Router) -> String {
    let (status, body) = send(app, "POST", "/api/scenes", write_obj(&common::floor()).into_bytes()).await;
    assert_eq!(status, StatusCode::CREATED);
    let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
    v["scene_id"].as_str().unwrap().to_string()
}

async fn generate(app: &Router, req: &GenerateRequest) -> (StatusCode, Vec<u8>) {
    send(app, "POST", "/api/generate", serde_json::to_vec(req).unwrap()).await
}

fn error_code(body: &[u8]) -> String {
    let v: serde_json::Value = serde_json::from_slice(body).unwrap();
    v["error"]["code"].as_str().unwrap().to_string()
}

async fn merged(app: &Router, id: &str) -> String {
    let (status, body) = send(app, "GET", &format!("/api/scenes/{id}/merged.obj"), Vec::new()).await;
    assert_eq!(status, StatusCode::OK);
    String::from_utf8(body).unwrap()
}

fn drawn() -> Vec<u8> {
    common::square_png(48, 70, 80, 110)
}

#[tokio::test]
async fn healthz() {
    let (_d, app) = app();
    let (status, body) = send(&app, "GET", "/api/healthz", Vec::new()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<serde_json::Value>(&body).unwrap()["status"], "ok");
}

#[tokio::test]
async fn scene_upload_and_download() {
    let (_d, app) = app();
    let id = upload_floor(&app).await;
    let (status, body) = send(&app, "GET", &format!("/api/scenes/{id}/mesh.obj"), Vec::new()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(parse_obj(std::str::from_utf8(&body).unwrap()).unwrap(), common::floor());
    assert_eq!(parse_obj(&merged(&app, &id).await).unwrap(), common::floor());

    let (status, body) = send(&app, "GET", "/api/scenes/scene-0042/mesh.obj", Vec::new()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&body), "UnknownScene");
    let (status, body) = send(&app, "POST", "/api/scenes", b"v 0 0 0\nf 1 2 3\n".to_vec()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "BadRequest");
}

#[tokio::test]
async fn generate_places_a_valid_object() {
    let (_d, app) = app();
    let id = upload_floor(&app).await;
    let (status, body) = generate(&app, &common::request(&id, &drawn())).await;
    assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let resp: GenerateResponse = serde_json::from_slice(&body).unwrap();
    assert!(resp.transform.rotation.is_rotation(1e-9));
    assert!(resp.transform.scale > 0.0);
    let mesh = parse_obj(&resp.mesh).unwrap();
    mesh.validate().unwrap();
    assert!(resp.timing.total_ms > 0.0 && resp.timing.total_ms < 1000.0);
    let scene = parse_obj(&merged(&app, &id).await).unwrap();
    let floor = common::floor();
    assert_eq!(scene.vertices.len(), floor.vertices.len() + mesh.vertices.len());
    let min_y = scene.vertices[floor.vertices.len()..].iter().map(|v| v[1]).fold(f64::INFINITY, f64::min);
    assert!(min_y.abs() < 1e-6, "{min_y}");
}

#[tokio::test]
async fn same_request_twice_gives_new_ids_and_identical_meshes() {
    let (_d, app) = app();
    let id = upload_floor(&app).await;
    let req = common::request(&id, &drawn());
    let a: GenerateResponse = serde_json::from_slice(&generate(&app, &req).await.1).unwrap();
    let b: GenerateResponse = serde_json::from_slice(&generate(&app, &req).await.1).unwrap();
    assert_ne!(a.object_id, b.object_id);
    assert_eq!(a.mesh, b.mesh);
    assert_eq!(a.transform, b.transform);
    assert_eq!(a.predicted_pose, b.predicted_pose);
}

#[tokio::test]
async fn blank_sketch_leaves_the_scene_alone() {
    let (_d, app) = app();
    let id = upload_floor(&app).await;
    let before = merged(&app, &id).await;
    let blank = sketchforge::SketchImage::blank(common::VIEW, common::VIEW).to_png().unwrap();
    let (status, body) = generate(&app, &common::request(&id, &blank)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(error_code(&body), "EmptySketch");
    assert_eq!(merged(&app, &id).await, before);
}

#[tokio::test]
async fn error_codes_are_distinct() {
    let (_d, app) = app();
    let id = upload_floor(&app).await;
    let before = merged(&app, &id).await;

    let (status, body) = generate(&app, &common::request("scene-0099", &drawn())).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::NOT_FOUND, "UnknownScene"));

    let mut req = common::request(&id, &drawn());
    req.class = "sofa".into();
    let (status, body) = generate(&app, &req).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::NOT_FOUND, "UnknownClass"));

    let sky = common::square_png(50, 2, 70, 12);
    let (status, body) = generate(&app, &common::request(&id, &sky)).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::UNPROCESSABLE_ENTITY, "NoIntersection"));

    let mut req = common::request(&id, &drawn());
    req.sketch = "***".into();
    let (status, body) = generate(&app, &req).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::BAD_REQUEST, "BadRequest"));

    let (status, body) = send(&app, "POST", "/api/generate", b"{\"scene_id\": 3}".to_vec()).await;
    assert_eq!((status, error_code(&body).as_str()), (StatusCode::BAD_REQUEST, "BadRequest"));

    assert_eq!(merged(&app, &id).await, before);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_do_not_interfere() {
    let (_d, app) = app();
    let id = upload_floor(&app).await;
    let sketches = [
        common::square_png(48, 70, 80, 110),
        common::square_png(20, 80, 40, 120),
        common::square_png(90, 64, 120, 100),
        common::square_png(56, 90, 64, 100),
    ];
    let mut sequential = Vec::new();
    for s in &sketches {
        let r: GenerateResponse = serde_json::from_slice(&generate(&app, &common::request(&id, s)).await.1).unwrap();
        sequential.push(r);
    }
    let tasks: Vec<_> = sketches
        .iter()
        .chain(sketches.iter())
        .map(|s| {
            let (app, req) = (app.clone(), common::request(&id, s));
            tokio::spawn(async move { generate(&app, &req).await })
        })
        .collect();
    let mut ids = Vec::new();
    for (i, t) in tasks.into_iter().enumerate() {
        let (status, body) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        let r: GenerateResponse = serde_json::from_slice(&body).unwrap();
        let s = &sequential[i % sketches.len()];
        assert_eq!((&r.mesh, &r.transform, &r.predicted_pose), (&s.mesh, &s.transform, &s.predicted_pose));
        ids.push(r.object_id);
    }
    ids.extend(sequential.into_iter().map(|r| r.object_id));
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 12);
    let scene = parse_obj(&merged(&app, &id).await).unwrap();
    assert!(scene.vertices.len() > common::floor().vertices.len() + 11 * 600);
}
