#![allow(dead_code)]

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use sketchforge::geometry::box_mesh;
use sketchforge::nn::ModelWeights;
use sketchforge::train::{TrainConfig, Trainer};
use sketchforge::{CameraPose, Mesh, SketchImage};
use sketchforge_cli::{GenerateRequest, Registry, Store};

pub const VIEW: usize = 128;

pub fn floor() -> Mesh {
    box_mesh([-6.0, -0.1, -6.0], [6.0, 0.0, 6.0])
}

pub fn weights() -> ModelWeights {
    Trainer::new(TrainConfig::default()).unwrap().weights
}

pub fn registry() -> Registry {
    let mut r = Registry::default();
    r.insert("chair", weights());
    r
}

/// Square outline with corners `(x0, y0)` and `(x1, y1)` as a PNG.
pub fn square_png(x0: usize, y0: usize, x1: usize, y1: usize) -> Vec<u8> {
    let mut s = SketchImage::blank(VIEW, VIEW);
    for y in y0..=y1 {
        for x in x0..=x1 {
            if x == x0 || x == x1 || y == y0 || y == y1 {
                s.pixels[y * VIEW + x] = 0;
            }
        }
    }
    s.to_png().unwrap()
}

pub fn view_pose() -> CameraPose {
    CameraPose::new(30.0, 20.0, 4.0).unwrap()
}

pub fn request(scene_id: &str, png: &[u8]) -> GenerateRequest {
    GenerateRequest {
        scene_id: scene_id.to_string(),
        view_pose: view_pose(),
        target: [0.0; 3],
        fov_deg: 60.0,
        sketch: STANDARD.encode(png),
        class: "chair".into(),
        upright: true,
    }
}

pub fn store_with_floor() -> (tempfile::TempDir, Store, String) {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let id = store.create_scene(&floor()).unwrap();
    (dir, store, id)
}
