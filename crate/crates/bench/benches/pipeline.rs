use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use sketchforge::fusion::{integrate_depth, DepthFrame, SceneDocument, TsdfVolume};
use sketchforge::geometry::ViewCamera;
use sketchforge::nn::{decode_mesh, encode, predict_view, view_code, Tape, Tensor, TemplateMesh};
use sketchforge::placement::{place_sketch, SketchRequest};
use sketchforge::render::{render_depth, render_soft_graph, render_soft_view, RasterParams};
use sketchforge::train::{TrainConfig, Trainer};
use sketchforge::{CameraIntrinsics, CameraPose};
use sketchforge_bench::{blob, floor, samples, square_sketch};

fn render(c: &mut Criterion) {
    let mesh = blob();
    let cam = ViewCamera::orbit(&CameraPose::canonical(20.0, 45.0), [0.0; 3], CameraIntrinsics::square(64));
    let params = RasterParams::default();
    c.bench_function("soft_render_64", |b| b.iter(|| render_soft_view(&mesh, &cam, &params).unwrap()));
    let faces: Arc<[[usize; 3]]> = mesh.faces.clone().into();
    let flat: Vec<f64> = mesh.vertices.iter().flatten().copied().collect();
    c.bench_function("soft_render_64_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let v = tape.leaf(Tensor::new(vec![flat.len() / 3, 3], flat.clone()), true);
            let s = render_soft_graph(&mut tape, v, &faces, &cam, &params).unwrap();
            let total = tape.sum(s);
            tape.backward(total).unwrap();
        })
    });
}

fn inference(c: &mut Criterion) {
    let trainer = Trainer::new(TrainConfig::default()).unwrap();
    let weights = trainer.weights;
    let template = TemplateMesh::from_config(&weights.config);
    let sketch = samples(1).swap_remove(0).sketch;
    c.bench_function("encode_predict_decode", |b| {
        b.iter(|| {
            let enc = encode(&sketch, &weights).unwrap();
            let pose = predict_view(&enc.features, &weights).unwrap();
            let zv = view_code(&pose, &weights).unwrap();
            decode_mesh(&enc.shape_code, &zv, &weights, &template).unwrap()
        })
    });
    let scene = SceneDocument::new("floor", floor());
    let gray = square_sketch(256);
    let req = SketchRequest {
        width: 256,
        height: 256,
        gray: &gray,
        view_pose: CameraPose::new(35.0, 20.0, 4.0).unwrap(),
        target: [0.0; 3],
        fov_deg: 60.0,
        upright: true,
        forced_pose: None,
    };
    c.bench_function("place_sketch_256", |b| b.iter(|| place_sketch(&weights, &template, &scene, &req).unwrap()));
}

fn fusion(c: &mut Criterion) {
    let mesh = blob();
    let intr = CameraIntrinsics::new(128, 128, 40.0).unwrap();
    let frames: Vec<DepthFrame> = [0.0, 90.0, 180.0, 270.0]
        .iter()
        .map(|&a| {
            let cam = ViewCamera::orbit(&CameraPose::new(15.0, a, 2.5).unwrap(), [0.0; 3], intr);
            DepthFrame::from_camera(render_depth(&mesh, &cam), &cam)
        })
        .collect();
    let empty = TsdfVolume::centered([0.0; 3], 64, 0.02, 0.06).unwrap();
    c.bench_function("tsdf_integrate_4x128_into_64", |b| {
        b.iter_batched(|| empty.clone(), |mut v| integrate_depth(&mut v, &frames).unwrap(), BatchSize::LargeInput)
    });
    let mut full = empty.clone();
    integrate_depth(&mut full, &frames).unwrap();
    c.bench_function("marching_cubes_64", |b| b.iter(|| full.extract_mesh().unwrap()));
}

fn training(c: &mut Criterion) {
    let data = samples(8);
    let mut g = c.benchmark_group("train_step_batch4");
    g.sample_size(10);
    for (name, rps, sd) in [("baseline", false, false), ("rps", true, false), ("rps_sd", true, true)] {
        let mut trainer = Trainer::new(TrainConfig {
            batch_size: 4,
            steps: usize::MAX,
            rps,
            sd,
            ..TrainConfig::default()
        })
        .unwrap();
        g.bench_function(name, |b| b.iter(|| trainer.step(&data).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, render, inference, fusion, training);
criterion_main!(benches);
