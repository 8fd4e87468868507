use sketchforge::fusion::{
    integrate_depth, load_depth_sequence, load_scene_mesh, write_depth_sequence, DepthFrame, SceneDocument,
    TsdfVolume,
};
use sketchforge::geometry::{box_mesh, parse_obj, write_obj, ViewCamera};
use sketchforge::nn::{load_weights, save_weights, TemplateMesh};
use sketchforge::placement::{place_object, place_sketch, PlacementError, SketchRequest};
use sketchforge::render::render_depth;
use sketchforge::train::{
    generate_toy_dataset, load_dataset, split_by_shape, train, write_dataset, DatasetSpec, TrainConfig,
};
use sketchforge::{CameraIntrinsics, CameraPose};

fn tiny_spec() -> DatasetSpec {
    DatasetSpec {
        shapes_per_family: 5,
        poses_per_shape: 2,
        ..DatasetSpec::default()
    }
}

fn floor_scene() -> SceneDocument {
    SceneDocument::new("floor", box_mesh([-6.0, -0.1, -6.0], [6.0, 0.0, 6.0]))
}

fn square_sketch(size: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Vec<u8> {
    let mut g = vec![255u8; size * size];
    for y in y0..=y1 {
        for x in x0..=x1 {
            if y == y0 || y == y1 || x == x0 || x == x1 {
                g[y * size + x] = 0;
            }
        }
    }
    g
}

#[test]
fn dataset_round_trips_and_splits_by_shape() {
    let data = generate_toy_dataset(&tiny_spec()).unwrap();
    assert_eq!(data.len(), 10);
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &data).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), data.len());
    for (a, b) in data.iter().zip(&back) {
        assert_eq!(a.sketch, b.sketch);
        assert_eq!(a.shape_id, b.shape_id);
        assert!((a.gt_pose.elevation - b.gt_pose.elevation).abs() < 1e-9);
    }
    let (tr, held) = split_by_shape(&data, 0.2);
    assert_eq!(tr.len() + held.len(), data.len());
    assert!(!held.is_empty());
    assert!(held.iter().all(|h| tr.iter().all(|t| t.shape_id != h.shape_id)));
}

#[test]
fn trained_weights_drive_placement_after_reload() {
    let data = generate_toy_dataset(&tiny_spec()).unwrap();
    let cfg = TrainConfig {
        steps: 3,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let (weights, metrics) = train(cfg, &data, None, None).unwrap();
    assert_eq!(metrics.len(), 3);
    assert!(metrics.iter().all(|m| m.total.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chair.skw");
    save_weights(&weights, &path).unwrap();
    let weights = load_weights(&path).unwrap();
    let template = TemplateMesh::from_config(&weights.config);

    let gray = square_sketch(128, 50, 70, 78, 100);
    let scene = floor_scene();
    let req = SketchRequest {
        width: 128,
        height: 128,
        gray: &gray,
        view_pose: CameraPose::new(30.0, 20.0, 4.0).unwrap(),
        target: [0.0; 3],
        fov_deg: 60.0,
        upright: true,
        forced_pose: None,
    };
    let placed = place_sketch(&weights, &template, &scene, &req).unwrap();
    assert!(placed.transform.rotation.is_rotation(1e-9));
    assert!(placed.transform.scale > 0.0);
    let world = placed.transform.apply(&placed.mesh);
    let b = world.bbox().unwrap();
    assert!(b.min[1].abs() < 1e-6, "{:?}", b.min);

    let mut scene = scene;
    place_object(&mut scene, "obj-1", placed.mesh.clone(), placed.transform, "chair").unwrap();
    let merged = scene.merged_mesh();
    assert_eq!(merged.vertices.len(), scene.mesh.vertices.len() + placed.mesh.vertices.len());

    let blank = vec![255u8; 128 * 128];
    let err = place_sketch(&weights, &template, &scene, &SketchRequest { gray: &blank, ..req }).unwrap_err();
    assert!(matches!(err, PlacementError::EmptySketch));
}

#[test]
fn depth_sequence_fuses_into_an_importable_scene() {
    let object = box_mesh([-0.5, 0.0, -0.5], [0.5, 0.6, 0.5]);
    let intr = CameraIntrinsics::new(64, 64, 60.0).unwrap();
    let frames: Vec<DepthFrame> = [0.0, 90.0, 180.0, 270.0]
        .iter()
        .map(|&az| {
            let cam = ViewCamera::orbit(&CameraPose::new(25.0, az, 2.5).unwrap(), [0.0, 0.3, 0.0], intr);
            DepthFrame::from_camera(render_depth(&object, &cam), &cam)
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    write_depth_sequence(dir.path(), &frames).unwrap();
    let frames = load_depth_sequence(dir.path()).unwrap();
    assert_eq!(frames.len(), 4);

    let mut vol = TsdfVolume::centered([0.0, 0.3, 0.0], 40, 0.04, 0.12).unwrap();
    integrate_depth(&mut vol, &frames).unwrap();
    let scene = SceneDocument::from_volume("fused", vol).unwrap();
    let b = scene.mesh.bbox().unwrap();
    for (got, want) in b.min.iter().zip([-0.5, 0.0, -0.5]) {
        assert!((got - want).abs() < 0.1, "{:?}", b);
    }
    for (got, want) in b.max.iter().zip([0.5, 0.6, 0.5]) {
        assert!((got - want).abs() < 0.1, "{:?}", b);
    }

    let text = write_obj(&scene.mesh);
    let imported = load_scene_mesh("imported", text.as_bytes()).unwrap();
    assert_eq!(imported.mesh.faces, scene.mesh.faces);
    assert_eq!(parse_obj(&text).unwrap().vertices.len(), scene.mesh.vertices.len());
}
