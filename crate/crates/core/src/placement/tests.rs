use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::box_mesh;
use crate::nn::ModelConfig;

fn square_outline(w: usize, h: usize, x0: usize, y0: usize, side: usize) -> Vec<u8> {
    let mut img = vec![255u8; w * h];
    for i in 0..side {
        for (x, y) in [(x0 + i, y0), (x0 + i, y0 + side - 1), (x0, y0 + i), (x0 + side - 1, y0 + i)] {
            img[y * w + x] = 0;
        }
    }
    img
}

fn floor_scene() -> SceneDocument {
    SceneDocument::new(
        "floor",
        Mesh {
            vertices: vec![[-10.0, 0.0, -10.0], [10.0, 0.0, -10.0], [10.0, 0.0, 10.0], [-10.0, 0.0, 10.0]],
            faces: vec![[0, 2, 1], [0, 3, 2]],
        },
    )
}

#[test]
fn blank_sketch_is_empty() {
    assert!(matches!(preprocess_sketch(8, 8, &[255; 64], 64), Err(PlacementError::EmptySketch)));
    assert!(matches!(preprocess_sketch(8, 8, &[255; 10], 64), Err(PlacementError::InvalidInput(_))));
}

#[test]
fn centered_square_crop() {
    let img = square_outline(128, 128, 40, 40, 48);
    let (s, b) = preprocess_sketch(128, 128, &img, 64).unwrap();
    assert_eq!(b, SketchBox { x0: 40, y0: 40, x1: 87, y1: 87 });
    let strokes: Vec<(usize, usize)> = (0..64)
        .flat_map(|y| (0..64).map(move |x| (x, y)))
        .filter(|&(x, y)| s.is_stroke(x, y))
        .collect();
    let (xs, ys): (Vec<usize>, Vec<usize>) = strokes.iter().cloned().unzip();
    let (minx, maxx) = (*xs.iter().min().unwrap(), *xs.iter().max().unwrap());
    let (miny, maxy) = (*ys.iter().min().unwrap(), *ys.iter().max().unwrap());
    assert_eq!(minx + maxx, 63);
    assert_eq!(miny + maxy, 63);
    assert!(minx >= 5 && minx <= 6);
}

#[test]
fn preprocessing_is_idempotent() {
    let img = square_outline(200, 150, 30, 20, 100);
    let (once, _) = preprocess_sketch(200, 150, &img, 64).unwrap();
    let gray: Vec<u8> = once.pixels.iter().map(|&p| p * 255).collect();
    let (twice, _) = preprocess_sketch(64, 64, &gray, 64).unwrap();
    let (a, b) = (once.stroke_count() as f64, twice.stroke_count() as f64);
    assert!((a - b).abs() / a <= 0.05, "{a} vs {b}");
}

#[test]
fn offset_on_axis_hits_origin() {
    let intr = CameraIntrinsics::new(64, 64, 30.0).unwrap();
    let camera = ViewCamera {
        orientation: RotationMatrix::identity(),
        eye: [0.0, 0.0, 3.0],
        intrinsics: intr,
    };
    let wall = SceneDocument::new(
        "wall",
        Mesh {
            vertices: vec![[-5.0, -5.0, 0.0], [5.0, -5.0, 0.0], [5.0, 5.0, 0.0], [-5.0, 5.0, 0.0]],
            faces: vec![[0, 1, 2], [0, 2, 3]],
        },
    );
    let b = SketchBox { x0: 22, y0: 12, x1: 41, y1: 31 };
    let o = estimate_offset(&camera, &wall, &b, 1.0).unwrap();
    assert!(o.anchor.iter().all(|v| v.abs() < 1e-12), "{:?}", o.anchor);
    assert!((o.depth - 3.0).abs() < 1e-12);

    let full = SketchBox { x0: 0, y0: 0, x1: 63, y1: 63 };
    let far = SceneDocument::new("far", transform_plane_z(-2.0));
    let o = estimate_offset(&camera, &far, &full, 0.7).unwrap();
    let expected = 2.0 * o.depth * intr.tan_half_fov();
    assert!((o.scale * 0.7 - expected).abs() < 1e-12);

    let miss = SketchBox { x0: 0, y0: 0, x1: 5, y1: 2 };
    let tiny = SceneDocument::new("tiny", box_mesh([-0.1; 3], [0.1; 3]));
    assert!(matches!(estimate_offset(&camera, &tiny, &miss, 1.0), Err(PlacementError::NoIntersection)));
}

fn transform_plane_z(z: f64) -> Mesh {
    Mesh {
        vertices: vec![[-50.0, -50.0, z], [50.0, -50.0, z], [50.0, 50.0, z], [-50.0, 50.0, z]],
        faces: vec![[0, 1, 2], [0, 2, 3]],
    }
}

#[test]
fn rotation_from_viewpoints() {
    let p = CameraPose::canonical(20.0, 130.0);
    assert!(compute_rotation(&p, &p, true).max_abs_diff(&RotationMatrix::identity()) < 1e-12);
    assert!(compute_rotation(&p, &p, false).max_abs_diff(&RotationMatrix::identity()) < 1e-12);
    let r = compute_rotation(&CameraPose::canonical(0.0, 90.0), &CameraPose::canonical(0.0, 0.0), true);
    let v = r.apply([0.0, 0.0, 1.0]);
    assert!((v[0] + 1.0).abs() < 1e-12 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12, "{v:?}");
    let up = compute_rotation(&CameraPose::canonical(35.0, 10.0), &CameraPose::canonical(-5.0, 250.0), true).apply([0.0, 1.0, 0.0]);
    assert_eq!(up, [0.0, 1.0, 0.0]);
}

#[test]
fn full_rotation_matches_view_change() {
    let pred = CameraPose::canonical(25.0, 60.0);
    let target = CameraPose::canonical(-10.0, 200.0);
    let r = compute_rotation(&pred, &target, false);
    let intr = CameraIntrinsics::square(32);
    let seen_pred = ViewCamera::orbit(&pred, [0.0; 3], intr);
    let seen_target = ViewCamera::orbit(&target, [0.0; 3], intr);
    for p in [[0.1, 0.2, 0.3], [-0.4, 0.0, 0.2]] {
        let a = seen_pred.to_camera(p);
        let b = seen_target.to_camera(r.apply(p));
        assert!((0..3).all(|k| (a[k] - b[k]).abs() < 1e-12));
    }
}

#[test]
fn resting_placement_on_floor() {
    let obj = box_mesh([-0.3, -0.5, -0.2], [0.3, 0.4, 0.2]);
    let r = RotationMatrix::about_y(0.7);
    let tf = PlacementTransform::resting(&obj, r, 1.7, [1.0, 0.0, -2.0]).unwrap();
    let placed = tf.apply(&obj);
    let b = placed.bbox().unwrap();
    assert!(b.min[1].abs() < 1e-6);
    let c = b.bottom_center();
    assert!((c[0] - 1.0).abs() < 1e-9 && (c[2] + 2.0).abs() < 1e-9);
    assert!(PlacementTransform::resting(&obj, r, 0.0, [0.0; 3]).is_err());
}

#[test]
fn placing_objects() {
    let mut scene = floor_scene();
    let a = box_mesh([0.0; 3], [0.1; 3]);
    let b = box_mesh([1.0; 3], [1.2; 3]);
    let bad = PlacementTransform { scale: -1.0, ..PlacementTransform::default() };
    assert!(matches!(
        place_object(&mut scene, "x", a.clone(), bad, "t"),
        Err(PlacementError::Geometry(GeometryError::NonPositiveScale(_)))
    ));
    let mut ab = scene.clone();
    place_object(&mut ab, "a", a.clone(), PlacementTransform::default(), "t").unwrap();
    place_object(&mut ab, "b", b.clone(), PlacementTransform::default(), "t").unwrap();
    let mut ba = scene.clone();
    place_object(&mut ba, "b", b, PlacementTransform::default(), "t").unwrap();
    place_object(&mut ba, "a", a, PlacementTransform::default(), "t").unwrap();
    let tris = |m: &Mesh| {
        let mut t: Vec<String> = (0..m.faces.len()).map(|f| format!("{:?}", m.triangle(f))).collect();
        t.sort();
        t
    };
    assert_eq!(ab.objects.len(), 2);
    assert_eq!(tris(&ab.merged_mesh()), tris(&ba.merged_mesh()));
}

#[test]
fn transform_json_layout() {
    let tf = PlacementTransform {
        rotation: RotationMatrix::about_y(0.5),
        translation: [1.0, 2.0, 3.0],
        scale: 0.25,
    };
    let v: serde_json::Value = serde_json::to_value(tf).unwrap();
    assert_eq!(v["rotation"][0][2], serde_json::json!(0.5f64.sin()));
    assert_eq!(v["translation"], serde_json::json!([1.0, 2.0, 3.0]));
    assert_eq!(v["scale"], serde_json::json!(0.25));
    let back: PlacementTransform = serde_json::from_value(v).unwrap();
    assert_eq!(back, tf);
}

#[test]
fn pipeline_places_on_floor_with_forced_pose() {
    let weights = ModelWeights::init(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(3));
    let template = TemplateMesh::from_config(&weights.config);
    let scene = floor_scene();
    let gray = square_outline(128, 128, 40, 50, 40);
    let view = CameraPose::new(30.0, 20.0, 4.0).unwrap();
    let forced = CameraPose::canonical(10.0, 80.0);
    let req = SketchRequest {
        width: 128,
        height: 128,
        gray: &gray,
        view_pose: view,
        target: [0.0; 3],
        fov_deg: 30.0,
        upright: true,
        forced_pose: Some(forced),
    };
    let out = place_sketch(&weights, &template, &scene, &req).unwrap();
    assert_eq!(out.predicted_pose, forced);
    let expected = RotationMatrix::about_y((view.azimuth - forced.azimuth).to_radians());
    assert!(out.transform.rotation.max_abs_diff(&expected) < 1e-9);
    let placed = out.transform.apply(&out.mesh).bbox().unwrap();
    assert!(placed.min[1].abs() < 1e-6);
    let camera = ViewCamera::orbit(&view, [0.0; 3], CameraIntrinsics::new(128, 128, 30.0).unwrap());
    let (px, py) = out.sketch_box.bottom_center();
    let dir = camera.pixel_ray(px, py);
    let t = -camera.eye[1] / dir[1];
    let hit = math::add(camera.eye, math::scale(dir, t));
    let c = placed.bottom_center();
    assert!((c[0] - hit[0]).abs() < 1e-9 && (c[2] - hit[2]).abs() < 1e-9);
    assert!(out.timing.total_ms >= out.timing.encode_ms && out.timing.total_ms < 1000.0);

    let again = place_sketch(&weights, &template, &scene, &req).unwrap();
    assert_eq!(again.mesh, out.mesh);
    assert_eq!(again.transform, out.transform);
}

proptest! {
    #[test]
    fn preprocess_output_is_binary_with_strokes(
        w in 8usize..80, h in 8usize..80, seed in any::<u64>(), density in 0.001f64..0.3
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img: Vec<u8> = (0..w * h).map(|_| if rng.gen_bool(density) { rng.gen_range(0..128) } else { rng.gen_range(128..=255) }).collect();
        img[rng.gen_range(0..w * h)] = 0;
        let (s, b) = preprocess_sketch(w, h, &img, 64).unwrap();
        prop_assert!(s.pixels.iter().all(|&p| p <= 1));
        prop_assert!(s.stroke_count() >= 1);
        prop_assert!(b.x1 < w && b.y1 < h);
    }

    #[test]
    fn offset_scale_is_resolution_free(k in 1usize..5, y0 in 5usize..20, hgt in 3usize..10) {
        let floor = floor_scene();
        let pose = CameraPose::new(35.0, 0.0, 4.0).unwrap();
        let scales: Vec<f64> = [1, k].iter().map(|&f| {
            let intr = CameraIntrinsics::new(32 * f, 32 * f, 40.0).unwrap();
            let cam = ViewCamera::orbit(&pose, [0.0; 3], intr);
            let b = SketchBox { x0: 10 * f, y0: y0 * f, x1: 22 * f - 1, y1: (y0 + hgt) * f - 1 };
            estimate_offset(&cam, &floor, &b, 1.0).unwrap().scale
        }).collect();
        prop_assert!((scales[0] - scales[1]).abs() < 1e-9 * scales[0]);
    }
}
