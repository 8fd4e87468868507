use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::CameraPose;
use crate::raster::{SilhouetteImage, SketchImage};

fn weights(seed: u64) -> ModelWeights {
    ModelWeights::init(ModelConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed))
}

fn ring_sketch() -> SketchImage {
    let mut s = SketchImage::blank(64, 64);
    for i in 16..48 {
        for (x, y) in [(i, 16), (i, 47), (16, i), (47, i)] {
            s.pixels[y * 64 + x] = 0;
        }
    }
    s
}

fn unit(v: &[f64]) -> bool {
    (v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() < 1e-6
}

#[test]
fn encode_contract() {
    let w = weights(1);
    let a = encode(&ring_sketch(), &w).unwrap();
    assert_eq!(a.shape_code.len(), 512);
    assert_eq!(a.features.len(), 128);
    assert!(unit(&a.shape_code));
    let b = encode(&ring_sketch(), &w).unwrap();
    assert_eq!(a, b);
    assert!(matches!(encode(&SketchImage::blank(32, 32), &w), Err(NnError::ShapeMismatch(_))));
}

#[test]
fn zero_view_head_gives_range_center() {
    let mut w = weights(2);
    for name in ["view_head.fc2.w", "view_head.fc2.b"] {
        let t = w.params.get_mut(name).unwrap();
        t.data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let pose = predict_view(&[0.3; 128], &w).unwrap();
    assert!((pose.elevation - 15.0).abs() < 1e-9);
    assert!((pose.azimuth - 180.0).abs() < 1e-9);
}

#[test]
fn predicted_elevation_stays_in_range() {
    let w = weights(3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let f: Vec<f64> = (0..128).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let p = predict_view(&f, &w).unwrap();
        assert!((-30.0..=60.0).contains(&p.elevation));
    }
}

#[test]
fn view_code_contract() {
    let w = weights(5);
    let a = view_code(&CameraPose::canonical(0.0, 0.0), &w).unwrap();
    let b = view_code(&CameraPose::canonical(0.0, 360.0), &w).unwrap();
    let c = view_code(&CameraPose::canonical(0.0, 90.0), &w).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert!(unit(&a) && unit(&c));
    assert_eq!(a.len(), 512);
}

#[test]
fn decoder_contract() {
    let mut w = weights(6);
    let template = TemplateMesh::from_config(&w.config);
    assert_eq!(template.mesh.vertices.len(), 642);
    assert_eq!(template.mesh.faces.len(), 1280);
    let zs = encode(&ring_sketch(), &w).unwrap().shape_code;
    let zv = view_code(&CameraPose::canonical(10.0, 30.0), &w).unwrap();
    let m = decode_mesh(&zs, &zv, &w, &template).unwrap();
    assert_eq!(m.faces, template.mesh.faces);
    for (v, t) in m.vertices.iter().zip(&template.mesh.vertices) {
        assert!((0..3).all(|k| (v[k] - t[k]).abs() <= 0.75));
    }
    for name in ["dec.fc2.w", "dec.fc2.b"] {
        w.params.get_mut(name).unwrap().data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let flat = decode_mesh(&zs, &zv, &w, &template).unwrap();
    assert_eq!(flat, template.mesh);
}

fn random_silhouettes(n: usize, res: usize, seed: u64) -> Vec<SilhouetteImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| SilhouetteImage::new(res, res, (0..res * res).map(|_| rng.gen::<f64>()).collect()).unwrap())
        .collect()
}

#[test]
fn discriminator_stages() {
    let mut w = weights(7);
    assert_eq!(w.discriminator_stages(), 1);
    let imgs = random_silhouettes(3, 16, 8);
    let before = discriminate(&imgs, 0, &w).unwrap();
    assert_eq!(before.len(), 3);
    assert!(matches!(
        discriminate(&random_silhouettes(1, 32, 1), 0, &w),
        Err(NnError::StageResolutionMismatch { stage: 0, expected: 16, got: 32 })
    ));
    assert!(discriminate(&random_silhouettes(1, 32, 1), 1, &w).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    assert_eq!(w.grow_discriminator(&mut rng), 2);
    assert_eq!(discriminate(&imgs, 0, &w).unwrap(), before);
    assert_eq!(discriminate(&random_silhouettes(2, 32, 2), 1, &w).unwrap().len(), 2);
    w.grow_discriminator(&mut rng);
    assert_eq!(w.grow_discriminator(&mut rng), 3);
    assert_eq!(discriminate(&random_silhouettes(2, 64, 2), 2, &w).unwrap().len(), 2);
}

#[test]
fn discriminator_input_gradient_matches_fd() {
    let w = weights(10);
    let img = random_silhouettes(2, 16, 11);
    let data: Vec<f64> = img.iter().flat_map(|s| s.values.clone()).collect();
    let score = |d: &[f64]| -> f64 {
        let mut tape = Tape::new();
        let mut bind = Binding::frozen(&w);
        let x = tape.constant(Tensor::new(vec![2, 1, 16, 16], d.to_vec()));
        let s = discriminate_graph(&mut tape, &mut bind, x, 0).unwrap();
        tape.value(s).data().iter().sum::<f64>() / 2.0
    };
    let mut tape = Tape::new();
    let mut bind = Binding::frozen(&w);
    let x = tape.leaf(Tensor::new(vec![2, 1, 16, 16], data.clone()), true);
    let s = discriminate_graph(&mut tape, &mut bind, x, 0).unwrap();
    let m = tape.mean(s);
    tape.backward(m).unwrap();
    let g = tape.grad(x).unwrap().to_vec();
    assert!(g.iter().all(|v| v.is_finite()));
    for i in (0..data.len()).step_by(37) {
        let mut p = data.clone();
        let mut q = data.clone();
        p[i] += 1e-6;
        q[i] -= 1e-6;
        let fd = (score(&p) - score(&q)) / 2e-6;
        assert!((fd - g[i]).abs() <= 1e-6 + 1e-4 * fd.abs(), "{i}: {fd} vs {}", g[i]);
    }
}

#[test]
fn save_load_forward_is_bit_identical() {
    let w = weights(12);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.skf");
    save_weights(&w, &path).unwrap();
    let back = load_weights(&path).unwrap();
    assert_eq!(back, w);
    let a = encode(&ring_sketch(), &w).unwrap();
    let b = encode(&ring_sketch(), &back).unwrap();
    assert_eq!(a, b);
    assert!(w.is_finite());
}
