//! Shared fixtures for the benchmarks.

use sketchforge::geometry::{box_mesh, icosphere};
use sketchforge::train::{generate_toy_dataset, DatasetSpec, SketchSample};
use sketchforge::Mesh;

pub fn blob() -> Mesh {
    icosphere(3, 0.45)
}

pub fn floor() -> Mesh {
    box_mesh([-4.0, -0.2, -4.0], [4.0, 0.0, 4.0])
}

pub fn samples(n: usize) -> Vec<SketchSample> {
    generate_toy_dataset(&DatasetSpec {
        shapes_per_family: n,
        poses_per_shape: 1,
        ..DatasetSpec::default()
    })
    .expect("toy dataset")
}

/// `size²` grayscale image with a square outline; 0 is ink.
pub fn square_sketch(size: usize) -> Vec<u8> {
    let (lo, hi) = (size * 3 / 8, size * 7 / 8 - 1);
    (0..size * size)
        .map(|i| {
            let (x, y) = (i % size, i / size);
            let edge = (x == lo || x == hi) && (lo..=hi).contains(&y) || (y == lo || y == hi) && (lo..=hi).contains(&x);
            if edge { 0 } else { 255 }
        })
        .collect()
}
