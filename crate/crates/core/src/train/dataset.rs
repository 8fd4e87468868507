//! Procedural box-furniture shapes and their synthetic sketches.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_pose, PoseDistribution, TrainError};
use crate::geometry::{box_mesh, merge_meshes, parse_obj, transform_mesh, write_obj, CameraIntrinsics, CameraPose, Mesh, RotationMatrix, Vec3};
use crate::raster::{decode_gray_png, SilhouetteImage, SketchImage};
use crate::render::render_hard_silhouette;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeFamily {
    Chair,
    Table,
    Lamp,
}

impl ShapeFamily {
    pub const ALL: [ShapeFamily; 3] = [ShapeFamily::Chair, ShapeFamily::Table, ShapeFamily::Lamp];

    pub fn name(self) -> &'static str {
        match self {
            ShapeFamily::Chair => "chair",
            ShapeFamily::Table => "table",
            ShapeFamily::Lamp => "lamp",
        }
    }

    /// A random member of the family, centered at the origin with bounding
    /// radius 0.5. Front faces +Z, up is +Y.
    pub fn generate(self, rng: &mut impl Rng) -> Mesh {
        let boxes = match self {
            ShapeFamily::Chair => chair(rng),
            ShapeFamily::Table => table(rng),
            ShapeFamily::Lamp => lamp(rng),
        };
        let raw = boxes
            .iter()
            .fold(Mesh::empty(), |m, (lo, hi)| merge_meshes(&m, &box_mesh(*lo, *hi)));
        normalize(&raw)
    }
}

impl fmt::Display for ShapeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeFamily {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| TrainError::UnknownFamily(s.to_string()))
    }
}

type Cuboid = (Vec3, Vec3);

fn legs(rng: &mut impl Rng, w: f64, d: f64, h: f64) -> Vec<Cuboid> {
    let t = rng.gen_range(0.07..0.14);
    let (x, z) = (w / 2.0, d / 2.0);
    [(-x, -z), (x - t, -z), (-x, z - t), (x - t, z - t)]
        .into_iter()
        .map(|(x0, z0)| ([x0, 0.0, z0], [x0 + t, h, z0 + t]))
        .collect()
}

fn chair(rng: &mut impl Rng) -> Vec<Cuboid> {
    let w = rng.gen_range(0.8..1.2);
    let d = rng.gen_range(0.8..1.1);
    let h = rng.gen_range(0.7..1.0);
    let seat = rng.gen_range(0.08..0.15);
    let back_h = rng.gen_range(0.6..1.1);
    let back_t = rng.gen_range(0.06..0.12);
    let mut parts = legs(rng, w, d, h);
    parts.push(([-w / 2.0, h, -d / 2.0], [w / 2.0, h + seat, d / 2.0]));
    parts.push(([-w / 2.0, h + seat, -d / 2.0], [w / 2.0, h + seat + back_h, -d / 2.0 + back_t]));
    parts
}

fn table(rng: &mut impl Rng) -> Vec<Cuboid> {
    let w = rng.gen_range(1.2..2.0);
    let d = rng.gen_range(0.7..1.2);
    let h = rng.gen_range(0.7..1.0);
    let top = rng.gen_range(0.06..0.12);
    let mut parts = legs(rng, w, d, h);
    parts.push(([-w / 2.0, h, -d / 2.0], [w / 2.0, h + top, d / 2.0]));
    parts
}

fn lamp(rng: &mut impl Rng) -> Vec<Cuboid> {
    let base = rng.gen_range(0.4..0.7) / 2.0;
    let base_h = rng.gen_range(0.05..0.1);
    let pole = rng.gen_range(0.05..0.1) / 2.0;
    let pole_h = rng.gen_range(0.8..1.4);
    let shade = rng.gen_range(0.4..0.8) / 2.0;
    let shade_h = rng.gen_range(0.3..0.5);
    let top = base_h + pole_h;
    vec![
        ([-base, 0.0, -base], [base, base_h, base]),
        ([-pole, base_h, -pole], [pole, top, pole]),
        ([-shade, top, -shade], [shade, top + shade_h, shade]),
    ]
}

/// Centers the bounding box at the origin and scales to bounding radius 0.5.
pub fn normalize(mesh: &Mesh) -> Mesh {
    let Some(bb) = mesh.bbox() else {
        return mesh.clone();
    };
    let c = bb.center();
    let radius = mesh
        .vertices
        .iter()
        .map(|v| ((v[0] - c[0]).powi(2) + (v[1] - c[1]).powi(2) + (v[2] - c[2]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    if radius <= 0.0 {
        return mesh.clone();
    }
    let s = 0.5 / radius;
    transform_mesh(mesh, &RotationMatrix::identity(), [-c[0] * s, -c[1] * s, -c[2] * s], s).expect("positive scale")
}

/// One training example: a sketch of `mesh` seen from `gt_pose`.
#[derive(Clone, Debug)]
pub struct SketchSample {
    pub sketch: SketchImage,
    /// Filled sketch interior, the silhouette supervision target.
    pub target: SilhouetteImage,
    pub gt_pose: CameraPose,
    pub mesh: Arc<Mesh>,
    pub class: ShapeFamily,
    pub shape_id: usize,
}

impl SketchSample {
    pub fn new(mesh: Arc<Mesh>, pose: CameraPose, size: usize, class: ShapeFamily, shape_id: usize) -> Result<Self, TrainError> {
        let sil = render_hard_silhouette(&mesh, &pose, &CameraIntrinsics::square(size))?;
        let sketch = sil.outer_contour();
        let target = sketch.filled_region();
        Ok(Self {
            sketch,
            target,
            gt_pose: pose,
            mesh,
            class,
            shape_id,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub families: Vec<ShapeFamily>,
    pub shapes_per_family: usize,
    pub poses_per_shape: usize,
    pub image_size: usize,
    pub poses: PoseDistribution,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            families: vec![ShapeFamily::Chair],
            shapes_per_family: 200,
            poses_per_shape: 24,
            image_size: 64,
            poses: PoseDistribution::default(),
            seed: 0,
        }
    }
}

/// Deterministic dataset: for each family, `shapes_per_family` shapes, each
/// seen from `poses_per_shape` poses drawn from `spec.poses`. Shape ids are
/// consecutive across families.
pub fn generate_toy_dataset(spec: &DatasetSpec) -> Result<Vec<SketchSample>, TrainError> {
    spec.poses.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.families.len() * spec.shapes_per_family * spec.poses_per_shape);
    let mut shape_id = 0;
    for &family in &spec.families {
        for _ in 0..spec.shapes_per_family {
            let mesh = Arc::new(family.generate(&mut rng));
            for _ in 0..spec.poses_per_shape {
                let pose = sample_pose(&spec.poses, &mut rng);
                out.push(SketchSample::new(mesh.clone(), pose, spec.image_size, family, shape_id)?);
            }
            shape_id += 1;
        }
    }
    Ok(out)
}

/// Splits by shape so no held-out shape is seen in training: every shape
/// with `shape_id % k == k − 1` goes to the held-out side, where
/// `k = round(1 / holdout_fraction)`.
pub fn split_by_shape(samples: &[SketchSample], holdout_fraction: f64) -> (Vec<SketchSample>, Vec<SketchSample>) {
    let k = (1.0 / holdout_fraction.clamp(1e-6, 1.0)).round().max(1.0) as usize;
    samples
        .iter()
        .cloned()
        .partition(|s| k == 1 || s.shape_id % k != k - 1)
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    sketch: String,
    mesh: String,
    class: ShapeFamily,
    shape_id: usize,
    elevation: f64,
    azimuth: f64,
    distance: f64,
}

/// Writes `manifest.json`, one OBJ per shape under `meshes/` and one PNG
/// per sample under `sketches/`.
pub fn write_dataset(dir: &Path, samples: &[SketchSample]) -> Result<(), TrainError> {
    std::fs::create_dir_all(dir.join("meshes"))?;
    std::fs::create_dir_all(dir.join("sketches"))?;
    let mut entries = Vec::with_capacity(samples.len());
    let mut written = std::collections::BTreeSet::new();
    for (i, s) in samples.iter().enumerate() {
        let mesh = format!("meshes/shape_{:05}.obj", s.shape_id);
        if written.insert(s.shape_id) {
            std::fs::write(dir.join(&mesh), write_obj(&s.mesh))?;
        }
        let sketch = format!("sketches/{i:06}.png");
        std::fs::write(dir.join(&sketch), s.sketch.to_png()?)?;
        entries.push(ManifestEntry {
            sketch,
            mesh,
            class: s.class,
            shape_id: s.shape_id,
            elevation: s.gt_pose.elevation,
            azimuth: s.gt_pose.azimuth,
            distance: s.gt_pose.distance,
        });
    }
    let json = serde_json::to_vec_pretty(&entries).map_err(|e| TrainError::Manifest(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`].
pub fn load_dataset(dir: &Path) -> Result<Vec<SketchSample>, TrainError> {
    let bytes = std::fs::read(dir.join("manifest.json"))?;
    let entries: Vec<ManifestEntry> = serde_json::from_slice(&bytes).map_err(|e| TrainError::Manifest(e.to_string()))?;
    let mut meshes = std::collections::BTreeMap::new();
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let mesh = match meshes.get(&e.mesh) {
            Some(m) => Arc::clone(m),
            None => {
                let text = std::fs::read_to_string(dir.join(&e.mesh))?;
                let m = Arc::new(parse_obj(&text)?);
                meshes.insert(e.mesh.clone(), Arc::clone(&m));
                m
            }
        };
        let img = decode_gray_png(&std::fs::read(dir.join(&e.sketch))?)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let pixels = img.pixels().map(|p| u8::from(p.0[0] >= 128)).collect();
        let sketch = SketchImage::new(w, h, pixels)?;
        let target = sketch.filled_region();
        out.push(SketchSample {
            sketch,
            target,
            gt_pose: CameraPose::new(e.elevation, e.azimuth, e.distance)?,
            mesh,
            class: e.class,
            shape_id: e.shape_id,
        });
    }
    Ok(out)
}
