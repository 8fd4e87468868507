//! Putting a generated object into a scene: sketch preprocessing, offset
//! and scale from a ray cast through the sketch, rotation from the
//! predicted viewpoint, and the end-to-end pipeline.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{PlacedObject, SceneDocument};
use crate::geometry::{
    euler_to_rotation, math, CameraIntrinsics, CameraPose, GeometryError, Mesh, RotationMatrix, Vec3, ViewCamera,
};
use crate::nn::{decode_mesh, encode, predict_view, view_code, ModelWeights, NnError, TemplateMesh};
use crate::raster::SketchImage;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("sketch has no stroke pixels")]
    EmptySketch,
    #[error("ray through the sketch does not hit the scene")]
    NoIntersection,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Inclusive pixel bounds of the strokes in the original image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SketchBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl SketchBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    /// Continuous pixel coordinates of the middle of the bottom edge.
    pub fn bottom_center(&self) -> (f64, f64) {
        ((self.x0 + self.x1 + 1) as f64 * 0.5, (self.y1 + 1) as f64)
    }
}

/// Share of the stroke box added on each side before squaring the crop.
pub const CROP_MARGIN: f64 = 0.1;

/// Binarizes `gray` (stroke where < 128), crops to the stroke box grown by
/// [`CROP_MARGIN`] per side and squared around its center, and resamples to
/// `size²`. Upsampling is nearest-neighbor; when downsampling an output
/// pixel is a stroke if any source pixel centered inside it is, so thin
/// strokes survive.
pub fn preprocess_sketch(
    width: usize,
    height: usize,
    gray: &[u8],
    size: usize,
) -> Result<(SketchImage, SketchBox), PlacementError> {
    if width == 0 || height == 0 || gray.len() != width * height || size == 0 {
        return Err(PlacementError::InvalidInput(format!(
            "{} pixels for a {width}x{height} image",
            gray.len()
        )));
    }
    let stroke = |x: usize, y: usize| gray[y * width + x] < 128;
    let mut bbox: Option<SketchBox> = None;
    for y in 0..height {
        for x in 0..width {
            if stroke(x, y) {
                let b = bbox.get_or_insert(SketchBox { x0: x, y0: y, x1: x, y1: y });
                b.x0 = b.x0.min(x);
                b.x1 = b.x1.max(x);
                b.y1 = y;
            }
        }
    }
    let bbox = bbox.ok_or(PlacementError::EmptySketch)?;
    let extent = bbox.width().max(bbox.height()) as f64;
    let side = extent * (1.0 + 2.0 * CROP_MARGIN);
    let cx = (bbox.x0 + bbox.x1 + 1) as f64 * 0.5;
    let cy = (bbox.y0 + bbox.y1 + 1) as f64 * 0.5;
    let (left, top) = (cx - 0.5 * side, cy - 0.5 * side);
    let step = side / size as f64;
    let mut pixels = vec![1u8; size * size];
    if step <= 1.0 {
        for j in 0..size {
            for i in 0..size {
                let sx = (left + (i as f64 + 0.5) * step).floor();
                let sy = (top + (j as f64 + 0.5) * step).floor();
                if sx >= 0.0 && sy >= 0.0 && (sx as usize) < width && (sy as usize) < height && stroke(sx as usize, sy as usize) {
                    pixels[j * size + i] = 0;
                }
            }
        }
    } else {
        for y in bbox.y0..=bbox.y1 {
            for x in bbox.x0..=bbox.x1 {
                if stroke(x, y) {
                    let i = ((x as f64 + 0.5 - left) / step) as usize;
                    let j = ((y as f64 + 0.5 - top) / step) as usize;
                    pixels[j.min(size - 1) * size + i.min(size - 1)] = 0;
                }
            }
        }
    }
    let sketch = SketchImage {
        width: size,
        height: size,
        pixels,
    };
    if sketch.stroke_count() == 0 {
        return Err(PlacementError::EmptySketch);
    }
    Ok((sketch, bbox))
}

/// Similarity transform `v ↦ scale · R·v + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementTransform {
    pub rotation: RotationMatrix,
    pub translation: Vec3,
    pub scale: f64,
}

impl Default for PlacementTransform {
    fn default() -> Self {
        Self {
            rotation: RotationMatrix::identity(),
            translation: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl PlacementTransform {
    pub fn validate(&self) -> Result<(), PlacementError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(GeometryError::NonPositiveScale(self.scale).into());
        }
        if !self.rotation.is_rotation(1e-9) || !self.translation.iter().all(|v| v.is_finite()) {
            return Err(PlacementError::InvalidInput("rotation is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn apply_point(&self, v: Vec3) -> Vec3 {
        math::add(math::scale(self.rotation.apply(v), self.scale), self.translation)
    }

    pub fn apply(&self, mesh: &Mesh) -> Mesh {
        Mesh {
            vertices: mesh.vertices.iter().map(|&v| self.apply_point(v)).collect(),
            faces: mesh.faces.clone(),
        }
    }

    /// Transform that rotates `mesh` by `rotation`, scales it and puts the
    /// bottom center of the rotated bounding box on `anchor`.
    pub fn resting(mesh: &Mesh, rotation: RotationMatrix, scale: f64, anchor: Vec3) -> Result<Self, PlacementError> {
        let rotated = Self {
            rotation,
            translation: [0.0; 3],
            scale: 1.0,
        }
        .apply(mesh);
        let b = rotated.bbox().ok_or(GeometryError::EmptyMesh)?.bottom_center();
        let tf = Self {
            rotation,
            translation: math::sub(anchor, math::scale(b, scale)),
            scale,
        };
        tf.validate()?;
        Ok(tf)
    }
}

/// Möller–Trumbore; nearest hit distance along `dir` over both faces of
/// every triangle.
pub fn ray_cast(mesh: &Mesh, origin: Vec3, dir: Vec3) -> Option<f64> {
    let mut best: Option<f64> = None;
    for f in 0..mesh.faces.len() {
        let [a, b, c] = mesh.triangle(f);
        let e1 = math::sub(b, a);
        let e2 = math::sub(c, a);
        let p = math::cross(dir, e2);
        let det = math::dot(e1, p);
        if det.abs() < 1e-14 {
            continue;
        }
        let inv = 1.0 / det;
        let s = math::sub(origin, a);
        let u = math::dot(s, p) * inv;
        if !(0.0..=1.0).contains(&u) {
            continue;
        }
        let q = math::cross(s, e1);
        let v = math::dot(dir, q) * inv;
        if v < 0.0 || u + v > 1.0 {
            continue;
        }
        let t = math::dot(e2, q) * inv;
        if t > 1e-9 && best.map_or(true, |b| t < b) {
            best = Some(t);
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Offset {
    /// Scene point under the bottom center of the sketch box.
    pub anchor: Vec3,
    /// Uniform scale making the object's canonical height span the box.
    pub scale: f64,
    /// View-axis depth of `anchor`.
    pub depth: f64,
}

/// Casts a ray through the bottom center of `bbox` (pixel coordinates of an
/// image the size of `camera.intrinsics`) and sizes the object so that
/// `canonical_height` at the hit depth subtends the box height.
pub fn estimate_offset(
    camera: &ViewCamera,
    scene: &SceneDocument,
    bbox: &SketchBox,
    canonical_height: f64,
) -> Result<Offset, PlacementError> {
    let intr: CameraIntrinsics = camera.intrinsics;
    if bbox.x1 < bbox.x0 || bbox.y1 < bbox.y0 || bbox.x1 >= intr.width || bbox.y1 >= intr.height {
        return Err(PlacementError::InvalidInput(format!("box {bbox:?} outside {}x{}", intr.width, intr.height)));
    }
    if !(canonical_height > 0.0 && canonical_height.is_finite()) {
        return Err(PlacementError::InvalidInput(format!("canonical height {canonical_height}")));
    }
    if scene.mesh.is_empty() {
        return Err(GeometryError::EmptyMesh.into());
    }
    let (px, py) = bbox.bottom_center();
    let dir = camera.pixel_ray(px, py);
    let t = ray_cast(&scene.mesh, camera.eye, dir).ok_or(PlacementError::NoIntersection)?;
    let anchor = math::add(camera.eye, math::scale(dir, t));
    let depth = camera.depth_of(anchor);
    let frac = bbox.height() as f64 / intr.height as f64;
    let scale = frac * 2.0 * depth * intr.tan_half_fov() / canonical_height;
    Ok(Offset { anchor, scale, depth })
}

/// Rotation taking the object as drawn from `pred` to how it should look
/// from `target`. Upright placement turns about world up by
/// `azimuth(target) − azimuth(pred)`; otherwise the elevation change is
/// applied too.
pub fn compute_rotation(pred: &CameraPose, target: &CameraPose, upright: bool) -> RotationMatrix {
    if upright {
        RotationMatrix::about_y((target.azimuth - pred.azimuth).to_radians())
    } else {
        euler_to_rotation(target).mul(&euler_to_rotation(pred).transpose())
    }
}

/// Appends an object to the scene.
pub fn place_object(
    scene: &mut SceneDocument,
    id: impl Into<String>,
    mesh: Mesh,
    transform: PlacementTransform,
    source: impl Into<String>,
) -> Result<(), PlacementError> {
    transform.validate()?;
    scene.objects.push(PlacedObject {
        id: id.into(),
        mesh,
        transform,
        source: source.into(),
    });
    Ok(())
}

/// Milliseconds spent in each pipeline stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub preprocess_ms: f64,
    pub encode_ms: f64,
    pub predict_ms: f64,
    pub decode_ms: f64,
    pub place_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SketchPlacement {
    /// Generated mesh in canonical space.
    pub mesh: Mesh,
    pub predicted_pose: CameraPose,
    pub transform: PlacementTransform,
    pub sketch_box: SketchBox,
    pub timing: Timing,
}

/// Everything the pipeline needs besides the weights and the scene.
#[derive(Clone, Debug)]
pub struct SketchRequest<'a> {
    pub width: usize,
    pub height: usize,
    pub gray: &'a [u8],
    /// Pose the user drew from, orbiting `target`.
    pub view_pose: CameraPose,
    pub target: Vec3,
    pub fov_deg: f64,
    pub upright: bool,
    /// Skips viewpoint prediction and uses this pose instead.
    pub forced_pose: Option<CameraPose>,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Preprocess, encode, predict the view, decode at that view, then place
/// the mesh resting on the scene under the sketch. The scene is not modified.
pub fn place_sketch(
    weights: &ModelWeights,
    template: &TemplateMesh,
    scene: &SceneDocument,
    req: &SketchRequest,
) -> Result<SketchPlacement, PlacementError> {
    let start = Instant::now();
    let size = weights.config.input_size;
    let (sketch, sketch_box) = preprocess_sketch(req.width, req.height, req.gray, size)?;
    let preprocess_ms = ms(start);

    let t = Instant::now();
    let enc = encode(&sketch, weights)?;
    let encode_ms = ms(t);

    let t = Instant::now();
    let predicted_pose = match req.forced_pose {
        Some(p) => p,
        None => predict_view(&enc.features, weights)?,
    };
    let predict_ms = ms(t);

    let t = Instant::now();
    let zv = view_code(&predicted_pose, weights)?;
    let mesh = decode_mesh(&enc.shape_code, &zv, weights, template)?;
    let decode_ms = ms(t);

    let t = Instant::now();
    let intr = CameraIntrinsics::new(req.width, req.height, req.fov_deg)?;
    let camera = ViewCamera::orbit(&req.view_pose, req.target, intr);
    let rotation = compute_rotation(&predicted_pose, &req.view_pose, req.upright);
    let rotated = PlacementTransform {
        rotation,
        ..PlacementTransform::default()
    }
    .apply(&mesh);
    let extent = rotated.bbox().ok_or(GeometryError::EmptyMesh)?.extent();
    let offset = estimate_offset(&camera, scene, &sketch_box, extent[1].max(1e-9))?;
    let transform = PlacementTransform::resting(&mesh, rotation, offset.scale, offset.anchor)?;
    let place_ms = ms(t);

    Ok(SketchPlacement {
        mesh,
        predicted_pose,
        transform,
        sketch_box,
        timing: Timing {
            preprocess_ms,
            encode_ms,
            predict_ms,
            decode_ms,
            place_ms,
            total_ms: ms(start),
        },
    })
}

#[cfg(test)]
mod tests;
