//! Scene reconstruction: weighted TSDF fusion of posed depth maps,
//! marching-cubes extraction and the scene document that placed objects
//! are added to.

mod io;
mod tables;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{decode_depth_png, encode_depth_png, load_depth_sequence, write_depth_sequence, FrameEntry};

use crate::geometry::{math, merge_meshes, parse_obj, CameraIntrinsics, GeometryError, Mesh, Vec3, ViewCamera};
use crate::placement::PlacementTransform;
use crate::raster::RasterError;
use tables::TRIANGLE_TABLE;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid depth frame: {0}")]
    InvalidFrame(String),
    #[error("volume has no surface crossing")]
    EmptySurface,
    #[error("frame manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A depth map in meters (0 = invalid) with its camera.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthFrame {
    /// Row-major view-axis depth.
    pub depth: Vec<f64>,
    pub intrinsics: CameraIntrinsics,
    /// Row-major world-from-camera transform; the camera looks down −Z.
    pub world_from_camera: [[f64; 4]; 4],
}

impl DepthFrame {
    pub fn from_camera(depth: Vec<f64>, camera: &ViewCamera) -> Self {
        Self {
            depth,
            intrinsics: camera.intrinsics,
            world_from_camera: camera.world_from_camera(),
        }
    }

    pub fn camera(&self) -> Result<ViewCamera, FusionError> {
        let intr = self.intrinsics;
        if self.depth.len() != intr.width * intr.height {
            return Err(FusionError::InvalidFrame(format!(
                "{} depths for a {}x{} image",
                self.depth.len(),
                intr.width,
                intr.height
            )));
        }
        if let Some(d) = self.depth.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(FusionError::InvalidFrame(format!("depth {d}")));
        }
        Ok(ViewCamera::from_world_from_camera(&self.world_from_camera, intr)?)
    }
}

/// Voxel grid of truncated signed distances, normalized to `[-1, 1]` by the
/// truncation distance, with per-voxel integration weights. Samples sit at
/// `origin + index · voxel_size`; index order is x fastest, then y, then z.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TsdfVolume {
    pub resolution: [usize; 3],
    pub voxel_size: f64,
    pub truncation: f64,
    pub origin: Vec3,
    pub tsdf: Vec<f64>,
    pub weight: Vec<f64>,
}

impl TsdfVolume {
    pub const DEFAULT_VOXEL: f64 = 0.04;
    pub const DEFAULT_TRUNCATION: f64 = 0.12;
    pub const DEFAULT_RESOLUTION: usize = 128;

    pub fn new(resolution: [usize; 3], voxel_size: f64, truncation: f64, origin: Vec3) -> Result<Self, FusionError> {
        if resolution.iter().any(|&r| r < 2) {
            return Err(FusionError::InvalidVolume(format!("resolution {resolution:?}")));
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) || !origin.iter().all(|v| v.is_finite()) {
            return Err(FusionError::InvalidVolume(format!("voxel size {voxel_size}")));
        }
        if !(truncation >= 2.0 * voxel_size && truncation.is_finite()) {
            return Err(FusionError::InvalidVolume(format!(
                "truncation {truncation} below twice the voxel size {voxel_size}"
            )));
        }
        let n = resolution.iter().product();
        Ok(Self {
            resolution,
            voxel_size,
            truncation,
            origin,
            tsdf: vec![1.0; n],
            weight: vec![0.0; n],
        })
    }

    /// Cube of `resolution³` voxels centered on `center`.
    pub fn centered(center: Vec3, resolution: usize, voxel_size: f64, truncation: f64) -> Result<Self, FusionError> {
        let half = 0.5 * (resolution - 1).max(1) as f64 * voxel_size;
        Self::new([resolution; 3], voxel_size, truncation, center.map(|c| c - half))
    }

    /// Writes `sdf(p) / truncation`, clamped, with weight 1 at every sample.
    pub fn from_sdf(
        resolution: [usize; 3],
        voxel_size: f64,
        truncation: f64,
        origin: Vec3,
        sdf: impl Fn(Vec3) -> f64,
    ) -> Result<Self, FusionError> {
        let mut v = Self::new(resolution, voxel_size, truncation, origin)?;
        for iz in 0..resolution[2] {
            for iy in 0..resolution[1] {
                for ix in 0..resolution[0] {
                    let i = v.index(ix, iy, iz);
                    v.tsdf[i] = (sdf(v.point(ix, iy, iz)) / truncation).clamp(-1.0, 1.0);
                    v.weight[i] = 1.0;
                }
            }
        }
        Ok(v)
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (iz * self.resolution[1] + iy) * self.resolution[0] + ix
    }

    #[inline]
    pub fn point(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        [
            self.origin[0] + ix as f64 * self.voxel_size,
            self.origin[1] + iy as f64 * self.voxel_size,
            self.origin[2] + iz as f64 * self.voxel_size,
        ]
    }

    /// Fuses one frame: every sample projecting onto a valid depth gets
    /// `sdf = clamp((observed − sample depth) / truncation, −1, 1)` averaged
    /// in when `sdf > −1`.
    pub fn integrate(&mut self, frame: &DepthFrame) -> Result<(), FusionError> {
        let cam = frame.camera()?;
        let intr = cam.intrinsics;
        let [nx, ny, nz] = self.resolution;
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    let p = self.point(ix, iy, iz);
                    let Some(s) = cam.project(p) else { continue };
                    let (px, py) = intr.ndc_to_pixel(s.x, s.y);
                    if !(px >= 0.0 && py >= 0.0) {
                        continue;
                    }
                    let (col, row) = (px as usize, py as usize);
                    if col >= intr.width || row >= intr.height {
                        continue;
                    }
                    let observed = frame.depth[row * intr.width + col];
                    if observed <= 0.0 {
                        continue;
                    }
                    let sdf = ((observed - s.depth) / self.truncation).clamp(-1.0, 1.0);
                    if sdf <= -1.0 {
                        continue;
                    }
                    let i = self.index(ix, iy, iz);
                    let w = self.weight[i];
                    self.tsdf[i] = (w * self.tsdf[i] + sdf) / (w + 1.0);
                    self.weight[i] = w + 1.0;
                }
            }
        }
        Ok(())
    }

    /// Marching cubes at level 0 over cubes whose eight samples all have
    /// positive weight. Vertices shared between cubes are welded and
    /// zero-area triangles dropped; faces wind counter-clockwise seen from
    /// the positive side.
    pub fn extract_mesh(&self) -> Result<Mesh, FusionError> {
        const CORNERS: [[usize; 3]; 8] = [
            [0, 0, 0],
            [1, 0, 0],
            [1, 1, 0],
            [0, 1, 0],
            [0, 0, 1],
            [1, 0, 1],
            [1, 1, 1],
            [0, 1, 1],
        ];
        const EDGES: [[usize; 2]; 12] = [
            [0, 1],
            [1, 2],
            [3, 2],
            [0, 3],
            [4, 5],
            [5, 6],
            [7, 6],
            [4, 7],
            [0, 4],
            [1, 5],
            [2, 6],
            [3, 7],
        ];
        let [nx, ny, nz] = self.resolution;
        let mut vertices: Vec<Vec3> = Vec::new();
        let mut welded: HashMap<(usize, usize), usize> = HashMap::new();
        let mut faces = Vec::new();
        for iz in 0..nz - 1 {
            for iy in 0..ny - 1 {
                for ix in 0..nx - 1 {
                    let idx = CORNERS.map(|[dx, dy, dz]| self.index(ix + dx, iy + dy, iz + dz));
                    if idx.iter().any(|&i| self.weight[i] <= 0.0) {
                        continue;
                    }
                    let vals = idx.map(|i| self.tsdf[i]);
                    let case = vals
                        .iter()
                        .enumerate()
                        .fold(0usize, |c, (k, &v)| if v < 0.0 { c | 1 << k } else { c });
                    if case == 0 || case == 255 {
                        continue;
                    }
                    let mut edge_vertex = [usize::MAX; 12];
                    let row = &TRIANGLE_TABLE[case];
                    for &e in row.iter().take_while(|&&e| e >= 0) {
                        let e = e as usize;
                        if edge_vertex[e] != usize::MAX {
                            continue;
                        }
                        let [a, b] = EDGES[e];
                        let axis = (0..3).find(|&k| CORNERS[a][k] != CORNERS[b][k]).expect("edge spans one axis");
                        edge_vertex[e] = *welded.entry((idx[a], axis)).or_insert_with(|| {
                            let (va, vb) = (vals[a], vals[b]);
                            let t = va / (va - vb);
                            let pa = self.point(ix + CORNERS[a][0], iy + CORNERS[a][1], iz + CORNERS[a][2]);
                            let mut p = pa;
                            p[axis] += t * self.voxel_size;
                            vertices.push(p);
                            vertices.len() - 1
                        });
                    }
                    for tri in row.chunks(3).take_while(|t| t[0] >= 0) {
                        let f = [
                            edge_vertex[tri[0] as usize],
                            edge_vertex[tri[2] as usize],
                            edge_vertex[tri[1] as usize],
                        ];
                        faces.push(f);
                    }
                }
            }
        }
        let mesh = drop_degenerate(Mesh { vertices, faces });
        if mesh.faces.is_empty() {
            return Err(FusionError::EmptySurface);
        }
        Ok(mesh)
    }
}

/// Removes triangles with repeated indices or area ≤ 1e-12, then unused
/// vertices.
fn drop_degenerate(mesh: Mesh) -> Mesh {
    let faces: Vec<[usize; 3]> = mesh
        .faces
        .into_iter()
        .filter(|f| {
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return false;
            }
            let [a, b, c] = f.map(|i| mesh.vertices[i]);
            0.5 * math::norm(math::cross(math::sub(b, a), math::sub(c, a))) > 1e-12
        })
        .collect();
    let mut remap = vec![usize::MAX; mesh.vertices.len()];
    let mut vertices = Vec::new();
    let faces = faces
        .into_iter()
        .map(|f| {
            f.map(|i| {
                if remap[i] == usize::MAX {
                    remap[i] = vertices.len();
                    vertices.push(mesh.vertices[i]);
                }
                remap[i]
            })
        })
        .collect();
    Mesh { vertices, faces }
}

/// Fuses `frames` in order into `volume`.
pub fn integrate_depth(volume: &mut TsdfVolume, frames: &[DepthFrame]) -> Result<(), FusionError> {
    frames.iter().try_for_each(|f| volume.integrate(f))
}

/// An object added to a scene: its canonical mesh and the transform into
/// scene coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    pub id: String,
    pub mesh: Mesh,
    pub transform: PlacementTransform,
    /// Free-form origin note, e.g. the class the mesh was generated for.
    pub source: String,
}

impl PlacedObject {
    pub fn world_mesh(&self) -> Mesh {
        self.transform.apply(&self.mesh)
    }
}

/// A reconstructed or imported scene and the objects placed into it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDocument {
    pub id: String,
    pub volume: Option<TsdfVolume>,
    pub mesh: Mesh,
    pub objects: Vec<PlacedObject>,
}

impl SceneDocument {
    pub fn new(id: impl Into<String>, mesh: Mesh) -> Self {
        Self {
            id: id.into(),
            volume: None,
            mesh,
            objects: Vec::new(),
        }
    }

    /// Scene extracted from a fused volume, which is kept.
    pub fn from_volume(id: impl Into<String>, volume: TsdfVolume) -> Result<Self, FusionError> {
        let mesh = volume.extract_mesh()?;
        Ok(Self {
            volume: Some(volume),
            ..Self::new(id, mesh)
        })
    }

    /// Scene mesh followed by every placed object in scene coordinates.
    pub fn merged_mesh(&self) -> Mesh {
        self.objects
            .iter()
            .fold(self.mesh.clone(), |acc, o| merge_meshes(&acc, &o.world_mesh()))
    }
}

/// Imports an OBJ scene mesh (no volume, no objects).
pub fn load_scene_mesh(id: impl Into<String>, data: &[u8]) -> Result<SceneDocument, FusionError> {
    let text = std::str::from_utf8(data).map_err(|e| GeometryError::MalformedObj {
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    let mesh = parse_obj(text)?;
    if mesh.is_empty() {
        return Err(GeometryError::EmptyMesh.into());
    }
    Ok(SceneDocument::new(id, mesh))
}
