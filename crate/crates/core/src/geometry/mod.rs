//! Mesh and camera primitives: rotations, projection, rigid+scale
//! transforms, merging, OBJ I/O and voxelization.

mod camera;
pub mod math;
mod mesh;
mod obj;
mod voxel;

use thiserror::Error;

pub use camera::{
    angle_difference_deg, euler_to_rotation, project_vertices, wrap_degrees, CameraIntrinsics,
    CameraPose, ScreenVertex, ViewCamera, CANONICAL_DISTANCE, CANONICAL_FOV_DEG,
};
pub use math::{RotationMatrix, Vec3};
pub use mesh::{box_mesh, icosphere, merge_meshes, transform_mesh, Aabb, Mesh};
pub use obj::{parse_obj, write_obj};
pub use voxel::{mesh_voxel_iou, voxel_iou, voxelize, voxelize_in, OccupancyGrid};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid camera pose: {0}")]
    InvalidPose(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("mesh has no vertices")]
    EmptyMesh,
    #[error("vertex {vertex} is at or behind the camera plane")]
    DegenerateProjection { vertex: usize },
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("malformed OBJ at line {line}: {message}")]
    MalformedObj { line: usize, message: String },
    #[error("voxel resolution {0} outside [4, 128]")]
    InvalidResolution(usize),
    #[error("occupancy grids differ in resolution or bounds")]
    GridMismatch,
}
