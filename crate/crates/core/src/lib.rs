//! Sketch-to-mesh generation with a differentiable silhouette renderer,
//! adversarial random-view supervision, TSDF scene fusion and in-scene
//! placement of generated objects.

pub mod fusion;
pub mod geometry;
pub mod losses;
pub mod nn;
pub mod placement;
pub mod raster;
pub mod render;
pub mod train;

pub use geometry::{CameraIntrinsics, CameraPose, Mesh, RotationMatrix};
pub use raster::{SilhouetteImage, SketchImage};
