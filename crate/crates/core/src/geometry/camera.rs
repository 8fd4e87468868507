//! Viewpoints, pinhole intrinsics and perspective projection.
//!
//! Conventions: world up is +Y. Camera space has +X right, +Y up and looks
//! down −Z. A [`CameraPose`] describes a camera orbiting a target point:
//! azimuth turns the camera about world up, elevation lifts it above the
//! horizontal plane, and roll is always zero.

use serde::{Deserialize, Serialize};

use super::math::{self, RotationMatrix, Vec3};
use super::mesh::Mesh;
use super::GeometryError;

/// Default camera-to-target distance for canonical renders.
pub const CANONICAL_DISTANCE: f64 = 2.732;
/// Default vertical field of view in degrees.
pub const CANONICAL_FOV_DEG: f64 = 30.0;

/// Elevation/azimuth/distance viewpoint. Angles are in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub elevation: f64,
    pub azimuth: f64,
    pub distance: f64,
}

impl CameraPose {
    /// Validates the pose and wraps azimuth into `[0, 360)`.
    pub fn new(elevation: f64, azimuth: f64, distance: f64) -> Result<Self, GeometryError> {
        if !(elevation.is_finite() && azimuth.is_finite() && distance.is_finite()) {
            return Err(GeometryError::InvalidPose("non-finite component".into()));
        }
        if !(-90.0..=90.0).contains(&elevation) {
            return Err(GeometryError::InvalidPose(format!(
                "elevation {elevation} outside [-90, 90]"
            )));
        }
        if distance <= 0.0 {
            return Err(GeometryError::InvalidPose(format!(
                "distance {distance} must be positive"
            )));
        }
        Ok(Self {
            elevation,
            azimuth: wrap_degrees(azimuth),
            distance,
        })
    }

    pub fn canonical(elevation: f64, azimuth: f64) -> Self {
        Self::new(elevation, azimuth, CANONICAL_DISTANCE).expect("canonical pose in range")
    }

    pub fn elevation_rad(&self) -> f64 {
        self.elevation.to_radians()
    }

    pub fn azimuth_rad(&self) -> f64 {
        self.azimuth.to_radians()
    }
}

/// Wraps an angle in degrees into `[0, 360)`.
pub fn wrap_degrees(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    // rem_euclid can return exactly 360.0 for tiny negative inputs
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Signed angular difference `a - b` wrapped into `(-180, 180]`.
pub fn angle_difference_deg(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    /// Vertical field of view in degrees.
    pub fov_deg: f64,
}

impl CameraIntrinsics {
    pub fn new(width: usize, height: usize, fov_deg: f64) -> Result<Self, GeometryError> {
        if width < 8 || height < 8 {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "image {width}x{height} smaller than 8x8"
            )));
        }
        if !(fov_deg > 1.0 && fov_deg < 179.0) {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "fov {fov_deg} outside (1, 179)"
            )));
        }
        Ok(Self {
            width,
            height,
            fov_deg,
        })
    }

    pub fn square(size: usize) -> Self {
        Self::new(size, size, CANONICAL_FOV_DEG).expect("canonical intrinsics")
    }

    pub fn aspect(&self) -> f64 {
        self.width as f64 / self.height as f64
    }

    pub fn tan_half_fov(&self) -> f64 {
        (self.fov_deg.to_radians() * 0.5).tan()
    }

    /// Focal length in pixels (square pixels).
    pub fn focal_px(&self) -> f64 {
        self.height as f64 * 0.5 / self.tan_half_fov()
    }

    /// NDC coordinates of the center of pixel (`col`, `row`); row 0 is the top.
    #[inline]
    pub fn pixel_center_ndc(&self, col: usize, row: usize) -> (f64, f64) {
        (
            2.0 * (col as f64 + 0.5) / self.width as f64 - 1.0,
            1.0 - 2.0 * (row as f64 + 0.5) / self.height as f64,
        )
    }

    /// Continuous pixel coordinates (x right, y down) of an NDC point.
    pub fn ndc_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x + 1.0) * 0.5 * self.width as f64,
            (1.0 - y) * 0.5 * self.height as f64,
        )
    }
}

/// Camera orientation (camera-to-world) for a pose.
///
/// Azimuth is applied about world up (+Y), elevation about the camera's right
/// axis: `R = Ry(azimuth) · Rx(-elevation)`. The camera sits at
/// `target + R·(0, 0, distance)`; `(elev 0, azim 0)` is the identity and puts
/// the camera on the +Z axis.
pub fn euler_to_rotation(pose: &CameraPose) -> RotationMatrix {
    RotationMatrix::about_y(pose.azimuth_rad()).mul(&RotationMatrix::about_x(-pose.elevation_rad()))
}

/// A posed pinhole camera in world space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewCamera {
    /// Camera-to-world rotation.
    pub orientation: RotationMatrix,
    pub eye: Vec3,
    pub intrinsics: CameraIntrinsics,
}

/// Screen-space vertex: NDC x/y plus positive depth along the view axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScreenVertex {
    pub x: f64,
    pub y: f64,
    pub depth: f64,
}

const MIN_DEPTH: f64 = 1e-9;

impl ViewCamera {
    /// Orbit camera looking at `target` from `pose`.
    pub fn orbit(pose: &CameraPose, target: Vec3, intrinsics: CameraIntrinsics) -> Self {
        let orientation = euler_to_rotation(pose);
        let eye = math::add(target, orientation.apply([0.0, 0.0, pose.distance]));
        Self {
            orientation,
            eye,
            intrinsics,
        }
    }

    /// Camera from a row-major 4×4 world-from-camera matrix.
    pub fn from_world_from_camera(
        m: &[[f64; 4]; 4],
        intrinsics: CameraIntrinsics,
    ) -> Result<Self, GeometryError> {
        let orientation = RotationMatrix([
            [m[0][0], m[0][1], m[0][2]],
            [m[1][0], m[1][1], m[1][2]],
            [m[2][0], m[2][1], m[2][2]],
        ]);
        if !orientation.is_rotation(1e-6) {
            return Err(GeometryError::InvalidPose(
                "world-from-camera rotation is not orthonormal".into(),
            ));
        }
        Ok(Self {
            orientation,
            eye: [m[0][3], m[1][3], m[2][3]],
            intrinsics,
        })
    }

    pub fn world_from_camera(&self) -> [[f64; 4]; 4] {
        let r = &self.orientation.0;
        [
            [r[0][0], r[0][1], r[0][2], self.eye[0]],
            [r[1][0], r[1][1], r[1][2], self.eye[1]],
            [r[2][0], r[2][1], r[2][2], self.eye[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    #[inline]
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        self.orientation.apply_transpose(math::sub(p, self.eye))
    }

    /// Projects a world point; `None` when it is at or behind the camera plane.
    #[inline]
    pub fn project(&self, p: Vec3) -> Option<ScreenVertex> {
        let c = self.to_camera(p);
        let depth = -c[2];
        if !(depth > MIN_DEPTH) {
            return None;
        }
        let t = self.intrinsics.tan_half_fov();
        Some(ScreenVertex {
            x: c[0] / (depth * t * self.intrinsics.aspect()),
            y: c[1] / (depth * t),
            depth,
        })
    }

    /// World-space unit direction of the ray through continuous pixel
    /// coordinates (`px` right, `py` down, pixel centers at `+0.5`).
    pub fn pixel_ray(&self, px: f64, py: f64) -> Vec3 {
        let intr = &self.intrinsics;
        let x = 2.0 * px / intr.width as f64 - 1.0;
        let y = 1.0 - 2.0 * py / intr.height as f64;
        let t = intr.tan_half_fov();
        let dir_cam = [x * t * intr.aspect(), y * t, -1.0];
        math::normalize(self.orientation.apply(dir_cam))
    }

    /// Depth along the view axis of a world point.
    pub fn depth_of(&self, p: Vec3) -> f64 {
        -self.to_camera(p)[2]
    }
}

/// Projects every vertex of `mesh` as seen from `pose` around the origin.
pub fn project_vertices(
    mesh: &Mesh,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
) -> Result<Vec<ScreenVertex>, GeometryError> {
    if mesh.vertices.is_empty() {
        return Err(GeometryError::EmptyMesh);
    }
    let cam = ViewCamera::orbit(pose, [0.0; 3], *intr);
    mesh.vertices
        .iter()
        .enumerate()
        .map(|(i, v)| {
            cam.project(*v)
                .ok_or(GeometryError::DegenerateProjection { vertex: i })
        })
        .collect()
}
