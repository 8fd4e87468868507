//! Silhouette and depth rasterization.
//!
//! The soft rasterizer gives every triangle `j` an occupancy probability at
//! pixel `p`, `D_j(p) = σ(sign · d²(p, j) / sharpness)`, with `d` the exact
//! NDC distance from the pixel center to the triangle and `sign` positive
//! inside. The silhouette is `S(p) = 1 − Π_j (1 − D_j(p))`. Its backward pass
//! is written by hand and plugged into the tape as a custom op.
//!
//! The hard rasterizer is a plain edge-function coverage test with the
//! top-left tie rule, used as an oracle and for dataset sketches.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, CameraPose, GeometryError, Mesh, ViewCamera};
use crate::nn::{softplus, CustomOp, NnError, Tape, Tensor, Var};
use crate::raster::SilhouetteImage;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("invalid raster params: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterParams {
    /// Squared-NDC-distance scale of the logistic edge falloff.
    pub sharpness: f64,
    /// Outside contributions below this probability are skipped.
    pub probability_floor: f64,
}

impl Default for RasterParams {
    fn default() -> Self {
        Self {
            sharpness: 1e-4,
            probability_floor: 1e-12,
        }
    }
}

impl RasterParams {
    pub fn with_sharpness(sharpness: f64) -> Self {
        Self {
            sharpness,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), RenderError> {
        if !(self.sharpness > 0.0 && self.sharpness.is_finite()) {
            return Err(RenderError::InvalidParams(format!("sharpness {}", self.sharpness)));
        }
        if !(0.0..0.5).contains(&self.probability_floor) {
            return Err(RenderError::InvalidParams(format!(
                "probability floor {}",
                self.probability_floor
            )));
        }
        Ok(())
    }

    /// Largest `d²/sharpness` at which an outside pixel still counts.
    fn cutoff(&self) -> f64 {
        if self.probability_floor > 0.0 {
            ((1.0 - self.probability_floor) / self.probability_floor).ln()
        } else {
            f64::INFINITY
        }
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

type P2 = [f64; 2];

#[inline]
fn cross2(o: P2, a: P2, b: P2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Squared distance from `p` to segment `ab` and the closest-point parameter.
#[inline]
fn segment_dist2(p: P2, a: P2, b: P2) -> (f64, f64) {
    let e = [b[0] - a[0], b[1] - a[1]];
    let len2 = e[0] * e[0] + e[1] * e[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * e[0] + (p[1] - a[1]) * e[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let c = [a[0] + t * e[0], a[1] + t * e[1]];
    let d = [p[0] - c[0], p[1] - c[1]];
    (d[0] * d[0] + d[1] * d[1], t)
}

/// Signed logistic argument of one pixel against one triangle, plus the
/// nearest edge (local corner indices) and its closest-point parameter.
#[inline]
fn pixel_term(p: P2, tri: [P2; 3], area2: f64, sharpness: f64) -> (f64, usize, f64) {
    let mut best = (f64::INFINITY, 0, 0.0);
    for k in 0..3 {
        let (d2, t) = segment_dist2(p, tri[k], tri[(k + 1) % 3]);
        if d2 < best.0 {
            best = (d2, k, t);
        }
    }
    let s = area2.signum();
    let inside = area2 != 0.0
        && cross2(tri[0], tri[1], p) * s > 0.0
        && cross2(tri[1], tri[2], p) * s > 0.0
        && cross2(tri[2], tri[0], p) * s > 0.0;
    let x = best.0 / sharpness;
    (if inside { x } else { -x }, best.1, best.2)
}

/// Projected geometry shared by forward and backward passes.
struct Screen {
    pts: Vec<P2>,
    /// Camera-space coordinates, for the projection Jacobian.
    cam: Vec<[f64; 3]>,
}

fn project_all(vertices: &[f64], camera: &ViewCamera) -> Result<Screen, RenderError> {
    let n = vertices.len() / 3;
    let mut pts = Vec::with_capacity(n);
    let mut cam = Vec::with_capacity(n);
    for i in 0..n {
        let v = [vertices[3 * i], vertices[3 * i + 1], vertices[3 * i + 2]];
        let s = camera
            .project(v)
            .ok_or(GeometryError::DegenerateProjection { vertex: i })?;
        pts.push([s.x, s.y]);
        cam.push(camera.to_camera(v));
    }
    Ok(Screen { pts, cam })
}

/// Inclusive pixel ranges whose centers can fall within `r` of the NDC box.
fn pixel_range(intr: &CameraIntrinsics, lo: P2, hi: P2, r: f64) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = (intr.width as f64, intr.height as f64);
    let c0 = ((lo[0] - r + 1.0) * 0.5 * w - 0.5).ceil().max(0.0);
    let c1 = ((hi[0] + r + 1.0) * 0.5 * w - 0.5).floor().min(w - 1.0);
    let r0 = ((1.0 - hi[1] - r) * 0.5 * h - 0.5).ceil().max(0.0);
    let r1 = ((1.0 - lo[1] + r) * 0.5 * h - 0.5).floor().min(h - 1.0);
    if !(c0 <= c1 && r0 <= r1) {
        return None;
    }
    Some((c0 as usize, c1 as usize, r0 as usize, r1 as usize))
}

/// Visits every (triangle, pixel) pair that contributes, in a fixed order.
fn for_each_contribution(
    screen: &Screen,
    faces: &[[usize; 3]],
    intr: &CameraIntrinsics,
    params: &RasterParams,
    mut f: impl FnMut(usize, [usize; 3], [P2; 3], (f64, usize, f64)),
) {
    let cutoff = params.cutoff();
    let radius = (cutoff * params.sharpness).sqrt();
    for &face in faces {
        let tri = [screen.pts[face[0]], screen.pts[face[1]], screen.pts[face[2]]];
        let lo = [
            tri[0][0].min(tri[1][0]).min(tri[2][0]),
            tri[0][1].min(tri[1][1]).min(tri[2][1]),
        ];
        let hi = [
            tri[0][0].max(tri[1][0]).max(tri[2][0]),
            tri[0][1].max(tri[1][1]).max(tri[2][1]),
        ];
        let Some((c0, c1, r0, r1)) = pixel_range(intr, lo, hi, radius.min(4.0)) else {
            continue;
        };
        let area2 = cross2(tri[0], tri[1], tri[2]);
        for row in r0..=r1 {
            for col in c0..=c1 {
                let (px, py) = intr.pixel_center_ndc(col, row);
                let term = pixel_term([px, py], tri, area2, params.sharpness);
                if term.0 < -cutoff {
                    continue;
                }
                f(row * intr.width + col, face, tri, term);
            }
        }
    }
}

/// Forward pass: silhouette values and the per-pixel product `Π (1 − D_j)`.
fn soft_forward(screen: &Screen, faces: &[[usize; 3]], intr: &CameraIntrinsics, params: &RasterParams) -> (Vec<f64>, Vec<f64>) {
    let mut log_q = vec![0.0; intr.width * intr.height];
    for_each_contribution(screen, faces, intr, params, |p, _, _, (x, _, _)| {
        log_q[p] -= softplus(x);
    });
    let values = log_q.iter().map(|&l| -l.exp_m1()).collect();
    let prod = log_q.iter().map(|&l| l.exp()).collect();
    (values, prod)
}

struct SoftRasterOp {
    faces: Arc<[[usize; 3]]>,
    camera: ViewCamera,
    params: RasterParams,
    screen: Screen,
    prod: Vec<f64>,
}

impl CustomOp for SoftRasterOp {
    fn name(&self) -> &'static str {
        "soft_raster"
    }

    fn backward(&self, _inputs: &[&Tensor], _output: &Tensor, grad_output: &[f64]) -> Vec<Option<Vec<f64>>> {
        let intr = &self.camera.intrinsics;
        let n = self.screen.pts.len();
        let mut g2 = vec![[0.0f64; 2]; n];
        let gp: Vec<f64> = grad_output.iter().zip(&self.prod).map(|(g, p)| g * p).collect();
        let sharp = self.params.sharpness;
        for_each_contribution(&self.screen, &self.faces, intr, &self.params, |p, face, tri, (x, k, t)| {
            if gp[p] == 0.0 {
                return;
            }
            // ∂S/∂x_j = P · D_j, and x_j = ±d²/sharpness
            let coef = gp[p] * logistic(x) * x.signum() / sharp;
            if coef == 0.0 {
                return;
            }
            let (px, py) = intr.pixel_center_ndc(p % intr.width, p / intr.width);
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let c = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let d = [px - c[0], py - c[1]];
            let (ia, ib) = (face[k], face[(k + 1) % 3]);
            for q in 0..2 {
                g2[ia][q] -= 2.0 * coef * d[q] * (1.0 - t);
                g2[ib][q] -= 2.0 * coef * d[q] * t;
            }
        });
        let th = intr.tan_half_fov();
        let (kx, ky) = (1.0 / (th * intr.aspect()), 1.0 / th);
        let mut grad = vec![0.0; 3 * n];
        for (i, g) in g2.iter().enumerate() {
            if g[0] == 0.0 && g[1] == 0.0 {
                continue;
            }
            let c = self.screen.cam[i];
            let depth = -c[2];
            let gc = [
                g[0] * kx / depth,
                g[1] * ky / depth,
                (g[0] * kx * c[0] + g[1] * ky * c[1]) / (depth * depth),
            ];
            let gw = self.camera.orientation.apply(gc);
            grad[3 * i..3 * i + 3].copy_from_slice(&gw);
        }
        vec![Some(grad)]
    }
}

/// Records a soft silhouette `[H, W]` of `vertices [V, 3]` on the tape.
pub fn render_soft_graph(
    tape: &mut Tape,
    vertices: Var,
    faces: &Arc<[[usize; 3]]>,
    camera: &ViewCamera,
    params: &RasterParams,
) -> Result<Var, RenderError> {
    params.validate()?;
    let v = tape.value(vertices);
    if v.shape().len() != 2 || v.shape()[1] != 3 {
        return Err(NnError::ShapeMismatch(format!("vertices {:?}", v.shape())).into());
    }
    let nv = v.shape()[0];
    if let Some(bad) = faces.iter().flatten().find(|&&i| i >= nv) {
        return Err(GeometryError::InvalidMesh(format!("face index {bad} >= {nv}")).into());
    }
    let screen = project_all(v.data(), camera)?;
    let intr = camera.intrinsics;
    let (values, prod) = soft_forward(&screen, faces, &intr, params);
    let op = SoftRasterOp {
        faces: faces.clone(),
        camera: *camera,
        params: *params,
        screen,
        prod,
    };
    Ok(tape.custom(Box::new(op), &[vertices], Tensor::new(vec![intr.height, intr.width], values)))
}

/// Soft silhouette seen by an arbitrary camera.
pub fn render_soft_view(mesh: &Mesh, camera: &ViewCamera, params: &RasterParams) -> Result<SilhouetteImage, RenderError> {
    params.validate()?;
    let intr = camera.intrinsics;
    if mesh.is_empty() {
        return Ok(SilhouetteImage::zeros(intr.width, intr.height));
    }
    let flat: Vec<f64> = mesh.vertices.iter().flatten().copied().collect();
    let screen = project_all(&flat, camera)?;
    let (values, _) = soft_forward(&screen, &mesh.faces, &intr, params);
    Ok(SilhouetteImage {
        width: intr.width,
        height: intr.height,
        values,
    })
}

/// Soft silhouette of `mesh` from an orbit `pose` around the origin.
pub fn render_soft_silhouette(
    mesh: &Mesh,
    pose: &CameraPose,
    intr: &CameraIntrinsics,
    params: &RasterParams,
) -> Result<SilhouetteImage, RenderError> {
    render_soft_view(mesh, &ViewCamera::orbit(pose, [0.0; 3], *intr), params)
}

/// Screen-space triangle in continuous pixel coordinates (y down) with a
/// positive edge-function orientation, or `None` when degenerate.
fn pixel_triangle(camera: &ViewCamera, tri: [[f64; 3]; 3]) -> Option<([P2; 3], [f64; 3])> {
    let mut p = [[0.0; 2]; 3];
    let mut depth = [0.0; 3];
    for k in 0..3 {
        let s = camera.project(tri[k])?;
        let (x, y) = camera.intrinsics.ndc_to_pixel(s.x, s.y);
        p[k] = [x, y];
        depth[k] = s.depth;
    }
    let area = cross2(p[0], p[1], p[2]);
    if area == 0.0 || !area.is_finite() {
        return None;
    }
    if area < 0.0 {
        p.swap(1, 2);
        depth.swap(1, 2);
    }
    Some((p, depth))
}

#[inline]
fn is_top_left(a: P2, b: P2) -> bool {
    let e = [b[0] - a[0], b[1] - a[1]];
    (e[1] == 0.0 && e[0] > 0.0) || e[1] < 0.0
}

/// Calls `f(pixel, barycentrics)` for every pixel center covered by a
/// positively oriented pixel-space triangle.
fn cover(intr: &CameraIntrinsics, p: [P2; 3], mut f: impl FnMut(usize, [f64; 3])) {
    let lo = [p[0][0].min(p[1][0]).min(p[2][0]), p[0][1].min(p[1][1]).min(p[2][1])];
    let hi = [p[0][0].max(p[1][0]).max(p[2][0]), p[0][1].max(p[1][1]).max(p[2][1])];
    let c0 = (lo[0] - 0.5).ceil().max(0.0);
    let c1 = (hi[0] - 0.5).floor().min(intr.width as f64 - 1.0);
    let r0 = (lo[1] - 0.5).ceil().max(0.0);
    let r1 = (hi[1] - 0.5).floor().min(intr.height as f64 - 1.0);
    if !(c0 <= c1 && r0 <= r1) {
        return;
    }
    let area = cross2(p[0], p[1], p[2]);
    let tl = [is_top_left(p[1], p[2]), is_top_left(p[2], p[0]), is_top_left(p[0], p[1])];
    for row in r0 as usize..=r1 as usize {
        for col in c0 as usize..=c1 as usize {
            let q = [col as f64 + 0.5, row as f64 + 0.5];
            let w = [cross2(p[1], p[2], q), cross2(p[2], p[0], q), cross2(p[0], p[1], q)];
            if (0..3).all(|k| w[k] > 0.0 || (w[k] == 0.0 && tl[k])) {
                f(row * intr.width + col, [w[0] / area, w[1] / area, w[2] / area]);
            }
        }
    }
}

/// Hard coverage silhouette from an arbitrary camera.
pub fn render_hard_view(mesh: &Mesh, camera: &ViewCamera) -> Result<SilhouetteImage, RenderError> {
    let intr = camera.intrinsics;
    let mut out = SilhouetteImage::zeros(intr.width, intr.height);
    for (i, v) in mesh.vertices.iter().enumerate() {
        if camera.project(*v).is_none() {
            return Err(GeometryError::DegenerateProjection { vertex: i }.into());
        }
    }
    for f in 0..mesh.faces.len() {
        if let Some((p, _)) = pixel_triangle(camera, mesh.triangle(f)) {
            cover(&intr, p, |px, _| out.values[px] = 1.0);
        }
    }
    Ok(out)
}

pub fn render_hard_silhouette(mesh: &Mesh, pose: &CameraPose, intr: &CameraIntrinsics) -> Result<SilhouetteImage, RenderError> {
    render_hard_view(mesh, &ViewCamera::orbit(pose, [0.0; 3], *intr))
}

/// Z-buffered view-axis depth, row-major, 0 where nothing is hit. Triangles
/// with a vertex at or behind the camera plane are skipped.
pub fn render_depth(mesh: &Mesh, camera: &ViewCamera) -> Vec<f64> {
    let intr = camera.intrinsics;
    let mut depth = vec![f64::INFINITY; intr.width * intr.height];
    for f in 0..mesh.faces.len() {
        if let Some((p, d)) = pixel_triangle(camera, mesh.triangle(f)) {
            let inv = [1.0 / d[0], 1.0 / d[1], 1.0 / d[2]];
            cover(&intr, p, |px, b| {
                let z = 1.0 / (b[0] * inv[0] + b[1] * inv[1] + b[2] * inv[2]);
                if z < depth[px] {
                    depth[px] = z;
                }
            });
        }
    }
    depth
        .into_iter()
        .map(|z| if z.is_finite() { z } else { 0.0 })
        .collect()
}
