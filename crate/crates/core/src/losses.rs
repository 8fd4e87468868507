//! Training objectives: viewpoint regression, (multiscale) silhouette IoU,
//! mesh regularizers, the nonsaturating adversarial pair and the weighted
//! total.
//!
//! Each loss has a graph form recording onto a [`Tape`] and a plain form
//! over images, meshes or poses.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraPose, Mesh};
use crate::nn::{softplus, CsrMatrix, NnError, Tape, Tensor, Var};
use crate::raster::SilhouetteImage;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("resolution {res} does not divide image size {size}")]
    BadScale { res: usize, size: usize },
    #[error("vertex {0} has no neighbours")]
    IsolatedVertex(usize),
    #[error("edge ({0}, {1}) is shared by {2} faces")]
    NonManifoldEdge(usize, usize, usize),
    #[error("loss component '{0}' is not finite")]
    NonFiniteLoss(String),
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda_v: f64,
    pub lambda_sd: f64,
    pub lambda_dd: f64,
    /// Ascending target resolutions of the multiscale IoU.
    pub scales: Vec<usize>,
    pub scale_weights: Vec<f64>,
    pub laplacian_weight: f64,
    pub flatten_weight: f64,
    pub r1_gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_v: 10.0,
            lambda_sd: 0.1,
            lambda_dd: 0.1,
            scales: vec![16, 32, 64],
            scale_weights: vec![1.0, 1.0, 1.0],
            laplacian_weight: 0.03,
            flatten_weight: 0.0003,
            r1_gamma: 10.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        let weights = [
            self.lambda_v,
            self.lambda_sd,
            self.lambda_dd,
            self.laplacian_weight,
            self.flatten_weight,
            self.r1_gamma,
        ];
        if weights
            .iter()
            .chain(&self.scale_weights)
            .any(|w| !w.is_finite() || *w < 0.0)
        {
            return Err(LossError::InvalidConfig("weights must be finite and >= 0".into()));
        }
        if self.scales.is_empty() || self.scales.len() != self.scale_weights.len() {
            return Err(LossError::InvalidConfig("one weight per scale".into()));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) || self.scales[0] == 0 {
            return Err(LossError::InvalidConfig("scales must be positive and ascending".into()));
        }
        Ok(())
    }

    /// Single-scale config at `res` with weight 1.
    pub fn single_scale(res: usize) -> Self {
        Self {
            scales: vec![res],
            scale_weights: vec![1.0],
            ..Self::default()
        }
    }
}

/// Named loss components and their weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub sp: f64,
    pub r: f64,
    pub v: f64,
    pub sd: f64,
    pub dd: f64,
    pub total: f64,
}

/// `L_sp + L_r + λ_v L_v + λ_sd L_sd + λ_dd L_dd`.
pub fn total_loss(sp: f64, r: f64, v: f64, sd: f64, dd: f64, cfg: &LossConfig) -> Result<LossReport, LossError> {
    for (name, x) in [("sp", sp), ("r", r), ("v", v), ("sd", sd), ("dd", dd)] {
        if !x.is_finite() {
            return Err(LossError::NonFiniteLoss(name.into()));
        }
    }
    Ok(LossReport {
        sp,
        r,
        v,
        sd,
        dd,
        total: sp + r + cfg.lambda_v * v + cfg.lambda_sd * sd + cfg.lambda_dd * dd,
    })
}

/// Wraps radians into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// L2 norm of the (elevation, wrapped azimuth) difference in radians.
pub fn viewpoint_loss(pred: &CameraPose, gt: &CameraPose) -> f64 {
    let de = pred.elevation_rad() - gt.elevation_rad();
    let da = wrap_angle(pred.azimuth_rad() - gt.azimuth_rad());
    de.hypot(da)
}

/// Mean over the batch of the viewpoint loss. `pred` and `gt` are `[N,2]`
/// (elevation, azimuth) in radians.
pub fn viewpoint_loss_graph(tape: &mut Tape, pred: Var, gt: Var) -> Result<Var, NnError> {
    let d = tape.sub(pred, gt)?;
    let d = tape.wrap_periodic(d, 2.0 * PI);
    let n = tape.row_norm(d)?;
    Ok(tape.mean(n))
}

/// `1 − Σ a·b / Σ (a + b − a·b)` over equally shaped tensors; zero when the
/// union is empty.
pub fn iou_loss_graph(tape: &mut Tape, a: Var, b: Var) -> Result<Var, NnError> {
    let prod = tape.mul(a, b)?;
    let inter = tape.sum(prod);
    let sum = tape.add(a, b)?;
    let total = tape.sum(sum);
    let union = tape.sub(total, inter)?;
    if tape.value(union).item() <= 0.0 {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let ratio = tape.div(inter, union)?;
    let neg = tape.scale(ratio, -1.0);
    Ok(tape.add_const(neg, 1.0))
}

fn check_dims(a: &SilhouetteImage, b: &SilhouetteImage) -> Result<(), LossError> {
    if a.width != b.width || a.height != b.height {
        return Err(LossError::DimensionMismatch((a.width, a.height), (b.width, b.height)));
    }
    Ok(())
}

pub fn iou_loss(a: &SilhouetteImage, b: &SilhouetteImage) -> Result<f64, LossError> {
    check_dims(a, b)?;
    let (mut inter, mut total) = (0.0, 0.0);
    for (x, y) in a.values.iter().zip(&b.values) {
        inter += x * y;
        total += x + y;
    }
    let union = total - inter;
    Ok(if union <= 0.0 { 0.0 } else { 1.0 - inter / union })
}

/// Weighted sum of IoU losses between average-pooled copies of two `[.., R, R]`
/// tensors at every configured resolution.
pub fn multiscale_loss_graph(tape: &mut Tape, rendered: Var, target: Var, cfg: &LossConfig) -> Result<Var, LossError> {
    let shape = tape.value(rendered).shape().to_vec();
    if shape != tape.value(target).shape() || shape.len() < 2 {
        return Err(NnError::ShapeMismatch(format!(
            "multiscale: {shape:?} vs {:?}",
            tape.value(target).shape()
        ))
        .into());
    }
    let size = shape[shape.len() - 1];
    let mut acc: Option<Var> = None;
    for (&res, &w) in cfg.scales.iter().zip(&cfg.scale_weights) {
        if res == 0 || size % res != 0 || shape[shape.len() - 2] != size {
            return Err(LossError::BadScale { res, size });
        }
        let f = size / res;
        let (r, t) = if f == 1 {
            (rendered, target)
        } else {
            (tape.avg_pool(rendered, f)?, tape.avg_pool(target, f)?)
        };
        let l = iou_loss_graph(tape, r, t)?;
        let l = if w == 1.0 { l } else { tape.scale(l, w) };
        acc = Some(match acc {
            None => l,
            Some(a) => tape.add(a, l)?,
        });
    }
    acc.ok_or_else(|| LossError::InvalidConfig("no scales".into()))
}

fn image_tensor(s: &SilhouetteImage) -> Tensor {
    Tensor::new(vec![s.height, s.width], s.values.clone())
}

pub fn multiscale_silhouette_loss(
    rendered: &SilhouetteImage,
    target: &SilhouetteImage,
    cfg: &LossConfig,
) -> Result<f64, LossError> {
    check_dims(rendered, target)?;
    let mut tape = Tape::new();
    let r = tape.constant(image_tensor(rendered));
    let t = tape.constant(image_tensor(target));
    let l = multiscale_loss_graph(&mut tape, r, t, cfg)?;
    Ok(tape.value(l).item())
}

/// Fixed-topology operators for the mesh regularizers.
#[derive(Clone, Debug)]
pub struct MeshTopology {
    pub vertex_count: usize,
    /// `I − (uniform one-ring mean)`.
    pub laplacian: Arc<CsrMatrix>,
    pub face_corners: [Arc<[usize]>; 3],
    /// Faces on either side of every interior edge.
    pub edge_faces: [Arc<[usize]>; 2],
}

impl MeshTopology {
    pub fn new(mesh: &Mesh) -> Result<Self, LossError> {
        let n = mesh.vertices.len();
        let neighbors = mesh.vertex_neighbors();
        let mut rows = Vec::with_capacity(n);
        for (i, nb) in neighbors.iter().enumerate() {
            if nb.is_empty() {
                return Err(LossError::IsolatedVertex(i));
            }
            let w = -1.0 / nb.len() as f64;
            let mut row = vec![(i, 1.0)];
            row.extend(nb.iter().map(|&j| (j, w)));
            rows.push(row);
        }
        let mut left = Vec::new();
        let mut right = Vec::new();
        for ((a, b), faces) in mesh.edge_faces() {
            match faces.len() {
                1 => {}
                2 => {
                    left.push(faces[0]);
                    right.push(faces[1]);
                }
                k => return Err(LossError::NonManifoldEdge(a, b, k)),
            }
        }
        let corner = |k: usize| -> Arc<[usize]> { mesh.faces.iter().map(|f| f[k]).collect() };
        Ok(Self {
            vertex_count: n,
            laplacian: Arc::new(CsrMatrix::from_rows(n, rows)),
            face_corners: [corner(0), corner(1), corner(2)],
            edge_faces: [left.into(), right.into()],
        })
    }
}

/// Mean squared distance of each vertex from its one-ring centroid.
pub fn laplacian_loss_graph(tape: &mut Tape, topo: &MeshTopology, vertices: Var) -> Result<Var, NnError> {
    let l = tape.sparse_matmul(topo.laplacian.clone(), vertices)?;
    let sq = tape.mul(l, l)?;
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / topo.vertex_count.max(1) as f64))
}

/// `Σ (1 − n₁·n₂)²` over interior edges, with unit face normals `n₁, n₂`;
/// equivalently `(1 + cos θ)²` of the dihedral angle θ.
pub fn flatten_loss_graph(tape: &mut Tape, topo: &MeshTopology, vertices: Var) -> Result<Var, NnError> {
    if topo.edge_faces[0].is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let a = tape.gather(vertices, topo.face_corners[0].clone())?;
    let b = tape.gather(vertices, topo.face_corners[1].clone())?;
    let c = tape.gather(vertices, topo.face_corners[2].clone())?;
    let e1 = tape.sub(b, a)?;
    let e2 = tape.sub(c, a)?;
    let n = tape.cross_rows(e1, e2)?;
    let n = tape.normalize_rows(n)?;
    let n1 = tape.gather(n, topo.edge_faces[0].clone())?;
    let n2 = tape.gather(n, topo.edge_faces[1].clone())?;
    let p = tape.mul(n1, n2)?;
    let dot = tape.row_sum(p)?;
    let neg = tape.scale(dot, -1.0);
    let gap = tape.add_const(neg, 1.0);
    let sq = tape.mul(gap, gap)?;
    Ok(tape.sum(sq))
}

fn vertex_tensor(mesh: &Mesh) -> Tensor {
    Tensor::new(
        vec![mesh.vertices.len(), 3],
        mesh.vertices.iter().flatten().copied().collect(),
    )
}

pub fn laplacian_loss(mesh: &Mesh) -> Result<f64, LossError> {
    let topo = MeshTopology::new(mesh)?;
    let mut tape = Tape::new();
    let v = tape.constant(vertex_tensor(mesh));
    let l = laplacian_loss_graph(&mut tape, &topo, v)?;
    Ok(tape.value(l).item())
}

pub fn flatten_loss(mesh: &Mesh) -> Result<f64, LossError> {
    let topo = MeshTopology::new_allow_isolated(mesh)?;
    let mut tape = Tape::new();
    let v = tape.constant(vertex_tensor(mesh));
    let l = flatten_loss_graph(&mut tape, &topo, v)?;
    Ok(tape.value(l).item())
}

impl MeshTopology {
    /// Like [`MeshTopology::new`] but leaves isolated vertices with a zero
    /// Laplacian row, for meshes where only the flattening term is needed.
    fn new_allow_isolated(mesh: &Mesh) -> Result<Self, LossError> {
        match Self::new(mesh) {
            Err(LossError::IsolatedVertex(_)) => {
                let used: Vec<usize> = {
                    let mut u: Vec<usize> = mesh.faces.iter().flatten().copied().collect();
                    u.sort_unstable();
                    u.dedup();
                    u
                };
                let mut remap = BTreeMap::new();
                for (k, &i) in used.iter().enumerate() {
                    remap.insert(i, k);
                }
                let compact = Mesh {
                    vertices: used.iter().map(|&i| mesh.vertices[i]).collect(),
                    faces: mesh
                        .faces
                        .iter()
                        .map(|f| [remap[&f[0]], remap[&f[1]], remap[&f[2]]])
                        .collect(),
                };
                let mut t = Self::new(&compact)?;
                let back = |idx: &Arc<[usize]>| -> Arc<[usize]> { idx.iter().map(|&k| used[k]).collect() };
                t.face_corners = [back(&t.face_corners[0]), back(&t.face_corners[1]), back(&t.face_corners[2])];
                t.vertex_count = mesh.vertices.len();
                Ok(t)
            }
            other => other,
        }
    }
}

/// `f(u) = −log(1 + e^(−u))`, overflow-safe.
pub fn nonsat(u: f64) -> f64 {
    -softplus(-u)
}

/// `(generator_loss, discriminator_loss)` from raw scores and the mean
/// squared input-gradient norm on real samples.
pub fn adversarial_losses(real: &[f64], fake: &[f64], real_grad_sq: f64, gamma: f64) -> (f64, f64) {
    let mean = |xs: &[f64], g: &dyn Fn(f64) -> f64| xs.iter().map(|&x| g(x)).sum::<f64>() / xs.len().max(1) as f64;
    let gen = -mean(fake, &nonsat);
    let disc = -mean(real, &nonsat) - mean(fake, &|u| nonsat(-u)) + 0.5 * gamma * real_grad_sq;
    (gen, disc)
}

/// `mean softplus(−fake)`: the generator's nonsaturating term.
pub fn generator_adversarial_graph(tape: &mut Tape, fake_scores: Var) -> Var {
    let neg = tape.scale(fake_scores, -1.0);
    let sp = tape.softplus(neg);
    tape.mean(sp)
}

/// `mean softplus(−real) + mean softplus(fake)` without the R1 term.
pub fn discriminator_adversarial_graph(tape: &mut Tape, real_scores: Var, fake_scores: Var) -> Result<Var, NnError> {
    let neg = tape.scale(real_scores, -1.0);
    let a = tape.softplus(neg);
    let a = tape.mean(a);
    let b = tape.softplus(fake_scores);
    let b = tape.mean(b);
    tape.add(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;
    use proptest::prelude::*;

    fn mask(n: usize, on: &[usize]) -> SilhouetteImage {
        let mut s = SilhouetteImage::zeros(n, n);
        for &i in on {
            s.values[i] = 1.0;
        }
        s
    }

    #[test]
    fn viewpoint_examples() {
        let p = CameraPose::canonical(0.0, 0.0);
        assert_eq!(viewpoint_loss(&p, &p), 0.0);
        let a = CameraPose::canonical(0.0, 350.0);
        let b = CameraPose::canonical(0.0, 10.0);
        assert!((viewpoint_loss(&a, &b) - 20f64.to_radians()).abs() < 1e-12);
        assert!((viewpoint_loss(&a, &b) - 0.3491).abs() < 1e-4);
        let c = CameraPose::canonical(0.1f64.to_degrees(), 0.2f64.to_degrees());
        assert!((viewpoint_loss(&c, &p) - 0.05f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn viewpoint_graph_matches_value() {
        let mut tape = Tape::new();
        let pred = tape.leaf(Tensor::new(vec![2, 2], vec![0.0, 350f64.to_radians(), 0.1, 0.2]), true);
        let gt = tape.constant(Tensor::new(vec![2, 2], vec![0.0, 10f64.to_radians(), 0.0, 0.0]));
        let l = viewpoint_loss_graph(&mut tape, pred, gt).unwrap();
        let expect = (20f64.to_radians() + 0.05f64.sqrt()) / 2.0;
        assert!((tape.value(l).item() - expect).abs() < 1e-12);
        tape.backward(l).unwrap();
        assert!(tape.grad(pred).unwrap().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn iou_examples() {
        let a = mask(4, &[0, 1, 2, 3]);
        assert_eq!(iou_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(iou_loss(&a, &mask(4, &[8, 9])).unwrap(), 1.0);
        assert_eq!(iou_loss(&a, &mask(4, &[1, 2])).unwrap(), 0.5);
        let z = SilhouetteImage::zeros(4, 4);
        assert_eq!(iou_loss(&z, &z).unwrap(), 0.0);
        assert!(iou_loss(&a, &SilhouetteImage::zeros(5, 4)).is_err());
    }

    #[test]
    fn multiscale_examples() {
        let mut a = SilhouetteImage::zeros(64, 64);
        let mut b = SilhouetteImage::zeros(64, 64);
        for y in 0..64 {
            for x in 0..64 {
                a.values[y * 64 + x] = f64::from(x >= 10 && x < 40 && y >= 5 && y < 33);
                b.values[y * 64 + x] = f64::from(x >= 17 && x < 50 && y >= 12 && y < 44);
            }
        }
        let aligned = SilhouetteImage::new(64, 64, (0..64 * 64).map(|i| f64::from((i % 64) / 4 % 3 == 1 && i / 256 > 3)).collect()).unwrap();
        assert_eq!(multiscale_silhouette_loss(&aligned, &aligned, &LossConfig::default()).unwrap(), 0.0);
        // pooling a block-unaligned mask leaves fractional pixels, whose soft IoU with themselves is below 1
        assert!(multiscale_silhouette_loss(&a, &a, &LossConfig::default()).unwrap() > 0.0);
        let single = multiscale_silhouette_loss(&a, &b, &LossConfig::single_scale(64)).unwrap();
        assert_eq!(single, iou_loss(&a, &b).unwrap());

        let down = |s: &SilhouetteImage, f: usize| {
            let r = 64 / f;
            let mut o = SilhouetteImage::zeros(r, r);
            for y in 0..64 {
                for x in 0..64 {
                    o.values[(y / f) * r + x / f] += s.get(x, y) / (f * f) as f64;
                }
            }
            o
        };
        let cfg = LossConfig {
            scales: vec![32, 64],
            scale_weights: vec![1.0, 1.0],
            ..LossConfig::default()
        };
        let expect = iou_loss(&down(&a, 2), &down(&b, 2)).unwrap() + iou_loss(&a, &b).unwrap();
        let got = multiscale_silhouette_loss(&a, &b, &cfg).unwrap();
        assert!((got - expect).abs() < 1e-12);

        let bad = LossConfig::single_scale(48);
        assert!(matches!(
            multiscale_silhouette_loss(&a, &b, &bad),
            Err(LossError::BadScale { .. })
        ));
    }

    fn grid(n: usize) -> Mesh {
        let mut vertices = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                vertices.push([i as f64, j as f64, 0.0]);
            }
        }
        let id = |i: usize, j: usize| j * (n + 1) + i;
        let mut faces = Vec::new();
        for j in 0..n {
            for i in 0..n {
                faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        Mesh { vertices, faces }
    }

    fn interior_laplacian_sum(m: &Mesh, n: usize) -> f64 {
        let nb = m.vertex_neighbors();
        let mut s = 0.0;
        for j in 1..n {
            for i in 1..n {
                let v = j * (n + 1) + i;
                let mut c = [0.0; 3];
                for &k in &nb[v] {
                    for d in 0..3 {
                        c[d] += m.vertices[k][d] / nb[v].len() as f64;
                    }
                }
                s += (0..3).map(|d| (m.vertices[v][d] - c[d]).powi(2)).sum::<f64>();
            }
        }
        s
    }

    #[test]
    fn laplacian_examples() {
        let g = grid(4);
        assert!(interior_laplacian_sum(&g, 4).abs() < 1e-24);
        let mut bumped = g.clone();
        let v = 2 * 5 + 2;
        bumped.vertices[v][2] = 0.3;
        // the displaced vertex contributes δ² and shifts its neighbours' centroids
        let topo = MeshTopology::new(&bumped).unwrap();
        let row = topo.laplacian.row_ptr[v]..topo.laplacian.row_ptr[v + 1];
        let contrib: f64 = row
            .map(|p| topo.laplacian.values[p] * bumped.vertices[topo.laplacian.col_idx[p]][2])
            .sum();
        assert!((contrib * contrib - 0.09).abs() < 1e-12);

        let s = icosphere(2, 1.0);
        let l1 = laplacian_loss(&s).unwrap();
        let l2 = laplacian_loss(&crate::geometry::transform_mesh(
            &s,
            &crate::geometry::RotationMatrix::identity(),
            [0.0; 3],
            3.0,
        ).unwrap())
        .unwrap();
        assert!((l2 - 9.0 * l1).abs() < 1e-12 * l2.max(1.0));

        let lonely = Mesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [5.0; 3]],
            faces: vec![[0, 1, 2]],
        };
        assert!(matches!(laplacian_loss(&lonely), Err(LossError::IsolatedVertex(3))));
    }

    #[test]
    fn flatten_examples() {
        let flat = Mesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            faces: vec![[0, 1, 2], [0, 2, 3]],
        };
        assert!(flatten_loss(&flat).unwrap().abs() < 1e-24);
        let folded = Mesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            faces: vec![[0, 1, 2], [0, 3, 1]],
        };
        assert!((flatten_loss(&folded).unwrap() - 1.0).abs() < 1e-12);
        assert!(flatten_loss(&icosphere(0, 1.0)).unwrap() > 0.0);
        let fan = Mesh {
            vertices: vec![[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]],
            faces: vec![[0, 1, 2], [0, 1, 3], [0, 1, 4]],
        };
        assert!(matches!(flatten_loss(&fan), Err(LossError::NonManifoldEdge(0, 1, 3))));
    }

    #[test]
    fn adversarial_examples() {
        assert!((nonsat(0.0) + 2f64.ln()).abs() < 1e-15);
        assert!((nonsat(10.0) + 4.539889921686465e-5).abs() < 1e-15);
        assert!((nonsat(-10.0) + 10.000045398899218).abs() < 1e-12);
        for u in [-500.0, -100.0, 100.0, 500.0] {
            assert!(nonsat(u).is_finite());
        }
        let (g, d) = adversarial_losses(&[0.0; 4], &[0.0; 4], 0.0, 0.0);
        assert!((g - 2f64.ln()).abs() < 1e-15);
        assert!((d - 2.0 * 2f64.ln()).abs() < 1e-15);
        let (_, sep) = adversarial_losses(&[5.0], &[-5.0], 0.0, 10.0);
        let (_, zero) = adversarial_losses(&[0.0], &[0.0], 0.0, 10.0);
        assert!(sep < zero);
    }

    #[test]
    fn nonsat_is_increasing_and_negative() {
        let mut prev = f64::NEG_INFINITY;
        for k in -2000..=2000 {
            let u = k as f64 * 0.01;
            let f = nonsat(u);
            assert!(f < 0.0 && f > prev);
            prev = f;
        }
    }

    #[test]
    fn total_examples() {
        let cfg = LossConfig::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, 0.0, &cfg).unwrap().total, 0.0);
        assert_eq!(total_loss(0.0, 0.0, 1.0, 0.0, 0.0, &cfg).unwrap().total, 10.0);
        assert_eq!(total_loss(0.0, 0.0, 0.0, 1.0, 0.0, &cfg).unwrap().total, 0.1);
        assert!(total_loss(f64::NAN, 0.0, 0.0, 0.0, 0.0, &cfg).is_err());
        let coeffs = [1.0, 1.0, 10.0, 0.1, 0.1];
        for (k, c) in coeffs.iter().enumerate() {
            let mut p = [0.0; 5];
            p[k] = 2.5;
            let t = total_loss(p[0], p[1], p[2], p[3], p[4], &cfg).unwrap().total;
            assert!((t - 2.5 * c).abs() < 1e-15);
        }
    }

    #[test]
    fn graph_gradients_match_fd() {
        let s = icosphere(1, 0.5);
        let topo = MeshTopology::new(&s).unwrap();
        let mut base: Vec<f64> = s.vertices.iter().flatten().copied().collect();
        for (i, v) in base.iter_mut().enumerate() {
            *v += 0.05 * ((i as f64) * 1.7).sin();
        }
        let eval = |vals: &[f64], grad: bool| -> (f64, Vec<f64>) {
            let mut tape = Tape::new();
            let v = tape.leaf(Tensor::new(vec![s.vertices.len(), 3], vals.to_vec()), true);
            let a = laplacian_loss_graph(&mut tape, &topo, v).unwrap();
            let b = flatten_loss_graph(&mut tape, &topo, v).unwrap();
            let t = tape.add(a, b).unwrap();
            if grad {
                tape.backward(t).unwrap();
                (tape.value(t).item(), tape.grad(v).unwrap().to_vec())
            } else {
                (tape.value(t).item(), Vec::new())
            }
        };
        let (_, g) = eval(&base, true);
        for i in (0..base.len()).step_by(5) {
            let mut p = base.clone();
            let mut m = base.clone();
            p[i] += 1e-6;
            m[i] -= 1e-6;
            let fd = (eval(&p, false).0 - eval(&m, false).0) / 2e-6;
            assert!((fd - g[i]).abs() <= 1e-5 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    proptest! {
        #[test]
        fn iou_matches_counting(bits in proptest::collection::vec(0u8..4, 64)) {
            let a = SilhouetteImage::new(8, 8, bits.iter().map(|b| f64::from(b & 1)).collect()).unwrap();
            let b = SilhouetteImage::new(8, 8, bits.iter().map(|b| f64::from(b >> 1)).collect()).unwrap();
            let inter = bits.iter().filter(|&&x| x == 3).count();
            let union = bits.iter().filter(|&&x| x != 0).count();
            let expect = if union == 0 { 0.0 } else { 1.0 - inter as f64 / union as f64 };
            let l = iou_loss(&a, &b).unwrap();
            prop_assert!((l - expect).abs() < 1e-12);
            prop_assert_eq!(l, iou_loss(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&l));
        }

        #[test]
        fn iou_graph_matches_value(vals in proptest::collection::vec(0.0f64..1.0, 32)) {
            let a = SilhouetteImage::new(4, 4, vals[..16].to_vec()).unwrap();
            let b = SilhouetteImage::new(4, 4, vals[16..].to_vec()).unwrap();
            let mut tape = Tape::new();
            let x = tape.constant(image_tensor(&a));
            let y = tape.constant(image_tensor(&b));
            let l = iou_loss_graph(&mut tape, x, y).unwrap();
            prop_assert!((tape.value(l).item() - iou_loss(&a, &b).unwrap()).abs() < 1e-12);
        }
    }
}
