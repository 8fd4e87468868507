//! Occupancy voxelization by parity ray casting, and voxel IoU.

use super::math::Vec3;
use super::mesh::{Aabb, Mesh};
use super::GeometryError;

#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: usize,
    pub bounds: Aabb,
    /// Indexed `x + res·(y + res·z)`.
    pub cells: Vec<bool>,
    /// Set when some ray crossed the surface an odd number of times, which
    /// means the mesh is not closed along that ray.
    pub open_mesh_warning: bool,
}

impl OccupancyGrid {
    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn fraction(&self) -> f64 {
        self.occupied_count() as f64 / self.cells.len() as f64
    }

    pub fn cell_center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let e = self.bounds.extent();
        let r = self.resolution as f64;
        [
            self.bounds.min[0] + (ix as f64 + 0.5) * e[0] / r,
            self.bounds.min[1] + (iy as f64 + 0.5) * e[1] / r,
            self.bounds.min[2] + (iz as f64 + 0.5) * e[2] / r,
        ]
    }
}

const TIE_EPS: f64 = 1e-12;

/// X coordinates where the +X ray through (`y`, `z`) crosses any of the
/// candidate faces. Returns `None` when the ray grazes an edge or vertex.
fn row_crossings(mesh: &Mesh, candidates: &[usize], y: f64, z: f64) -> Option<Vec<f64>> {
    let mut hits = Vec::new();
    for &fi in candidates {
        let f = mesh.faces[fi];
        let [a, b, c] = [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
        let (ymin, ymax) = (a[1].min(b[1]).min(c[1]), a[1].max(b[1]).max(c[1]));
        let (zmin, zmax) = (a[2].min(b[2]).min(c[2]), a[2].max(b[2]).max(c[2]));
        if y < ymin || y > ymax || z < zmin || z > zmax {
            continue;
        }
        let det = (b[1] - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (b[2] - a[2]);
        if det.abs() < 1e-300 {
            continue; // parallel to the ray
        }
        let l1 = ((y - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (z - a[2])) / det;
        let l2 = ((b[1] - a[1]) * (z - a[2]) - (y - a[1]) * (b[2] - a[2])) / det;
        let l0 = 1.0 - l1 - l2;
        let lo = l0.min(l1).min(l2);
        if lo.abs() <= TIE_EPS {
            return None;
        }
        if lo > 0.0 {
            hits.push(l0 * a[0] + l1 * b[0] + l2 * c[0]);
        }
    }
    hits.sort_by(|p, q| p.total_cmp(q));
    Some(hits)
}

/// Faces whose (y, z) extent overlaps each (iy, iz) row cell, widened by one
/// cell so jittered rays stay covered.
fn bucket_faces(mesh: &Mesh, bounds: &Aabb, r: usize) -> Vec<Vec<usize>> {
    let e = bounds.extent();
    let cell = |v: f64, axis: usize| -> isize {
        if e[axis] <= 0.0 {
            0
        } else {
            ((v - bounds.min[axis]) / e[axis] * r as f64).floor() as isize
        }
    };
    let mut buckets = vec![Vec::new(); r * r];
    for (fi, f) in mesh.faces.iter().enumerate() {
        let tri = [mesh.vertices[f[0]], mesh.vertices[f[1]], mesh.vertices[f[2]]];
        let range = |axis: usize| {
            let lo = tri.iter().map(|v| v[axis]).fold(f64::INFINITY, f64::min);
            let hi = tri.iter().map(|v| v[axis]).fold(f64::NEG_INFINITY, f64::max);
            let a = (cell(lo, axis) - 1).max(0);
            let b = (cell(hi, axis) + 1).min(r as isize - 1);
            (a, b)
        };
        let ((y0, y1), (z0, z1)) = (range(1), range(2));
        for iz in z0..=z1 {
            for iy in y0..=y1 {
                buckets[iy as usize + r * iz as usize].push(fi);
            }
        }
    }
    buckets
}

/// Voxelizes into the given bounds. A cell is occupied when its center has
/// an odd number of surface crossings on its −X side.
pub fn voxelize_in(mesh: &Mesh, resolution: usize, bounds: Aabb) -> Result<OccupancyGrid, GeometryError> {
    if !(4..=128).contains(&resolution) {
        return Err(GeometryError::InvalidResolution(resolution));
    }
    let r = resolution;
    let mut grid = OccupancyGrid {
        resolution: r,
        bounds,
        cells: vec![false; r * r * r],
        open_mesh_warning: false,
    };
    let e = bounds.extent();
    let (cy, cz) = (e[1] / r as f64, e[2] / r as f64);
    let buckets = bucket_faces(mesh, &bounds, r);
    for iz in 0..r {
        for iy in 0..r {
            let c = grid.cell_center(0, iy, iz);
            let faces = &buckets[iy + r * iz];
            // Ties on edges are resolved by nudging the ray off the cell centroid.
            let mut hits = row_crossings(mesh, faces, c[1], c[2]);
            let mut k = 1.0;
            while hits.is_none() && k < 64.0 {
                hits = row_crossings(mesh, faces, c[1] + 1.0e-7 * k * cy, c[2] + 2.3e-7 * k * cz);
                k *= 2.0;
            }
            let hits = hits.unwrap_or_default();
            if hits.len() % 2 == 1 {
                grid.open_mesh_warning = true;
            }
            let mut passed = 0;
            for ix in 0..r {
                let x = grid.cell_center(ix, iy, iz)[0];
                while passed < hits.len() && hits[passed] < x {
                    passed += 1;
                }
                grid.cells[ix + r * (iy + r * iz)] = passed % 2 == 1;
            }
        }
    }
    Ok(grid)
}

/// Voxelizes over the mesh's own bounding box.
pub fn voxelize(mesh: &Mesh, resolution: usize) -> Result<OccupancyGrid, GeometryError> {
    let bounds = mesh.bbox().ok_or(GeometryError::EmptyMesh)?;
    voxelize_in(mesh, resolution, bounds)
}

/// |a ∩ b| / |a ∪ b| over matching grids; two empty grids score 1.
pub fn voxel_iou(a: &OccupancyGrid, b: &OccupancyGrid) -> Result<f64, GeometryError> {
    if a.resolution != b.resolution || a.bounds != b.bounds {
        return Err(GeometryError::GridMismatch);
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.cells.iter().zip(&b.cells) {
        inter += (p && q) as usize;
        union += (p || q) as usize;
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Voxel IoU of two meshes over the union of their bounding boxes.
pub fn mesh_voxel_iou(a: &Mesh, b: &Mesh, resolution: usize) -> Result<f64, GeometryError> {
    let ba = a.bbox().ok_or(GeometryError::EmptyMesh)?;
    let bb = b.bbox().ok_or(GeometryError::EmptyMesh)?;
    let bounds = ba.union(&bb);
    voxel_iou(
        &voxelize_in(a, resolution, bounds)?,
        &voxelize_in(b, resolution, bounds)?,
    )
}
