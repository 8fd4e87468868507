use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::math::{self, RotationMatrix, Vec3};
use super::GeometryError;

/// Indexed triangle mesh.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
}

/// Axis-aligned bounding box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn extent(&self) -> Vec3 {
        math::sub(self.max, self.min)
    }

    pub fn center(&self) -> Vec3 {
        math::scale(math::add(self.min, self.max), 0.5)
    }

    /// Center of the bottom (min-y) face.
    pub fn bottom_center(&self) -> Vec3 {
        let c = self.center();
        [c[0], self.min[1], c[2]]
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: [0, 1, 2].map(|i| self.min[i].min(other.min[i])),
            max: [0, 1, 2].map(|i| self.max[i].max(other.max[i])),
        }
    }
}

impl Mesh {
    /// Builds a mesh after checking the structural invariants.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self, GeometryError> {
        let mesh = Self { vertices, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if let Some(i) = self
            .vertices
            .iter()
            .position(|v| !v.iter().all(|c| c.is_finite()))
        {
            return Err(GeometryError::InvalidMesh(format!("vertex {i} is not finite")));
        }
        let n = self.vertices.len();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(GeometryError::InvalidMesh(format!(
                    "face {fi} references a vertex out of range ({n} vertices)"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(GeometryError::InvalidMesh(format!(
                    "face {fi} repeats a vertex"
                )));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn bbox(&self) -> Option<Aabb> {
        let first = *self.vertices.first()?;
        let mut b = Aabb {
            min: first,
            max: first,
        };
        for v in &self.vertices[1..] {
            for i in 0..3 {
                b.min[i] = b.min[i].min(v[i]);
                b.max[i] = b.max[i].max(v[i]);
            }
        }
        Some(b)
    }

    pub fn triangle(&self, f: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[f];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.triangle(f);
        0.5 * math::norm(math::cross(math::sub(b, a), math::sub(c, a)))
    }

    /// Undirected edges with the faces incident to each, in sorted edge order.
    pub fn edge_faces(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        map
    }

    /// Sorted, deduplicated one-ring neighbours of every vertex.
    pub fn vertex_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nbrs = vec![Vec::new(); self.vertices.len()];
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                nbrs[a].push(b);
                nbrs[b].push(a);
            }
        }
        for n in &mut nbrs {
            n.sort_unstable();
            n.dedup();
        }
        nbrs
    }

    /// V − E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_faces().len() as i64 + self.faces.len() as i64
    }

    /// Every edge shared by exactly two faces.
    pub fn is_watertight(&self) -> bool {
        !self.faces.is_empty() && self.edge_faces().values().all(|f| f.len() == 2)
    }

    /// Splits a merged mesh back into the parts before and after `vertex_offset`.
    pub fn split_at(&self, vertex_offset: usize, face_offset: usize) -> (Mesh, Mesh) {
        let a = Mesh {
            vertices: self.vertices[..vertex_offset].to_vec(),
            faces: self.faces[..face_offset].to_vec(),
        };
        let b = Mesh {
            vertices: self.vertices[vertex_offset..].to_vec(),
            faces: self.faces[face_offset..]
                .iter()
                .map(|f| f.map(|i| i - vertex_offset))
                .collect(),
        };
        (a, b)
    }
}

/// Maps every vertex `v` to `s·R·v + t`.
pub fn transform_mesh(
    mesh: &Mesh,
    rotation: &RotationMatrix,
    translation: Vec3,
    scale: f64,
) -> Result<Mesh, GeometryError> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(GeometryError::NonPositiveScale(scale));
    }
    let vertices = mesh
        .vertices
        .iter()
        .map(|v| math::add(math::scale(rotation.apply(*v), scale), translation))
        .collect();
    Ok(Mesh {
        vertices,
        faces: mesh.faces.clone(),
    })
}

/// Concatenates `b` after `a`, offsetting `b`'s face indices.
pub fn merge_meshes(a: &Mesh, b: &Mesh) -> Mesh {
    let offset = a.vertices.len();
    let mut vertices = Vec::with_capacity(offset + b.vertices.len());
    vertices.extend_from_slice(&a.vertices);
    vertices.extend_from_slice(&b.vertices);
    let mut faces = Vec::with_capacity(a.faces.len() + b.faces.len());
    faces.extend_from_slice(&a.faces);
    faces.extend(b.faces.iter().map(|f| f.map(|i| i + offset)));
    Mesh { vertices, faces }
}

/// Geodesic sphere from `subdivisions` rounds of midpoint subdivision of an
/// icosahedron. Level 3 gives 642 vertices and 1280 faces.
pub fn icosphere(subdivisions: u32, radius: f64) -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| math::normalize(*v))
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(math::normalize(math::scale(math::add(verts[a], verts[b]), 0.5)));
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    for v in &mut vertices {
        *v = math::scale(*v, radius);
    }
    Mesh { vertices, faces }
}

/// Closed axis-aligned box with outward-facing triangles.
pub fn box_mesh(min: Vec3, max: Vec3) -> Mesh {
    let vertices = (0..8)
        .map(|i| {
            [
                if i & 1 == 0 { min[0] } else { max[0] },
                if i & 2 == 0 { min[1] } else { max[1] },
                if i & 4 == 0 { min[2] } else { max[2] },
            ]
        })
        .collect();
    let faces = vec![
        [0, 2, 3],
        [0, 3, 1], // -z
        [4, 5, 7],
        [4, 7, 6], // +z
        [0, 1, 5],
        [0, 5, 4], // -y
        [2, 6, 7],
        [2, 7, 3], // +y
        [0, 4, 6],
        [0, 6, 2], // -x
        [1, 3, 7],
        [1, 7, 5], // +x
    ];
    Mesh { vertices, faces }
}
