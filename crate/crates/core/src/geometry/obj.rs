//! Wavefront OBJ reading and writing (positions and triangle faces only).

use std::fmt::Write as _;

use super::mesh::Mesh;
use super::GeometryError;

/// Serializes `mesh` as OBJ text. Coordinates use Rust's shortest
/// round-trip float formatting, so parsing the output is bit-exact.
pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::with_capacity(32 * (mesh.vertices.len() + mesh.faces.len()));
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

fn malformed(line: usize, message: impl Into<String>) -> GeometryError {
    GeometryError::MalformedObj {
        line,
        message: message.into(),
    }
}

/// Parses OBJ text. Only `v` and triangular `f` records are interpreted;
/// normals, texture coordinates, groups and materials are ignored.
pub fn parse_obj(text: &str) -> Result<Mesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut raw_faces: Vec<(usize, [i64; 3])> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|p| p.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| malformed(line_no, format!("bad vertex coordinate: {e}")))?;
                if coords.len() != 3 {
                    return Err(malformed(line_no, "vertex needs three coordinates"));
                }
                if !coords.iter().all(|c| c.is_finite()) {
                    return Err(malformed(line_no, "vertex coordinate is not finite"));
                }
                vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<i64> = parts
                    .map(|p| {
                        p.split('/')
                            .next()
                            .unwrap_or("")
                            .parse::<i64>()
                            .map_err(|e| malformed(line_no, format!("bad face index '{p}': {e}")))
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() != 3 {
                    return Err(malformed(
                        line_no,
                        format!("face has {} vertices; only triangles are supported", idx.len()),
                    ));
                }
                raw_faces.push((line_no, [idx[0], idx[1], idx[2]]));
            }
            _ => {}
        }
    }
    let n = vertices.len() as i64;
    let mut faces = Vec::with_capacity(raw_faces.len());
    for (line_no, f) in raw_faces {
        let mut tri = [0usize; 3];
        for (slot, &i) in tri.iter_mut().zip(&f) {
            // 1-based, negative indices count back from the end
            let resolved = if i > 0 { i - 1 } else { n + i };
            if i == 0 || resolved < 0 || resolved >= n {
                return Err(malformed(
                    line_no,
                    format!("face index {i} out of range (1..={n})"),
                ));
            }
            *slot = resolved as usize;
        }
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(malformed(line_no, "face repeats a vertex"));
        }
        faces.push(tri);
    }
    Ok(Mesh { vertices, faces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::icosphere;

    #[test]
    fn minimal_triangle() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn slashes_comments_and_negatives() {
        let m = parse_obj("# c\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 -1//1\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn out_of_range_names_line() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2 9\n").unwrap_err();
        match err {
            GeometryError::MalformedObj { line, message } => {
                assert_eq!(line, 5);
                assert!(message.contains("out of range"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn quads_rejected() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nv 1 1 0\nf 1 2 3 4\n").unwrap_err();
        assert!(matches!(err, GeometryError::MalformedObj { line: 5, .. }));
    }

    #[test]
    fn roundtrip_is_exact() {
        let mut m = icosphere(2, 0.37);
        m.vertices[3][1] = 1.0 / 3.0;
        assert_eq!(parse_obj(&write_obj(&m)).unwrap(), m);
    }
}
