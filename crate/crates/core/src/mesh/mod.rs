//! Triangle meshes: loading, validation, edge topology and the per-face /
//! per-edge geometric quantities that graph features are built from.
//!
//! Meshes are indexed face sets. Winding is not trusted on input; the
//! geometry routines orient faces consistently (outward for closed
//! components) before computing normals.

mod geometry;
mod obj;
mod topology;

pub use geometry::{
    bounding_box_diagonal, cos_angle_from_edge_ratios, dihedral_angles, edge_geometry,
    face_areas, orient_faces, DihedralAngles, EdgeFeatures, EdgeGeometry, FaceAreas, SideRatios,
    DEGENERATE_EPS,
};
pub use obj::{load_obj, parse_obj, write_obj};
pub use topology::{build_topology, check_edge_manifold, ManifoldReport, MeshTopology, OffendingEdge};

use std::collections::HashMap;

use nalgebra::Vector3;
use thiserror::Error;

/// Position in model units.
pub type Point = Vector3<f64>;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("{path}:{line}: non-triangular face with {count} vertices")]
    NonTriangular {
        path: String,
        line: usize,
        count: usize,
    },
    #[error("mesh `{0}` has no faces")]
    Empty(String),
    #[error("face {face} references vertex {index}, but the mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },
    #[error("face {face} repeats vertex {vertex}")]
    RepeatedVertex { face: usize, vertex: usize },
    #[error("faces {first} and {second} reference the same vertex set")]
    DuplicateFace { first: usize, second: usize },
    #[error("mesh is not orientable (component containing face {face})")]
    NonOrientable { face: usize },
    #[error("{0} non-manifold edge(s); edges shared by more than two faces are not supported")]
    NonManifold(usize),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Indexed triangle mesh.
///
/// Invariants (checked by [`Mesh::new`]): every index is in range, every face
/// has three distinct vertices and no two faces share the same vertex set.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    name: String,
    vertices: Vec<Point>,
    faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(
        name: impl Into<String>,
        vertices: Vec<Point>,
        faces: Vec<[usize; 3]>,
    ) -> Result<Self, MeshError> {
        let name = name.into();
        if faces.is_empty() {
            return Err(MeshError::Empty(name));
        }
        let count = vertices.len();
        let mut seen: HashMap<[usize; 3], usize> = HashMap::with_capacity(faces.len());
        for (f, face) in faces.iter().enumerate() {
            for &index in face {
                if index >= count {
                    return Err(MeshError::IndexOutOfRange { face: f, index, count });
                }
            }
            if face[0] == face[1] || face[0] == face[2] {
                return Err(MeshError::RepeatedVertex { face: f, vertex: face[0] });
            }
            if face[1] == face[2] {
                return Err(MeshError::RepeatedVertex { face: f, vertex: face[1] });
            }
            let mut key = *face;
            key.sort_unstable();
            if let Some(&first) = seen.get(&key) {
                return Err(MeshError::DuplicateFace { first, second: f });
            }
            seen.insert(key, f);
        }
        Ok(Self { name, vertices, faces })
    }

    /// Builds a mesh from plain coordinate triples.
    pub fn from_arrays(
        name: impl Into<String>,
        vertices: &[[f64; 3]],
        faces: &[[usize; 3]],
    ) -> Result<Self, MeshError> {
        let vertices = vertices.iter().map(|v| Point::new(v[0], v[1], v[2])).collect();
        Self::new(name, vertices, faces.to_vec())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    /// Same connectivity with new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Point>) -> Result<Self, MeshError> {
        if vertices.len() != self.vertices.len() {
            return Err(MeshError::Parse {
                path: self.name.clone(),
                line: 0,
                msg: format!(
                    "vertex count changed from {} to {}",
                    self.vertices.len(),
                    vertices.len()
                ),
            });
        }
        Ok(Self { name: self.name.clone(), vertices, faces: self.faces.clone() })
    }

    /// Same geometry with faces permuted: face `i` of the result is face
    /// `order[i]` of `self`.
    pub fn permute_faces(&self, order: &[usize]) -> Result<Self, MeshError> {
        let faces = order.iter().map(|&i| self.faces[i]).collect();
        Self::new(self.name.clone(), self.vertices.clone(), faces)
    }

    /// Mirror through the plane `x = 0`. Winding is left as is; the geometry
    /// routines re-orient faces anyway.
    pub fn mirrored_x(&self) -> Self {
        let vertices = self.vertices.iter().map(|v| Point::new(-v.x, v.y, v.z)).collect();
        Self { name: self.name.clone(), vertices, faces: self.faces.clone() }
    }

    pub fn set_name(&mut self, name: impl Into<String>) {
        self.name = name.into();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_index() {
        let err = Mesh::from_arrays("m", &[[0.0; 3], [1.0, 0.0, 0.0]], &[[0, 1, 2]]).unwrap_err();
        assert!(matches!(err, MeshError::IndexOutOfRange { index: 2, .. }));
    }

    #[test]
    fn rejects_repeated_vertex() {
        let v = [[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let err = Mesh::from_arrays("m", &v, &[[0, 1, 1]]).unwrap_err();
        assert!(matches!(err, MeshError::RepeatedVertex { .. }));
    }

    #[test]
    fn rejects_duplicate_vertex_set() {
        let v = [[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let err = Mesh::from_arrays("m", &v, &[[0, 1, 2], [2, 1, 0]]).unwrap_err();
        assert!(matches!(err, MeshError::DuplicateFace { first: 0, second: 1 }));
    }

    #[test]
    fn rejects_empty() {
        assert!(matches!(Mesh::from_arrays("m", &[], &[]), Err(MeshError::Empty(_))));
    }
}
