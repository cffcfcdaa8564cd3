use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use super::Mesh;

/// Edge-level connectivity of a [`Mesh`].
///
/// Edge ids follow the lexicographic order of the canonical vertex pair
/// `(min, max)`, so they only depend on the face list, not on hashing.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshTopology {
    pub edges: Vec<[usize; 2]>,
    pub edge_faces: Vec<Vec<usize>>,
    pub face_edges: Vec<[usize; 3]>,
    /// Faces sharing an edge with each face, sorted, without repetition.
    pub face_neighbors: Vec<Vec<usize>>,
    /// `true` for edges with exactly one incident face.
    pub boundary: Vec<bool>,
    pub num_vertices: usize,
    edge_index: HashMap<(usize, usize), usize>,
}

impl MeshTopology {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_faces(&self) -> usize {
        self.face_edges.len()
    }

    pub fn edge_id(&self, a: usize, b: usize) -> Option<usize> {
        self.edge_index.get(&(a.min(b), a.max(b))).copied()
    }

    /// Edges with exactly two incident faces, in edge-id order.
    pub fn interior_edges(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.edges.len()).filter(|&e| self.edge_faces[e].len() == 2)
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.num_vertices as i64 - self.edges.len() as i64 + self.face_edges.len() as i64
    }

    /// Face-connected components, each listed in increasing face order.
    pub fn face_components(&self) -> Vec<Vec<usize>> {
        let n = self.num_faces();
        let mut comp = vec![usize::MAX; n];
        let mut out = Vec::new();
        for seed in 0..n {
            if comp[seed] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![seed];
            comp[seed] = id;
            let mut head = 0;
            while head < members.len() {
                let f = members[head];
                head += 1;
                for &g in &self.face_neighbors[f] {
                    if comp[g] == usize::MAX {
                        comp[g] = id;
                        members.push(g);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }
}

pub fn build_topology(mesh: &Mesh) -> MeshTopology {
    let mut pairs: Vec<(usize, usize)> = mesh
        .faces()
        .iter()
        .flat_map(|f| {
            [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])].map(|(a, b)| (a.min(b), a.max(b)))
        })
        .collect();
    pairs.sort_unstable();
    pairs.dedup();

    let edge_index: HashMap<(usize, usize), usize> =
        pairs.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let edges: Vec<[usize; 2]> = pairs.iter().map(|&(a, b)| [a, b]).collect();

    let mut edge_faces = vec![Vec::new(); edges.len()];
    let mut face_edges = Vec::with_capacity(mesh.num_faces());
    for (fi, f) in mesh.faces().iter().enumerate() {
        let mut ids = [0usize; 3];
        for (slot, (a, b)) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])].into_iter().enumerate() {
            let e = edge_index[&(a.min(b), a.max(b))];
            ids[slot] = e;
            edge_faces[e].push(fi);
        }
        face_edges.push(ids);
    }

    let mut face_neighbors = vec![Vec::new(); mesh.num_faces()];
    for faces in &edge_faces {
        for &a in faces {
            for &b in faces {
                if a != b {
                    face_neighbors[a].push(b);
                }
            }
        }
    }
    for n in &mut face_neighbors {
        n.sort_unstable();
        n.dedup();
    }
    let boundary = edge_faces.iter().map(|f| f.len() == 1).collect();

    MeshTopology {
        edges,
        edge_faces,
        face_edges,
        face_neighbors,
        boundary,
        num_vertices: mesh.num_vertices(),
        edge_index,
    }
}

/// One record per edge shared by more than two faces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OffendingEdge {
    pub edge: usize,
    pub vertices: [usize; 2],
    pub faces: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifoldReport {
    pub manifold: bool,
    pub watertight: bool,
    pub boundary_edges: usize,
    pub offending: Vec<OffendingEdge>,
}

impl fmt::Display for ManifoldReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "manifold: {}, watertight: {}, boundary edges: {}",
            if self.manifold { "pass" } else { "fail" },
            self.watertight,
            self.boundary_edges
        )?;
        for e in &self.offending {
            writeln!(
                f,
                "non-manifold edge {} ({}, {}) shared by faces {:?}",
                e.edge, e.vertices[0], e.vertices[1], e.faces
            )?;
        }
        Ok(())
    }
}

pub fn check_edge_manifold(topology: &MeshTopology) -> ManifoldReport {
    let offending: Vec<OffendingEdge> = topology
        .edge_faces
        .iter()
        .enumerate()
        .filter(|(_, f)| f.len() > 2)
        .map(|(e, f)| OffendingEdge { edge: e, vertices: topology.edges[e], faces: f.clone() })
        .collect();
    let boundary_edges = topology.boundary.iter().filter(|&&b| b).count();
    ManifoldReport {
        manifold: offending.is_empty(),
        watertight: topology.edge_faces.iter().all(|f| f.len() == 2),
        boundary_edges,
        offending,
    }
}
