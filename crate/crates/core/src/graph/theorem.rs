//! Executable check that the medial graph of the mesh graph coincides with
//! the line graph of the primal graph, both keyed by mesh edge id.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::mesh::{build_topology, check_edge_manifold, Mesh, MeshTopology};

use super::build_primal;

/// Medial graph of the mesh graph: one node per mesh edge, an edge between
/// two mesh edges that are consecutive on a common face.
pub fn medial_graph(topology: &MeshTopology) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    for fe in &topology.face_edges {
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            let (a, b) = (fe[i].min(fe[j]), fe[i].max(fe[j]));
            out.insert((a, b));
        }
    }
    out
}

/// Line graph of the primal graph by exhaustive pair comparison, nodes keyed
/// by the mesh edge each primal edge crosses.
pub fn line_graph_of_primal(mesh: &Mesh, topology: &MeshTopology) -> BTreeSet<(usize, usize)> {
    let primal = build_primal(mesh, topology);
    let key: Vec<usize> = primal.mesh_edges.iter().map(|m| m[0]).collect();
    let mut out = BTreeSet::new();
    for i in 0..primal.edges.len() {
        for j in i + 1..primal.edges.len() {
            let (p, q) = (primal.edges[i], primal.edges[j]);
            if p[0] == q[0] || p[0] == q[1] || p[1] == q[0] || p[1] == q[1] {
                out.insert((key[i].min(key[j]), key[i].max(key[j])));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum TheoremStatus {
    Pass,
    Fail,
    /// Input outside the theorem's scope; nothing was compared.
    PreconditionViolated(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TheoremReport {
    pub status: TheoremStatus,
    pub medial_edges: usize,
    pub line_edges: usize,
    /// Edges in the medial graph but not in the line graph.
    pub missing: Vec<(usize, usize)>,
    /// Edges in the line graph but not in the medial graph.
    pub extra: Vec<(usize, usize)>,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        self.status == TheoremStatus::Pass
    }
}

fn precondition(mesh: &Mesh, topology: &MeshTopology) -> Result<(), String> {
    let report = check_edge_manifold(topology);
    if !report.manifold {
        return Err(format!("{} non-manifold edge(s)", report.offending.len()));
    }
    if !report.watertight {
        return Err(format!("{} boundary edge(s)", report.boundary_edges));
    }
    for comp in topology.face_components() {
        let mut verts: Vec<usize> = comp.iter().flat_map(|&f| mesh.faces()[f]).collect();
        verts.sort_unstable();
        verts.dedup();
        let mut edges: Vec<usize> = comp.iter().flat_map(|&f| topology.face_edges[f]).collect();
        edges.sort_unstable();
        edges.dedup();
        let chi = verts.len() as i64 - edges.len() as i64 + comp.len() as i64;
        if chi != 2 {
            return Err(format!("component with face {} has Euler characteristic {chi}, not genus 0", comp[0]));
        }
    }
    Ok(())
}

/// Compares both edge sets exactly for closed, edge-manifold, genus-0 meshes.
pub fn verify_medial_line_equivalence(mesh: &Mesh) -> TheoremReport {
    let topology = build_topology(mesh);
    if let Err(reason) = precondition(mesh, &topology) {
        return TheoremReport {
            status: TheoremStatus::PreconditionViolated(reason),
            medial_edges: 0,
            line_edges: 0,
            missing: Vec::new(),
            extra: Vec::new(),
        };
    }
    let medial = medial_graph(&topology);
    let line = line_graph_of_primal(mesh, &topology);
    let missing: Vec<_> = medial.difference(&line).copied().collect();
    let extra: Vec<_> = line.difference(&medial).copied().collect();
    let status = if missing.is_empty() && extra.is_empty() { TheoremStatus::Pass } else { TheoremStatus::Fail };
    TheoremReport { status, medial_edges: medial.len(), line_edges: line.len(), missing, extra }
}

/// Number of medial-graph nodes that have each degree.
pub fn degree_histogram(edges: &BTreeSet<(usize, usize)>) -> HashMap<usize, usize> {
    let mut deg: HashMap<usize, usize> = HashMap::new();
    for &(a, b) in edges {
        *deg.entry(a).or_default() += 1;
        *deg.entry(b).or_default() += 1;
    }
    let mut hist = HashMap::new();
    for d in deg.values() {
        *hist.entry(*d).or_default() += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn medial_graph_counts() {
        let t = build_topology(&shapes::tetrahedron());
        assert_eq!(medial_graph(&t).len(), 12);
        let t = build_topology(&shapes::single_triangle());
        assert_eq!(medial_graph(&t).len(), 3);
        let t = build_topology(&shapes::icosahedron());
        let m = medial_graph(&t);
        assert_eq!(m.len(), 60);
        assert_eq!(degree_histogram(&m)[&4], 30);
    }

    #[test]
    fn holds_on_solids() {
        for mesh in [shapes::tetrahedron(), shapes::icosphere(2)] {
            let r = verify_medial_line_equivalence(&mesh);
            assert!(r.passed(), "{}: {r:?}", mesh.name());
        }
    }

    #[test]
    fn torus_is_out_of_scope() {
        let r = verify_medial_line_equivalence(&shapes::torus(10, 6));
        assert!(matches!(r.status, TheoremStatus::PreconditionViolated(_)));
    }
}
