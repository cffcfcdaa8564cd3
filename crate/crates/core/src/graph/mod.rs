//! Primal and dual graphs of a triangle mesh.
//!
//! The primal graph has one node per face (or face cluster after pooling) and
//! one edge per pair of adjacent nodes. The dual graph has one node per primal
//! edge (configuration A) or one per direction of each primal edge
//! (configurations B and C). Dual connectivity is always derived from the
//! primal graph, so the dual stays the line graph of the primal through
//! pooling.
//!
//! Dual node numbering is positional: in configuration A node `e` is primal
//! edge `e`; in B and C node `2e` is `u → v` and node `2e + 1` is `v → u` for
//! primal edge `e = (u, v)`, `u < v`.

mod batch;
mod dump;
mod theorem;

pub use batch::batch_graphs;
pub use dump::{GraphDump, GraphSummary};
pub use theorem::{degree_histogram, line_graph_of_primal, medial_graph, verify_medial_line_equivalence, TheoremReport, TheoremStatus};

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{
    build_topology, check_edge_manifold, edge_geometry, face_areas, EdgeGeometry, Mesh, MeshError, MeshTopology,
};
use crate::tensor::Index;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DualConfig {
    A,
    B,
    C,
}

impl DualConfig {
    /// Input feature width of dual nodes.
    pub fn channels(self) -> usize {
        match self {
            DualConfig::A => 7,
            DualConfig::B | DualConfig::C => 4,
        }
    }

    pub fn nodes_per_edge(self) -> usize {
        match self {
            DualConfig::A => 1,
            DualConfig::B | DualConfig::C => 2,
        }
    }
}

impl fmt::Display for DualConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DualConfig::A => "A",
            DualConfig::B => "B",
            DualConfig::C => "C",
        };
        f.write_str(s)
    }
}

impl FromStr for DualConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(DualConfig::A),
            "B" | "b" => Ok(DualConfig::B),
            "C" | "c" => Ok(DualConfig::C),
            other => Err(format!("unknown dual configuration `{other}` (expected A, B or C)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(
        "{} non-manifold edge(s), first between vertices {} and {}; meshes with edges shared by more than two faces \
         need dedicated dual nodes per face pair, which this build does not provide",
        .0.len(), .0[0].vertices[0], .0[0].vertices[1]
    )]
    NonManifold(Vec<crate::mesh::OffendingEdge>),
    #[error("total face area is zero")]
    ZeroArea,
    #[error("cannot batch graphs: {0}")]
    Batch(String),
}

/// Faces (or face clusters) and their adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalGraph {
    /// Canonical `(u, v)` pairs with `u < v`, sorted.
    pub edges: Vec<[usize; 2]>,
    /// Original face ids of each node, sorted.
    pub clusters: Vec<Vec<usize>>,
    /// Mesh edge ids represented by each primal edge, sorted.
    pub mesh_edges: Vec<Vec<usize>>,
}

impl PrimalGraph {
    pub fn num_nodes(&self) -> usize {
        self.clusters.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Per node: `(neighbour, edge id)` in increasing neighbour order.
    pub fn incidence(&self) -> Vec<Vec<(usize, usize)>> {
        let mut inc = vec![Vec::new(); self.num_nodes()];
        for (e, &[u, v]) in self.edges.iter().enumerate() {
            inc[u].push((v, e));
            inc[v].push((u, e));
        }
        for list in &mut inc {
            list.sort_unstable();
        }
        inc
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes()];
        for &[u, v] in &self.edges {
            d[u] += 1;
            d[v] += 1;
        }
        d
    }
}

/// Message edges of the dual graph, `src[i] → dst[i]`, sorted by
/// `(dst, src)`. Configuration A lists both directions of each undirected
/// edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DualGraph {
    pub config: DualConfig,
    pub num_nodes: usize,
    pub src: Index,
    pub dst: Index,
}

impl DualGraph {
    /// Dual node carrying primal edge `edge` in the direction `from → to`.
    /// In configuration A the direction is ignored.
    pub fn node(config: DualConfig, edge: usize, edges: &[[usize; 2]], from: usize) -> usize {
        match config {
            DualConfig::A => edge,
            DualConfig::B | DualConfig::C => 2 * edge + usize::from(edges[edge][0] != from),
        }
    }

    /// Primal edge of a dual node and, for B/C, whether it runs `v → u`.
    pub fn edge_of(&self, node: usize) -> (usize, bool) {
        match self.config {
            DualConfig::A => (node, false),
            DualConfig::B | DualConfig::C => (node / 2, node % 2 == 1),
        }
    }

    pub fn num_messages(&self) -> usize {
        self.src.len()
    }

    /// Number of incoming message edges per node.
    pub fn in_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &t in self.dst.iter() {
            d[t] += 1;
        }
        d
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_nodes];
        for &s in self.src.iter() {
            d[s] += 1;
        }
        d
    }
}

/// Incoming primal messages `src[i] → dst[i]`, sorted by `(dst, src)`, with
/// the dual node whose features score each message.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalMessages {
    pub src: Index,
    pub dst: Index,
    pub dual: Index,
    /// Primal edge of each message.
    pub edge: Vec<usize>,
}

/// A primal graph, its dual and the input features, possibly the disjoint
/// union of several meshes.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPair {
    pub primal: PrimalGraph,
    pub dual: DualGraph,
    pub messages: PrimalMessages,
    pub primal_features: Array2<f64>,
    pub dual_features: Array2<f64>,
    /// Number of original faces over all member meshes.
    pub num_faces: usize,
    /// First primal node of each member graph, plus the total.
    pub node_offsets: Vec<usize>,
    /// First face of each member mesh, plus the total.
    pub face_offsets: Vec<usize>,
}

impl GraphPair {
    /// Assembles a pair from a primal graph; dual connectivity and primal
    /// messages are derived from it.
    pub fn from_primal(
        primal: PrimalGraph,
        config: DualConfig,
        primal_features: Array2<f64>,
        dual_features: Array2<f64>,
        num_faces: usize,
        node_offsets: Vec<usize>,
        face_offsets: Vec<usize>,
    ) -> Self {
        let (dual, messages) = derive_dual(&primal, config);
        debug_assert_eq!(dual_features.nrows(), dual.num_nodes);
        debug_assert_eq!(primal_features.nrows(), primal.num_nodes());
        Self { primal, dual, messages, primal_features, dual_features, num_faces, node_offsets, face_offsets }
    }

    pub fn config(&self) -> DualConfig {
        self.dual.config
    }

    pub fn num_graphs(&self) -> usize {
        self.node_offsets.len() - 1
    }

    pub fn node_range(&self, g: usize) -> std::ops::Range<usize> {
        self.node_offsets[g]..self.node_offsets[g + 1]
    }

    pub fn face_range(&self, g: usize) -> std::ops::Range<usize> {
        self.face_offsets[g]..self.face_offsets[g + 1]
    }

    /// Primal edges of member graph `g` (contiguous because edges are sorted
    /// and node ranges are contiguous).
    pub fn edge_range(&self, g: usize) -> std::ops::Range<usize> {
        let lo = self.primal.edges.partition_point(|e| e[0] < self.node_offsets[g]);
        let hi = self.primal.edges.partition_point(|e| e[0] < self.node_offsets[g + 1]);
        lo..hi
    }

    pub fn dual_range(&self, g: usize) -> std::ops::Range<usize> {
        let r = self.edge_range(g);
        let k = self.config().nodes_per_edge();
        r.start * k..r.end * k
    }

    /// Member graph of every dual node.
    pub fn dual_graph_ids(&self) -> Vec<usize> {
        let mut ids = vec![0; self.dual.num_nodes];
        for g in 0..self.num_graphs() {
            for i in self.dual_range(g) {
                ids[i] = g;
            }
        }
        ids
    }

    /// Cluster id (current primal node) of every original face.
    pub fn face_to_node(&self) -> Vec<usize> {
        let mut map = vec![usize::MAX; self.num_faces];
        for (n, faces) in self.primal.clusters.iter().enumerate() {
            for &f in faces {
                map[f] = n;
            }
        }
        map
    }
}

fn derive_dual(primal: &PrimalGraph, config: DualConfig) -> (DualGraph, PrimalMessages) {
    let inc = primal.incidence();
    let edges = &primal.edges;
    let num_nodes = edges.len() * config.nodes_per_edge();
    let mut pairs: Vec<(usize, usize)> = Vec::new();

    match config {
        DualConfig::A => {
            for (e, &[u, v]) in edges.iter().enumerate() {
                for &(_, f) in inc[u].iter().chain(&inc[v]) {
                    if f != e {
                        pairs.push((e, f));
                    }
                }
            }
        }
        DualConfig::B | DualConfig::C => {
            for (e, &[u, v]) in edges.iter().enumerate() {
                for (a, b) in [(u, v), (v, u)] {
                    let target = DualGraph::node(config, e, edges, a);
                    // M → A for M ∈ N_A \ {B}
                    for &(m, f) in &inc[a] {
                        if m != b {
                            pairs.push((target, DualGraph::node(config, f, edges, m)));
                        }
                    }
                    // B → N for N ∈ N_B \ {A}
                    if config == DualConfig::B {
                        for &(n, f) in &inc[b] {
                            if n != a {
                                pairs.push((target, DualGraph::node(config, f, edges, b)));
                            }
                        }
                    }
                }
            }
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    let dst: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let src: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let dual = DualGraph { config, num_nodes, src: src.into(), dst: dst.into() };

    let mut msgs = Vec::with_capacity(2 * edges.len());
    for (a, list) in inc.iter().enumerate() {
        for &(m, e) in list {
            msgs.push((a, m, DualGraph::node(config, e, edges, m), e));
        }
    }
    let messages = PrimalMessages {
        dst: msgs.iter().map(|m| m.0).collect::<Vec<_>>().into(),
        src: msgs.iter().map(|m| m.1).collect::<Vec<_>>().into(),
        dual: msgs.iter().map(|m| m.2).collect::<Vec<_>>().into(),
        edge: msgs.iter().map(|m| m.3).collect(),
    };
    (dual, messages)
}

/// One node per face, one edge per interior mesh edge.
pub fn build_primal(mesh: &Mesh, topology: &MeshTopology) -> PrimalGraph {
    let mut pairs: Vec<([usize; 2], usize)> = topology
        .interior_edges()
        .map(|e| {
            let f = &topology.edge_faces[e];
            ([f[0].min(f[1]), f[0].max(f[1])], e)
        })
        .collect();
    pairs.sort_unstable();
    PrimalGraph {
        edges: pairs.iter().map(|p| p.0).collect(),
        clusters: (0..mesh.num_faces()).map(|f| vec![f]).collect(),
        mesh_edges: pairs.iter().map(|p| vec![p.1]).collect(),
    }
}

/// `area(A) / Σ area`, one column.
pub fn compute_primal_features(mesh: &Mesh) -> Result<Array2<f64>, GraphError> {
    let areas = face_areas(mesh);
    let total = areas.total();
    if total <= 0.0 {
        return Err(GraphError::ZeroArea);
    }
    Ok(Array2::from_shape_fn((mesh.num_faces(), 1), |(f, _)| areas.areas[f] / total))
}

fn sorted<const N: usize>(mut v: [f64; N]) -> [f64; N] {
    // stable: equal values keep their channel order
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Dual input features for the primal edges of a freshly built graph.
///
/// Configuration A: `[θ, sorted edge-to-height pair, sorted edge-to-edge
/// quadruple]`. Configurations B/C, node `A → B`: `[θ, |ab|/h_A, |ab|/|ad|,
/// |ab|/|bd|]`, i.e. face `A` as seen from `B`.
pub fn compute_dual_features(geometry: &EdgeGeometry, primal: &PrimalGraph, config: DualConfig) -> Array2<f64> {
    let k = config.nodes_per_edge();
    let mut out = Array2::zeros((primal.num_edges() * k, config.channels()));
    for (e, mesh_edges) in primal.mesh_edges.iter().enumerate() {
        let g = geometry.edges[mesh_edges[0]].expect("primal edges are interior mesh edges");
        let [u, v] = primal.edges[e];
        match config {
            DualConfig::A => {
                let h = sorted([g.sides[0].edge_to_height, g.sides[1].edge_to_height]);
                let r = sorted([
                    g.sides[0].edge_to_edge[0],
                    g.sides[0].edge_to_edge[1],
                    g.sides[1].edge_to_edge[0],
                    g.sides[1].edge_to_edge[1],
                ]);
                let row = [g.dihedral, h[0], h[1], r[0], r[1], r[2], r[3]];
                out.row_mut(e).assign(&ndarray::aview1(&row));
            }
            DualConfig::B | DualConfig::C => {
                for (d, face) in [(0, u), (1, v)] {
                    let side = g.sides.iter().find(|s| s.face == face).expect("edge side of endpoint face");
                    let row = [g.dihedral, side.edge_to_height, side.edge_to_edge[0], side.edge_to_edge[1]];
                    out.row_mut(2 * e + d).assign(&ndarray::aview1(&row));
                }
            }
        }
    }
    out
}

/// Builds the graph pair of one mesh. Non-manifold meshes are rejected.
pub fn build_pair(mesh: &Mesh, config: DualConfig) -> Result<GraphPair, GraphError> {
    let topology = build_topology(mesh);
    let report = check_edge_manifold(&topology);
    if !report.manifold {
        return Err(GraphError::NonManifold(report.offending));
    }
    let geometry = edge_geometry(mesh, &topology)?;
    let primal = build_primal(mesh, &topology);
    let primal_features = compute_primal_features(mesh)?;
    let dual_features = compute_dual_features(&geometry, &primal, config);
    let n = mesh.num_faces();
    Ok(GraphPair::from_primal(primal, config, primal_features, dual_features, n, vec![0, n], vec![0, n]))
}
