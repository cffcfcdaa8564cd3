//! Pooling oracles: union-find closure and structural checks of one step.

use std::collections::BTreeSet;

use pdmesh::graph::{build_pair, DualConfig, GraphPair};
use pdmesh::pooling::{pool, score_edges, Aggregation, PoolingConfig};

pub struct Uf(Vec<usize>);

impl Uf {
    pub fn find(&mut self, x: usize) -> usize {
        if self.0[x] != x {
            let r = self.find(self.0[x]);
            self.0[x] = r;
        }
        self.0[x]
    }

    /// Returns whether the two sets were distinct.
    pub fn join(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        self.0[ra] = rb;
        ra != rb
    }
}

/// Structural checks of one pooling step, against oracles that only look at
/// the graph before and after.
pub fn check_step(before: &GraphPair, after: &GraphPair, scores: &[f64], k: usize, trace: &pdmesh::pooling::PoolingTrace) {
    let config = before.config();
    let sel = &trace.selection;
    // top-k by score
    assert_eq!(sel.selected.len(), k);
    let chosen: BTreeSet<usize> = sel.selected.iter().copied().collect();
    let min_chosen = sel.selected.iter().map(|&e| scores[e]).fold(f64::INFINITY, f64::min);
    for (e, &s) in scores.iter().enumerate() {
        if !chosen.contains(&e) {
            assert!(s <= min_chosen);
        }
    }
    // forced edges are exactly the unselected edges closed by the selection
    let mut uf = Uf((0..before.primal.num_nodes()).collect());
    let mut rank = 0;
    for &e in &sel.selected {
        let [u, v] = before.primal.edges[e];
        rank += usize::from(uf.join(u, v));
    }
    let forced: BTreeSet<usize> = sel.forced.iter().copied().collect();
    for (e, &[u, v]) in before.primal.edges.iter().enumerate() {
        let closed = !chosen.contains(&e) && uf.find(u) == uf.find(v);
        assert_eq!(closed, forced.contains(&e), "edge {e}");
        assert_eq!(sel.contracted[e], chosen.contains(&e) || closed);
    }
    // one node less per spanning-forest edge
    assert_eq!(after.primal.num_nodes(), before.primal.num_nodes() - rank);
    // clusters partition the faces, and follow the primal map
    assert!(super::is_partition(&after.primal.clusters, after.num_faces));
    for (old, &new) in trace.primal_map.iter().enumerate() {
        for f in &before.primal.clusters[old] {
            assert!(after.primal.clusters[new].contains(f));
        }
    }
    // surviving edges: canonical, unique, no self-loops, one per cluster pair
    let mut expected_edges = BTreeSet::new();
    for (e, &[u, v]) in before.primal.edges.iter().enumerate() {
        if !sel.contracted[e] {
            let (a, b) = (trace.primal_map[u], trace.primal_map[v]);
            assert_ne!(a, b);
            expected_edges.insert([a.min(b), a.max(b)]);
        }
    }
    let got: Vec<[usize; 2]> = after.primal.edges.clone();
    assert_eq!(got, expected_edges.into_iter().collect::<Vec<_>>());
    // the dual is the line graph of the new primal graph
    assert_eq!(super::dual_messages(after), super::oracle_dual_messages(&after.primal.edges, config));
    assert_eq!(after.dual.num_nodes, after.primal.num_edges() * config.nodes_per_edge());
    // removed dual nodes are exactly those of contracted edges
    for (node, m) in trace.dual_map.iter().enumerate() {
        let (e, _) = before.dual.edge_of(node);
        assert_eq!(m.is_none(), sel.contracted[e]);
    }
}

pub fn pool_chain(mesh: &pdmesh::mesh::Mesh, config: DualConfig, fractions: &[f64], seed: u64, agg: Aggregation) -> GraphPair {
    let mut rng = super::rng(seed);
    let mut pair = build_pair(mesh, config).unwrap();
    for &f in fractions {
        if pair.primal.num_edges() == 0 {
            break;
        }
        let attention = super::random_attention(&pair, 2, &mut rng);
        let scores = score_edges(&pair, &attention).unwrap();
        let k = (f * pair.primal.num_edges() as f64).floor() as usize;
        let (next, trace) = pool(&pair, &attention, &PoolingConfig::edges(f, agg)).unwrap();
        check_step(&pair, &next, &scores, k, &trace);
        // sum pooling conserves primal mass and the mass of kept dual nodes
        if agg == Aggregation::Sum {
            let kept: f64 = trace.dual_kept.iter().map(|&i| pair.dual_features.row(i).sum()).sum();
            assert!((next.dual_features.sum() - kept).abs() < 1e-9 * (1.0 + kept.abs()));
        }
        pair = next;
    }
    pair
}

/// Faces around the first valence-5 vertex of a pentagonal bipyramid and the
/// primal edges joining consecutive ones.
pub fn upper_fan(pair: &GraphPair, mesh: &pdmesh::mesh::Mesh) -> (Vec<usize>, Vec<usize>) {
    let mut valence = vec![0; mesh.num_vertices()];
    mesh.faces().iter().flatten().for_each(|&v| valence[v] += 1);
    let apex = valence.iter().position(|&d| d == 5).unwrap();
    let faces: Vec<usize> = (0..mesh.num_faces()).filter(|&f| mesh.faces()[f].contains(&apex)).collect();
    let edges = (0..pair.primal.num_edges())
        .filter(|&e| pair.primal.edges[e].iter().all(|n| faces.contains(n)))
        .collect();
    (faces, edges)
}

