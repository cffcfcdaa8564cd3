//! Edge-contraction pooling driven by primal attention, and its inverse.
//!
//! Each undirected primal edge is scored by the attention flowing along it in
//! both directions (averaged over heads). The top-scoring edges of every
//! member graph are contracted: connected components of the selected edges
//! become single nodes (face clusters). An unselected edge whose endpoints
//! already fall into one component would turn into a self-loop, so it is
//! contracted as well; this closes triangle fans left open by the selection.
//!
//! The dual graph is rebuilt as the line graph of the new primal graph. Dual
//! nodes of contracted edges are removed, dual nodes whose edges now join the
//! same pair of clusters are merged, the rest are kept.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DualConfig, DualGraph, GraphPair, PrimalGraph};
use crate::tensor::{Index, Result as TResult, Tape, Var};

#[derive(Debug, Error, PartialEq)]
pub enum PoolError {
    #[error("primal edge {edge} has {found} attention entries, expected 2")]
    MissingAttention { edge: usize, found: usize },
    #[error("attention has {rows} rows but the graph has {messages} primal messages")]
    AttentionShape { rows: usize, messages: usize },
    #[error("pooling fraction {0} outside (0, 1)")]
    Fraction(f64),
    #[error("rebuilt dual graph is not the line graph of the primal graph: {0}")]
    Invariant(String),
    #[error("selection has {got} flags for {edges} primal edges")]
    Selection { got: usize, edges: usize },
}

/// How many edges to contract in each member graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PoolTarget {
    /// `floor(f * |primal edges|)`.
    EdgeFraction(f64),
    /// `floor(f * |primal nodes|)`, capped at the edge count.
    NodeFraction(f64),
    Count(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Aggregation {
    Sum,
    Mean,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            other => Err(format!("unknown aggregation `{other}` (sum or mean)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolingConfig {
    pub target: PoolTarget,
    pub aggregation: Aggregation,
}

impl PoolingConfig {
    pub fn edges(fraction: f64, aggregation: Aggregation) -> Self {
        Self { target: PoolTarget::EdgeFraction(fraction), aggregation }
    }

    pub fn validate(&self) -> Result<(), PoolError> {
        match self.target {
            PoolTarget::EdgeFraction(f) | PoolTarget::NodeFraction(f) if !(f > 0.0 && f < 1.0) => {
                Err(PoolError::Fraction(f))
            }
            _ => Ok(()),
        }
    }
}

/// Contraction decision for one pooling layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    /// Per current primal edge.
    pub contracted: Vec<bool>,
    /// Edges chosen by score, in selection order.
    pub selected: Vec<usize>,
    /// Edges contracted only to avoid self-loops.
    pub forced: Vec<usize>,
}

/// Everything needed to undo one pooling layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolingTrace {
    /// The pair at the input of the layer.
    pub before: GraphPair,
    /// New primal node of every old primal node.
    pub primal_map: Vec<usize>,
    /// New dual node of every old dual node; `None` when removed.
    pub dual_map: Vec<Option<usize>>,
    pub selection: Selection,
    /// Old dual nodes that survive, and their new ids (same order).
    pub dual_kept: Index,
    pub dual_target: Index,
    pub primal_index: Index,
    /// Dual node count after pooling.
    pub dual_after: usize,
}

impl PoolingTrace {
    pub fn removed_dual_nodes(&self) -> usize {
        self.dual_map.iter().filter(|m| m.is_none()).count()
    }

    pub fn new_primal_nodes(&self) -> usize {
        self.primal_map.iter().max().map_or(0, |m| m + 1)
    }
}

/// `mean over heads of (α_{u→v} + α_{v→u})` for every primal edge.
pub fn score_edges(pair: &GraphPair, attention: &Array2<f64>) -> Result<Vec<f64>, PoolError> {
    let msgs = &pair.messages;
    if attention.nrows() != msgs.edge.len() {
        return Err(PoolError::AttentionShape { rows: attention.nrows(), messages: msgs.edge.len() });
    }
    let heads = attention.ncols() as f64;
    let mut scores = vec![0.0; pair.primal.num_edges()];
    let mut seen = vec![0usize; pair.primal.num_edges()];
    for (r, &e) in msgs.edge.iter().enumerate() {
        scores[e] += attention.row(r).sum();
        seen[e] += 1;
    }
    if let Some(edge) = seen.iter().position(|&c| c != 2) {
        return Err(PoolError::MissingAttention { edge, found: seen[edge] });
    }
    Ok(scores.into_iter().map(|s| s / heads).collect())
}

/// Number of edges to contract in a graph with the given counts.
pub fn budget(target: PoolTarget, nodes: usize, edges: usize) -> usize {
    let k = match target {
        PoolTarget::EdgeFraction(f) => (f * edges as f64).floor() as usize,
        PoolTarget::NodeFraction(f) => (f * nodes as f64).floor() as usize,
        PoolTarget::Count(k) => k,
    };
    k.min(edges)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins, keeps roots deterministic
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            self.parent[hi] = lo;
        }
    }
}

/// Top-K edges per member graph by descending score, ties to the lower edge
/// id, then closed so that no unselected edge ends inside a cluster.
pub fn select_edges(pair: &GraphPair, scores: &[f64], target: PoolTarget) -> Selection {
    let mut selected = Vec::new();
    for g in 0..pair.num_graphs() {
        let range = pair.edge_range(g);
        let k = budget(target, pair.node_range(g).len(), range.len());
        let mut order: Vec<usize> = range.collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        selected.extend_from_slice(&order[..k]);
    }
    close_selection(&pair.primal, selected)
}

/// Adds every edge whose endpoints are joined by the selected edges.
pub fn close_selection(primal: &PrimalGraph, selected: Vec<usize>) -> Selection {
    let mut contracted = vec![false; primal.num_edges()];
    let mut uf = UnionFind::new(primal.num_nodes());
    for &e in &selected {
        contracted[e] = true;
        let [u, v] = primal.edges[e];
        uf.union(u, v);
    }
    let mut forced = Vec::new();
    for (e, &[u, v]) in primal.edges.iter().enumerate() {
        if !contracted[e] && uf.find(u) == uf.find(v) {
            contracted[e] = true;
            forced.push(e);
        }
    }
    Selection { contracted, selected, forced }
}

/// Sum or mean of rows per target, for plain arrays.
pub fn aggregate_rows(x: &Array2<f64>, rows: &[usize], targets: &[usize], n: usize, agg: Aggregation) -> Array2<f64> {
    let mut out = Array2::zeros((n, x.ncols()));
    let mut count = vec![0usize; n];
    for (&r, &t) in rows.iter().zip(targets) {
        let mut o = out.row_mut(t);
        o += &x.row(r);
        count[t] += 1;
    }
    if agg == Aggregation::Mean {
        for (mut o, &c) in out.rows_mut().into_iter().zip(&count) {
            if c > 0 {
                o /= c as f64;
            }
        }
    }
    out
}

/// Contracts the flagged edges of `pair`.
pub fn contract(pair: &GraphPair, selection: Selection, agg: Aggregation) -> Result<(GraphPair, PoolingTrace), PoolError> {
    let primal = &pair.primal;
    if selection.contracted.len() != primal.num_edges() {
        return Err(PoolError::Selection { got: selection.contracted.len(), edges: primal.num_edges() });
    }
    let config = pair.config();
    let n_old = primal.num_nodes();
    let mut uf = UnionFind::new(n_old);
    for (e, &[u, v]) in primal.edges.iter().enumerate() {
        if selection.contracted[e] {
            uf.union(u, v);
        }
    }
    // new ids in order of each cluster's smallest old node
    let mut root_id = vec![usize::MAX; n_old];
    let mut primal_map = vec![0; n_old];
    let mut n_new = 0;
    for (old, slot) in primal_map.iter_mut().enumerate() {
        let r = uf.find(old);
        if root_id[r] == usize::MAX {
            root_id[r] = n_new;
            n_new += 1;
        }
        *slot = root_id[r];
    }
    let mut clusters = vec![Vec::new(); n_new];
    for old in 0..n_old {
        clusters[primal_map[old]].extend_from_slice(&primal.clusters[old]);
    }
    for c in &mut clusters {
        c.sort_unstable();
    }

    // surviving edges, merged by cluster pair
    let mut keyed: Vec<([usize; 2], usize)> = Vec::new();
    for (e, &[u, v]) in primal.edges.iter().enumerate() {
        if selection.contracted[e] {
            continue;
        }
        let (a, b) = (primal_map[u], primal_map[v]);
        if a == b {
            return Err(PoolError::Invariant(format!("edge {e} would become a self-loop")));
        }
        keyed.push(([a.min(b), a.max(b)], e));
    }
    keyed.sort_unstable();
    let mut edges: Vec<[usize; 2]> = Vec::new();
    let mut mesh_edges: Vec<Vec<usize>> = Vec::new();
    let mut edge_map = vec![None; primal.num_edges()];
    for (key, e) in keyed {
        if edges.last() != Some(&key) {
            edges.push(key);
            mesh_edges.push(Vec::new());
        }
        edge_map[e] = Some(edges.len() - 1);
        mesh_edges.last_mut().unwrap().extend_from_slice(&primal.mesh_edges[e]);
    }
    for m in &mut mesh_edges {
        m.sort_unstable();
    }

    let mut dual_map = vec![None; pair.dual.num_nodes];
    for (node, slot) in dual_map.iter_mut().enumerate() {
        let (e, reversed) = pair.dual.edge_of(node);
        if let Some(ne) = edge_map[e] {
            *slot = Some(match config {
                DualConfig::A => ne,
                DualConfig::B | DualConfig::C => {
                    let [u, v] = primal.edges[e];
                    let from = if reversed { v } else { u };
                    DualGraph::node(config, ne, &edges, primal_map[from])
                }
            });
        }
    }

    let dual_kept: Vec<usize> = (0..dual_map.len()).filter(|&i| dual_map[i].is_some()).collect();
    let dual_target: Vec<usize> = dual_kept.iter().map(|&i| dual_map[i].unwrap()).collect();
    let n_dual = edges.len() * config.nodes_per_edge();
    let all_old: Vec<usize> = (0..n_old).collect();
    let primal_features = aggregate_rows(&pair.primal_features, &all_old, &primal_map, n_new, agg);
    let dual_features = aggregate_rows(&pair.dual_features, &dual_kept, &dual_target, n_dual, agg);

    let mut node_offsets: Vec<usize> = pair.node_offsets[..pair.num_graphs()].iter().map(|&o| primal_map[o]).collect();
    node_offsets.push(n_new);

    let new_primal = PrimalGraph { edges, clusters, mesh_edges };
    let new_pair = GraphPair::from_primal(
        new_primal,
        config,
        primal_features,
        dual_features,
        pair.num_faces,
        node_offsets,
        pair.face_offsets.clone(),
    );
    check_line_graph(&new_pair)?;
    let trace = PoolingTrace {
        before: pair.clone(),
        primal_index: primal_map.clone().into(),
        primal_map,
        dual_map,
        selection,
        dual_kept: dual_kept.into(),
        dual_target: dual_target.into(),
        dual_after: n_dual,
    };
    Ok((new_pair, trace))
}

/// Cheap structural check of the rebuilt dual: every message joins primal
/// edges sharing an endpoint and the message count matches the degrees.
pub fn check_line_graph(pair: &GraphPair) -> Result<(), PoolError> {
    let edges = &pair.primal.edges;
    let deg = pair.primal.degrees();
    let per_side = |e: usize| deg[edges[e][0]] + deg[edges[e][1]] - 2;
    let expected: usize = match pair.config() {
        DualConfig::A => (0..edges.len()).map(per_side).sum(),
        DualConfig::B => 2 * (0..edges.len()).map(per_side).sum::<usize>(),
        DualConfig::C => (0..edges.len()).map(per_side).sum(),
    };
    if expected != pair.dual.num_messages() {
        return Err(PoolError::Invariant(format!(
            "{} dual messages, expected {expected}",
            pair.dual.num_messages()
        )));
    }
    for (&s, &d) in pair.dual.src.iter().zip(pair.dual.dst.iter()) {
        let (a, b) = (edges[pair.dual.edge_of(s).0], edges[pair.dual.edge_of(d).0]);
        if a == b || !(a.contains(&b[0]) || a.contains(&b[1])) {
            return Err(PoolError::Invariant(format!("dual message {s} -> {d} joins non-adjacent primal edges")));
        }
    }
    Ok(())
}

/// Scores, selects and contracts in one call.
pub fn pool(pair: &GraphPair, attention: &Array2<f64>, config: &PoolingConfig) -> Result<(GraphPair, PoolingTrace), PoolError> {
    config.validate()?;
    let scores = score_edges(pair, attention)?;
    let selection = select_edges(pair, &scores, config.target);
    contract(pair, selection, config.aggregation)
}

/// Pools primal and dual features on the tape following `trace`.
pub fn pool_features(tape: &mut Tape, trace: &PoolingTrace, primal: Var, dual: Var, agg: Aggregation) -> TResult<(Var, Var)> {
    let n_primal = trace.new_primal_nodes();
    let n_dual = trace.dual_after;
    let p = tape.segment_sum(primal, &trace.primal_index, n_primal)?;
    let kept = tape.gather_rows(dual, &trace.dual_kept)?;
    let d = tape.segment_sum(kept, &trace.dual_target, n_dual)?;
    if agg == Aggregation::Sum {
        return Ok((p, d));
    }
    let inv = |counts: Vec<usize>| {
        Array2::from_shape_fn((counts.len(), 1), |(i, _)| if counts[i] > 0 { 1.0 / counts[i] as f64 } else { 0.0 })
    };
    let mut pc = vec![0; n_primal];
    trace.primal_map.iter().for_each(|&t| pc[t] += 1);
    let mut dc = vec![0; n_dual];
    trace.dual_target.iter().for_each(|&t| dc[t] += 1);
    let (pi, di) = (tape.constant(inv(pc)), tape.constant(inv(dc)));
    Ok((tape.mul_col(p, pi)?, tape.mul_col(d, di)?))
}

/// Restores pre-pooling shapes: every old node takes its cluster's feature,
/// removed dual nodes take the `1 x C` `filler` row.
pub fn unpool_features(tape: &mut Tape, trace: &PoolingTrace, primal: Var, dual: Var, filler: Var) -> TResult<(Var, Var)> {
    let p = tape.gather_rows(primal, &trace.primal_index)?;
    let n_new = tape.shape(dual)?.0;
    let stacked = tape.concat_rows(&[dual, filler])?;
    let index: Vec<usize> = trace.dual_map.iter().map(|m| m.unwrap_or(n_new)).collect();
    let d = tape.gather_rows(stacked, &index.into())?;
    Ok((p, d))
}
