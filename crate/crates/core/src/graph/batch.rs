use ndarray::{concatenate, Axis};

use super::{GraphError, GraphPair, PrimalGraph};

/// Disjoint union of graph pairs. Node, edge and face ids of member `g` are
/// shifted by the totals of members `0..g`, so member order is preserved
/// everywhere and no edge crosses members.
pub fn batch_graphs(pairs: &[&GraphPair]) -> Result<GraphPair, GraphError> {
    let first = pairs.first().ok_or_else(|| GraphError::Batch("empty batch".into()))?;
    let config = first.config();
    for p in pairs {
        if p.config() != config {
            return Err(GraphError::Batch(format!("mixed configurations {} and {}", config, p.config())));
        }
        if p.primal_features.ncols() != first.primal_features.ncols()
            || p.dual_features.ncols() != first.dual_features.ncols()
        {
            return Err(GraphError::Batch("feature widths differ".into()));
        }
    }

    let mut primal = PrimalGraph { edges: Vec::new(), clusters: Vec::new(), mesh_edges: Vec::new() };
    let mut node_offsets = vec![0];
    let mut face_offsets = vec![0];
    let (mut nodes, mut faces, mut mesh_edges) = (0, 0, 0);
    for p in pairs {
        primal.edges.extend(p.primal.edges.iter().map(|&[u, v]| [u + nodes, v + nodes]));
        primal.clusters.extend(p.primal.clusters.iter().map(|c| c.iter().map(|f| f + faces).collect()));
        primal.mesh_edges.extend(p.primal.mesh_edges.iter().map(|m| m.iter().map(|e| e + mesh_edges).collect()));
        for g in 0..p.num_graphs() {
            node_offsets.push(nodes + p.node_offsets[g + 1]);
            face_offsets.push(faces + p.face_offsets[g + 1]);
        }
        nodes += p.primal.num_nodes();
        faces += p.num_faces;
        // mesh edge ids only need to stay distinct between members
        mesh_edges += p.primal.mesh_edges.iter().flatten().max().map_or(0, |m| m + 1);
    }
    let pf: Vec<_> = pairs.iter().map(|p| p.primal_features.view()).collect();
    let df: Vec<_> = pairs.iter().map(|p| p.dual_features.view()).collect();
    let primal_features = concatenate(Axis(0), &pf).expect("checked widths");
    let dual_features = concatenate(Axis(0), &df).expect("checked widths");
    Ok(GraphPair::from_primal(primal, config, primal_features, dual_features, faces, node_offsets, face_offsets))
}
