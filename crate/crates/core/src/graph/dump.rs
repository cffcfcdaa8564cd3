use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DualConfig, GraphPair};

/// Node and edge counts. Dual edges are undirected for configuration A and
/// directed for B and C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub primal_nodes: usize,
    pub primal_edges: usize,
    pub dual_nodes: usize,
    pub dual_edges: usize,
}

impl GraphSummary {
    pub fn of(pair: &GraphPair) -> Self {
        let messages = pair.dual.num_messages();
        Self {
            primal_nodes: pair.primal.num_nodes(),
            primal_edges: pair.primal.num_edges(),
            dual_nodes: pair.dual.num_nodes,
            dual_edges: if pair.config() == DualConfig::A { messages / 2 } else { messages },
        }
    }
}

/// JSON form of a [`GraphPair`].
///
/// `dual.edges` lists `[src, dst]` message edges; for configuration A each
/// undirected edge appears once with `src < dst`. `dual.primal_edge[i]` is the
/// primal edge of dual node `i`, and `dual.reversed[i]` marks B/C nodes that
/// run from the larger to the smaller primal node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub config: DualConfig,
    pub summary: GraphSummary,
    pub primal: PrimalDump,
    pub dual: DualDump,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimalDump {
    pub edges: Vec<[usize; 2]>,
    pub clusters: Vec<Vec<usize>>,
    pub mesh_edges: Vec<Vec<usize>>,
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualDump {
    pub edges: Vec<[usize; 2]>,
    pub primal_edge: Vec<usize>,
    pub reversed: Vec<bool>,
    pub features: Vec<Vec<f64>>,
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl GraphDump {
    pub fn of(pair: &GraphPair) -> Self {
        let config = pair.config();
        let edges = pair
            .dual
            .src
            .iter()
            .zip(pair.dual.dst.iter())
            .filter(|(s, d)| config != DualConfig::A || s < d)
            .map(|(&s, &d)| [s, d])
            .collect();
        let (primal_edge, reversed) = (0..pair.dual.num_nodes).map(|n| pair.dual.edge_of(n)).unzip();
        Self {
            config,
            summary: GraphSummary::of(pair),
            primal: PrimalDump {
                edges: pair.primal.edges.clone(),
                clusters: pair.primal.clusters.clone(),
                mesh_edges: pair.primal.mesh_edges.clone(),
                features: rows(&pair.primal_features),
            },
            dual: DualDump { edges, primal_edge, reversed, features: rows(&pair.dual_features) },
        }
    }
}
