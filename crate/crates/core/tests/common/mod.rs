#![allow(dead_code)]

use std::collections::BTreeSet;

use ndarray::Array2;
use pdmesh::graph::{DualConfig, GraphPair};
use pdmesh::mesh::Mesh;
use pdmesh::shapes;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod attention;
pub mod gradients;
pub mod metrics;
pub mod pooling;

/// Closed, edge-manifold, genus-0 meshes.
pub fn closed_corpus() -> Vec<Mesh> {
    vec![
        shapes::tetrahedron(),
        shapes::cube(),
        shapes::octahedron(),
        shapes::icosahedron(),
        shapes::icosphere(1),
        shapes::icosphere(2),
        shapes::random_convex_hull(100, 7),
        shapes::subdivided_box(2),
        shapes::uv_sphere(12, 7),
        shapes::bipyramid(5),
        shapes::triakis(&shapes::cube()),
        shapes::jittered(&shapes::icosphere(1), 0.2, 3),
    ]
}

/// Closed meshes plus meshes with boundary or non-zero genus.
pub fn corpus() -> Vec<Mesh> {
    let mut all = closed_corpus();
    all.extend([
        shapes::torus(8, 5),
        shapes::triangle_strip(10),
        shapes::planar_pair(),
        shapes::scalene_pair(),
    ]);
    all
}

/// Dual node of the directed primal edge `from -> to` crossing primal edge
/// `e`, under the positional numbering (A: `e`; B/C: `2e` for the direction
/// from the smaller node, `2e + 1` otherwise).
pub fn node_of(config: DualConfig, e: usize, from: usize, to: usize) -> usize {
    match config {
        DualConfig::A => e,
        _ => 2 * e + usize::from(from > to),
    }
}

/// Dual message set built by exhaustive enumeration over pairs of primal
/// edges.
pub fn oracle_dual_messages(edges: &[[usize; 2]], config: DualConfig) -> BTreeSet<(usize, usize)> {
    let mut out = BTreeSet::new();
    match config {
        DualConfig::A => {
            for i in 0..edges.len() {
                for j in 0..edges.len() {
                    let (p, q) = (edges[i], edges[j]);
                    if i != j && (p[0] == q[0] || p[0] == q[1] || p[1] == q[0] || p[1] == q[1]) {
                        out.insert((i, j));
                    }
                }
            }
        }
        DualConfig::B | DualConfig::C => {
            let mut directed = Vec::new();
            for (e, &[u, v]) in edges.iter().enumerate() {
                directed.push((e, u, v));
                directed.push((e, v, u));
            }
            for &(te, x, y) in &directed {
                for &(se, p, q) in &directed {
                    let into_tail = q == x && p != y;
                    let from_head = p == y && q != x;
                    let hit = match config {
                        DualConfig::B => into_tail || from_head,
                        _ => into_tail,
                    };
                    if hit {
                        out.insert((node_of(config, se, p, q), node_of(config, te, x, y)));
                    }
                }
            }
        }
    }
    out
}

pub fn dual_messages(pair: &GraphPair) -> BTreeSet<(usize, usize)> {
    pair.dual.src.iter().zip(pair.dual.dst.iter()).map(|(&s, &d)| (s, d)).collect()
}

/// Uniform random attention, one row per primal message.
pub fn random_attention(pair: &GraphPair, heads: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((pair.messages.dst.len(), heads), |_| rng.gen::<f64>())
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Clusters form a partition of `0..faces`.
pub fn is_partition(clusters: &[Vec<usize>], faces: usize) -> bool {
    let mut seen = vec![false; faces];
    for c in clusters {
        if c.is_empty() {
            return false;
        }
        for &f in c {
            if f >= faces || seen[f] {
                return false;
            }
            seen[f] = true;
        }
    }
    seen.into_iter().all(|s| s)
}
