mod common;

use std::collections::BTreeSet;

use ndarray::Array2;
use pdmesh::graph::{build_pair, DualConfig};
use pdmesh::mesh::build_topology;
use pdmesh::pooling::{
    contract, pool, pool_features, score_edges, select_edges, unpool_features, Aggregation, PoolTarget, PoolingConfig,
};
use pdmesh::shapes;
use pdmesh::tensor::Tape;
use proptest::prelude::*;

use common::pooling::{pool_chain, upper_fan};

fn config_strategy() -> impl Strategy<Value = DualConfig> {
    prop_oneof![Just(DualConfig::A), Just(DualConfig::B), Just(DualConfig::C)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(60))]

    #[test]
    fn pooled_dual_is_line_graph(
        n in 8usize..80,
        seed in 0u64..100_000,
        config in config_strategy(),
        f1 in 0.05f64..0.5,
        f2 in 0.05f64..0.5,
        f3 in 0.05f64..0.5,
    ) {
        let mesh = shapes::random_convex_hull(n, seed);
        let pair = pool_chain(&mesh, config, &[f1, f2, f3], seed, Aggregation::Sum);
        prop_assert!((pair.primal_features.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn corpus_meshes_pool_cleanly(
        index in 0usize..16,
        seed in 0u64..100_000,
        config in config_strategy(),
        f in 0.1f64..0.6,
        mean in any::<bool>(),
    ) {
        let corpus = common::corpus();
        let mesh = &corpus[index % corpus.len()];
        let agg = if mean { Aggregation::Mean } else { Aggregation::Sum };
        let pair = pool_chain(mesh, config, &[f, f, f, f], seed, agg);
        if agg == Aggregation::Sum {
            prop_assert!((pair.primal_features.sum() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn valence_three_vertices_survive_repeated_pooling() {
    for mesh in [shapes::triakis(&shapes::cube()), shapes::triakis(&shapes::icosahedron()), shapes::tetrahedron()] {
        for seed in 0..20 {
            for config in [DualConfig::A, DualConfig::B, DualConfig::C] {
                let pair = pool_chain(&mesh, config, &[0.3; 6], seed, Aggregation::Sum);
                assert!(pair.primal.num_nodes() >= 1);
            }
        }
    }
}

#[test]
fn open_fan_is_closed_into_one_cluster() {
    let mesh = shapes::bipyramid(5);
    for config in [DualConfig::A, DualConfig::B, DualConfig::C] {
        let pair = build_pair(&mesh, config).unwrap();
        let (faces, fan) = upper_fan(&pair, &mesh);
        assert_eq!((faces.len(), fan.len()), (5, 5));
        let mut scores = vec![0.0; pair.primal.num_edges()];
        for &e in &fan[..4] {
            scores[e] = 1.0;
        }
        let sel = select_edges(&pair, &scores, PoolTarget::Count(4));
        assert_eq!(sel.selected.iter().copied().collect::<BTreeSet<_>>(), fan[..4].iter().copied().collect());
        assert_eq!(sel.forced, vec![fan[4]]);
        let (next, _) = contract(&pair, sel, Aggregation::Sum).unwrap();
        // one cluster for the fan, five lower faces: a wheel
        assert_eq!(next.primal.num_nodes(), 6);
        assert_eq!(next.primal.num_edges(), 10);
        assert_eq!(next.primal.clusters[0], faces);
        let mut deg = next.primal.degrees();
        deg.sort_unstable();
        assert_eq!(deg, vec![3, 3, 3, 3, 3, 5]);
        assert_eq!(common::dual_messages(&next), common::oracle_dual_messages(&next.primal.edges, config));
    }
}

#[test]
fn pooled_edges_carry_their_mesh_edges() {
    let mesh = shapes::icosphere(2);
    let topo = build_topology(&mesh);
    let pair = pool_chain(&mesh, DualConfig::A, &[0.3, 0.3], 5, Aggregation::Sum);
    let owner = pair.face_to_node();
    let mut all = Vec::new();
    for (e, &[a, b]) in pair.primal.edges.iter().enumerate() {
        for &m in &pair.primal.mesh_edges[e] {
            let f = &topo.edge_faces[m];
            let ends = [owner[f[0]].min(owner[f[1]]), owner[f[0]].max(owner[f[1]])];
            assert_eq!(ends, [a, b]);
            all.push(m);
        }
    }
    // every mesh edge between different clusters is represented once
    let crossing: Vec<usize> =
        (0..topo.num_edges()).filter(|&m| owner[topo.edge_faces[m][0]] != owner[topo.edge_faces[m][1]]).collect();
    all.sort_unstable();
    assert_eq!(all, crossing);
}

#[test]
fn unpooling_restores_shapes_and_broadcasts() {
    let mesh = shapes::jittered(&shapes::icosphere(1), 0.1, 4);
    for config in [DualConfig::A, DualConfig::B] {
        let pair = build_pair(&mesh, config).unwrap();
        let mut rng = common::rng(9);
        let attention = common::random_attention(&pair, 1, &mut rng);
        for agg in [Aggregation::Sum, Aggregation::Mean] {
            let (next, trace) = pool(&pair, &attention, &PoolingConfig::edges(0.3, agg)).unwrap();
            let mut tape = Tape::new();
            let p = tape.constant(pair.primal_features.clone());
            let d = tape.constant(pair.dual_features.clone());
            let (pp, pd) = pool_features(&mut tape, &trace, p, d, agg).unwrap();
            let close = |a: &Array2<f64>, b: &Array2<f64>| (a - b).iter().all(|x| x.abs() < 1e-12);
            assert!(close(tape.value(pp).unwrap(), &next.primal_features));
            assert!(close(tape.value(pd).unwrap(), &next.dual_features));
            let c = config.channels();
            let filler = tape.constant(Array2::from_elem((1, c), -7.0));
            let (up, ud) = unpool_features(&mut tape, &trace, pp, pd, filler).unwrap();
            let (pp, pd) = (tape.value(pp).unwrap().clone(), tape.value(pd).unwrap().clone());
            let (up, ud) = (tape.value(up).unwrap(), tape.value(ud).unwrap());
            assert_eq!(up.dim(), pair.primal_features.dim());
            assert_eq!(ud.dim(), pair.dual_features.dim());
            for (old, &new) in trace.primal_map.iter().enumerate() {
                assert_eq!(up.row(old), pp.row(new));
            }
            for (old, m) in trace.dual_map.iter().enumerate() {
                match m {
                    Some(n) => assert_eq!(ud.row(old), pd.row(*n)),
                    None => assert!(ud.row(old).iter().all(|&x| x == -7.0)),
                }
            }
        }
    }
}

#[test]
fn mean_aggregation_averages_members() {
    let mesh = shapes::icosphere(1);
    let pair = build_pair(&mesh, DualConfig::A).unwrap();
    let attention = common::random_attention(&pair, 1, &mut common::rng(2));
    let (next, trace) = pool(&pair, &attention, &PoolingConfig::edges(0.4, Aggregation::Mean)).unwrap();
    for (c, faces) in next.primal.clusters.iter().enumerate() {
        let mean = faces.iter().map(|&f| pair.primal_features[[f, 0]]).sum::<f64>() / faces.len() as f64;
        assert!((next.primal_features[[c, 0]] - mean).abs() < 1e-15);
    }
    assert!(trace.removed_dual_nodes() >= trace.selection.selected.len());
}

#[test]
fn invalid_requests_are_errors() {
    let pair = build_pair(&shapes::cube(), DualConfig::A).unwrap();
    let short = Array2::zeros((3, 1));
    assert!(score_edges(&pair, &short).is_err());
    let ok = Array2::zeros((pair.messages.dst.len(), 1));
    for f in [0.0, 1.0, -0.1, f64::NAN] {
        assert!(pool(&pair, &ok, &PoolingConfig::edges(f, Aggregation::Sum)).is_err(), "{f}");
    }
    let mut sel = select_edges(&pair, &vec![0.0; pair.primal.num_edges()], PoolTarget::Count(1));
    sel.contracted.pop();
    assert!(contract(&pair, sel, Aggregation::Sum).is_err());
}
