mod common;

use ndarray::Array2;
use pdmesh::conv::{AttentionInit, Features, Forward, NormKind, ResidualBlockSpec};
use pdmesh::graph::{build_pair, DualConfig};
use pdmesh::shapes;
use pdmesh::tensor::{gradcheck, BufferStore, GradcheckOptions, Index, ParamStore, Result, Tape, Var};
use rand::Rng;

const TOLERANCE: f64 = 1e-4;

fn random(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.5..1.5))
}

fn index(rng: &mut impl Rng, len: usize, range: usize) -> Index {
    (0..len).map(|_| rng.gen_range(0..range)).collect::<Vec<_>>().into()
}

/// `sum(op(params) * R)` for a fixed random `R`, so that every output entry
/// carries a distinct weight.
fn projected(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(out)?;
    let w = tape.constant(random(&mut common::rng(seed ^ 0xabc), r, c));
    let y = tape.mul(out, w)?;
    tape.sum(y)
}

fn check_op(name: &str, shapes: &[(&str, usize, usize)], op: impl Fn(&mut Tape, &[Var]) -> Result<Var>) {
    for seed in 0..4u64 {
        let mut rng = common::rng(seed);
        let mut params = ParamStore::new();
        for &(n, r, c) in shapes {
            params.insert(n, random(&mut rng, r, c));
        }
        let report = gradcheck(
            &params,
            |p| {
                let mut t = Tape::new();
                let vars = shapes.iter().map(|(n, ..)| t.param(p, n)).collect::<Result<Vec<_>>>()?;
                let out = op(&mut t, &vars)?;
                let loss = projected(&mut t, out, seed)?;
                Ok((t, loss))
            },
            GradcheckOptions { max_coords: 64, seed, kink_tolerance: Some(TOLERANCE), ..Default::default() },
        )
        .unwrap();
        assert!(report.coords_checked > 0, "{name}");
        assert!(report.max_rel_error < TOLERANCE, "{name} seed {seed}: {report:?}");
    }
}

#[test]
fn dense_ops() {
    check_op("matmul", &[("a", 4, 3), ("b", 3, 5)], |t, v| t.matmul(v[0], v[1]));
    check_op("add", &[("a", 4, 3), ("b", 4, 3)], |t, v| t.add(v[0], v[1]));
    check_op("add_row", &[("a", 4, 3), ("b", 1, 3)], |t, v| t.add_row(v[0], v[1]));
    check_op("mul_row", &[("a", 4, 3), ("b", 1, 3)], |t, v| t.mul_row(v[0], v[1]));
    check_op("mul_col", &[("a", 4, 3), ("b", 4, 1)], |t, v| t.mul_col(v[0], v[1]));
    check_op("mul", &[("a", 4, 3), ("b", 4, 3)], |t, v| t.mul(v[0], v[1]));
    check_op("scale", &[("a", 4, 3)], |t, v| t.scale(v[0], -2.5));
    check_op("exp", &[("a", 4, 3)], |t, v| t.exp(v[0]));
    check_op("relu", &[("a", 4, 3)], |t, v| t.relu(v[0]));
    check_op("leaky_relu", &[("a", 4, 3)], |t, v| t.leaky_relu(v[0], 0.2));
    check_op("sum", &[("a", 4, 3)], |t, v| t.sum(v[0]));
    check_op("mean_rows", &[("a", 4, 3)], |t, v| t.mean_rows(v[0]));
}

#[test]
fn structural_ops() {
    check_op("concat_cols", &[("a", 4, 3), ("b", 4, 2)], |t, v| t.concat_cols(&[v[0], v[1], v[0]]));
    check_op("concat_rows", &[("a", 4, 3), ("b", 2, 3)], |t, v| t.concat_rows(&[v[1], v[0]]));
    check_op("slice_cols", &[("a", 4, 5)], |t, v| t.slice_cols(v[0], 1, 4));
    check_op("slice_rows", &[("a", 5, 3)], |t, v| t.slice_rows(v[0], 2, 5));
    let mut rng = common::rng(99);
    let gather = index(&mut rng, 9, 4);
    check_op("gather_rows", &[("a", 4, 3)], |t, v| t.gather_rows(v[0], &gather));
    let seg = index(&mut rng, 7, 3);
    check_op("segment_sum", &[("a", 7, 2)], |t, v| t.segment_sum(v[0], &seg, 4));
    check_op("segment_softmax", &[("a", 7, 2)], |t, v| t.segment_softmax(v[0], &seg, 3));
    let (src, dst) = (index(&mut rng, 8, 5), index(&mut rng, 8, 4));
    check_op("attend", &[("v", 5, 6), ("w", 8, 2)], |t, v| t.attend(v[0], v[1], &src, &dst, 4));
}

#[test]
fn normalisation_and_loss_ops() {
    check_op("group_norm", &[("x", 5, 6), ("g", 1, 6), ("b", 1, 6)], |t, v| t.group_norm(v[0], v[1], v[2], 2, 1e-5));
    check_op("group_norm_one_group", &[("x", 3, 4), ("g", 1, 4), ("b", 1, 4)], |t, v| {
        t.group_norm(v[0], v[1], v[2], 1, 1e-5)
    });
    check_op("batch_norm", &[("x", 6, 3), ("g", 1, 3), ("b", 1, 3)], |t, v| {
        t.batch_norm(v[0], v[1], v[2], 1e-5).map(|(y, _)| y)
    });
    check_op("cross_entropy", &[("x", 5, 4)], |t, v| t.cross_entropy(v[0], &[0, 3, 1, 1, 2]));
}

#[test]
fn residual_block_gradients() {
    let mesh = shapes::jittered(&shapes::octahedron(), 0.1, 3);
    for config in [DualConfig::A, DualConfig::B, DualConfig::C] {
        for (norm, train) in [(NormKind::Group, false), (NormKind::Batch, true)] {
            let pair = build_pair(&mesh, config).unwrap();
            let block =
                ResidualBlockSpec::new(["b0".into(), "b1".into()], 1, config.channels(), 3, 2, norm, config == DualConfig::B);
            let mut rng = common::rng(5);
            let (mut params, mut buffers) = (ParamStore::new(), BufferStore::new());
            block.init_params(&mut params, &mut buffers, &mut rng, AttentionInit::Glorot);
            let names: Vec<String> = params.names().cloned().collect();
            for n in names {
                params.get_mut(&n).unwrap().mapv_inplace(|x| x + rng.gen_range(-0.1..0.1));
            }
            let report = gradcheck(
                &params,
                |p| {
                    let mut fw = Forward::new(p, &buffers, train);
                    let primal = fw.tape.constant(pair.primal_features.mapv(|x| 8.0 * x));
                    let dual = fw.tape.constant(pair.dual_features.clone());
                    let (y, _) = block.forward(&mut fw, &pair, &Features { primal, dual })?;
                    let a = projected(&mut fw.tape, y.primal, 1)?;
                    let b = projected(&mut fw.tape, y.dual, 2)?;
                    let loss = fw.tape.add(a, b)?;
                    Ok((fw.tape, loss))
                },
                GradcheckOptions { max_coords: 150, floor: 1e-4, kink_tolerance: Some(TOLERANCE), ..Default::default() },
            )
            .unwrap();
            assert!(report.coords_checked >= 140, "{config} {norm:?}: {report:?}");
            assert!(report.max_rel_error < TOLERANCE, "{config} {norm:?}: {report:?}");
        }
    }
}
