//! Attention normalisation of one convolution with random weights.

use ndarray::Array2;
use pdmesh::conv::{AttentionInit, ConvSpec, Forward, HeadMode};
use pdmesh::graph::{build_pair, DualConfig};
use pdmesh::mesh::Mesh;
use pdmesh::tensor::{BufferStore, ParamStore};
use rand::Rng;

pub fn max_deviation_from_one(values: &Array2<f64>, dst: &[usize], targets: usize) -> f64 {
    let mut sums = Array2::<f64>::zeros((targets, values.ncols()));
    for (r, &d) in dst.iter().enumerate() {
        let mut row = sums.row_mut(d);
        row += &values.row(r);
    }
    let mut seen = vec![false; targets];
    dst.iter().for_each(|&d| seen[d] = true);
    let mut worst = 0.0f64;
    for (t, row) in sums.rows().into_iter().enumerate() {
        if seen[t] {
            worst = row.iter().fold(worst, |m, &s| m.max((s - 1.0).abs()));
        }
    }
    worst
}

/// Largest deviation from one of the per-node, per-head sums of incoming
/// primal and dual attention coefficients. Coefficients outside `[0, 1]`
/// count as infinite deviation.
pub fn attention_deviation(mesh: &Mesh, config: DualConfig, heads: usize, self_loops: bool, seed: u64) -> (f64, f64) {
    let pair = build_pair(mesh, config).unwrap();
    let spec = ConvSpec {
        name: "c".into(),
        in_primal: 1,
        in_dual: config.channels(),
        out_primal: 4,
        out_dual: 3,
        heads,
        mode: HeadMode::Concat,
        self_loops,
        activate: true,
    };
    let mut rng = super::rng(seed);
    let mut params = ParamStore::new();
    spec.init_params(&mut params, &mut rng, AttentionInit::Glorot);
    let buffers = BufferStore::new();
    let mut fw = Forward::new(&params, &buffers, false);
    let scale: f64 = rng.gen_range(0.5..20.0);
    let p = fw.tape.constant(pair.primal_features.mapv(|x| x * scale));
    let d = fw.tape.constant(pair.dual_features.clone());
    let out = spec.forward(&mut fw, &pair, p, d).unwrap();
    let pa = fw.tape.value(out.primal_attention).unwrap();
    let da = fw.tape.value(out.dual_attention).unwrap();
    assert_eq!(pa.ncols(), heads);
    if !pa.iter().chain(da.iter()).all(|&a| (0.0..=1.0).contains(&a)) {
        return (f64::INFINITY, f64::INFINITY);
    }
    (
        max_deviation_from_one(pa, &pair.messages.dst, pair.primal.num_nodes()),
        max_deviation_from_one(da, &out.dual_dst, pair.dual.num_nodes),
    )
}
