//! Finite-difference check of whole networks.

use pdmesh::graph::GraphPair;
use pdmesh::models::{ArchitectureSpec, ForwardOptions, Model};
use pdmesh::tensor::{gradcheck, GradcheckOptions, GradcheckReport};
use rand::Rng;

pub const EPS: f64 = 1e-5;
/// Central differences at `EPS` carry about 1e-10 of rounding noise, so
/// gradients below the floor are held to an absolute 1e-8.
pub const FLOOR: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

pub fn assert_passes(report: &GradcheckReport, min_coords: usize) {
    let sampled = report.coords_checked + report.nonsmooth.len();
    println!(
        "max rel error {:.3e} over {} coordinates, {} non-smooth",
        report.max_rel_error,
        report.coords_checked,
        report.nonsmooth.len()
    );
    assert!(report.coords_checked >= min_coords, "{report:?}");
    assert!(report.nonsmooth.len() * 20 <= sampled, "too many kinks: {report:?}");
    assert!(report.max_rel_error < TOLERANCE, "{report:?}");
}

/// Gradcheck of the cross-entropy of `model` on `pair`, with the pooling
/// decisions of the unperturbed parameters replayed at every probe.
pub fn check(spec: ArchitectureSpec, pair: &GraphPair, labels: &[usize], train: bool, coords: usize) -> GradcheckReport {
    let model = Model::new(spec).unwrap();
    let (mut params, buffers) = model.init(3);
    // zero biases put ReLUs exactly on their kink wherever a narrow group
    // normalises to a constant, so start from a generic point
    let mut rng = super::rng(23);
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        params.get_mut(&name).unwrap().mapv_inplace(|x| x + rng.gen_range(-0.1..0.1));
    }
    let first = model.forward(&params, &buffers, pair, ForwardOptions { train, replay: None }).unwrap();
    let replay = first.selections;
    gradcheck(
        &params,
        |p| {
            let mut out = model
                .forward(p, &buffers, pair, ForwardOptions { train, replay: Some(replay.clone()) })
                .map_err(|e| pdmesh::tensor::TensorError::Invalid(e.to_string()))?;
            let loss = out.tape.cross_entropy(out.logits, labels)?;
            Ok((out.tape, loss))
        },
        GradcheckOptions { eps: EPS, max_coords: coords, floor: FLOOR, seed: 17, kink_tolerance: Some(TOLERANCE) },
    )
    .unwrap()
}

