//! Brute-force metric oracles on a ten-face strip.

use pdmesh::mesh::{build_topology, Mesh, MeshTopology};
use pdmesh::metrics::{
    edge_accuracy_hard, edge_accuracy_hard_from_faces, edge_accuracy_soft_from_faces, face_label_accuracy,
    face_to_soft_edge, SoftRule,
};
use pdmesh::shapes;

pub const GT: [usize; 10] = [0, 0, 0, 1, 1, 2, 2, 2, 1, 1];
pub const PRED: [usize; 10] = [0, 1, 0, 1, 1, 2, 0, 2, 1, 2];

/// Interior edges of the strip from its construction: faces `i` and `i + 1`
/// share vertices `i + 1` and `i + 2`.
pub fn interior(mesh: &Mesh) -> Vec<(usize, usize, f64, [usize; 2])> {
    let v = mesh.vertices();
    (0..mesh.num_faces() - 1)
        .map(|i| {
            let (a, b) = (i + 1, i + 2);
            (i, i + 1, (v[a] - v[b]).norm(), [a, b])
        })
        .collect()
}

pub fn strip() -> (Mesh, MeshTopology) {
    let mesh = shapes::triangle_strip(10);
    let topo = build_topology(&mesh);
    (mesh, topo)
}

/// Hard edge labels: interior edges take the label of their right face,
/// boundary edges the label of their face.
pub fn gt_edges(mesh: &Mesh, topo: &MeshTopology) -> Vec<usize> {
    let mut out = vec![usize::MAX; topo.num_edges()];
    for (f, face) in mesh.faces().iter().enumerate() {
        for k in 0..3 {
            let e = topo.edge_id(face[k], face[(k + 1) % 3]).unwrap();
            out[e] = GT[f];
        }
    }
    for (_, right, _, [a, b]) in interior(mesh) {
        out[topo.edge_id(a, b).unwrap()] = GT[right];
    }
    out
}

pub fn lengths(mesh: &Mesh, topo: &MeshTopology) -> Vec<f64> {
    topo.edges.iter().map(|&[a, b]| (mesh.vertices()[a] - mesh.vertices()[b]).norm()).collect()
}

pub fn soft_oracle(mesh: &Mesh, pred: &[usize], weight: impl Fn(usize, f64) -> f64, rule: impl Fn(usize, usize, usize) -> f64) -> f64 {
    let edges = interior(mesh);
    let lens: Vec<f64> = edges.iter().enumerate().map(|(k, e)| weight(k, e.2)).collect();
    let mean = lens.iter().sum::<f64>() / lens.len() as f64;
    let mut total = 0.0;
    for (k, &(l, r, _, _)) in edges.iter().enumerate() {
        let f = |p: usize| rule(p, GT[l], GT[r]);
        total += lens[k] / mean * (0.5 * f(pred[l]) + 0.5 * f(pred[r]));
    }
    100.0 * total / edges.len() as f64
}


pub fn membership(p: usize, a: usize, b: usize) -> f64 {
    f64::from(u8::from(p == a || p == b))
}

pub fn split(p: usize, a: usize, b: usize) -> f64 {
    0.5 * f64::from(u8::from(p == a)) + 0.5 * f64::from(u8::from(p == b))
}

/// Compares every strip metric with its oracle and checks that perfect
/// predictions score exactly 100. Returns the largest absolute deviation.
pub fn check_strip() -> f64 {
    let (mesh, topo) = strip();
    let gt = gt_edges(&mesh, &topo);
    let soft = face_to_soft_edge(&GT, &topo).unwrap();
    let lens = lengths(&mesh, &topo);
    let mut worst = 0.0f64;

    let correct = GT.iter().zip(PRED).filter(|(g, p)| **g == *p).count();
    worst = worst.max((face_label_accuracy(&PRED, &GT, None).unwrap() - 10.0 * correct as f64).abs());

    let pred_edges: Vec<usize> = gt.iter().enumerate().map(|(e, &l)| if e % 3 == 0 { (l + 1) % 3 } else { l }).collect();
    let matches = pred_edges.iter().zip(&gt).filter(|(p, g)| p == g).count();
    let expected = 100.0 * matches as f64 / gt.len() as f64;
    worst = worst.max((edge_accuracy_hard(&pred_edges, &gt).unwrap() - expected).abs());

    let edges = interior(&mesh);
    let mut sum = 0.0;
    for &(l, r, _, [a, b]) in &edges {
        let truth = gt[topo.edge_id(a, b).unwrap()];
        sum += 0.5 * f64::from(u8::from(PRED[l] == truth)) + 0.5 * f64::from(u8::from(PRED[r] == truth));
    }
    let expected = 100.0 * sum / edges.len() as f64;
    worst = worst.max((edge_accuracy_hard_from_faces(&PRED, &gt, &topo).unwrap() - expected).abs());

    let got = edge_accuracy_soft_from_faces(&PRED, &soft, &lens, &topo, SoftRule::Membership).unwrap();
    worst = worst.max((got - soft_oracle(&mesh, &PRED, |_, l| l, membership)).abs());
    let got = edge_accuracy_soft_from_faces(&PRED, &soft, &lens, &topo, SoftRule::Split).unwrap();
    worst = worst.max((got - soft_oracle(&mesh, &PRED, |_, l| l, split)).abs());

    assert_eq!(face_label_accuracy(&GT, &GT, None).unwrap(), 100.0);
    assert_eq!(edge_accuracy_hard(&gt, &gt).unwrap(), 100.0);
    assert_eq!(edge_accuracy_soft_from_faces(&GT, &soft, &lens, &topo, SoftRule::Membership).unwrap(), 100.0);
    let uniform_faces = [2usize; 10];
    let uniform_edges = vec![2usize; topo.num_edges()];
    assert_eq!(edge_accuracy_hard_from_faces(&uniform_faces, &uniform_edges, &topo).unwrap(), 100.0);
    let uniform_soft = face_to_soft_edge(&uniform_faces, &topo).unwrap();
    for rule in [SoftRule::Membership, SoftRule::Split] {
        assert_eq!(edge_accuracy_soft_from_faces(&uniform_faces, &uniform_soft, &lens, &topo, rule).unwrap(), 100.0);
    }
    worst
}
