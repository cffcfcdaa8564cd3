mod common;

use pdmesh::mesh::build_topology;
use pdmesh::metrics::{
    edge_accuracy_hard, edge_accuracy_hard_from_faces, edge_accuracy_soft_from_faces, face_label_accuracy,
    face_to_soft_edge, majority_vote_faces, SoftRule, VoteMode,
};

use common::metrics::{gt_edges, interior, lengths, membership, soft_oracle, split, strip, GT, PRED};

#[test]
fn face_accuracy_matches_direct_count() {
    let correct = GT.iter().zip(PRED).filter(|(g, p)| **g == *p).count();
    assert_eq!(face_label_accuracy(&PRED, &GT, None).unwrap(), 100.0 * correct as f64 / 10.0);
    let mask = [false, true, false, false, false, false, true, false, false, false];
    let kept: Vec<usize> = (0..10).filter(|&i| !mask[i]).collect();
    let correct = kept.iter().filter(|&&i| GT[i] == PRED[i]).count();
    let expected = 100.0 * correct as f64 / kept.len() as f64;
    assert!((face_label_accuracy(&PRED, &GT, Some(&mask)).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn hard_edge_accuracy_matches_direct_count() {
    let (mesh, topo) = strip();
    let gt = gt_edges(&mesh, &topo);
    let pred: Vec<usize> = gt.iter().enumerate().map(|(e, &l)| if e % 3 == 0 { (l + 1) % 3 } else { l }).collect();
    let matches = pred.iter().zip(&gt).filter(|(p, g)| p == g).count();
    let expected = 100.0 * matches as f64 / gt.len() as f64;
    assert!((edge_accuracy_hard(&pred, &gt).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn hard_edge_accuracy_from_faces_matches_direct_sum() {
    let (mesh, topo) = strip();
    let gt = gt_edges(&mesh, &topo);
    let edges = interior(&mesh);
    assert_eq!(edges.len(), topo.interior_edges().count());
    let mut sum = 0.0;
    for &(l, r, _, [a, b]) in &edges {
        let truth = gt[topo.edge_id(a, b).unwrap()];
        sum += 0.5 * f64::from(u8::from(PRED[l] == truth)) + 0.5 * f64::from(u8::from(PRED[r] == truth));
    }
    let expected = 100.0 * sum / edges.len() as f64;
    let got = edge_accuracy_hard_from_faces(&PRED, &gt, &topo).unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn soft_edge_accuracy_matches_direct_sum() {
    let (mesh, topo) = strip();
    let soft = face_to_soft_edge(&GT, &topo).unwrap();
    let lens = lengths(&mesh, &topo);
    let got = edge_accuracy_soft_from_faces(&PRED, &soft, &lens, &topo, SoftRule::Membership).unwrap();
    assert!((got - soft_oracle(&mesh, &PRED, |_, l| l, membership)).abs() < 1e-12);
    let got = edge_accuracy_soft_from_faces(&PRED, &soft, &lens, &topo, SoftRule::Split).unwrap();
    assert!((got - soft_oracle(&mesh, &PRED, |_, l| l, split)).abs() < 1e-12);

    // doubling one edge's length doubles its weight
    let (_, _, _, [a, b]) = interior(&mesh)[4];
    let mut doubled = lens.clone();
    doubled[topo.edge_id(a, b).unwrap()] *= 2.0;
    let got = edge_accuracy_soft_from_faces(&PRED, &soft, &doubled, &topo, SoftRule::Membership).unwrap();
    let expected = soft_oracle(&mesh, &PRED, |k, l| if k == 4 { 2.0 * l } else { l }, membership);
    assert!((got - expected).abs() < 1e-12);

    // uniform lengths reduce to the hard metric against soft labels
    let ones = vec![1.0; topo.num_edges()];
    let uniform = edge_accuracy_soft_from_faces(&PRED, &soft, &ones, &topo, SoftRule::Split).unwrap();
    assert!((uniform - soft_oracle(&mesh, &PRED, |_, _| 1.0, split)).abs() < 1e-12);
}

#[test]
fn perfect_predictions_score_exactly_100() {
    let (mesh, topo) = strip();
    let gt = gt_edges(&mesh, &topo);
    assert_eq!(face_label_accuracy(&GT, &GT, None).unwrap(), 100.0);
    assert_eq!(edge_accuracy_hard(&gt, &gt).unwrap(), 100.0);
    let soft = face_to_soft_edge(&GT, &topo).unwrap();
    let lens = lengths(&mesh, &topo);
    assert_eq!(edge_accuracy_soft_from_faces(&GT, &soft, &lens, &topo, SoftRule::Membership).unwrap(), 100.0);
    // face-derived hard accuracy reaches 100 when both faces of every edge
    // carry its label
    let uniform_faces = [2usize; 10];
    let uniform_edges = vec![2usize; topo.num_edges()];
    assert_eq!(edge_accuracy_hard_from_faces(&uniform_faces, &uniform_edges, &topo).unwrap(), 100.0);
    let uniform_soft = face_to_soft_edge(&uniform_faces, &topo).unwrap();
    for rule in [SoftRule::Membership, SoftRule::Split] {
        assert_eq!(edge_accuracy_soft_from_faces(&uniform_faces, &uniform_soft, &lens, &topo, rule).unwrap(), 100.0);
    }
}

#[test]
fn accuracies_stay_in_range() {
    let (mesh, topo) = strip();
    let gt = gt_edges(&mesh, &topo);
    let soft = face_to_soft_edge(&GT, &topo).unwrap();
    let lens = lengths(&mesh, &topo);
    for shift in 0..3 {
        let pred: Vec<usize> = PRED.iter().map(|p| (p + shift) % 3).collect();
        for v in [
            face_label_accuracy(&pred, &GT, None).unwrap(),
            edge_accuracy_hard_from_faces(&pred, &gt, &topo).unwrap(),
            edge_accuracy_soft_from_faces(&pred, &soft, &lens, &topo, SoftRule::Split).unwrap(),
            edge_accuracy_soft_from_faces(&pred, &soft, &lens, &topo, SoftRule::Membership).unwrap(),
        ] {
            assert!((0.0..=100.0).contains(&v), "{v}");
        }
    }
}

#[test]
fn vote_and_soft_labels_round_trip_on_regions() {
    let (mesh, labels) = pdmesh::train::synthetic_two_region();
    let topo = build_topology(&mesh);
    // edge labels from faces, region boundary edges take the smaller label
    let edge_labels: Vec<Option<usize>> = topo
        .edge_faces
        .iter()
        .map(|f| f.iter().map(|&x| labels[x]).min())
        .collect();
    let vote = majority_vote_faces(&edge_labels, &topo, VoteMode::GroundTruth).unwrap();
    // a face with at most one cross-region edge keeps its label
    for (f, &label) in labels.iter().enumerate() {
        let foreign = topo.face_edges[f].iter().filter(|&&e| edge_labels[e] != Some(label)).count();
        if foreign <= 1 {
            assert_eq!(vote.labels[f], label);
        }
    }
    let soft = face_to_soft_edge(&labels, &topo).unwrap();
    for (e, s) in soft.iter().enumerate() {
        let faces = &topo.edge_faces[e];
        assert_eq!(*s, Some((labels[faces[0]], labels[faces[1]])));
    }
}
