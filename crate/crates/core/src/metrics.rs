//! Label conversions between faces and edges, and segmentation accuracies.
//!
//! Edge labels are indexed by the canonical edge order of [`MeshTopology`].
//! All accuracies are percentages.

use thiserror::Error;

use crate::mesh::MeshTopology;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("{what}: expected {expected} entries, got {got}")]
    Length { what: &'static str, expected: usize, got: usize },
    #[error("{0}: nothing to evaluate")]
    Empty(&'static str),
    #[error("edge {edge} of face {face} has no label")]
    MissingEdgeLabel { face: usize, edge: usize },
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn expect_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(MetricError::Length { what, expected, got })
    }
}

/// Per-face and per-edge labels of one mesh.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelSet {
    pub classes: usize,
    pub faces: Option<Vec<usize>>,
    pub edges: Option<Vec<usize>>,
    /// `None` on boundary edges.
    pub soft: Option<Vec<Option<(usize, usize)>>>,
}

impl LabelSet {
    pub fn validate(&self) -> Result<()> {
        let c = self.classes;
        let check = |l: usize| if l < c { Ok(()) } else { Err(MetricError::Label { label: l, classes: c }) };
        for &l in self.faces.iter().flatten().chain(self.edges.iter().flatten()) {
            check(l)?;
        }
        for &(a, b) in self.soft.iter().flatten().flatten() {
            check(a)?;
            check(b)?;
        }
        Ok(())
    }
}

/// How three distinct edge labels on one face are resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoteMode {
    /// Exclude the face from evaluation.
    Prediction,
    /// Take the smallest label.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaceVote {
    pub labels: Vec<usize>,
    pub excluded: Vec<bool>,
}

/// Face labels by majority over the labels of the three face edges.
/// `edge_labels[e]` may be `None` only for edges no face needs.
pub fn majority_vote_faces(edge_labels: &[Option<usize>], topology: &MeshTopology, mode: VoteMode) -> Result<FaceVote> {
    expect_len("edge labels", topology.edges.len(), edge_labels.len())?;
    let mut labels = Vec::with_capacity(topology.face_edges.len());
    let mut excluded = Vec::with_capacity(topology.face_edges.len());
    for (face, fe) in topology.face_edges.iter().enumerate() {
        let mut l = [0usize; 3];
        for (k, &edge) in fe.iter().enumerate() {
            l[k] = edge_labels[edge].ok_or(MetricError::MissingEdgeLabel { face, edge })?;
        }
        let (label, skip) = if l[0] == l[1] || l[0] == l[2] {
            (l[0], false)
        } else if l[1] == l[2] {
            (l[1], false)
        } else {
            let min = *l.iter().min().unwrap();
            (min, mode == VoteMode::Prediction)
        };
        labels.push(label);
        excluded.push(skip);
    }
    Ok(FaceVote { labels, excluded })
}

/// Soft label of each interior edge: the labels of its two faces, in the
/// topology's face order. Boundary and non-manifold edges get `None`.
pub fn face_to_soft_edge(face_labels: &[usize], topology: &MeshTopology) -> Result<Vec<Option<(usize, usize)>>> {
    expect_len("face labels", topology.face_edges.len(), face_labels.len())?;
    Ok(topology
        .edge_faces
        .iter()
        .map(|f| match f.as_slice() {
            [a, b] => Some((face_labels[*a], face_labels[*b])),
            _ => None,
        })
        .collect())
}

/// Percentage of correctly labelled faces among those not masked out.
pub fn face_label_accuracy(pred: &[usize], gt: &[usize], excluded: Option<&[bool]>) -> Result<f64> {
    expect_len("predicted face labels", gt.len(), pred.len())?;
    if let Some(m) = excluded {
        expect_len("exclusion mask", gt.len(), m.len())?;
    }
    let mut total = 0usize;
    let mut correct = 0usize;
    for i in 0..gt.len() {
        if excluded.is_some_and(|m| m[i]) {
            continue;
        }
        total += 1;
        correct += usize::from(pred[i] == gt[i]);
    }
    if total == 0 {
        return Err(MetricError::Empty("face accuracy"));
    }
    Ok(100.0 * correct as f64 / total as f64)
}

/// Percentage of edges whose predicted hard label equals the ground truth.
pub fn edge_accuracy_hard(pred: &[usize], gt: &[usize]) -> Result<f64> {
    expect_len("predicted edge labels", gt.len(), pred.len())?;
    if gt.is_empty() {
        return Err(MetricError::Empty("hard edge accuracy"));
    }
    let correct = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(100.0 * correct as f64 / gt.len() as f64)
}

fn interior(topology: &MeshTopology) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
    topology.edge_faces.iter().enumerate().filter_map(|(e, f)| match f.as_slice() {
        [a, b] => Some((e, *a, *b)),
        _ => None,
    })
}

/// Hard edge accuracy when each face prediction stands in for the label of
/// its edges: every interior edge scores half for each adjacent face whose
/// label equals the edge's ground truth.
pub fn edge_accuracy_hard_from_faces(pred_faces: &[usize], gt_edges: &[usize], topology: &MeshTopology) -> Result<f64> {
    expect_len("predicted face labels", topology.face_edges.len(), pred_faces.len())?;
    expect_len("edge labels", topology.edges.len(), gt_edges.len())?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (e, a, b) in interior(topology) {
        let hit = |f: usize| if pred_faces[f] == gt_edges[e] { 0.5 } else { 0.0 };
        sum += hit(a) + hit(b);
        count += 1;
    }
    if count == 0 {
        return Err(MetricError::Empty("hard edge accuracy from faces"));
    }
    Ok(100.0 * sum / count as f64)
}

/// Per-edge score of a hard label against a soft ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SoftRule {
    /// 1 if the label is one of the pair's components.
    #[default]
    Membership,
    /// Half for each component the label equals.
    Split,
}

impl SoftRule {
    pub fn score(self, label: usize, soft: (usize, usize)) -> f64 {
        match self {
            SoftRule::Membership => f64::from(u8::from(label == soft.0 || label == soft.1)),
            SoftRule::Split => 0.5 * f64::from(u8::from(label == soft.0)) + 0.5 * f64::from(u8::from(label == soft.1)),
        }
    }
}

/// Length-weighted soft edge accuracy: each interior edge contributes
/// `length / mean_length` times the average rule score of its two face
/// predictions, averaged over the evaluated edges. This is computed as
/// `sum(length * score) / sum(length)`, which is exact for perfect
/// predictions; uniform lengths give unit weights.
pub fn edge_accuracy_soft_from_faces(
    pred_faces: &[usize],
    gt_soft: &[Option<(usize, usize)>],
    lengths: &[f64],
    topology: &MeshTopology,
    rule: SoftRule,
) -> Result<f64> {
    expect_len("predicted face labels", topology.face_edges.len(), pred_faces.len())?;
    expect_len("soft edge labels", topology.edges.len(), gt_soft.len())?;
    expect_len("edge lengths", topology.edges.len(), lengths.len())?;
    let edges: Vec<(usize, usize, usize, (usize, usize))> =
        interior(topology).filter_map(|(e, a, b)| gt_soft[e].map(|s| (e, a, b, s))).collect();
    if edges.is_empty() {
        return Err(MetricError::Empty("soft edge accuracy"));
    }
    let total: f64 = edges.iter().map(|&(e, ..)| lengths[e]).sum();
    if total <= 0.0 {
        return Err(MetricError::Empty("soft edge accuracy (zero total length)"));
    }
    let sum: f64 = edges
        .iter()
        .map(|&(e, a, b, s)| lengths[e] * (0.5 * rule.score(pred_faces[a], s) + 0.5 * rule.score(pred_faces[b], s)))
        .sum();
    Ok(100.0 * sum / total)
}

/// Face accuracy and both edge-derived accuracies of one prediction.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SegmentationScores {
    pub face: f64,
    pub hard_edge: Option<f64>,
    pub soft_edge: Option<f64>,
}
