use std::f64::consts::PI;

use super::{Mesh, MeshError, MeshTopology, Point};

/// Relative area threshold: a face is degenerate when
/// `area < DEGENERATE_EPS * diag^2`, `diag` being the bounding-box diagonal.
pub const DEGENERATE_EPS: f64 = 1e-10;

/// Upper bound substituted for ratios whose denominator vanishes.
const RATIO_CAP: f64 = 1.0 / DEGENERATE_EPS;

#[derive(Debug, Clone, PartialEq)]
pub struct FaceAreas {
    pub areas: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl FaceAreas {
    pub fn total(&self) -> f64 {
        self.areas.iter().sum()
    }
}

pub fn bounding_box_diagonal(mesh: &Mesh) -> f64 {
    let mut lo = Point::repeat(f64::INFINITY);
    let mut hi = Point::repeat(f64::NEG_INFINITY);
    for v in mesh.vertices() {
        lo = lo.inf(v);
        hi = hi.sup(v);
    }
    (hi - lo).norm()
}

fn triangle_area(a: &Point, b: &Point, c: &Point) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

pub fn face_areas(mesh: &Mesh) -> FaceAreas {
    let diag = bounding_box_diagonal(mesh);
    let threshold = DEGENERATE_EPS * diag * diag;
    let v = mesh.vertices();
    let areas: Vec<f64> =
        mesh.faces().iter().map(|f| triangle_area(&v[f[0]], &v[f[1]], &v[f[2]])).collect();
    let degenerate = areas.iter().map(|&a| a < threshold || a == 0.0).collect();
    FaceAreas { areas, degenerate }
}

fn has_directed(face: &[usize; 3], a: usize, b: usize) -> bool {
    (face[0] == a && face[1] == b) || (face[1] == a && face[2] == b) || (face[2] == a && face[0] == b)
}

fn directed_edges(face: &[usize; 3]) -> [(usize, usize); 3] {
    [(face[0], face[1]), (face[1], face[2]), (face[2], face[0])]
}

/// Consistently wound copy of the face list.
///
/// Orientation is propagated breadth-first across two-face edges, starting
/// from the lowest face of each component as given. Closed components are
/// then flipped if needed so that normals point outward (positive signed
/// volume).
pub fn orient_faces(mesh: &Mesh, topology: &MeshTopology) -> Result<Vec<[usize; 3]>, MeshError> {
    let faces = mesh.faces();
    let mut oriented: Vec<Option<[usize; 3]>> = vec![None; faces.len()];
    let verts = mesh.vertices();

    for component in topology.face_components() {
        let seed = component[0];
        oriented[seed] = Some(faces[seed]);
        let mut queue = vec![seed];
        let mut head = 0;
        while head < queue.len() {
            let f = queue[head];
            head += 1;
            let wf = oriented[f].expect("queued faces are oriented");
            for (a, b) in directed_edges(&wf) {
                let e = topology.edge_id(a, b).expect("face edge exists");
                let incident = &topology.edge_faces[e];
                if incident.len() != 2 {
                    continue;
                }
                let g = if incident[0] == f { incident[1] } else { incident[0] };
                match oriented[g] {
                    Some(wg) => {
                        if has_directed(&wg, a, b) {
                            return Err(MeshError::NonOrientable { face: seed });
                        }
                    }
                    None => {
                        let raw = faces[g];
                        let wg = if has_directed(&raw, b, a) { raw } else { [raw[0], raw[2], raw[1]] };
                        oriented[g] = Some(wg);
                        queue.push(g);
                    }
                }
            }
        }

        let closed = component
            .iter()
            .all(|&f| topology.face_edges[f].iter().all(|&e| topology.edge_faces[e].len() == 2));
        if closed {
            let volume: f64 = component
                .iter()
                .map(|&f| {
                    let w = oriented[f].unwrap();
                    verts[w[0]].dot(&verts[w[1]].cross(&verts[w[2]]))
                })
                .sum();
            if volume < 0.0 {
                for &f in &component {
                    let w = oriented[f].unwrap();
                    oriented[f] = Some([w[0], w[2], w[1]]);
                }
            }
        }
    }
    Ok(oriented.into_iter().map(|f| f.expect("every face belongs to a component")).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DihedralAngles {
    /// Per mesh edge; `None` for edges without exactly two faces.
    pub angles: Vec<Option<f64>>,
    /// Edges whose angle was substituted because a neighbouring face is
    /// degenerate.
    pub flagged: Vec<bool>,
}

fn unit_normal(verts: &[Point], w: &[usize; 3]) -> Point {
    let n = (verts[w[1]] - verts[w[0]]).cross(&(verts[w[2]] - verts[w[0]]));
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        n
    }
}

fn opposite(face: &[usize; 3], a: usize, b: usize) -> usize {
    *face.iter().find(|&&v| v != a && v != b).expect("triangle has a third vertex")
}

/// Dihedral angle in `(0, 2π)`: `π − ∠(n_A, n_B)` for convex folds and
/// `π + ∠(n_A, n_B)` for concave ones, so flat neighbourhoods sit at `π`.
fn dihedral(verts: &[Point], wa: &[usize; 3], wb: &[usize; 3], a: usize, b: usize) -> f64 {
    let na = unit_normal(verts, wa);
    let nb = unit_normal(verts, wb);
    let phi = na.cross(&nb).norm().atan2(na.dot(&nb));
    let c = opposite(wb, a, b);
    let side = (verts[c] - verts[a]).dot(&na);
    if side > 0.0 {
        PI + phi
    } else {
        PI - phi
    }
}

pub fn dihedral_angles(mesh: &Mesh, topology: &MeshTopology) -> Result<DihedralAngles, MeshError> {
    let oriented = orient_faces(mesh, topology)?;
    let areas = face_areas(mesh);
    let verts = mesh.vertices();
    let mut angles = vec![None; topology.num_edges()];
    let mut flagged = vec![false; topology.num_edges()];
    for e in topology.interior_edges() {
        let [fa, fb] = [topology.edge_faces[e][0], topology.edge_faces[e][1]];
        let [a, b] = topology.edges[e];
        if areas.degenerate[fa] || areas.degenerate[fb] {
            angles[e] = Some(PI);
            flagged[e] = true;
        } else {
            angles[e] = Some(dihedral(verts, &oriented[fa], &oriented[fb], a, b));
        }
    }
    Ok(DihedralAngles { angles, flagged })
}

/// Ratios of one face seen across a shared edge `p→q` (direction taken from
/// the face's own winding), `o` being the opposite vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SideRatios {
    pub face: usize,
    /// `|pq| / h`, with `h` the height of the face over `pq`.
    pub edge_to_height: f64,
    /// `[|pq| / |po|, |pq| / |qo|]`.
    pub edge_to_edge: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFeatures {
    pub dihedral: f64,
    pub length: f64,
    /// Sides in increasing face-id order.
    pub sides: [SideRatios; 2],
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGeometry {
    /// Per mesh edge; `None` for boundary (or non-manifold) edges.
    pub edges: Vec<Option<EdgeFeatures>>,
}

fn capped_ratio(num: f64, den: f64) -> f64 {
    if den <= num / RATIO_CAP || den == 0.0 {
        RATIO_CAP
    } else {
        (num / den).min(RATIO_CAP)
    }
}

pub fn edge_geometry(mesh: &Mesh, topology: &MeshTopology) -> Result<EdgeGeometry, MeshError> {
    let oriented = orient_faces(mesh, topology)?;
    let areas = face_areas(mesh);
    let verts = mesh.vertices();
    let mut edges = vec![None; topology.num_edges()];

    for e in topology.interior_edges() {
        let [fa, fb] = [topology.edge_faces[e][0], topology.edge_faces[e][1]];
        let [a, b] = topology.edges[e];
        let degenerate = areas.degenerate[fa] || areas.degenerate[fb];
        let length = (verts[a] - verts[b]).norm();
        let side = |f: usize| {
            let w = &oriented[f];
            let (p, q) = if has_directed(w, a, b) { (a, b) } else { (b, a) };
            let o = opposite(w, a, b);
            let height = 2.0 * areas.areas[f] / length;
            let edge_to_height =
                if areas.degenerate[f] { RATIO_CAP } else { capped_ratio(length, height) };
            SideRatios {
                face: f,
                edge_to_height,
                edge_to_edge: [
                    capped_ratio(length, (verts[p] - verts[o]).norm()),
                    capped_ratio(length, (verts[q] - verts[o]).norm()),
                ],
            }
        };
        let dihedral =
            if degenerate { PI } else { dihedral(verts, &oriented[fa], &oriented[fb], a, b) };
        edges[e] = Some(EdgeFeatures { dihedral, length, sides: [side(fa), side(fb)], degenerate });
    }
    Ok(EdgeGeometry { edges })
}

/// Cosine of the angle opposite the shared edge, from the two edge-to-edge
/// ratios of that face (law of cosines).
pub fn cos_angle_from_edge_ratios(k1: f64, k2: f64) -> f64 {
    0.5 * (k1 / k2 + k2 / k1 - k1 * k2)
}
