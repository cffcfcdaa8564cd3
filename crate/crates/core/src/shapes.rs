//! Procedural meshes: platonic solids, spheres, boxes, tori, convex hulls and
//! a few small fixtures with known combinatorics.

use std::collections::{HashMap, HashSet};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::{Mesh, Point};

fn build(name: &str, vertices: Vec<Point>, faces: Vec<[usize; 3]>) -> Mesh {
    Mesh::new(name, vertices, faces).expect("generated mesh is valid")
}

fn pts(raw: &[[f64; 3]]) -> Vec<Point> {
    raw.iter().map(|p| Point::new(p[0], p[1], p[2])).collect()
}

pub fn single_triangle() -> Mesh {
    build("triangle", pts(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), vec![[0, 1, 2]])
}

/// Two coplanar triangles sharing the edge (0, 1).
pub fn planar_pair() -> Mesh {
    build(
        "planar-pair",
        pts(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.4, -1.2, 0.0]]),
        vec![[0, 1, 2], [1, 0, 3]],
    )
}

/// Two triangles folded upward along (0, 1), relative to the normal of the
/// first face.
pub fn concave_pair() -> Mesh {
    build(
        "concave-pair",
        pts(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 1.0, 0.0], [0.5, -1.0, 0.5]]),
        vec![[0, 1, 2], [1, 0, 3]],
    )
}

/// Scalene face pair used to check asymmetric per-side ratios.
pub fn scalene_pair() -> Mesh {
    build(
        "scalene-pair",
        pts(&[[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.3, 1.1, 0.0], [1.4, -0.7, 0.2]]),
        vec![[0, 1, 2], [1, 0, 3]],
    )
}

/// Three faces sharing the edge (0, 1).
pub fn nonmanifold_fin() -> Mesh {
    build(
        "fin",
        pts(&[
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.5, 1.0, 0.0],
            [0.5, -1.0, 0.0],
            [0.5, 0.0, 1.0],
        ]),
        vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]],
    )
}

pub fn tetrahedron() -> Mesh {
    build(
        "tetrahedron",
        pts(&[[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]]),
        vec![[0, 2, 1], [0, 3, 2], [0, 1, 3], [1, 2, 3]],
    )
}

/// Unit cube, two triangles per side.
pub fn cube() -> Mesh {
    subdivided_box(1).renamed("cube")
}

pub fn octahedron() -> Mesh {
    build(
        "octahedron",
        pts(&[
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ]),
        vec![
            [0, 2, 4],
            [2, 1, 4],
            [1, 3, 4],
            [3, 0, 4],
            [2, 0, 5],
            [1, 2, 5],
            [3, 1, 5],
            [0, 3, 5],
        ],
    )
}

pub fn icosahedron() -> Mesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let v = pts(&[
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]);
    let f = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    build("icosahedron", v, f)
}

/// Icosahedron refined `levels` times by 1-to-4 splits, projected on the unit
/// sphere: `20 * 4^levels` faces.
pub fn icosphere(levels: usize) -> Mesh {
    let base = icosahedron();
    let mut vertices: Vec<Point> = base.vertices().iter().map(|v| v.normalize()).collect();
    let mut faces = base.faces().to_vec();
    for _ in 0..levels {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                vertices.push(((vertices[a] + vertices[b]) * 0.5).normalize());
                vertices.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    build(&format!("icosphere-{levels}"), vertices, faces)
}

/// Latitude/longitude sphere with poles: `2 * segments * (rings - 1)` faces.
pub fn uv_sphere(segments: usize, rings: usize) -> Mesh {
    assert!(segments >= 3 && rings >= 2);
    let mut vertices = vec![Point::new(0.0, 0.0, 1.0)];
    for k in 1..rings {
        let polar = PI * k as f64 / rings as f64;
        for s in 0..segments {
            let az = 2.0 * PI * s as f64 / segments as f64;
            vertices.push(Point::new(polar.sin() * az.cos(), polar.sin() * az.sin(), polar.cos()));
        }
    }
    vertices.push(Point::new(0.0, 0.0, -1.0));
    let south = vertices.len() - 1;
    let ring = |k: usize, s: usize| 1 + (k - 1) * segments + (s % segments);
    let mut faces = Vec::new();
    for s in 0..segments {
        faces.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for k in 1..rings - 1 {
        for s in 0..segments {
            let (a, b) = (ring(k, s), ring(k, s + 1));
            let (c, d) = (ring(k + 1, s), ring(k + 1, s + 1));
            faces.push([a, c, d]);
            faces.push([a, d, b]);
        }
    }
    for s in 0..segments {
        faces.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    build(&format!("uv-sphere-{segments}x{rings}"), vertices, faces)
}

/// Cube `[-1, 1]^3` with every side split into an `n x n` grid of quads, two
/// triangles each: `12 n^2` faces.
pub fn subdivided_box(n: usize) -> Mesh {
    assert!(n >= 1);
    let mut index: HashMap<[usize; 3], usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut vid = |g: [usize; 3], vertices: &mut Vec<Point>| -> usize {
        *index.entry(g).or_insert_with(|| {
            let c = |i: usize| -1.0 + 2.0 * i as f64 / n as f64;
            vertices.push(Point::new(c(g[0]), c(g[1]), c(g[2])));
            vertices.len() - 1
        })
    };
    let mut faces = Vec::new();
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in [0, n] {
            for i in 0..n {
                for j in 0..n {
                    let corner = |di: usize, dj: usize| {
                        let mut g = [0; 3];
                        g[axis] = side;
                        g[u] = i + di;
                        g[v] = j + dj;
                        g
                    };
                    let a = vid(corner(0, 0), &mut vertices);
                    let b = vid(corner(1, 0), &mut vertices);
                    let c = vid(corner(1, 1), &mut vertices);
                    let d = vid(corner(0, 1), &mut vertices);
                    if side == n {
                        faces.push([a, b, c]);
                        faces.push([a, c, d]);
                    } else {
                        faces.push([a, c, b]);
                        faces.push([a, d, c]);
                    }
                }
            }
        }
    }
    build(&format!("box-{n}"), vertices, faces)
}

/// Genus-1 torus: `2 * major * minor` faces.
pub fn torus(major: usize, minor: usize) -> Mesh {
    let (big, small) = (1.0, 0.35);
    let mut vertices = Vec::new();
    for i in 0..major {
        let u = 2.0 * PI * i as f64 / major as f64;
        for j in 0..minor {
            let w = 2.0 * PI * j as f64 / minor as f64;
            let r = big + small * w.cos();
            vertices.push(Point::new(r * u.cos(), r * u.sin(), small * w.sin()));
        }
    }
    let id = |i: usize, j: usize| (i % major) * minor + (j % minor);
    let mut faces = Vec::new();
    for i in 0..major {
        for j in 0..minor {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            faces.push([a, b, c]);
            faces.push([a, c, d]);
        }
    }
    build(&format!("torus-{major}x{minor}"), vertices, faces)
}

/// Non-orientable strip with `n` quads.
pub fn moebius_strip(n: usize) -> Mesh {
    assert!(n >= 3);
    let mut vertices = Vec::new();
    for i in 0..n {
        let u = 2.0 * PI * i as f64 / n as f64;
        for s in [-0.3, 0.3] {
            let r = 1.0 + s * (u / 2.0).cos();
            vertices.push(Point::new(r * u.cos(), r * u.sin(), s * (u / 2.0).sin()));
        }
    }
    let mut faces = Vec::new();
    for i in 0..n {
        let (a, b) = (2 * i, 2 * i + 1);
        let (c, d) = if i + 1 < n { (2 * i + 2, 2 * i + 3) } else { (1, 0) };
        faces.push([a, c, b]);
        faces.push([b, c, d]);
    }
    build("moebius", vertices, faces)
}

/// Double cone over an `n`-gon. Faces `0..n` form the upper fan around
/// vertex 0, face `i` sharing an edge with faces `i ± 1 (mod n)`.
pub fn bipyramid(n: usize) -> Mesh {
    assert!(n >= 3);
    let mut vertices = vec![Point::new(0.0, 0.0, 1.0), Point::new(0.0, 0.0, -1.0)];
    for i in 0..n {
        let a = 2.0 * PI * i as f64 / n as f64;
        vertices.push(Point::new(a.cos(), a.sin(), 0.0));
    }
    let rim = |i: usize| 2 + (i % n);
    let mut faces = Vec::new();
    for i in 0..n {
        faces.push([0, rim(i), rim(i + 1)]);
    }
    for i in 0..n {
        faces.push([1, rim(i + 1), rim(i)]);
    }
    build(&format!("bipyramid-{n}"), vertices, faces)
}

/// Planar open strip of `n` triangles with irregular spacing; face `k` shares
/// an edge with faces `k ± 1`.
pub fn triangle_strip(n: usize) -> Mesh {
    let vertices = (0..n + 2)
        .map(|k| {
            let x = 0.5 * k as f64 + 0.15 * ((k * 7 % 5) as f64 - 2.0) / 2.0;
            Point::new(x, (k % 2) as f64 * (1.0 + 0.1 * k as f64), 0.0)
        })
        .collect();
    let faces = (0..n).map(|k| if k % 2 == 0 { [k, k + 1, k + 2] } else { [k + 1, k, k + 2] }).collect();
    build(&format!("strip-{n}"), vertices, faces)
}

/// Splits every face 1-to-3 around a new vertex lifted slightly along the
/// face normal, creating one valence-3 vertex per original face.
pub fn triakis(mesh: &Mesh) -> Mesh {
    let mut vertices = mesh.vertices().to_vec();
    let mut faces = Vec::with_capacity(mesh.num_faces() * 3);
    for &[a, b, c] in mesh.faces() {
        let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
        let n = (pb - pa).cross(&(pc - pa));
        let lift = 0.15 * (0.5 * n.norm()).sqrt();
        let centre = (pa + pb + pc) / 3.0 + n.normalize() * lift;
        vertices.push(centre);
        let m = vertices.len() - 1;
        faces.extend([[a, b, m], [b, c, m], [c, a, m]]);
    }
    build(&format!("{}-triakis", mesh.name()), vertices, faces)
}

/// Convex hull of points in general position (incremental construction).
pub fn convex_hull(name: &str, points: &[Point]) -> Mesh {
    assert!(points.len() >= 4);
    let scale = points.iter().map(|p| p.norm()).fold(0.0, f64::max).max(1.0);
    let eps = 1e-12 * scale;

    // initial tetrahedron from extreme points
    let i0 = 0;
    let i1 = (0..points.len())
        .max_by(|&a, &b| (points[a] - points[i0]).norm().total_cmp(&(points[b] - points[i0]).norm()))
        .unwrap();
    let dir = (points[i1] - points[i0]).normalize();
    let line_dist = |p: &Point| {
        let d = p - points[i0];
        (d - dir * d.dot(&dir)).norm()
    };
    let i2 = (0..points.len()).max_by(|&a, &b| line_dist(&points[a]).total_cmp(&line_dist(&points[b]))).unwrap();
    let normal = (points[i1] - points[i0]).cross(&(points[i2] - points[i0])).normalize();
    let plane_dist = |p: &Point| (p - points[i0]).dot(&normal).abs();
    let i3 = (0..points.len()).max_by(|&a, &b| plane_dist(&points[a]).total_cmp(&plane_dist(&points[b]))).unwrap();

    let centroid = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;
    let outward = |f: [usize; 3]| {
        let n = (points[f[1]] - points[f[0]]).cross(&(points[f[2]] - points[f[0]]));
        if n.dot(&(points[f[0]] - centroid)) < 0.0 {
            [f[0], f[2], f[1]]
        } else {
            f
        }
    };
    let mut faces: Vec<[usize; 3]> =
        vec![outward([i0, i1, i2]), outward([i0, i1, i3]), outward([i0, i2, i3]), outward([i1, i2, i3])];

    for (pi, p) in points.iter().enumerate() {
        if [i0, i1, i2, i3].contains(&pi) {
            continue;
        }
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| {
                let n = (points[f[1]] - points[f[0]]).cross(&(points[f[2]] - points[f[0]]));
                n.normalize().dot(&(p - points[f[0]])) > eps
            })
            .collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let visible_edges: HashSet<(usize, usize)> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, &v)| v)
            .flat_map(|(f, _)| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
            .collect();
        let mut horizon: Vec<(usize, usize)> =
            visible_edges.iter().copied().filter(|&(a, b)| !visible_edges.contains(&(b, a))).collect();
        horizon.sort_unstable();
        faces = faces.into_iter().zip(visible).filter(|(_, v)| !v).map(|(f, _)| f).collect();
        faces.extend(horizon.into_iter().map(|(a, b)| [a, b, pi]));
    }

    // compact to used vertices, keeping input order
    let mut used: Vec<usize> = faces.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let remap: HashMap<usize, usize> = used.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let vertices = used.iter().map(|&v| points[v]).collect();
    let faces = faces.into_iter().map(|f| f.map(|v| remap[&v])).collect();
    build(name, vertices, faces)
}

/// Convex hull of `n` random points on the unit sphere.
pub fn random_convex_hull(n: usize, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    while points.len() < n {
        let p = Point::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let r = p.norm();
        if r > 0.05 && r <= 1.0 {
            points.push(p / r);
        }
    }
    convex_hull(&format!("hull-{n}-{seed}"), &points)
}

fn mean_edge_length(mesh: &Mesh) -> f64 {
    let v = mesh.vertices();
    let (sum, count) = mesh.faces().iter().fold((0.0, 0usize), |(s, c), f| {
        (s + (v[f[0]] - v[f[1]]).norm() + (v[f[1]] - v[f[2]]).norm() + (v[f[2]] - v[f[0]]).norm(), c + 3)
    });
    sum / count as f64
}

/// Random per-vertex displacement of up to `amount` mean edge lengths per axis.
pub fn jittered(mesh: &Mesh, amount: f64, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = amount * mean_edge_length(mesh);
    let vertices = mesh
        .vertices()
        .iter()
        .map(|v| v + Point::new(rng.gen_range(-step..=step), rng.gen_range(-step..=step), rng.gen_range(-step..=step)))
        .collect();
    mesh.with_vertices(vertices).expect("same vertex count")
}

/// Slides each vertex towards a random neighbour by a random fraction of at
/// most `max_fraction` of the connecting edge. Connectivity is unchanged.
pub fn slide_vertices(mesh: &Mesh, max_fraction: f64, seed: u64) -> Mesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut neighbours = vec![Vec::new(); mesh.num_vertices()];
    for f in mesh.faces() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            neighbours[a].push(b);
            neighbours[b].push(a);
        }
    }
    for n in &mut neighbours {
        n.sort_unstable();
        n.dedup();
    }
    let v = mesh.vertices();
    let vertices = (0..v.len())
        .map(|i| {
            if neighbours[i].is_empty() {
                return v[i];
            }
            let j = neighbours[i][rng.gen_range(0..neighbours[i].len())];
            let t = rng.gen_range(0.0..=max_fraction);
            v[i] + (v[j] - v[i]) * t
        })
        .collect();
    mesh.with_vertices(vertices).expect("same vertex count")
}

/// Per-axis scaling.
pub fn scaled(mesh: &Mesh, s: [f64; 3]) -> Mesh {
    let vertices = mesh.vertices().iter().map(|v| Point::new(v.x * s[0], v.y * s[1], v.z * s[2])).collect();
    mesh.with_vertices(vertices).expect("same vertex count")
}

impl Mesh {
    fn renamed(mut self, name: &str) -> Mesh {
        self.set_name(name);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_topology, check_edge_manifold};

    fn closed_genus0(m: &Mesh) {
        let t = build_topology(m);
        let r = check_edge_manifold(&t);
        assert!(r.manifold && r.watertight, "{}", m.name());
        assert_eq!(t.euler_characteristic(), 2, "{}", m.name());
    }

    #[test]
    fn solids_are_closed_genus_zero() {
        for m in [tetrahedron(), cube(), octahedron(), icosahedron(), icosphere(2), uv_sphere(25, 11), subdivided_box(4)] {
            closed_genus0(&m);
        }
        assert_eq!(icosphere(2).num_faces(), 320);
        assert_eq!(cube().num_faces(), 12);
    }

    #[test]
    fn uv_sphere_resolution() {
        let m = uv_sphere(25, 11);
        let t = build_topology(&m);
        assert_eq!((m.num_faces(), t.num_edges()), (500, 750));
    }

    #[test]
    fn hull_of_random_points() {
        let m = random_convex_hull(100, 7);
        assert_eq!(m.num_vertices(), 100);
        assert_eq!(m.num_faces(), 2 * 100 - 4);
        closed_genus0(&m);
    }

    #[test]
    fn torus_has_genus_one() {
        let t = build_topology(&torus(12, 8));
        assert_eq!(t.euler_characteristic(), 0);
    }

    #[test]
    fn triakis_and_bipyramid_closed() {
        closed_genus0(&triakis(&icosahedron()));
        closed_genus0(&bipyramid(5));
    }

    #[test]
    fn strip_adjacency() {
        let m = triangle_strip(10);
        let t = build_topology(&m);
        assert_eq!(t.interior_edges().count(), 9);
        for k in 0..9 {
            assert!(t.face_neighbors[k].contains(&(k + 1)));
        }
    }
}
