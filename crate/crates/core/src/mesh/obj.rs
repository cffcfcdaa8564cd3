//! Wavefront OBJ subset: `v` and `f` records. Everything else is ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::{Mesh, MeshError, Point};

pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh, MeshError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path)
        .map_err(|source| MeshError::Io { path: display.clone(), source })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| display.clone());
    let mut mesh = parse_obj(&text, &display)?;
    mesh.set_name(name);
    Ok(mesh)
}

/// Parses OBJ text. `origin` is only used in error messages and as the mesh
/// name.
pub fn parse_obj(text: &str, origin: &str) -> Result<Mesh, MeshError> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let parse_err = |line: usize, msg: String| MeshError::Parse {
        path: origin.to_string(),
        line,
        msg,
    };

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse_err(line, format!("bad vertex coordinate: {e}")))?;
                if coords.len() != 3 {
                    return Err(parse_err(line, "vertex needs three coordinates".into()));
                }
                if coords.iter().any(|c| !c.is_finite()) {
                    return Err(parse_err(line, "non-finite vertex coordinate".into()));
                }
                vertices.push(Point::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let refs: Vec<&str> = tokens.collect();
                if refs.len() != 3 {
                    return Err(MeshError::NonTriangular {
                        path: origin.to_string(),
                        line,
                        count: refs.len(),
                    });
                }
                let mut face = [0usize; 3];
                for (slot, token) in face.iter_mut().zip(&refs) {
                    let index_text = token.split('/').next().unwrap_or("");
                    let index: i64 = index_text
                        .parse()
                        .map_err(|_| parse_err(line, format!("bad face index `{token}`")))?;
                    *slot = match index {
                        0 => return Err(parse_err(line, "face index 0 is invalid".into())),
                        i if i > 0 => (i - 1) as usize,
                        i => {
                            let back = (-i) as usize;
                            if back > vertices.len() {
                                return Err(parse_err(
                                    line,
                                    format!("relative index {i} before first vertex"),
                                ));
                            }
                            vertices.len() - back
                        }
                    };
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    Mesh::new(origin, vertices, faces)
}

pub fn write_obj(mesh: &Mesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {}", mesh.name());
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}
