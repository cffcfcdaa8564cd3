//! Files: checkpoints, experiment configuration, datasets, label files and
//! colored mesh export.

mod checkpoint;
mod config;
mod dataset;

use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::graph::GraphPair;
use crate::mesh::{Mesh, MeshError};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use config::{ConfigError, ExperimentConfig, CONFIG_KEYS};
pub use dataset::{augment_directory, load_classification, load_segmentation, thread_count};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("{path}:{line}: {message}")]
    Labels { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Train(#[from] crate::train::TrainError),
    #[error("dataset at {0} contains no meshes")]
    EmptyDataset(PathBuf),
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }
}

/// Deterministic, distinct colors for ids below `2^24`: a bijective mix of
/// the low 24 bits.
pub fn palette(id: usize) -> [u8; 3] {
    let mut x = (id as u32) & 0xff_ffff;
    x = x.wrapping_mul(0x9e_3779) & 0xff_ffff;
    x ^= x >> 12;
    x = x.wrapping_mul(0x85_ebcb) & 0xff_ffff;
    x ^= x >> 11;
    [(x >> 16) as u8, (x >> 8) as u8, x as u8]
}

/// ASCII PLY with one color per face.
pub fn write_colored_ply(mesh: &Mesh, colors: &[[u8; 3]], out: &mut impl Write) -> std::io::Result<()> {
    assert_eq!(colors.len(), mesh.num_faces(), "one color per face");
    writeln!(out, "ply\nformat ascii 1.0\ncomment {}", mesh.name())?;
    writeln!(out, "element vertex {}\nproperty double x\nproperty double y\nproperty double z", mesh.num_vertices())?;
    writeln!(out, "element face {}\nproperty list uchar int vertex_indices", mesh.num_faces())?;
    writeln!(out, "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header")?;
    for v in mesh.vertices() {
        writeln!(out, "{} {} {}", v.x, v.y, v.z)?;
    }
    for (f, c) in mesh.faces().iter().zip(colors) {
        writeln!(out, "3 {} {} {} {} {} {}", f[0], f[1], f[2], c[0], c[1], c[2])?;
    }
    Ok(())
}

/// Cluster id of every face of a single-mesh pair.
pub fn cluster_table(pair: &GraphPair) -> Vec<usize> {
    pair.face_to_node()
}

pub fn face_colors(ids: &[usize]) -> Vec<[u8; 3]> {
    ids.iter().map(|&i| palette(i)).collect()
}

/// One non-negative integer per non-empty line.
pub fn read_labels(path: &Path) -> Result<Vec<usize>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_labels(&text, path)
}

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<usize>, IoError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v = line.parse().map_err(|_| IoError::Labels {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("expected a class id, found `{line}`"),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Two integers per line, or `-` for an edge without a soft label.
pub fn read_soft_labels(path: &Path) -> Result<Vec<Option<(usize, usize)>>, IoError> {
    let text = std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "-" {
            out.push(None);
            continue;
        }
        let bad = || IoError::Labels {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("expected two class ids, found `{line}`"),
        };
        let mut it = line.split_whitespace().map(|t| t.parse::<usize>());
        match (it.next(), it.next(), it.next()) {
            (Some(Ok(a)), Some(Ok(b)), None) => out.push(Some((a, b))),
            _ => return Err(bad()),
        }
    }
    Ok(out)
}

pub fn write_labels(labels: &[usize], out: &mut impl Write) -> std::io::Result<()> {
    for l in labels {
        writeln!(out, "{l}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use std::collections::HashSet;

    #[test]
    fn palette_is_injective_on_small_ids() {
        let colors: HashSet<[u8; 3]> = (0..100_000).map(palette).collect();
        assert_eq!(colors.len(), 100_000);
        assert_eq!(palette(7), palette(7));
    }

    #[test]
    fn ply_layout() {
        let mesh = shapes::tetrahedron();
        let mut buf = Vec::new();
        write_colored_ply(&mesh, &face_colors(&[0, 1, 2, 3]), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("element face 4"));
        assert_eq!(text.lines().count(), 13 + 4 + 4);
    }

    #[test]
    fn label_parsing() {
        let p = Path::new("x.txt");
        assert_eq!(parse_labels("1\n\n2\n 0 \n", p).unwrap(), vec![1, 2, 0]);
        let err = parse_labels("1\nx\n", p).unwrap_err();
        assert!(err.to_string().contains("x.txt:2"));
    }
}
