//! Dataset directories.
//!
//! Classification: `root/<class>/<sample>.obj`, classes in name order.
//! Segmentation: `root/<sample>.obj` with `<sample>.faces.txt` and optional
//! `<sample>.edges.txt` / `<sample>.soft.txt`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::graph::DualConfig;
use crate::mesh::{load_obj, write_obj, Mesh};
use crate::models::Task;
use crate::shapes::slide_vertices;
use crate::train::{Dataset, SegmentationLabels};

use super::{read_labels, read_soft_labels, IoError};

/// Worker threads for loading: `PDMESH_THREADS` when set to a positive
/// integer, otherwise rayon's default.
pub fn thread_count() -> usize {
    std::env::var("PDMESH_THREADS")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

fn in_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(thread_count()).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>, IoError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| IoError::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| IoError::io(dir, err)))
        .collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

fn is_obj(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("obj"))
}

/// `copies` vertex-slid variants of every mesh, seeded per mesh and copy.
fn augmented<L: Clone>(items: Vec<(Mesh, L)>, copies: usize, seed: u64) -> Vec<(Mesh, L)> {
    let mut out = Vec::with_capacity(items.len() * (copies + 1));
    for (i, (mesh, label)) in items.into_iter().enumerate() {
        for c in 0..copies {
            let s = seed.wrapping_add((i * (copies + 1) + c + 1) as u64);
            let mut m = slide_vertices(&mesh, 0.3, s);
            m.set_name(format!("{}~{c}", mesh.name()));
            out.push((m, label.clone()));
        }
        out.push((mesh, label));
    }
    out
}

pub fn load_classification(root: &Path, config: DualConfig, augment: usize, seed: u64) -> Result<Dataset, IoError> {
    let mut class_names = Vec::new();
    let mut files = Vec::new();
    for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
        let label = class_names.len();
        class_names.push(dir.file_name().unwrap().to_string_lossy().into_owned());
        for f in sorted_entries(&dir)?.into_iter().filter(|p| is_obj(p)) {
            files.push((f, label));
        }
    }
    if files.is_empty() {
        return Err(IoError::EmptyDataset(root.to_path_buf()));
    }
    let meshes: Vec<(Mesh, usize)> = in_pool(|| {
        files.par_iter().map(|(f, l)| load_obj(f).map(|m| (m, *l))).collect::<Result<Vec<_>, _>>()
    })?;
    let meshes = augmented(meshes, augment, seed);
    Ok(in_pool(|| Dataset::classification(class_names, &meshes, config))?)
}

fn sibling(obj: &Path, suffix: &str) -> PathBuf {
    let stem = obj.file_stem().unwrap().to_string_lossy();
    obj.with_file_name(format!("{stem}.{suffix}"))
}

/// `classes` defaults to one more than the largest face label.
pub fn load_segmentation(
    root: &Path,
    task: Task,
    classes: Option<usize>,
    config: DualConfig,
    augment: usize,
    seed: u64,
) -> Result<Dataset, IoError> {
    let objs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| is_obj(p)).collect();
    if objs.is_empty() {
        return Err(IoError::EmptyDataset(root.to_path_buf()));
    }
    let items: Vec<(Mesh, SegmentationLabels)> = in_pool(|| {
        objs.par_iter()
            .map(|obj| {
                let mesh = load_obj(obj)?;
                let faces = read_labels(&sibling(obj, "faces.txt"))?;
                let edges = sibling(obj, "edges.txt");
                let soft = sibling(obj, "soft.txt");
                let hard_edges = if edges.exists() { Some(read_labels(&edges)?) } else { None };
                let soft_edges = if soft.exists() { Some(read_soft_labels(&soft)?) } else { None };
                Ok((mesh, SegmentationLabels { faces, hard_edges, soft_edges }))
            })
            .collect::<Result<Vec<_>, IoError>>()
    })?;
    let max = items
        .iter()
        .flat_map(|(_, l)| l.faces.iter().chain(l.hard_edges.iter().flatten()))
        .copied()
        .max()
        .unwrap_or(0);
    let classes = classes.unwrap_or(max + 1).max(2);
    if max >= classes {
        return Err(IoError::Format(format!("label {max} out of range for {classes} classes")));
    }
    let items = augmented(items, augment, seed);
    Ok(in_pool(|| Dataset::segmentation(classes, task, &items, config))?)
}

/// Writes `copies` vertex-slid variants of every `.obj` below `input` to the
/// mirrored location under `output`, copying label files alongside (sliding
/// keeps connectivity, so face and edge labels stay valid). Returns the
/// number of meshes written.
pub fn augment_directory(input: &Path, output: &Path, copies: usize, seed: u64) -> Result<usize, IoError> {
    let mut written = 0;
    let mut stack = vec![PathBuf::new()];
    let mut counter = 0u64;
    while let Some(rel) = stack.pop() {
        let dir = input.join(&rel);
        let target = output.join(&rel);
        std::fs::create_dir_all(&target).map_err(|e| IoError::io(&target, e))?;
        for entry in sorted_entries(&dir)? {
            let name = entry.file_name().unwrap().to_owned();
            if entry.is_dir() {
                stack.push(rel.join(&name));
                continue;
            }
            let dest = target.join(&name);
            std::fs::copy(&entry, &dest).map_err(|e| IoError::io(&dest, e))?;
            if !is_obj(&entry) {
                continue;
            }
            let mesh = load_obj(&entry)?;
            let stem = entry.file_stem().unwrap().to_string_lossy().into_owned();
            for c in 0..copies {
                counter += 1;
                let slid = slide_vertices(&mesh, 0.3, seed.wrapping_add(counter));
                let out = target.join(format!("{stem}_aug{c}.obj"));
                std::fs::write(&out, write_obj(&slid)).map_err(|e| IoError::io(&out, e))?;
                for suffix in ["faces.txt", "edges.txt", "soft.txt"] {
                    let src = sibling(&entry, suffix);
                    if src.exists() {
                        let dst = target.join(format!("{stem}_aug{c}.{suffix}"));
                        std::fs::copy(&src, &dst).map_err(|e| IoError::io(&dst, e))?;
                    }
                }
                written += 1;
            }
        }
    }
    Ok(written)
}
