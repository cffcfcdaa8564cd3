//! Datasets, training epochs and evaluation.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{batch_graphs, build_pair, DualConfig, GraphError, GraphPair};
use crate::mesh::{build_topology, Mesh, MeshTopology};
use crate::metrics::{
    edge_accuracy_hard_from_faces, edge_accuracy_soft_from_faces, face_label_accuracy, face_to_soft_edge,
    MetricError, SoftRule,
};
use crate::models::{ForwardOptions, Model, ModelError, Task};
use crate::shapes;
use crate::tensor::{Adam, AdamConfig, BufferStore, ParamStore, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch} (samples: {samples})")]
    NonFinite { loss: f64, epoch: usize, batch: usize, samples: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset is for {dataset:?}, model is for {model:?}")]
    Task { dataset: Task, model: Task },
    #[error("dataset has {dataset} classes, model predicts {model}")]
    Classes { dataset: usize, model: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    /// Extra vertex-slid copies of every training mesh; 0 disables.
    pub augment: usize,
}

impl TrainConfig {
    pub fn classification() -> Self {
        Self { lr: 2e-4, epochs: 200, batch: 16, seed: 0, augment: 0 }
    }

    pub fn segmentation() -> Self {
        Self { lr: 1e-3, epochs: 300, batch: 16, seed: 0, augment: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} must be a non-negative number", self.lr)));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(TrainError::Config("epochs and batch must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-mesh data the edge metrics need.
#[derive(Debug, Clone)]
pub struct EdgeLabels {
    pub topology: MeshTopology,
    pub lengths: Vec<f64>,
    pub hard: Option<Vec<usize>>,
    pub soft: Option<Vec<Option<(usize, usize)>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Class(usize),
    Faces(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub pair: GraphPair,
    pub target: Target,
    pub edges: Option<EdgeLabels>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub task: Task,
    pub classes: usize,
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

/// Segmentation ground truth of one mesh.
#[derive(Debug, Clone, Default)]
pub struct SegmentationLabels {
    pub faces: Vec<usize>,
    pub hard_edges: Option<Vec<usize>>,
    pub soft_edges: Option<Vec<Option<(usize, usize)>>>,
}

fn edge_lengths(mesh: &Mesh, topology: &MeshTopology) -> Vec<f64> {
    let v = mesh.vertices();
    topology.edges.iter().map(|&[a, b]| (v[a] - v[b]).norm()).collect()
}

impl Dataset {
    pub fn classification(class_names: Vec<String>, meshes: &[(Mesh, usize)], config: DualConfig) -> Result<Self> {
        let samples = meshes
            .iter()
            .map(|(mesh, label)| {
                Ok(Sample {
                    name: mesh.name().to_string(),
                    pair: build_pair(mesh, config)?,
                    target: Target::Class(*label),
                    edges: None,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { task: Task::Classification, classes: class_names.len(), class_names, samples })
    }

    pub fn segmentation(
        classes: usize,
        task: Task,
        meshes: &[(Mesh, SegmentationLabels)],
        config: DualConfig,
    ) -> Result<Self> {
        let samples = meshes
            .iter()
            .map(|(mesh, labels)| {
                let topology = build_topology(mesh);
                let lengths = edge_lengths(mesh, &topology);
                if labels.faces.len() != mesh.num_faces() {
                    return Err(TrainError::Config(format!(
                        "{}: {} face labels for {} faces",
                        mesh.name(),
                        labels.faces.len(),
                        mesh.num_faces()
                    )));
                }
                Ok(Sample {
                    name: mesh.name().to_string(),
                    pair: build_pair(mesh, config)?,
                    target: Target::Faces(labels.faces.clone()),
                    edges: Some(EdgeLabels {
                        topology,
                        lengths,
                        hard: labels.hard_edges.clone(),
                        soft: labels.soft_edges.clone(),
                    }),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let class_names = (0..classes).map(|c| c.to_string()).collect();
        Ok(Self { task, classes, class_names, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn check(&self, model: &Model) -> Result<()> {
        if self.samples.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let segmentation = |t: Task| t != Task::Classification;
        if segmentation(self.task) != segmentation(model.spec.task) {
            return Err(TrainError::Task { dataset: self.task, model: model.spec.task });
        }
        if self.classes != model.spec.classes {
            return Err(TrainError::Classes { dataset: self.classes, model: model.spec.classes });
        }
        Ok(())
    }
}

/// Jittered icospheres (class 0) and jittered subdivided boxes (class 1).
pub fn synthetic_classification(per_class: usize, seed: u64) -> Vec<(Mesh, usize)> {
    let sphere = shapes::icosphere(2);
    let cube = shapes::subdivided_box(5);
    let mut out = Vec::with_capacity(2 * per_class);
    for i in 0..per_class as u64 {
        let mut s = shapes::jittered(&sphere, 0.05, seed.wrapping_mul(1000).wrapping_add(2 * i));
        s.set_name(format!("sphere-{i}"));
        out.push((s, 0));
        let mut b = shapes::jittered(&cube, 0.05, seed.wrapping_mul(1000).wrapping_add(2 * i + 1));
        b.set_name(format!("box-{i}"));
        out.push((b, 1));
    }
    out
}

/// A 500-face sphere whose upper half is flattened, labelled 0 on the faces
/// above the equator band and 1 elsewhere.
pub fn synthetic_two_region() -> (Mesh, Vec<usize>) {
    let sphere = shapes::uv_sphere(25, 11);
    let vertices = sphere
        .vertices()
        .iter()
        .map(|v| if v.z > 0.0 { crate::mesh::Point::new(v.x, v.y, 0.5 * v.z) } else { *v })
        .collect();
    let mut mesh = sphere.with_vertices(vertices).expect("same vertex count");
    mesh.set_name("two-region");
    let labels = mesh
        .faces()
        .iter()
        .map(|f| usize::from(!f.iter().all(|&v| mesh.vertices()[v].z > 0.0)))
        .collect();
    (mesh, labels)
}

/// Parameters, normalisation buffers, optimiser state and the number of
/// completed epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamStore,
    pub buffers: BufferStore,
    pub adam: Adam,
    pub epoch: usize,
}

impl TrainState {
    pub fn new(model: &Model, config: &TrainConfig) -> Self {
        let (params, buffers) = model.init(config.seed);
        Self { params, buffers, adam: Adam::new(AdamConfig::with_lr(config.lr)), epoch: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Accuracy of the training-mode predictions made during the epoch.
    pub accuracy: f64,
}

/// Sample order of one epoch, a function of `(seed, epoch)` only.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn argmax_rows(a: &Array2<f64>) -> Vec<usize> {
    a.rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn labels_of(samples: &[&Sample]) -> Vec<usize> {
    let mut out = Vec::new();
    for s in samples {
        match &s.target {
            Target::Class(c) => out.push(*c),
            Target::Faces(f) => out.extend_from_slice(f),
        }
    }
    out
}

/// One pass over the data in the seeded order of epoch `state.epoch`, one
/// Adam step per batch.
pub fn train_epoch(model: &Model, state: &mut TrainState, data: &Dataset, config: &TrainConfig) -> Result<EpochStats> {
    config.validate()?;
    data.check(model)?;
    state.adam.config.lr = config.lr;
    let order = epoch_order(config.seed, state.epoch, data.len());
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (b, chunk) in order.chunks(config.batch).enumerate() {
        let samples: Vec<&Sample> = chunk.iter().map(|&i| &data.samples[i]).collect();
        let pairs: Vec<&GraphPair> = samples.iter().map(|s| &s.pair).collect();
        let batch = batch_graphs(&pairs)?;
        let labels = labels_of(&samples);
        let mut out = model.forward(&state.params, &state.buffers, &batch, ForwardOptions { train: true, replay: None })?;
        let loss = out.tape.cross_entropy(out.logits, &labels)?;
        let value = out.tape.scalar(loss)?;
        if !value.is_finite() {
            let names: Vec<&str> = samples.iter().map(|s| s.name.as_str()).collect();
            return Err(TrainError::NonFinite { loss: value, epoch: state.epoch, batch: b, samples: names.join(", ") });
        }
        let predicted = argmax_rows(out.tape.value(out.logits)?);
        correct += predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
        total += labels.len();
        out.tape.backward(loss)?;
        let grads = out.tape.param_grads();
        state.adam.update(&mut state.params, &grads)?;
        for (name, value) in out.buffer_updates {
            state.buffers.insert(name, value);
        }
        loss_sum += value;
        batches += 1;
    }
    let stats = EpochStats { epoch: state.epoch, mean_loss: loss_sum / batches as f64, accuracy: 100.0 * correct as f64 / total as f64 };
    state.epoch += 1;
    Ok(stats)
}

/// Runs epochs until `config.epochs` have been completed; a resumed state
/// continues where it stopped.
pub fn train(
    model: &Model,
    state: &mut TrainState,
    data: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>> {
    let mut history = Vec::new();
    while state.epoch < config.epochs {
        let stats = train_epoch(model, state, data, config)?;
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub samples: usize,
    pub mean_loss: f64,
    /// Classification: percentage of correctly classified meshes.
    /// Segmentation: mean per-mesh face-label accuracy.
    pub accuracy: f64,
    /// Mean per-mesh hard edge accuracy from face predictions, when every
    /// mesh has hard edge labels.
    pub hard_edge: Option<f64>,
    /// Mean per-mesh soft edge accuracy; soft labels default to the ones
    /// induced by the ground-truth face labels.
    pub soft_edge: Option<f64>,
    pub predictions: Vec<Vec<usize>>,
}

/// Inference-mode metrics; parameters and buffers are not modified.
pub fn evaluate(model: &Model, params: &ParamStore, buffers: &BufferStore, data: &Dataset, batch: usize) -> Result<EvalReport> {
    evaluate_with(model, params, buffers, data, batch, false)
}

/// Like [`evaluate`]; with `batch_stats` set, batch normalisation uses the
/// statistics of each evaluated batch as during training (running buffers
/// are still left untouched).
pub fn evaluate_with(
    model: &Model,
    params: &ParamStore,
    buffers: &BufferStore,
    data: &Dataset,
    batch: usize,
    batch_stats: bool,
) -> Result<EvalReport> {
    data.check(model)?;
    let batch = batch.max(1);
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    for chunk in data.samples.chunks(batch) {
        let samples: Vec<&Sample> = chunk.iter().collect();
        let pairs: Vec<&GraphPair> = samples.iter().map(|s| &s.pair).collect();
        let merged = batch_graphs(&pairs)?;
        let labels = labels_of(&samples);
        let mut out = model.forward(params, buffers, &merged, ForwardOptions { train: batch_stats, replay: None })?;
        let loss = out.tape.cross_entropy(out.logits, &labels)?;
        loss_sum += out.tape.scalar(loss)? * chunk.len() as f64;
        let predicted = argmax_rows(out.tape.value(out.logits)?);
        match data.task {
            Task::Classification => predictions.extend(predicted.into_iter().map(|p| vec![p])),
            _ => {
                for g in 0..merged.num_graphs() {
                    predictions.push(predicted[merged.face_range(g)].to_vec());
                }
            }
        }
    }
    let n = data.len() as f64;
    let mean_loss = loss_sum / n;
    if data.task == Task::Classification {
        let correct = data.samples.iter().zip(&predictions).filter(|(s, p)| s.target == Target::Class(p[0])).count();
        return Ok(EvalReport {
            task: data.task,
            samples: data.len(),
            mean_loss,
            accuracy: 100.0 * correct as f64 / n,
            hard_edge: None,
            soft_edge: None,
            predictions,
        });
    }
    let mut face = 0.0;
    let mut hard = Some(0.0);
    let mut soft = Some(0.0);
    for (s, p) in data.samples.iter().zip(&predictions) {
        let Target::Faces(gt) = &s.target else {
            return Err(TrainError::Task { dataset: Task::Classification, model: data.task });
        };
        face += face_label_accuracy(p, gt, None)?;
        let Some(edges) = &s.edges else {
            hard = None;
            soft = None;
            continue;
        };
        hard = match (hard, &edges.hard) {
            (Some(acc), Some(h)) => Some(acc + edge_accuracy_hard_from_faces(p, h, &edges.topology)?),
            _ => None,
        };
        let induced;
        let soft_gt = match &edges.soft {
            Some(s) => s,
            None => {
                induced = face_to_soft_edge(gt, &edges.topology)?;
                &induced
            }
        };
        soft = match soft {
            Some(acc) => match edge_accuracy_soft_from_faces(p, soft_gt, &edges.lengths, &edges.topology, SoftRule::Membership) {
                Ok(v) => Some(acc + v),
                Err(MetricError::Empty(_)) => None,
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
    }
    Ok(EvalReport {
        task: data.task,
        samples: data.len(),
        mean_loss,
        accuracy: face / n,
        hard_edge: hard.map(|v| v / n),
        soft_edge: soft.map(|v| v / n),
        predictions,
    })
}
