//! Network architectures: mesh classification, U-Net segmentation and the
//! encoder-only "superpixel" segmentation that labels face clusters.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conv::{
    AttentionInit, ConvNormSpec, ConvOutput, ConvSpec, Features, Forward, HeadMode, NormKind, ResidualBlockSpec,
};
use crate::graph::{DualConfig, GraphError, GraphPair};
use crate::pooling::{
    contract, pool_features, score_edges, select_edges, unpool_features, Aggregation, PoolError, PoolTarget,
    PoolingTrace, Selection,
};
use crate::tensor::{glorot, BufferStore, ParamStore, Tape, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph {0} has no dual nodes left to average; reduce pooling")]
    OverPooled(usize),
    #[error("dual configuration {got} does not match the model's {expected}")]
    Config { expected: DualConfig, got: DualConfig },
    #[error("replayed selections cover {got} pooling layers, model has {expected}")]
    Replay { expected: usize, got: usize },
    #[error("invalid architecture: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    Classification,
    Segmentation,
    Superpixel,
}

impl std::str::FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "classification" => Ok(Task::Classification),
            "segmentation" => Ok(Task::Segmentation),
            "superpixel" => Ok(Task::Superpixel),
            other => Err(format!("unknown task `{other}` (classification, segmentation or superpixel)")),
        }
    }
}

/// Everything that determines the layer structure and parameter shapes.
///
/// `widths` are per-head channel counts: classification `[64, 128]`,
/// segmentation `[32, 64, 128, 256]` (three encoder levels and the bridge),
/// superpixel one entry per encoder block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub task: Task,
    pub classes: usize,
    pub heads: usize,
    pub widths: Vec<usize>,
    /// Hidden linear width of the classification head.
    pub hidden: usize,
    /// Pooling fraction after each encoder block.
    pub fractions: Vec<f64>,
    pub config: DualConfig,
    pub aggregation: Aggregation,
    /// Interpret fractions relative to primal nodes instead of edges.
    pub node_fraction: bool,
    pub self_loops: bool,
    pub attention_init: AttentionInit,
}

impl ArchitectureSpec {
    /// Two residual blocks of `64 H` and `128 H` channels, each followed by
    /// pooling 20% of the primal edges, then a 100-unit hidden layer.
    pub fn classification(classes: usize, heads: usize) -> Self {
        Self {
            task: Task::Classification,
            classes,
            heads,
            widths: vec![64, 128],
            hidden: 100,
            fractions: vec![0.2, 0.2],
            config: DualConfig::A,
            aggregation: Aggregation::Sum,
            node_fraction: false,
            self_loops: false,
            attention_init: AttentionInit::Zeros,
        }
    }

    /// Three encoder levels of `32/64/128 H_e` channels pooling 30% each, a
    /// `256 H_e` bridge and a mirrored single-head decoder.
    pub fn segmentation(classes: usize, heads: usize) -> Self {
        Self {
            task: Task::Segmentation,
            classes,
            heads,
            widths: vec![32, 64, 128, 256],
            hidden: 0,
            fractions: vec![0.3, 0.3, 0.3],
            ..Self::classification(classes, heads)
        }
    }

    /// Five residual blocks of `base` channels per head, each followed by
    /// pooling, then a residual block and a linear classifier per cluster.
    pub fn superpixel(classes: usize, heads: usize, base: usize, fraction: f64) -> Self {
        Self {
            task: Task::Superpixel,
            classes,
            heads,
            widths: vec![base; 5],
            hidden: 0,
            fractions: vec![fraction; 5],
            ..Self::classification(classes, heads)
        }
    }

    /// Divides every width (and the hidden width) by `factor`, keeping at
    /// least one channel.
    pub fn scaled_down(mut self, factor: usize) -> Self {
        self.widths = self.widths.iter().map(|w| (w / factor).max(1)).collect();
        if self.hidden > 0 {
            self.hidden = (self.hidden / factor).max(1);
        }
        self
    }

    pub fn pool_target(&self, level: usize) -> PoolTarget {
        let f = self.fractions[level];
        if self.node_fraction {
            PoolTarget::NodeFraction(f)
        } else {
            PoolTarget::EdgeFraction(f)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Invalid(m.to_string()));
        if self.classes < 2 {
            return bad("at least two classes are needed");
        }
        if self.heads == 0 || self.widths.contains(&0) {
            return bad("heads and widths must be positive");
        }
        if self.fractions.iter().any(|&f| !(f > 0.0 && f < 1.0)) {
            return bad("pooling fractions must lie in (0, 1)");
        }
        let (w, f) = (self.widths.len(), self.fractions.len());
        let ok = match self.task {
            Task::Classification => w == f && w >= 1 && self.hidden > 0,
            Task::Segmentation => w == f + 1 && f >= 1,
            Task::Superpixel => w == f && w >= 1,
        };
        if !ok {
            return bad("widths and fractions do not fit the task layout");
        }
        Ok(())
    }
}

/// Dense layer `x W + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSpec {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl LinearSpec {
    fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.insert(format!("{}.W", self.name), glorot(rng, self.input, self.output));
        store.insert(format!("{}.b", self.name), Array2::zeros((1, self.output)));
    }

    fn forward(&self, fw: &mut Forward, x: Var) -> std::result::Result<Var, TensorError> {
        let w = fw.param(&format!("{}.W", self.name))?;
        let b = fw.param(&format!("{}.b", self.name))?;
        let y = fw.tape.matmul(x, w)?;
        fw.tape.add_row(y, b)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Classification { blocks: Vec<ResidualBlockSpec>, hidden: LinearSpec, out: LinearSpec },
    Segmentation { encoder: Vec<ResidualBlockSpec>, bridge: ConvNormSpec, decoder: Vec<DecoderLevel>, last: ConvNormSpec },
    Superpixel { blocks: Vec<ResidualBlockSpec>, head: ResidualBlockSpec, out: LinearSpec },
}

#[derive(Debug, Clone, PartialEq)]
struct DecoderLevel {
    before: ConvNormSpec,
    after: ConvNormSpec,
    /// Encoder level whose pooling this level undoes.
    level: usize,
    filler: String,
    width: usize,
}

/// Pooling replay and normalisation mode for one forward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    pub train: bool,
    /// Use these contraction decisions instead of scoring (one per pooling
    /// layer). Pooling is piecewise constant in the parameters; replay makes
    /// finite differences see a fixed graph hierarchy.
    pub replay: Option<Vec<Selection>>,
}

pub struct ForwardResult {
    pub tape: Tape,
    /// Classification: one row per member graph. Segmentation tasks: one row
    /// per original face.
    pub logits: Var,
    pub traces: Vec<PoolingTrace>,
    pub selections: Vec<Selection>,
    pub buffer_updates: Vec<(String, Array2<f64>)>,
    /// Graph pair at the coarsest level.
    pub coarsest: GraphPair,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ArchitectureSpec,
    body: Body,
}

#[allow(clippy::too_many_arguments)]
fn block(prefix: &str, index: usize, ip: usize, id: usize, width: usize, heads: usize, norm: NormKind, sl: bool) -> ResidualBlockSpec {
    let names = [format!("{prefix}{}", 2 * index), format!("{prefix}{}", 2 * index + 1)];
    ResidualBlockSpec::new(names, ip, id, width, heads, norm, sl)
}

#[allow(clippy::too_many_arguments)]
fn single(name: String, ip: usize, id: usize, op: usize, od: usize, heads: usize, sl: bool, activate: bool) -> ConvSpec {
    ConvSpec {
        name,
        in_primal: ip,
        in_dual: id,
        out_primal: op,
        out_dual: od,
        heads,
        mode: HeadMode::Concat,
        self_loops: sl,
        activate,
    }
}

struct Pooler<'s> {
    spec: &'s ArchitectureSpec,
    replay: Option<Vec<Selection>>,
    traces: Vec<PoolingTrace>,
    selections: Vec<Selection>,
}

impl Pooler<'_> {
    fn pool(&mut self, fw: &mut Forward, pair: &GraphPair, x: Features, conv: &ConvOutput) -> Result<(GraphPair, Features)> {
        let level = self.traces.len();
        let selection = match &self.replay {
            Some(r) => r[level].clone(),
            None => {
                let attention = fw.tape.value(conv.primal_attention)?;
                let scores = score_edges(pair, attention)?;
                select_edges(pair, &scores, self.spec.pool_target(level))
            }
        };
        self.selections.push(selection.clone());
        let (next, trace) = contract(pair, selection, self.spec.aggregation)?;
        let (primal, dual) = pool_features(&mut fw.tape, &trace, x.primal, x.dual, self.spec.aggregation)?;
        self.traces.push(trace);
        Ok((next, Features { primal, dual }))
    }
}

/// Mean of the `heads` contiguous blocks of `width` columns.
fn average_heads(tape: &mut Tape, x: Var, heads: usize, width: usize) -> std::result::Result<Var, TensorError> {
    if heads == 1 {
        return Ok(x);
    }
    let mut acc = tape.slice_cols(x, 0, width)?;
    for h in 1..heads {
        let part = tape.slice_cols(x, h * width, (h + 1) * width)?;
        acc = tape.add(acc, part)?;
    }
    tape.scale(acc, 1.0 / heads as f64)
}

impl Model {
    pub fn new(spec: ArchitectureSpec) -> Result<Self> {
        spec.validate()?;
        let (h, sl) = (spec.heads, spec.self_loops);
        let (p0, d0) = (1, spec.config.channels());
        let body = match spec.task {
            Task::Classification => {
                let mut blocks = Vec::new();
                let (mut ip, mut id) = (p0, d0);
                for (i, &w) in spec.widths.iter().enumerate() {
                    let b = block("layer", i, ip, id, w, h, NormKind::Group, sl);
                    (ip, id) = (b.out_primal_width(), b.out_dual_width());
                    blocks.push(b);
                }
                let hidden = LinearSpec { name: "fc0".into(), input: id, output: spec.hidden };
                let out = LinearSpec { name: "fc1".into(), input: spec.hidden, output: spec.classes };
                Body::Classification { blocks, hidden, out }
            }
            Task::Segmentation => {
                let levels = spec.fractions.len();
                let mut encoder = Vec::new();
                let (mut ip, mut id) = (p0, d0);
                for i in 0..levels {
                    let b = block("layer", i, ip, id, spec.widths[i], h, NormKind::Group, sl);
                    (ip, id) = (b.out_primal_width(), b.out_dual_width());
                    encoder.push(b);
                }
                let bw = spec.widths[levels];
                let mut next = 2 * levels;
                let mut name = || {
                    next += 1;
                    format!("layer{}", next - 1)
                };
                let bridge = ConvNormSpec::new(single(name(), ip, id, bw, bw, h, sl, true), Some(NormKind::Batch), true);
                let mut decoder = Vec::new();
                let mut width = bw;
                for level in (0..levels).rev() {
                    let w = spec.widths[level];
                    let before = ConvNormSpec::new(single(name(), width, width, w, w, 1, sl, true), Some(NormKind::Batch), true);
                    let after =
                        ConvNormSpec::new(single(name(), 2 * w, 2 * w, w, w, 1, sl, true), Some(NormKind::Batch), true);
                    decoder.push(DecoderLevel { before, after, level, filler: format!("unpool{level}.filler"), width: w });
                    width = w;
                }
                let c = spec.classes;
                let mut last = ConvNormSpec::new(single(name(), width, width, c, c, 1, sl, false), Some(NormKind::Batch), false);
                last.dual_norm = None;
                Body::Segmentation { encoder, bridge, decoder, last }
            }
            Task::Superpixel => {
                let mut blocks = Vec::new();
                let (mut ip, mut id) = (p0, d0);
                for (i, &w) in spec.widths.iter().enumerate() {
                    let b = block("layer", i, ip, id, w, h, NormKind::Group, sl);
                    (ip, id) = (b.out_primal_width(), b.out_dual_width());
                    blocks.push(b);
                }
                let last_w = *spec.widths.last().unwrap();
                let head = block("layer", spec.widths.len(), ip, id, last_w, h, NormKind::Group, sl);
                let out = LinearSpec { name: "fc0".into(), input: head.out_primal_width(), output: spec.classes };
                Body::Superpixel { blocks, head, out }
            }
        };
        Ok(Self { spec, body })
    }

    pub fn num_pooling_layers(&self) -> usize {
        self.spec.fractions.len()
    }

    /// Fresh parameters and normalisation buffers drawn from `seed`.
    pub fn init(&self, seed: u64) -> (ParamStore, BufferStore) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut buffers = BufferStore::new();
        let att = self.spec.attention_init;
        match &self.body {
            Body::Classification { blocks, hidden, out } => {
                for b in blocks {
                    b.init_params(&mut params, &mut buffers, &mut rng, att);
                }
                hidden.init(&mut params, &mut rng);
                out.init(&mut params, &mut rng);
            }
            Body::Segmentation { encoder, bridge, decoder, last } => {
                for b in encoder {
                    b.init_params(&mut params, &mut buffers, &mut rng, att);
                }
                bridge.init_params(&mut params, &mut buffers, &mut rng, att);
                for d in decoder {
                    d.before.init_params(&mut params, &mut buffers, &mut rng, att);
                    params.insert(d.filler.clone(), Array2::zeros((1, d.width)));
                    d.after.init_params(&mut params, &mut buffers, &mut rng, att);
                }
                last.init_params(&mut params, &mut buffers, &mut rng, att);
            }
            Body::Superpixel { blocks, head, out } => {
                for b in blocks {
                    b.init_params(&mut params, &mut buffers, &mut rng, att);
                }
                head.init_params(&mut params, &mut buffers, &mut rng, att);
                out.init(&mut params, &mut rng);
            }
        }
        (params, buffers)
    }

    pub fn forward(
        &self,
        params: &ParamStore,
        buffers: &BufferStore,
        pair: &GraphPair,
        options: ForwardOptions,
    ) -> Result<ForwardResult> {
        if pair.config() != self.spec.config {
            return Err(ModelError::Config { expected: self.spec.config, got: pair.config() });
        }
        if let Some(r) = &options.replay {
            if r.len() != self.num_pooling_layers() {
                return Err(ModelError::Replay { expected: self.num_pooling_layers(), got: r.len() });
            }
        }
        let mut fw = Forward::new(params, buffers, options.train);
        let mut pooler = Pooler { spec: &self.spec, replay: options.replay, traces: Vec::new(), selections: Vec::new() };
        let primal = fw.tape.constant(pair.primal_features.clone());
        let dual = fw.tape.constant(pair.dual_features.clone());
        let mut x = Features { primal, dual };
        let mut current = pair.clone();

        let logits = match &self.body {
            Body::Classification { blocks, hidden, out } => {
                for b in blocks {
                    let (y, conv) = b.forward(&mut fw, &current, &x)?;
                    (current, x) = pooler.pool(&mut fw, &current, y, &conv)?;
                }
                let pooled = global_average_dual(&mut fw.tape, &current, x.dual)?;
                let hdn = hidden.forward(&mut fw, pooled)?;
                let hdn = fw.tape.relu(hdn)?;
                out.forward(&mut fw, hdn)?
            }
            Body::Segmentation { encoder, bridge, decoder, last } => {
                let mut skips = Vec::new();
                let mut levels = Vec::new();
                for (i, b) in encoder.iter().enumerate() {
                    let (y, conv) = b.forward(&mut fw, &current, &x)?;
                    let w = self.spec.widths[i];
                    let sp = average_heads(&mut fw.tape, y.primal, self.spec.heads, w)?;
                    let sd = average_heads(&mut fw.tape, y.dual, self.spec.heads, w)?;
                    skips.push(Features { primal: sp, dual: sd });
                    levels.push(current.clone());
                    (current, x) = pooler.pool(&mut fw, &current, y, &conv)?;
                }
                let (y, _) = bridge.forward(&mut fw, &current, &x)?;
                let bw = self.spec.widths[encoder.len()];
                let primal = average_heads(&mut fw.tape, y.primal, self.spec.heads, bw)?;
                let dual = average_heads(&mut fw.tape, y.dual, self.spec.heads, bw)?;
                x = Features { primal, dual };
                let coarsest = current.clone();
                for d in decoder {
                    let (y, _) = d.before.forward(&mut fw, &current, &x)?;
                    let filler = fw.param(&d.filler)?;
                    let trace = &pooler.traces[d.level];
                    let (p, q) = unpool_features(&mut fw.tape, trace, y.primal, y.dual, filler)?;
                    current = levels[d.level].clone();
                    let skip = &skips[d.level];
                    let primal = fw.tape.concat_cols(&[p, skip.primal])?;
                    let dual = fw.tape.concat_cols(&[q, skip.dual])?;
                    let (y, _) = d.after.forward(&mut fw, &current, &Features { primal, dual })?;
                    x = y;
                }
                let (y, _) = last.forward(&mut fw, &current, &x)?;
                let buffer_updates = std::mem::take(&mut fw.buffer_updates);
                return Ok(ForwardResult {
                    tape: fw.tape,
                    logits: y.primal,
                    traces: pooler.traces,
                    selections: pooler.selections,
                    buffer_updates,
                    coarsest,
                });
            }
            Body::Superpixel { blocks, head, out } => {
                for b in blocks {
                    let (y, conv) = b.forward(&mut fw, &current, &x)?;
                    (current, x) = pooler.pool(&mut fw, &current, y, &conv)?;
                }
                let (y, _) = head.forward(&mut fw, &current, &x)?;
                let per_cluster = out.forward(&mut fw, y.primal)?;
                let map: Vec<usize> = current.face_to_node();
                fw.tape.gather_rows(per_cluster, &map.into())?
            }
        };
        let buffer_updates = std::mem::take(&mut fw.buffer_updates);
        Ok(ForwardResult {
            tape: fw.tape,
            logits,
            traces: pooler.traces,
            selections: pooler.selections,
            buffer_updates,
            coarsest: current,
        })
    }
}

/// Channel-wise mean of the dual features of every member graph.
pub fn global_average_dual(tape: &mut Tape, pair: &GraphPair, dual: Var) -> Result<Var> {
    let ids = pair.dual_graph_ids();
    let g = pair.num_graphs();
    let mut count = vec![0usize; g];
    for &i in &ids {
        count[i] += 1;
    }
    if let Some(empty) = count.iter().position(|&c| c == 0) {
        return Err(ModelError::OverPooled(empty));
    }
    let sum = tape.segment_sum(dual, &ids.into(), g)?;
    let inv = tape.constant(Array2::from_shape_fn((g, 1), |(i, _)| 1.0 / count[i] as f64));
    Ok(tape.mul_col(sum, inv)?)
}
