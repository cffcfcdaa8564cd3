//! Attention-based primal-dual convolution and the residual block built on
//! it.
//!
//! One layer first updates the dual graph: every dual node aggregates the
//! transformed features of its incoming dual neighbours, weighted by a
//! softmax over `leaky_relu(ã · [f̃_src W̃ ‖ f̃_dst W̃])`. The new dual features
//! then score the primal messages: the weight of `M → A` is a softmax over the
//! neighbours of `A` of `leaky_relu(a · f̃'_{dual node of M → A})`.

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::GraphPair;
use crate::tensor::{glorot, BatchStats, BufferStore, Index, ParamStore, Result, Tape, Var, LEAKY_SLOPE, NORM_EPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadMode {
    Concat,
    Average,
}

/// Shape of one primal-dual convolution layer. Widths are per head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub name: String,
    pub in_primal: usize,
    pub in_dual: usize,
    pub out_primal: usize,
    pub out_dual: usize,
    pub heads: usize,
    pub mode: HeadMode,
    pub self_loops: bool,
    /// Apply ReLU after aggregation.
    pub activate: bool,
}

/// How attention vectors are initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AttentionInit {
    Zeros,
    Glorot,
}

impl std::str::FromStr for AttentionInit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zeros" => Ok(AttentionInit::Zeros),
            "glorot" => Ok(AttentionInit::Glorot),
            other => Err(format!("unknown attention init `{other}` (zeros or glorot)")),
        }
    }
}

pub struct ConvOutput {
    pub primal: Var,
    pub dual: Var,
    /// Primal coefficients, one row per entry of `pair.messages`, one column
    /// per head.
    pub primal_attention: Var,
    /// Dual coefficients, one row per dual message, one column per head.
    pub dual_attention: Var,
    /// Dual message lists the coefficients refer to (self-loops included).
    pub dual_src: Index,
    pub dual_dst: Index,
}

/// Forward context: the tape, parameters, normalisation buffers and mode.
pub struct Forward<'a> {
    pub tape: Tape,
    pub params: &'a ParamStore,
    pub buffers: &'a BufferStore,
    pub train: bool,
    /// Running-statistics updates produced in training mode.
    pub buffer_updates: Vec<(String, Array2<f64>)>,
}

impl<'a> Forward<'a> {
    pub fn new(params: &'a ParamStore, buffers: &'a BufferStore, train: bool) -> Self {
        Self { tape: Tape::new(), params, buffers, train, buffer_updates: Vec::new() }
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        self.tape.param(self.params, name)
    }
}

impl ConvSpec {
    pub fn out_primal_width(&self) -> usize {
        match self.mode {
            HeadMode::Concat => self.heads * self.out_primal,
            HeadMode::Average => self.out_primal,
        }
    }

    pub fn out_dual_width(&self) -> usize {
        match self.mode {
            HeadMode::Concat => self.heads * self.out_dual,
            HeadMode::Average => self.out_dual,
        }
    }

    fn key(&self, graph: &str, what: &str, head: usize) -> String {
        format!("{}.{graph}.{what}.head{head}", self.name)
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut impl Rng, attention: AttentionInit) {
        for h in 0..self.heads {
            store.insert(self.key("dual", "W", h), glorot(rng, self.in_dual, self.out_dual));
            store.insert(self.key("primal", "W", h), glorot(rng, self.in_primal, self.out_primal));
            let (da, pa) = match attention {
                AttentionInit::Zeros => (Array2::zeros((2 * self.out_dual, 1)), Array2::zeros((self.out_dual, 1))),
                AttentionInit::Glorot => (glorot(rng, 2 * self.out_dual, 1), glorot(rng, self.out_dual, 1)),
            };
            store.insert(self.key("dual", "a", h), da);
            store.insert(self.key("primal", "a", h), pa);
        }
    }

    fn kernel(&self, fw: &mut Forward, graph: &str) -> Result<Var> {
        let parts = (0..self.heads).map(|h| fw.param(&self.key(graph, "W", h))).collect::<Result<Vec<_>>>()?;
        if parts.len() == 1 {
            Ok(parts[0])
        } else {
            fw.tape.concat_cols(&parts)
        }
    }

    fn combine(&self, tape: &mut Tape, x: Var, width: usize) -> Result<Var> {
        match self.mode {
            HeadMode::Concat => Ok(x),
            HeadMode::Average if self.heads == 1 => Ok(x),
            HeadMode::Average => {
                let mut acc = tape.slice_cols(x, 0, width)?;
                for h in 1..self.heads {
                    let part = tape.slice_cols(x, h * width, (h + 1) * width)?;
                    acc = tape.add(acc, part)?;
                }
                tape.scale(acc, 1.0 / self.heads as f64)
            }
        }
    }

    pub fn forward(&self, fw: &mut Forward, pair: &GraphPair, primal: Var, dual: Var) -> Result<ConvOutput> {
        let n_dual = pair.dual.num_nodes;
        let n_primal = pair.primal.num_nodes();
        let (dual_src, dual_dst) = if self.self_loops {
            with_self_loops(&pair.dual.src, &pair.dual.dst, n_dual)
        } else {
            (pair.dual.src.clone(), pair.dual.dst.clone())
        };

        // dual update
        let wd = self.kernel(fw, "dual")?;
        let t = fw.tape.matmul(dual, wd)?;
        let od = self.out_dual;
        let mut scores = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let th = if self.heads == 1 { t } else { fw.tape.slice_cols(t, h * od, (h + 1) * od)? };
            let a = fw.param(&self.key("dual", "a", h))?;
            let a_src = fw.tape.slice_rows(a, 0, od)?;
            let a_dst = fw.tape.slice_rows(a, od, 2 * od)?;
            let s_src = fw.tape.matmul(th, a_src)?;
            let s_dst = fw.tape.matmul(th, a_dst)?;
            let e_src = fw.tape.gather_rows(s_src, &dual_src)?;
            let e_dst = fw.tape.gather_rows(s_dst, &dual_dst)?;
            let e = fw.tape.add(e_src, e_dst)?;
            scores.push(fw.tape.leaky_relu(e, LEAKY_SLOPE)?);
        }
        let scores = if scores.len() == 1 { scores[0] } else { fw.tape.concat_cols(&scores)? };
        let dual_attention = fw.tape.segment_softmax(scores, &dual_dst, n_dual)?;
        let mut dual_out = fw.tape.attend(t, dual_attention, &dual_src, &dual_dst, n_dual)?;
        if self.activate {
            dual_out = fw.tape.relu(dual_out)?;
        }

        // primal update, scored by the new dual features
        let wp = self.kernel(fw, "primal")?;
        let y = fw.tape.matmul(primal, wp)?;
        let msgs = &pair.messages;
        let mut scores = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let dh = if self.heads == 1 { dual_out } else { fw.tape.slice_cols(dual_out, h * od, (h + 1) * od)? };
            let a = fw.param(&self.key("primal", "a", h))?;
            let s = fw.tape.matmul(dh, a)?;
            let e = fw.tape.gather_rows(s, &msgs.dual)?;
            scores.push(fw.tape.leaky_relu(e, LEAKY_SLOPE)?);
        }
        let scores = if scores.len() == 1 { scores[0] } else { fw.tape.concat_cols(&scores)? };
        let primal_attention = fw.tape.segment_softmax(scores, &msgs.dst, n_primal)?;
        let mut primal_out = fw.tape.attend(y, primal_attention, &msgs.src, &msgs.dst, n_primal)?;
        if self.activate {
            primal_out = fw.tape.relu(primal_out)?;
        }

        let primal = self.combine(&mut fw.tape, primal_out, self.out_primal)?;
        let dual = self.combine(&mut fw.tape, dual_out, self.out_dual)?;
        Ok(ConvOutput { primal, dual, primal_attention, dual_attention, dual_src, dual_dst })
    }
}

/// Message lists with one `i → i` entry per node, re-sorted by `(dst, src)`.
pub fn with_self_loops(src: &Index, dst: &Index, nodes: usize) -> (Index, Index) {
    let mut pairs: Vec<(usize, usize)> = dst.iter().copied().zip(src.iter().copied()).collect();
    pairs.extend((0..nodes).map(|i| (i, i)));
    pairs.sort_unstable();
    let d: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let s: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    (Arc::from(s), Arc::from(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormKind {
    Group,
    Batch,
}

pub const BN_MOMENTUM: f64 = 0.1;

/// Group count used by group normalisation: 4 when it divides the width,
/// otherwise 1.
pub fn group_count(channels: usize) -> usize {
    let g = channels.min(4);
    if g > 0 && channels.is_multiple_of(g) {
        g
    } else {
        1
    }
}

/// Per-channel normalisation with learned gain and bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub name: String,
    pub kind: NormKind,
    pub width: usize,
}

impl NormSpec {
    pub fn init_params(&self, store: &mut ParamStore, buffers: &mut BufferStore) {
        store.insert(format!("{}.gain", self.name), Array2::ones((1, self.width)));
        store.insert(format!("{}.bias", self.name), Array2::zeros((1, self.width)));
        if self.kind == NormKind::Batch {
            buffers.insert(format!("{}.running_mean", self.name), Array2::zeros((1, self.width)));
            buffers.insert(format!("{}.running_var", self.name), Array2::ones((1, self.width)));
        }
    }

    pub fn forward(&self, fw: &mut Forward, x: Var) -> Result<Var> {
        let gain = fw.param(&format!("{}.gain", self.name))?;
        let bias = fw.param(&format!("{}.bias", self.name))?;
        match self.kind {
            NormKind::Group => fw.tape.group_norm(x, gain, bias, group_count(self.width), NORM_EPS),
            NormKind::Batch if fw.train => {
                let (y, BatchStats { mean, var }) = fw.tape.batch_norm(x, gain, bias, NORM_EPS)?;
                for (suffix, batch) in [("running_mean", mean), ("running_var", var)] {
                    let key = format!("{}.{suffix}", self.name);
                    let old = fw.buffers.get(&key).ok_or_else(|| crate::tensor::TensorError::MissingParam(key.clone()))?;
                    let new = old * (1.0 - BN_MOMENTUM) + &(batch * BN_MOMENTUM);
                    fw.buffer_updates.push((key, new));
                }
                Ok(y)
            }
            NormKind::Batch => {
                let key = |s: &str| format!("{}.{s}", self.name);
                let missing = |k: String| crate::tensor::TensorError::MissingParam(k);
                let mean = fw.buffers.get(&key("running_mean")).ok_or_else(|| missing(key("running_mean")))?;
                let var = fw.buffers.get(&key("running_var")).ok_or_else(|| missing(key("running_var")))?;
                let shift = fw.tape.constant(-mean);
                let inv = fw.tape.constant(var.mapv(|v| 1.0 / (v + NORM_EPS).sqrt()));
                let centred = fw.tape.add_row(x, shift)?;
                let scaled = fw.tape.mul_row(centred, inv)?;
                let y = fw.tape.mul_row(scaled, gain)?;
                fw.tape.add_row(y, bias)
            }
        }
    }
}

/// Conv, norm and ReLU on both graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvNormSpec {
    pub conv: ConvSpec,
    pub primal_norm: Option<NormSpec>,
    pub dual_norm: Option<NormSpec>,
    /// ReLU after the normalisation.
    pub relu: bool,
}

pub struct Features {
    pub primal: Var,
    pub dual: Var,
}

impl ConvNormSpec {
    pub fn new(conv: ConvSpec, norm: Option<NormKind>, relu: bool) -> Self {
        let make = |graph: &str, width: usize| {
            norm.map(|kind| NormSpec { name: format!("{}.{graph}.norm", conv.name), kind, width })
        };
        let primal_norm = make("primal", conv.out_primal_width());
        let dual_norm = make("dual", conv.out_dual_width());
        Self { conv, primal_norm, dual_norm, relu }
    }

    pub fn init_params(&self, store: &mut ParamStore, buffers: &mut BufferStore, rng: &mut impl Rng, att: AttentionInit) {
        self.conv.init_params(store, rng, att);
        for n in self.primal_norm.iter().chain(&self.dual_norm) {
            n.init_params(store, buffers);
        }
    }

    /// Returns the normalised features (before the final ReLU when `relu` is
    /// set, so callers can add a skip first) and the conv output.
    fn pre_activation(&self, fw: &mut Forward, pair: &GraphPair, x: &Features) -> Result<(Features, ConvOutput)> {
        let out = self.conv.forward(fw, pair, x.primal, x.dual)?;
        let primal = match &self.primal_norm {
            Some(n) => n.forward(fw, out.primal)?,
            None => out.primal,
        };
        let dual = match &self.dual_norm {
            Some(n) => n.forward(fw, out.dual)?,
            None => out.dual,
        };
        Ok((Features { primal, dual }, out))
    }

    pub fn forward(&self, fw: &mut Forward, pair: &GraphPair, x: &Features) -> Result<(Features, ConvOutput)> {
        let (f, out) = self.pre_activation(fw, pair, x)?;
        if !self.relu {
            return Ok((f, out));
        }
        let primal = fw.tape.relu(f.primal)?;
        let dual = fw.tape.relu(f.dual)?;
        Ok((Features { primal, dual }, out))
    }
}

/// Two stacked conv+norm+ReLU stages; the output of the first stage is added
/// to the normalised output of the second before its ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualBlockSpec {
    pub first: ConvNormSpec,
    pub second: ConvNormSpec,
}

impl ResidualBlockSpec {
    /// Block with `heads` heads of `width` channels each, concatenated.
    pub fn new(
        names: [String; 2],
        in_primal: usize,
        in_dual: usize,
        width: usize,
        heads: usize,
        norm: NormKind,
        self_loops: bool,
    ) -> Self {
        let conv = |name: String, ip: usize, id: usize| ConvSpec {
            name,
            in_primal: ip,
            in_dual: id,
            out_primal: width,
            out_dual: width,
            heads,
            mode: HeadMode::Concat,
            self_loops,
            activate: true,
        };
        let [n1, n2] = names;
        let first = ConvNormSpec::new(conv(n1, in_primal, in_dual), Some(norm), true);
        let second = ConvNormSpec::new(conv(n2, width * heads, width * heads), Some(norm), true);
        Self { first, second }
    }

    pub fn out_primal_width(&self) -> usize {
        self.second.conv.out_primal_width()
    }

    pub fn out_dual_width(&self) -> usize {
        self.second.conv.out_dual_width()
    }

    pub fn init_params(&self, store: &mut ParamStore, buffers: &mut BufferStore, rng: &mut impl Rng, att: AttentionInit) {
        self.first.init_params(store, buffers, rng, att);
        self.second.init_params(store, buffers, rng, att);
    }

    /// Returns the block output and the attention of the second conv (the
    /// one feeding a following pooling layer).
    pub fn forward(&self, fw: &mut Forward, pair: &GraphPair, x: &Features) -> Result<(Features, ConvOutput)> {
        let (h, _) = self.first.forward(fw, pair, x)?;
        let (f, out) = self.second.pre_activation(fw, pair, &h)?;
        let primal = fw.tape.add(f.primal, h.primal)?;
        let dual = fw.tape.add(f.dual, h.dual)?;
        let primal = fw.tape.relu(primal)?;
        let dual = fw.tape.relu(dual)?;
        Ok((Features { primal, dual }, out))
    }
}
