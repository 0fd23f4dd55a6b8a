//! Batched forward pass, losses and accuracy.
//!
//! Activations flow as row-major `[batch, features]` matrices; a spatial
//! `[H, W, C]` map is stored with channels fastest. Convolutions run as
//! im2col + GEMM, dense layers as plain GEMM. Work is chunked over examples
//! (fixed chunk size) and partial results are combined in chunk order, so
//! results do not depend on the worker count.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::net::{LayerSpec, LossKind, NetworkSpec, Shape};
use crate::params::{LayerLayout, ParameterVector};
use crate::tensor::Tensor;
use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;

/// Examples processed per work unit. Sized so that the largest transient
/// buffer (the im2col matrix of a wide convolution) stays within the
/// allocator's recycling range instead of round-tripping through mmap.
pub(crate) const CHUNK: usize = 64;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` before logs.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub offset: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub filters: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.kh * self.kw * self.in_c
    }
    pub fn out_positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub c: usize,
    pub out_h: usize,
    pub out_w: usize,
}

#[derive(Debug, Clone)]
pub(crate) enum Node {
    Conv(ConvGeom),
    MaxPool(PoolGeom),
    AvgPool(PoolGeom),
    Dense {
        offset: usize,
        in_dim: usize,
        out_dim: usize,
        relu: bool,
    },
    Dropout {
        rate: f64,
        feat: usize,
    },
    /// Flatten / Reshape: identity on the flat representation.
    Noop,
}

/// A network resolved against its shapes and parameter layout; node index
/// equals layer index.
#[derive(Debug, Clone)]
pub(crate) struct CompiledNet {
    pub nodes: Vec<Node>,
    pub loss: LossKind,
    pub in_features: usize,
    pub out_dim: usize,
    pub layout: LayerLayout,
    /// Features entering each node.
    pub feat_in: Vec<usize>,
}

impl CompiledNet {
    pub fn compile(net: &NetworkSpec) -> Result<Self> {
        net.validate()?;
        let shapes = net.infer_shapes()?;
        let layout = LayerLayout::of(net)?;
        let mut nodes = Vec::with_capacity(net.layers.len());
        let mut feat_in = Vec::with_capacity(net.layers.len());
        let mut prev = Shape::Spatial(net.input_shape);
        let last = net.layers.len() - 1;
        for (idx, layer) in net.layers.iter().enumerate() {
            feat_in.push(prev.num_elements());
            let node = match layer {
                LayerSpec::Conv2D { filters, kh, kw } => {
                    let ([ih, iw, ic], [oh, ow, _]) = match (prev, shapes[idx]) {
                        (Shape::Spatial(i), Shape::Spatial(o)) => (i, o),
                        _ => unreachable!(),
                    };
                    let seg = layout.segment_of_layer(idx).expect("conv has a segment");
                    Node::Conv(ConvGeom {
                        offset: seg.offset,
                        in_h: ih,
                        in_w: iw,
                        in_c: ic,
                        kh: *kh,
                        kw: *kw,
                        filters: *filters,
                        out_h: oh,
                        out_w: ow,
                    })
                }
                LayerSpec::MaxPool2x2 | LayerSpec::AvgPool2x2 => {
                    let ([ih, iw, c], [oh, ow, _]) = match (prev, shapes[idx]) {
                        (Shape::Spatial(i), Shape::Spatial(o)) => (i, o),
                        _ => unreachable!(),
                    };
                    let g = PoolGeom {
                        in_h: ih,
                        in_w: iw,
                        c,
                        out_h: oh,
                        out_w: ow,
                    };
                    if matches!(layer, LayerSpec::MaxPool2x2) {
                        Node::MaxPool(g)
                    } else {
                        Node::AvgPool(g)
                    }
                }
                LayerSpec::Dense { units } => {
                    let seg = layout.segment_of_layer(idx).expect("dense has a segment");
                    Node::Dense {
                        offset: seg.offset,
                        in_dim: prev.num_elements(),
                        out_dim: *units,
                        relu: idx != last,
                    }
                }
                LayerSpec::Dropout { rate } => Node::Dropout {
                    rate: *rate,
                    feat: prev.num_elements(),
                },
                LayerSpec::Flatten | LayerSpec::Reshape { .. } => Node::Noop,
            };
            nodes.push(node);
            prev = shapes[idx];
        }
        let out_dim = prev.num_elements();
        let [h, w, c] = net.input_shape;
        Ok(Self {
            nodes,
            loss: net.loss,
            in_features: h * w * c,
            out_dim,
            layout,
            feat_in,
        })
    }

    /// Runs nodes `from..` on one chunk, producing output probabilities.
    /// Optionally captures the activation entering `capture_at`, and applies
    /// precomputed dropout masks (train mode) when given.
    pub fn run_chunk(
        &self,
        params: &[f64],
        input: Array2<f64>,
        from: usize,
        capture_at: Option<usize>,
        masks: Option<&ChunkMasks<'_>>,
    ) -> (Array2<f64>, Option<Array2<f64>>) {
        let mut act = input;
        let mut captured = None;
        for (idx, node) in self.nodes.iter().enumerate().skip(from) {
            if capture_at == Some(idx) {
                captured = Some(act.clone());
            }
            act = match node {
                Node::Conv(g) => conv_forward(params, g, &act),
                Node::MaxPool(g) => max_pool_forward(g, &act, None),
                Node::AvgPool(g) => avg_pool_forward(g, &act),
                Node::Dense {
                    offset,
                    in_dim,
                    out_dim,
                    relu,
                } => dense_forward(params, *offset, *in_dim, *out_dim, *relu, &act),
                Node::Dropout { .. } => match masks {
                    Some(m) => {
                        let mask = m.mask_for_node(idx);
                        let mut a = act;
                        a.as_slice_mut()
                            .expect("standard layout")
                            .iter_mut()
                            .zip(mask)
                            .for_each(|(v, s)| *v *= s);
                        a
                    }
                    None => act,
                },
                Node::Noop => act,
            };
        }
        (output_probs(self.loss, act), captured)
    }
}

/// Dropout multipliers for every dropout node, whole batch, drawn upfront in
/// node order so results do not depend on how the batch is chunked.
pub(crate) struct BatchMasks {
    /// (node index, multipliers `[batch * feat]`)
    masks: Vec<(usize, Vec<f64>)>,
    feats: Vec<usize>,
}

impl BatchMasks {
    pub fn draw(net: &CompiledNet, batch: usize, rng: &mut dyn rand::RngCore) -> Self {
        let mut masks = Vec::new();
        let mut feats = Vec::new();
        for (idx, node) in net.nodes.iter().enumerate() {
            if let Node::Dropout { rate, feat } = node {
                let scale = 1.0 / (1.0 - rate);
                let mut m = Vec::with_capacity(batch * feat);
                for _ in 0..batch * feat {
                    m.push(if rng.random::<f64>() < *rate { 0.0 } else { scale });
                }
                masks.push((idx, m));
                feats.push(*feat);
            }
        }
        Self { masks, feats }
    }

    pub fn chunk(&self, start: usize, len: usize) -> ChunkMasks<'_> {
        ChunkMasks {
            batch: self,
            start,
            len,
        }
    }
}

pub(crate) struct ChunkMasks<'a> {
    batch: &'a BatchMasks,
    start: usize,
    len: usize,
}

impl ChunkMasks<'_> {
    pub(crate) fn mask_for_node(&self, node_idx: usize) -> &[f64] {
        let pos = self
            .batch
            .masks
            .iter()
            .position(|(i, _)| *i == node_idx)
            .expect("mask exists for dropout node");
        let feat = self.batch.feats[pos];
        &self.batch.masks[pos].1[self.start * feat..(self.start + self.len) * feat]
    }
}

pub(crate) fn im2col(g: &ConvGeom, input: &Array2<f64>, cols: &mut Vec<f64>) {
    let b = input.nrows();
    let k = g.patch_len();
    let row_len = g.kw * g.in_c;
    cols.clear();
    cols.resize(b * g.out_positions() * k, 0.0);
    let src_all = input.as_slice().expect("standard layout");
    let stride_in = g.in_h * g.in_w * g.in_c;
    for bi in 0..b {
        let src = &src_all[bi * stride_in..(bi + 1) * stride_in];
        for oi in 0..g.out_h {
            for oj in 0..g.out_w {
                let dst_base = ((bi * g.out_h + oi) * g.out_w + oj) * k;
                let src_col = oj * g.in_c;
                for di in 0..g.kh {
                    let s = ((oi + di) * g.in_w) * g.in_c + src_col;
                    let d = dst_base + di * row_len;
                    cols[d..d + row_len].copy_from_slice(&src[s..s + row_len]);
                }
            }
        }
    }
}

pub(crate) fn conv_forward(params: &[f64], g: &ConvGeom, input: &Array2<f64>) -> Array2<f64> {
    let b = input.nrows();
    let k = g.patch_len();
    let mut cols = Vec::new();
    im2col(g, input, &mut cols);
    let cols = Array2::from_shape_vec((b * g.out_positions(), k), cols).expect("im2col shape");
    let w = ArrayView2::from_shape((g.filters, k), &params[g.offset..g.offset + g.filters * k])
        .expect("weight shape");
    let bias = &params[g.offset + g.filters * k..g.offset + g.filters * k + g.filters];
    let mut out = Array2::zeros((b * g.out_positions(), g.filters));
    general_mat_mul(1.0, &cols, &w.t(), 0.0, &mut out);
    let mut flat = out.into_raw_vec_and_offset().0;
    for row in flat.chunks_exact_mut(g.filters) {
        for (v, bv) in row.iter_mut().zip(bias) {
            *v = (*v + bv).max(0.0); // bias + ReLU
        }
    }
    Array2::from_shape_vec((b, g.out_positions() * g.filters), flat).expect("conv output shape")
}

pub(crate) fn dense_forward(
    params: &[f64],
    offset: usize,
    in_dim: usize,
    out_dim: usize,
    relu: bool,
    input: &Array2<f64>,
) -> Array2<f64> {
    let b = input.nrows();
    let w = ArrayView2::from_shape((out_dim, in_dim), &params[offset..offset + out_dim * in_dim])
        .expect("weight shape");
    let bias = &params[offset + out_dim * in_dim..offset + out_dim * in_dim + out_dim];
    let mut out = Array2::zeros((b, out_dim));
    general_mat_mul(1.0, input, &w.t(), 0.0, &mut out);
    let flat = out.as_slice_mut().expect("standard layout");
    for row in flat.chunks_exact_mut(out_dim) {
        for (v, bv) in row.iter_mut().zip(bias) {
            *v += bv;
            if relu && *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    out
}

fn max_pool_forward(
    g: &PoolGeom,
    input: &Array2<f64>,
    mut argmax: Option<&mut Vec<u32>>,
) -> Array2<f64> {
    let b = input.nrows();
    let src_all = input.as_slice().expect("standard layout");
    let in_stride = g.in_h * g.in_w * g.c;
    let out_feat = g.out_h * g.out_w * g.c;
    let mut out = vec![0.0f64; b * out_feat];
    if let Some(am) = argmax.as_deref_mut() {
        am.clear();
        am.resize(b * out_feat, 0);
    }
    for bi in 0..b {
        let src = &src_all[bi * in_stride..(bi + 1) * in_stride];
        for oi in 0..g.out_h {
            for oj in 0..g.out_w {
                let dst = (bi * out_feat) + (oi * g.out_w + oj) * g.c;
                // offsets of the 4 window cells, scan order fixes tie-breaks
                let cell = [
                    ((2 * oi) * g.in_w + 2 * oj) * g.c,
                    ((2 * oi) * g.in_w + 2 * oj + 1) * g.c,
                    ((2 * oi + 1) * g.in_w + 2 * oj) * g.c,
                    ((2 * oi + 1) * g.in_w + 2 * oj + 1) * g.c,
                ];
                for ch in 0..g.c {
                    let mut best = src[cell[0] + ch];
                    let mut besti = 0u32;
                    for (ci, &off) in cell.iter().enumerate().skip(1) {
                        let v = src[off + ch];
                        if v > best {
                            best = v;
                            besti = ci as u32;
                        }
                    }
                    out[dst + ch] = best;
                    if let Some(am) = argmax.as_deref_mut() {
                        // offset within this example's input map
                        am[dst + ch] = (cell[besti as usize] + ch) as u32;
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((b, out_feat), out).expect("pool output shape")
}

pub(crate) fn avg_pool_forward(g: &PoolGeom, input: &Array2<f64>) -> Array2<f64> {
    let b = input.nrows();
    let src_all = input.as_slice().expect("standard layout");
    let in_stride = g.in_h * g.in_w * g.c;
    let out_feat = g.out_h * g.out_w * g.c;
    let mut out = vec![0.0f64; b * out_feat];
    for bi in 0..b {
        let src = &src_all[bi * in_stride..(bi + 1) * in_stride];
        for oi in 0..g.out_h {
            for oj in 0..g.out_w {
                let dst = (bi * out_feat) + (oi * g.out_w + oj) * g.c;
                let cell = [
                    ((2 * oi) * g.in_w + 2 * oj) * g.c,
                    ((2 * oi) * g.in_w + 2 * oj + 1) * g.c,
                    ((2 * oi + 1) * g.in_w + 2 * oj) * g.c,
                    ((2 * oi + 1) * g.in_w + 2 * oj + 1) * g.c,
                ];
                for ch in 0..g.c {
                    out[dst + ch] =
                        0.25 * (src[cell[0] + ch] + src[cell[1] + ch] + src[cell[2] + ch] + src[cell[3] + ch]);
                }
            }
        }
    }
    Array2::from_shape_vec((b, out_feat), out).expect("pool output shape")
}

/// Applies the output nonlinearity: row softmax for categorical, sigmoid for
/// binary.
pub(crate) fn output_probs(loss: LossKind, mut logits: Array2<f64>) -> Array2<f64> {
    let cols = logits.ncols();
    let flat = logits.as_slice_mut().expect("standard layout");
    match loss {
        LossKind::CategoricalCe => {
            for row in flat.chunks_exact_mut(cols) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
        }
        LossKind::BinaryCe => {
            for v in flat.iter_mut() {
                *v = 1.0 / (1.0 + (-*v).exp());
            }
        }
    }
    logits
}

/// Sum (not mean) of per-example cross-entropy over the chunk.
pub(crate) fn loss_sum(loss: LossKind, probs: &Array2<f64>, labels: &[u32]) -> f64 {
    let cols = probs.ncols();
    let flat = probs.as_slice().expect("standard layout");
    let mut total = 0.0;
    match loss {
        LossKind::CategoricalCe => {
            for (row, &y) in flat.chunks_exact(cols).zip(labels) {
                let p = row[y as usize].clamp(PROB_EPS, 1.0 - PROB_EPS);
                total -= p.ln();
            }
        }
        LossKind::BinaryCe => {
            for (row, &y) in flat.chunks_exact(cols).zip(labels) {
                let p = row[0].clamp(PROB_EPS, 1.0 - PROB_EPS);
                total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
            }
        }
    }
    total
}

/// Number of correct predictions in the chunk. Argmax ties break to the
/// lowest class index; binary predicts class 1 when `p >= 0.5`.
pub(crate) fn hit_count(loss: LossKind, probs: &Array2<f64>, labels: &[u32]) -> usize {
    let cols = probs.ncols();
    let flat = probs.as_slice().expect("standard layout");
    let mut hits = 0;
    match loss {
        LossKind::CategoricalCe => {
            for (row, &y) in flat.chunks_exact(cols).zip(labels) {
                let mut best = row[0];
                let mut arg = 0usize;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        arg = j;
                    }
                }
                if arg == y as usize {
                    hits += 1;
                }
            }
        }
        LossKind::BinaryCe => {
            for (row, &y) in flat.chunks_exact(cols).zip(labels) {
                let pred = u32::from(row[0] >= 0.5);
                if pred == y {
                    hits += 1;
                }
            }
        }
    }
    hits
}

fn batch_view<'a>(batch: &'a Tensor, in_features: usize) -> Result<ArrayView2<'a, f64>> {
    let shape = batch.shape();
    if shape.len() != 4 {
        return Err(Error::shape(format!("batch must be [B, H, W, C], got {shape:?}")));
    }
    let b = shape[0];
    let feat = shape[1] * shape[2] * shape[3];
    if feat != in_features {
        return Err(Error::shape(format!(
            "batch features {feat} do not match network input {in_features}"
        )));
    }
    Ok(ArrayView2::from_shape((b, feat), batch.data()).expect("contiguous batch"))
}

fn check_params(net: &CompiledNet, params: &ParameterVector) -> Result<()> {
    if params.values.len() != net.layout.total {
        return Err(Error::shape(format!(
            "parameter vector length {} does not match layout total {}",
            params.values.len(),
            net.layout.total
        )));
    }
    Ok(())
}

/// Runs the network on a batch and returns per-example class probabilities
/// (`[B, units]`; rows of a softmax head sum to 1).
///
/// In `Train` mode each dropout unit is zeroed with its layer's rate and the
/// survivors rescaled by `1/(1-rate)`, using the caller's generator; in
/// `Eval` mode dropout is the identity and the pass is a pure function.
pub fn forward(
    net: &NetworkSpec,
    params: &ParameterVector,
    batch: &Tensor,
    mode: Mode,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<Tensor> {
    let compiled = CompiledNet::compile(net)?;
    check_params(&compiled, params)?;
    let input = batch_view(batch, compiled.in_features)?;
    let b = input.nrows();
    let masks = match (mode, rng) {
        (Mode::Train, Some(rng)) => Some(BatchMasks::draw(&compiled, b, rng)),
        (Mode::Train, None) => {
            return Err(Error::config(
                "train-mode forward requires a caller-supplied rng".to_string(),
            ))
        }
        (Mode::Eval, _) => None,
    };
    let mut out = Vec::with_capacity(b * compiled.out_dim);
    for start in (0..b).step_by(CHUNK) {
        let len = CHUNK.min(b - start);
        let chunk = input.slice(ndarray::s![start..start + len, ..]).to_owned();
        let cm = masks.as_ref().map(|m| m.chunk(start, len));
        let (probs, _) = compiled.run_chunk(&params.values, chunk, 0, None, cm.as_ref());
        out.extend_from_slice(probs.as_slice().expect("standard layout"));
    }
    Tensor::new(vec![b, compiled.out_dim], out)
}

/// Chunked, order-fixed reduction over a whole dataset.
fn dataset_reduce(
    compiled: &CompiledNet,
    params: &[f64],
    data: &Dataset,
) -> Result<(f64, usize)> {
    if data.example_len() != compiled.in_features {
        return Err(Error::shape(format!(
            "dataset features {} do not match network input {}",
            data.example_len(),
            compiled.in_features
        )));
    }
    let m = data.len();
    let inputs = ArrayView2::from_shape((m, data.example_len()), data.inputs.data())
        .expect("contiguous dataset");
    let starts: Vec<usize> = (0..m).step_by(CHUNK).collect();
    let partials: Vec<(f64, usize)> = starts
        .par_iter()
        .map(|&start| {
            let len = CHUNK.min(m - start);
            let chunk = inputs.slice(ndarray::s![start..start + len, ..]).to_owned();
            let (probs, _) = compiled.run_chunk(params, chunk, 0, None, None);
            let labels = &data.labels[start..start + len];
            (
                loss_sum(compiled.loss, &probs, labels),
                hit_count(compiled.loss, &probs, labels),
            )
        })
        .collect();
    let mut loss = 0.0;
    let mut hits = 0usize;
    for (l, h) in partials {
        loss += l;
        hits += h;
    }
    Ok((loss, hits))
}

/// Mean cross-entropy over all examples, in `Eval` mode.
pub fn aggregate_loss(net: &NetworkSpec, params: &ParameterVector, data: &Dataset) -> Result<f64> {
    let compiled = CompiledNet::compile(net)?;
    check_params(&compiled, params)?;
    let (loss, _) = dataset_reduce(&compiled, &params.values, data)?;
    Ok(loss / data.len() as f64)
}

/// Fraction of examples classified correctly, in `Eval` mode.
pub fn accuracy(net: &NetworkSpec, params: &ParameterVector, data: &Dataset) -> Result<f64> {
    let compiled = CompiledNet::compile(net)?;
    check_params(&compiled, params)?;
    let (_, hits) = dataset_reduce(&compiled, &params.values, data)?;
    Ok(hits as f64 / data.len() as f64)
}

/// Reusable evaluation context over one dataset: the hot path of every
/// black-box objective.
pub struct Evaluator<'a> {
    pub(crate) compiled: CompiledNet,
    data: &'a Dataset,
}

impl<'a> Evaluator<'a> {
    pub fn new(net: &NetworkSpec, data: &'a Dataset) -> Result<Self> {
        let compiled = CompiledNet::compile(net)?;
        if data.example_len() != compiled.in_features {
            return Err(Error::shape(format!(
                "dataset features {} do not match network input {}",
                data.example_len(),
                compiled.in_features
            )));
        }
        Ok(Self { compiled, data })
    }

    pub fn num_examples(&self) -> usize {
        self.data.len()
    }

    /// Mean loss in `Eval` mode.
    pub fn loss(&self, params: &[f64]) -> f64 {
        let (loss, _) = dataset_reduce(&self.compiled, params, self.data).expect("checked at new");
        loss / self.data.len() as f64
    }

    /// Mean loss and accuracy in one pass.
    pub fn loss_and_acc(&self, params: &[f64]) -> (f64, f64) {
        let (loss, hits) =
            dataset_reduce(&self.compiled, params, self.data).expect("checked at new");
        let m = self.data.len() as f64;
        (loss / m, hits as f64 / m)
    }

    /// One pass that also captures the activation entering `node` for every
    /// example; used to freeze the prefix when a schedule restricts
    /// optimization to one layer.
    pub fn loss_acc_capture(&self, params: &[f64], node: usize) -> (f64, f64, Array2<f64>) {
        let m = self.data.len();
        let inputs = ArrayView2::from_shape((m, self.data.example_len()), self.data.inputs.data())
            .expect("contiguous dataset");
        let starts: Vec<usize> = (0..m).step_by(CHUNK).collect();
        let partials: Vec<(f64, usize, Array2<f64>)> = starts
            .par_iter()
            .map(|&start| {
                let len = CHUNK.min(m - start);
                let chunk = inputs.slice(ndarray::s![start..start + len, ..]).to_owned();
                let (probs, cap) =
                    self.compiled
                        .run_chunk(params, chunk, 0, Some(node), None);
                let labels = &self.data.labels[start..start + len];
                (
                    loss_sum(self.compiled.loss, &probs, labels),
                    hit_count(self.compiled.loss, &probs, labels),
                    cap.expect("capture requested"),
                )
            })
            .collect();
        let feat = self.compiled.feat_in[node];
        let mut cache = Array2::zeros((m, feat));
        let mut loss = 0.0;
        let mut hits = 0usize;
        let mut row = 0usize;
        for (l, h, cap) in partials {
            loss += l;
            hits += h;
            let n = cap.nrows();
            cache
                .slice_mut(ndarray::s![row..row + n, ..])
                .assign(&cap);
            row += n;
        }
        let mf = m as f64;
        (loss / mf, hits as f64 / mf, cache)
    }

    /// Mean loss of the suffix starting at `node`, reusing a captured prefix
    /// activation.
    pub fn suffix_loss(&self, params: &[f64], node: usize, cache: &Array2<f64>) -> f64 {
        let m = cache.nrows();
        let starts: Vec<usize> = (0..m).step_by(CHUNK).collect();
        let partials: Vec<f64> = starts
            .par_iter()
            .map(|&start| {
                let len = CHUNK.min(m - start);
                let chunk = cache.slice(ndarray::s![start..start + len, ..]).to_owned();
                let (probs, _) = self.compiled.run_chunk(params, chunk, node, None, None);
                loss_sum(self.compiled.loss, &probs, &self.data.labels[start..start + len])
            })
            .collect();
        partials.iter().sum::<f64>() / m as f64
    }
}

// grad.rs reuses the pool kernels with argmax recording.
pub(crate) fn max_pool_with_argmax(
    g: &PoolGeom,
    input: &Array2<f64>,
    argmax: &mut Vec<u32>,
) -> Array2<f64> {
    max_pool_forward(g, input, Some(argmax))
}
