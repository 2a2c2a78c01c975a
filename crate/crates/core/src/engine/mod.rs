//! Execution of packed models with per-pattern specialized inner loops, a
//! dense f32 reference path, and equivalence verification.
//!
//! Both paths run the same fixed pipeline: conv, ReLU, 2x2 max pool after
//! every conv except the last, then the linear classifier on the flattened
//! features. The dense path reads full 3x3 kernels in original filter
//! order; the sparse path walks each packed filter's pattern groups and
//! issues exactly four multiply-accumulates per kept kernel and output
//! pixel, with the four input offsets taken from a precomputed
//! [`PatternKernelTable`] — no per-kernel branching on the hot path.
//!
//! Work is distributed over whole output filters, round-robin over the
//! reordered filter list, so every filter's accumulation order (and thus
//! its result) is independent of the thread count.

mod bench;

pub use bench::{bench, BenchReport, BenchRow};

use crate::nn::{Layer, Network};
use crate::pack::{PackedLayer, PackedModel};
use crate::pattern::{PatternLibrary, KERNEL_SIDE};
use crate::{Error, Result};

/// A batch of f32 inputs, `[B, C, H, W]` row-major.
#[derive(Clone, Debug)]
pub struct F32Batch {
    pub batch: usize,
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl F32Batch {
    pub fn new(batch: usize, channels: usize, h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != batch * channels * h * w {
            return Err(Error::ShapeMismatch {
                context: "f32 batch",
                left: vec![batch, channels, h, w],
                right: vec![data.len()],
            });
        }
        Ok(F32Batch {
            batch,
            channels,
            h,
            w,
            data,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch {
                context: "f32 batch shape",
                left: shape.to_vec(),
                right: vec![0; 4],
            });
        }
        Self::new(
            shape[0],
            shape[1],
            shape[2],
            shape[3],
            data.iter().map(|&v| v as f32).collect(),
        )
    }

    fn plane(&self, b: usize, c: usize) -> &[f32] {
        let off = (b * self.channels + c) * self.h * self.w;
        &self.data[off..off + self.h * self.w]
    }
}

/// Per-pattern data-access table: the four (row, col) tap positions of each
/// library mask in ascending bit order, plus their flattened strides for
/// one padded input width.
#[derive(Clone, Debug)]
pub struct PatternKernelTable {
    pub padded_width: usize,
    pub taps_rc: Vec<[(u8, u8); 4]>,
    pub taps_flat: Vec<[usize; 4]>,
}

/// Builds the access table for a library at the given padded input width.
pub fn specialize_patterns(
    library: &PatternLibrary,
    padded_width: usize,
) -> Result<PatternKernelTable> {
    if library.k() > crate::pack::MAX_PACKED_PATTERNS {
        return Err(Error::InvalidLibrary(format!(
            "cannot specialize K={} > {}",
            library.k(),
            crate::pack::MAX_PACKED_PATTERNS
        )));
    }
    if padded_width < KERNEL_SIDE {
        return Err(Error::Infeasible(format!(
            "padded width {padded_width} below kernel size"
        )));
    }
    let mut taps_rc = Vec::with_capacity(library.k());
    let mut taps_flat = Vec::with_capacity(library.k());
    for mask in library.masks() {
        let mut rc = [(0u8, 0u8); 4];
        let mut flat = [0usize; 4];
        for (i, (r, c)) in mask.positions().into_iter().enumerate() {
            rc[i] = (r as u8, c as u8);
            flat[i] = r * padded_width + c;
        }
        taps_rc.push(rc);
        taps_flat.push(flat);
    }
    Ok(PatternKernelTable {
        padded_width,
        taps_rc,
        taps_flat,
    })
}

/// Execution counters. The multiply count on the sparse path is exact:
/// 4 * kept kernels * output pixels, accumulated per record.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExecStats {
    pub multiplies: u64,
}

/// Dense f32 model in the canonical pipeline form. Kernels stay in
/// original filter order; summation runs channel-major then tap-major
/// (row-major over the 3x3), accumulated per output plane.
#[derive(Clone, Debug)]
pub struct DenseModel {
    layers: Vec<DenseConv>,
    classifier_dims: (usize, usize),
    classifier_weights: Vec<f32>,
    classifier_bias: Vec<f32>,
}

#[derive(Clone, Debug)]
struct DenseConv {
    filters: usize,
    channels: usize,
    stride: usize,
    pad: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl DenseModel {
    /// Casts a canonical-pipeline network to f32.
    pub fn from_network(net: &Network) -> Result<Self> {
        let mut layers = Vec::new();
        let mut convs = Vec::new();
        for layer in &net.layers {
            if let Layer::Conv(c) = layer {
                convs.push(c);
            }
        }
        if convs.is_empty() {
            return Err(Error::Infeasible("dense model needs conv layers".into()));
        }
        for conv in convs {
            layers.push(DenseConv {
                filters: conv.filters(),
                channels: conv.channels(),
                stride: conv.stride,
                pad: conv.pad,
                weights: conv.weights.data().iter().map(|&v| v as f32).collect(),
                bias: conv.bias.data().iter().map(|&v| v as f32).collect(),
            });
        }
        Ok(DenseModel {
            layers,
            classifier_dims: (net.classifier.outputs(), net.classifier.inputs()),
            classifier_weights: net
                .classifier
                .weights
                .data()
                .iter()
                .map(|&v| v as f32)
                .collect(),
            classifier_bias: net.classifier.bias.data().iter().map(|&v| v as f32).collect(),
        })
    }

    pub fn conv_layer_count(&self) -> usize {
        self.layers.len()
    }
}

fn pad_plane_f32(src: &[f32], h: usize, w: usize, pad: usize, dst: &mut [f32]) {
    let wp = w + 2 * pad;
    dst.fill(0.0);
    for y in 0..h {
        let drow = (y + pad) * wp + pad;
        dst[drow..drow + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
}

fn relu_inplace(data: &mut [f32]) {
    for v in data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

fn maxpool2_f32(src: &[f32], channels: usize, h: usize, w: usize) -> (Vec<f32>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0f32; channels * oh * ow];
    for c in 0..channels {
        let plane = &src[c * h * w..(c + 1) * h * w];
        let oplane = &mut out[c * oh * ow..(c + 1) * oh * ow];
        for y in 0..oh {
            for x in 0..ow {
                let i = (2 * y) * w + 2 * x;
                let m = plane[i]
                    .max(plane[i + 1])
                    .max(plane[i + w])
                    .max(plane[i + w + 1]);
                oplane[y * ow + x] = m;
            }
        }
    }
    (out, oh, ow)
}

fn classify(weights: &[f32], bias: &[f32], dims: (usize, usize), features: &[f32]) -> Vec<f32> {
    let (out_n, in_n) = dims;
    let mut out = vec![0f32; out_n];
    for o in 0..out_n {
        let row = &weights[o * in_n..(o + 1) * in_n];
        let mut acc = bias[o];
        for i in 0..in_n {
            acc += row[i] * features[i];
        }
        out[o] = acc;
    }
    out
}

/// Intermediate per-block activations (after conv+ReLU+pool) plus logits,
/// for one batch element. Used by verification.
pub struct StageOutputs {
    pub blocks: Vec<Vec<f32>>,
    pub block_dims: Vec<(usize, usize, usize)>,
    pub logits: Vec<f32>,
}

fn dense_forward_one(model: &DenseModel, input: &F32Batch, b: usize) -> Result<StageOutputs> {
    let mut cur: Vec<f32> = (0..input.channels)
        .flat_map(|c| input.plane(b, c).to_vec())
        .collect();
    let (mut ch, mut h, mut w) = (input.channels, input.h, input.w);
    let mut blocks = Vec::new();
    let mut dims = Vec::new();

    for (li, conv) in model.layers.iter().enumerate() {
        if ch != conv.channels {
            return Err(Error::ShapeMismatch {
                context: "dense layer input channels",
                left: vec![ch],
                right: vec![conv.channels],
            });
        }
        let (hp, wp) = (h + 2 * conv.pad, w + 2 * conv.pad);
        let (oh, ow) = (
            (hp - KERNEL_SIDE) / conv.stride + 1,
            (wp - KERNEL_SIDE) / conv.stride + 1,
        );
        let mut padded = vec![0f32; ch * hp * wp];
        for c in 0..ch {
            pad_plane_f32(
                &cur[c * h * w..(c + 1) * h * w],
                h,
                w,
                conv.pad,
                &mut padded[c * hp * wp..(c + 1) * hp * wp],
            );
        }
        let mut out = vec![0f32; conv.filters * oh * ow];
        for f in 0..conv.filters {
            let plane = &mut out[f * oh * ow..(f + 1) * oh * ow];
            plane.fill(conv.bias[f]);
            for c in 0..ch {
                let pad_plane = &padded[c * hp * wp..(c + 1) * hp * wp];
                let kernel = &conv.weights[(f * ch + c) * 9..(f * ch + c + 1) * 9];
                for ky in 0..KERNEL_SIDE {
                    for kx in 0..KERNEL_SIDE {
                        let wv = kernel[ky * KERNEL_SIDE + kx];
                        for y in 0..oh {
                            let prow = (y * conv.stride + ky) * wp + kx;
                            let orow = y * ow;
                            for x in 0..ow {
                                plane[orow + x] += wv * pad_plane[prow + x * conv.stride];
                            }
                        }
                    }
                }
            }
        }
        relu_inplace(&mut out);
        let (mut bh, mut bw) = (oh, ow);
        let mut block = out;
        if li + 1 < model.layers.len() {
            let (pooled, ph, pw) = maxpool2_f32(&block, conv.filters, oh, ow);
            block = pooled;
            bh = ph;
            bw = pw;
        }
        blocks.push(block.clone());
        dims.push((conv.filters, bh, bw));
        cur = block;
        ch = conv.filters;
        h = bh;
        w = bw;
    }

    if ch * h * w != model.classifier_dims.1 {
        return Err(Error::ShapeMismatch {
            context: "dense classifier input",
            left: vec![ch * h * w],
            right: vec![model.classifier_dims.1],
        });
    }
    let logits = classify(
        &model.classifier_weights,
        &model.classifier_bias,
        model.classifier_dims,
        &cur,
    );
    Ok(StageOutputs {
        blocks,
        block_dims: dims,
        logits,
    })
}

/// Dense reference execution; returns logits `[B * classes]`.
pub fn execute_dense(model: &DenseModel, input: &F32Batch) -> Result<Vec<f32>> {
    let classes = model.classifier_dims.0;
    let mut out = Vec::with_capacity(input.batch * classes);
    for b in 0..input.batch {
        out.extend(dense_forward_one(model, input, b)?.logits);
    }
    Ok(out)
}

/// Shared mutable output planes for the per-filter worker threads. Each
/// packed filter position is owned by exactly one thread, so writes are
/// disjoint by construction.
struct FilterPlanes(*mut f32);
unsafe impl Send for FilterPlanes {}
unsafe impl Sync for FilterPlanes {}

struct SparseLayerCtx<'a> {
    layer: &'a PackedLayer,
    table: PatternKernelTable,
    record_starts: Vec<usize>,
}

fn sparse_layer_contexts(packed: &PackedModel, input_w: usize) -> Result<Vec<SparseLayerCtx<'_>>> {
    let mut out = Vec::new();
    let mut w = input_w;
    for (li, layer) in packed.layers.iter().enumerate() {
        let wp = w + 2 * layer.pad;
        let table = specialize_patterns(&layer.library, wp)?;
        let mut starts = Vec::with_capacity(layer.filters);
        let mut acc = 0usize;
        for &n in &layer.filter_records {
            starts.push(acc);
            acc += n as usize;
        }
        out.push(SparseLayerCtx {
            layer,
            table,
            record_starts: starts,
        });
        let ow = (wp - KERNEL_SIDE) / layer.stride + 1;
        w = if li + 1 < packed.layers.len() { ow / 2 } else { ow };
    }
    Ok(out)
}

/// One filter's output plane: bias, then one fused 4-tap loop per record.
/// Records are walked in pattern-group order; the inner loop body is
/// identical for every kernel in a group (same four offsets), so there is
/// no per-element branching.
#[inline]
fn sparse_filter_plane(
    ctx: &SparseLayerCtx<'_>,
    pos: usize,
    padded: &[f32],
    hp: usize,
    wp: usize,
    oh: usize,
    ow: usize,
    plane: &mut [f32],
    stats: &mut ExecStats,
) {
    let layer = ctx.layer;
    let stride = layer.stride;
    plane.fill(layer.bias[pos]);
    let start = ctx.record_starts[pos];
    let count = layer.filter_records[pos] as usize;
    for ri in start..start + count {
        let rec = layer.records[ri];
        let taps = ctx.table.taps_flat[rec.pattern as usize];
        let w = &layer.weights[ri * 4..ri * 4 + 4];
        let (w0, w1, w2, w3) = (w[0], w[1], w[2], w[3]);
        let in_plane = &padded[rec.channel as usize * hp * wp..(rec.channel as usize + 1) * hp * wp];
        for y in 0..oh {
            let prow = y * stride * wp;
            let orow = y * ow;
            for x in 0..ow {
                let base = prow + x * stride;
                plane[orow + x] += w0 * in_plane[base + taps[0]]
                    + w1 * in_plane[base + taps[1]]
                    + w2 * in_plane[base + taps[2]]
                    + w3 * in_plane[base + taps[3]];
            }
        }
        stats.multiplies += 4 * (oh * ow) as u64;
    }
}

fn sparse_forward_one(
    contexts: &[SparseLayerCtx<'_>],
    packed: &PackedModel,
    input: &F32Batch,
    b: usize,
    threads: usize,
) -> Result<(StageOutputs, ExecStats)> {
    let mut cur: Vec<f32> = (0..input.channels)
        .flat_map(|c| input.plane(b, c).to_vec())
        .collect();
    let (mut ch, mut h, mut w) = (input.channels, input.h, input.w);
    let mut blocks = Vec::new();
    let mut dims = Vec::new();
    let mut stats = ExecStats::default();

    for (li, ctx) in contexts.iter().enumerate() {
        let layer = ctx.layer;
        if ch != layer.channels {
            return Err(Error::ShapeMismatch {
                context: "sparse layer input channels",
                left: vec![ch],
                right: vec![layer.channels],
            });
        }
        let (hp, wp) = (h + 2 * layer.pad, w + 2 * layer.pad);
        debug_assert_eq!(wp, ctx.table.padded_width);
        let (oh, ow) = (
            (hp - KERNEL_SIDE) / layer.stride + 1,
            (wp - KERNEL_SIDE) / layer.stride + 1,
        );
        let mut padded = vec![0f32; ch * hp * wp];
        for c in 0..ch {
            pad_plane_f32(
                &cur[c * h * w..(c + 1) * h * w],
                h,
                w,
                layer.pad,
                &mut padded[c * hp * wp..(c + 1) * hp * wp],
            );
        }
        let mut out = vec![0f32; layer.filters * oh * ow];
        if threads <= 1 {
            for pos in 0..layer.filters {
                sparse_filter_plane(
                    ctx,
                    pos,
                    &padded,
                    hp,
                    wp,
                    oh,
                    ow,
                    &mut out[pos * oh * ow..(pos + 1) * oh * ow],
                    &mut stats,
                );
            }
        } else {
            let out_ptr = FilterPlanes(out.as_mut_ptr());
            let padded_ref = &padded;
            let plane_len = oh * ow;
            let mut worker_stats = vec![ExecStats::default(); threads];
            std::thread::scope(|scope| {
                let mut handles = Vec::new();
                for (t, wstats) in worker_stats.iter_mut().enumerate() {
                    let out_ptr = &out_ptr;
                    handles.push(scope.spawn(move || {
                        // round-robin over packed filter positions
                        let mut pos = t;
                        while pos < layer.filters {
                            // each position's plane is written by this thread only
                            let plane = unsafe {
                                std::slice::from_raw_parts_mut(
                                    out_ptr.0.add(pos * plane_len),
                                    plane_len,
                                )
                            };
                            sparse_filter_plane(
                                ctx, pos, padded_ref, hp, wp, oh, ow, plane, wstats,
                            );
                            pos += threads;
                        }
                    }));
                }
                for h in handles {
                    h.join().expect("sparse worker panicked");
                }
            });
            for s in worker_stats {
                stats.multiplies += s.multiplies;
            }
        }
        relu_inplace(&mut out);
        let (mut bh, mut bw) = (oh, ow);
        let mut block = out;
        if li + 1 < contexts.len() {
            let (pooled, ph, pw) = maxpool2_f32(&block, layer.filters, oh, ow);
            block = pooled;
            bh = ph;
            bw = pw;
        }
        blocks.push(block.clone());
        dims.push((layer.filters, bh, bw));
        cur = block;
        ch = layer.filters;
        h = bh;
        w = bw;
    }

    if ch * h * w != packed.classifier_dims.1 {
        return Err(Error::ShapeMismatch {
            context: "sparse classifier input",
            left: vec![ch * h * w],
            right: vec![packed.classifier_dims.1],
        });
    }
    let logits = classify(
        &packed.classifier_weights,
        &packed.classifier_bias,
        packed.classifier_dims,
        &cur,
    );
    Ok((
        StageOutputs {
            blocks,
            block_dims: dims,
            logits,
        },
        stats,
    ))
}

/// Sparse execution; returns logits `[B * classes]`.
pub fn execute_sparse(packed: &PackedModel, input: &F32Batch, threads: usize) -> Result<Vec<f32>> {
    Ok(execute_sparse_with_stats(packed, input, threads)?.0)
}

/// Sparse execution with the exact multiply counter.
pub fn execute_sparse_with_stats(
    packed: &PackedModel,
    input: &F32Batch,
    threads: usize,
) -> Result<(Vec<f32>, ExecStats)> {
    packed.validate()?;
    let contexts = sparse_layer_contexts(packed, input.w)?;
    let classes = packed.classifier_dims.0;
    let mut out = Vec::with_capacity(input.batch * classes);
    let mut stats = ExecStats::default();
    for b in 0..input.batch {
        let (stage, s) = sparse_forward_one(&contexts, packed, input, b, threads)?;
        out.extend(stage.logits);
        stats.multiplies += s.multiplies;
    }
    Ok((out, stats))
}

/// Maximum deviation between sparse and dense execution, relative to the
/// dense tensor's max magnitude (with a 1e-6 floor). Compares every
/// conv-block activation (accounting for the filter permutation) and the
/// final logits; returns the worst offender's coordinates.
#[derive(Clone, Debug)]
pub struct VerifyReport {
    pub max_rel_deviation: f64,
    /// (layer index or usize::MAX for logits, filter, flat pixel index)
    pub worst: (usize, usize, usize),
}

pub fn verify_equivalence(
    packed: &PackedModel,
    dense: &DenseModel,
    input: &F32Batch,
    threads: usize,
) -> Result<VerifyReport> {
    if dense.conv_layer_count() != packed.layers.len() {
        return Err(Error::ShapeMismatch {
            context: "verify layer counts",
            left: vec![dense.conv_layer_count()],
            right: vec![packed.layers.len()],
        });
    }
    let contexts = sparse_layer_contexts(packed, input.w)?;
    let mut worst = (0.0f64, (usize::MAX, 0, 0));
    for b in 0..input.batch {
        let d = dense_forward_one(dense, input, b)?;
        let (s, _) = sparse_forward_one(&contexts, packed, input, b, threads)?;
        for (li, layer) in packed.layers.iter().enumerate() {
            let (chans, bh, bw) = d.block_dims[li];
            let scale = d.blocks[li]
                .iter()
                .fold(0f32, |m, &v| m.max(v.abs()))
                .max(1e-6) as f64;
            let plane = bh * bw;
            let _ = chans;
            for pos in 0..layer.filters {
                let old_f = layer.filter_perm[pos] as usize;
                let dp = &d.blocks[li][old_f * plane..(old_f + 1) * plane];
                let sp = &s.blocks[li][pos * plane..(pos + 1) * plane];
                for (i, (&dv, &sv)) in dp.iter().zip(sp).enumerate() {
                    let rel = (dv as f64 - sv as f64).abs() / scale;
                    if rel > worst.0 {
                        worst = (rel, (li, old_f, i));
                    }
                }
            }
        }
        let scale = d
            .logits
            .iter()
            .fold(0f32, |m, &v| m.max(v.abs()))
            .max(1e-6) as f64;
        for (i, (&dv, &sv)) in d.logits.iter().zip(&s.logits).enumerate() {
            let rel = (dv as f64 - sv as f64).abs() / scale;
            if rel > worst.0 {
                worst = (rel, (usize::MAX, 0, i));
            }
        }
    }
    Ok(VerifyReport {
        max_rel_deviation: worst.0,
        worst: worst.1,
    })
}

/// Deterministic f64 checksum of a logits vector.
pub fn checksum(values: &[f32]) -> f64 {
    values.iter().map(|&v| v as f64).sum()
}
