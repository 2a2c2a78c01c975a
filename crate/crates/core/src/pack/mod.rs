//! Compile-time model transformation: filter re-ordering, kernel grouping by
//! pattern, and the compact packed layout executed by [`crate::engine`].
//!
//! Filters are sorted by their pattern-composition signature (per-pattern
//! kept-kernel counts, descending lexicographic) so filters with similar
//! work land next to each other. Within a filter, kept kernels are grouped
//! by pattern id with channels ascending, which lets the engine run one
//! branch-free inner loop per group. Filter permutations are compensated at
//! pack time by relabelling the next layer's channel indices (and the
//! classifier's column blocks), so execution never permutes data.

mod psp;

pub use psp::{read_psp, write_psp};

use crate::admm::{Assignment, ConnectivityMask};
use crate::nn::{ConvLayer, Layer, Linear, Network, Tensor};
use crate::pattern::{PatternLibrary, KERNEL_AREA, KERNEL_SIDE};
use crate::{Error, Result};

/// Largest library the packed format can address (u8 pattern ids with
/// headroom; the pipeline itself uses at most 12).
pub const MAX_PACKED_PATTERNS: usize = 16;

/// One kept kernel: which packed input channel it reads and which pattern
/// shapes its four weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelRecord {
    pub channel: u16,
    pub pattern: u8,
}

/// A conv layer in packed form. Records are stored filter-major in the
/// reordered filter order; `filter_records[p]` says how many belong to the
/// filter at packed position p. Weights hold exactly four f32 values per
/// record, in ascending mask-bit order.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedLayer {
    pub filters: usize,
    pub channels: usize,
    pub stride: usize,
    pub pad: usize,
    pub library: PatternLibrary,
    /// `filter_perm[p]` = original index of the filter at packed position p.
    pub filter_perm: Vec<u32>,
    pub filter_records: Vec<u32>,
    pub records: Vec<KernelRecord>,
    pub weights: Vec<f32>,
    /// Bias per filter, packed order.
    pub bias: Vec<f32>,
}

impl PackedLayer {
    /// Record slice of the filter at packed position p.
    pub fn records_of(&self, p: usize) -> &[KernelRecord] {
        let start: usize = self.filter_records[..p].iter().map(|&n| n as usize).sum();
        let n = self.filter_records[p] as usize;
        &self.records[start..start + n]
    }

    /// Number of pattern-id transitions in the record list of filter p
    /// (the grouping invariant bounds this by K - 1).
    pub fn pattern_transitions(&self, p: usize) -> usize {
        let recs = self.records_of(p);
        recs.windows(2).filter(|w| w[0].pattern != w[1].pattern).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.library.k() > MAX_PACKED_PATTERNS {
            return Err(Error::InvalidLibrary(format!(
                "packed library K={} exceeds {MAX_PACKED_PATTERNS}",
                self.library.k()
            )));
        }
        if self.filter_perm.len() != self.filters
            || self.filter_records.len() != self.filters
            || self.bias.len() != self.filters
        {
            return Err(Error::ShapeMismatch {
                context: "packed layer per-filter arrays",
                left: vec![
                    self.filter_perm.len(),
                    self.filter_records.len(),
                    self.bias.len(),
                ],
                right: vec![self.filters; 3],
            });
        }
        let mut seen = vec![false; self.filters];
        for &p in &self.filter_perm {
            let p = p as usize;
            if p >= self.filters || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Verification(format!(
                    "filter_perm is not a permutation of 0..{}",
                    self.filters
                )));
            }
        }
        let total: usize = self.filter_records.iter().map(|&n| n as usize).sum();
        if total != self.records.len() {
            return Err(Error::ShapeMismatch {
                context: "packed record counts",
                left: vec![total],
                right: vec![self.records.len()],
            });
        }
        if self.weights.len() != 4 * self.records.len() {
            return Err(Error::ShapeMismatch {
                context: "packed weights (4 per record)",
                left: vec![self.weights.len()],
                right: vec![4 * self.records.len()],
            });
        }
        for p in 0..self.filters {
            let recs = self.records_of(p);
            for pair in recs.windows(2) {
                if pair[1].pattern < pair[0].pattern {
                    return Err(Error::Verification(format!(
                        "filter {p}: records not grouped by pattern id"
                    )));
                }
                if pair[1].pattern == pair[0].pattern && pair[1].channel <= pair[0].channel {
                    return Err(Error::Verification(format!(
                        "filter {p}: channels not strictly increasing within a pattern group"
                    )));
                }
            }
            for r in recs {
                if r.channel as usize >= self.channels {
                    return Err(Error::IndexOutOfRange(format!(
                        "packed channel {} in a {}-channel layer",
                        r.channel, self.channels
                    )));
                }
                if r.pattern as usize >= self.library.k() {
                    return Err(Error::IndexOutOfRange(format!(
                        "packed pattern {} for K={}",
                        r.pattern,
                        self.library.k()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A packed network: conv stack plus the dense classifier head. The trunk
/// pipeline is fixed: each conv is followed by ReLU, and by a 2x2 max pool
/// except after the last conv; the classifier consumes the flattened
/// features in packed channel order.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedModel {
    pub layers: Vec<PackedLayer>,
    /// Classifier weights `[out, in]` row-major and bias, f32, columns
    /// already permuted to packed channel order.
    pub classifier_dims: (usize, usize),
    pub classifier_weights: Vec<f32>,
    pub classifier_bias: Vec<f32>,
}

impl PackedModel {
    pub fn validate(&self) -> Result<()> {
        for layer in &self.layers {
            layer.validate()?;
        }
        let (out, inp) = self.classifier_dims;
        if self.classifier_weights.len() != out * inp || self.classifier_bias.len() != out {
            return Err(Error::ShapeMismatch {
                context: "packed classifier",
                left: vec![self.classifier_weights.len(), self.classifier_bias.len()],
                right: vec![out * inp, out],
            });
        }
        Ok(())
    }

    pub fn kept_kernels(&self) -> usize {
        self.layers.iter().map(|l| l.records.len()).sum()
    }

    /// CRC32 of the library JSON of each layer, a cheap identity for logs.
    pub fn library_id(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for layer in &self.layers {
            h.update(layer.library.to_json().as_bytes());
        }
        h.finalize()
    }
}

/// Pattern-composition signature of one filter: kept-kernel count per
/// pattern id.
fn signature(
    assignment: &[u8],
    kept: &[bool],
    channels: usize,
    filter: usize,
    k: usize,
) -> Vec<u32> {
    let mut sig = vec![0u32; k];
    for c in 0..channels {
        let n = filter * channels + c;
        if kept[n] {
            sig[assignment[n] as usize] += 1;
        }
    }
    sig
}

/// Sorts a layer's filters by descending lexicographic signature; equal
/// signatures keep their original order. Returns `perm[p] = old index`.
pub fn reorder_filters(
    layer: &ConvLayer,
    assignment: &[u8],
    kept: &[bool],
    k: usize,
) -> Result<Vec<u32>> {
    let (filters, channels) = (layer.filters(), layer.channels());
    if assignment.len() != filters * channels || kept.len() != filters * channels {
        return Err(Error::ShapeMismatch {
            context: "reorder assignment/kept lengths",
            left: vec![assignment.len(), kept.len()],
            right: vec![filters * channels; 2],
        });
    }
    let sigs: Vec<Vec<u32>> = (0..filters)
        .map(|f| signature(assignment, kept, channels, f, k))
        .collect();
    let mut perm: Vec<u32> = (0..filters as u32).collect();
    perm.sort_by(|&a, &b| sigs[b as usize].cmp(&sigs[a as usize]));
    Ok(perm)
}

/// Checks that `net` is the canonical packed pipeline: conv-ReLU blocks
/// with a 2x2 max pool after every conv except the last.
fn check_trunk(net: &Network) -> Result<Vec<&ConvLayer>> {
    let convs = net.conv_layers();
    if convs.is_empty() {
        return Err(Error::Infeasible("nothing to pack: no conv layers".into()));
    }
    let mut expect = Vec::new();
    for i in 0..convs.len() {
        expect.push(0u8); // conv
        expect.push(1); // relu
        if i + 1 < convs.len() {
            expect.push(2); // pool
        }
    }
    let got: Vec<u8> = net
        .layers
        .iter()
        .map(|l| match l {
            Layer::Conv(_) => 0,
            Layer::Relu => 1,
            Layer::MaxPool2 => 2,
        })
        .collect();
    if got != expect {
        return Err(Error::Infeasible(
            "packed pipeline expects conv-ReLU(-pool) blocks with a pool after every conv except the last"
                .into(),
        ));
    }
    Ok(convs)
}

/// Packs a pattern-pruned dense network. Every kept kernel must already be
/// zero outside its assigned mask; a nonzero weight outside the mask means
/// the model was not hard-pruned and is rejected with its coordinates.
pub fn pack(
    net: &Network,
    library: &PatternLibrary,
    assignment: &Assignment,
    connectivity: &ConnectivityMask,
) -> Result<PackedModel> {
    if library.k() > MAX_PACKED_PATTERNS {
        return Err(Error::InvalidLibrary(format!(
            "cannot pack K={} > {MAX_PACKED_PATTERNS}",
            library.k()
        )));
    }
    let convs = check_trunk(net)?;
    if assignment.per_layer.len() != convs.len()
        || connectivity.per_layer.len() != convs.len()
    {
        return Err(Error::ShapeMismatch {
            context: "pack assignment/connectivity layer counts",
            left: vec![assignment.per_layer.len(), connectivity.per_layer.len()],
            right: vec![convs.len(); 2],
        });
    }
    connectivity.validate()?;

    let mut layers = Vec::with_capacity(convs.len());
    // packed-channel relabel of the previous layer's outputs:
    // prev_inv[old_filter] = packed position
    let mut prev_inv: Option<Vec<u32>> = None;
    let mut last_perm: Vec<u32> = Vec::new();

    for (li, conv) in convs.iter().enumerate() {
        let (filters, channels) = (conv.filters(), conv.channels());
        let asg = &assignment.per_layer[li];
        let conn = &connectivity.per_layer[li];
        if asg.len() != filters * channels || conn.kept.len() != filters * channels {
            return Err(Error::ShapeMismatch {
                context: "pack per-layer kernel counts",
                left: vec![asg.len(), conn.kept.len()],
                right: vec![filters * channels; 2],
            });
        }

        // reject models that are not truly pattern-pruned
        for f in 0..filters {
            for c in 0..channels {
                let n = f * channels + c;
                if !conn.kept[n] {
                    continue;
                }
                let mask = library.mask(asg[n] as usize);
                let kernel = conv.kernel(f, c);
                for i in 0..KERNEL_AREA {
                    if mask.bits() & (1 << i) == 0 && kernel[i] as f32 != 0.0 {
                        return Err(Error::NotPatternPruned(format!(
                            "layer {li}, filter {f}, channel {c}: weight {} outside mask at position {i}",
                            kernel[i]
                        )));
                    }
                }
            }
        }

        let perm = reorder_filters(conv, asg, &conn.kept, library.k())?;
        let mut filter_records = Vec::with_capacity(filters);
        let mut records = Vec::new();
        let mut weights = Vec::new();
        let mut bias = Vec::with_capacity(filters);

        for &old_f in &perm {
            let old_f = old_f as usize;
            bias.push(conv.bias.data()[old_f] as f32);
            let mut recs: Vec<KernelRecord> = (0..channels)
                .filter(|&c| conn.kept[old_f * channels + c])
                .map(|c| {
                    let packed_channel = match &prev_inv {
                        Some(inv) => inv[c],
                        None => c as u32,
                    } as u16;
                    KernelRecord {
                        channel: packed_channel,
                        pattern: asg[old_f * channels + c],
                    }
                })
                .collect();
            recs.sort_by_key(|r| (r.pattern, r.channel));
            filter_records.push(recs.len() as u32);
            for r in &recs {
                // recover the original channel to read the weights
                let old_c = match &last_perm[..] {
                    [] => r.channel as usize,
                    p => p[r.channel as usize] as usize,
                };
                let kernel = conv.kernel(old_f, old_c);
                let mask = library.mask(r.pattern as usize);
                for (row, col) in mask.positions() {
                    weights.push(kernel[row * KERNEL_SIDE + col] as f32);
                }
            }
            records.extend(recs);
        }

        let mut inv = vec![0u32; filters];
        for (pos, &old) in perm.iter().enumerate() {
            inv[old as usize] = pos as u32;
        }
        prev_inv = Some(inv);
        last_perm = perm.clone();

        layers.push(PackedLayer {
            filters,
            channels,
            stride: conv.stride,
            pad: conv.pad,
            library: library.clone(),
            filter_perm: perm,
            filter_records,
            records,
            weights,
            bias,
        });
    }

    // permute classifier column blocks to packed channel order
    let (out, inp) = (net.classifier.outputs(), net.classifier.inputs());
    let last = layers.last().expect("at least one conv layer");
    let block = inp / last.filters;
    if block * last.filters != inp {
        return Err(Error::ShapeMismatch {
            context: "classifier input not divisible by final filter count",
            left: vec![inp],
            right: vec![last.filters],
        });
    }
    let mut cw = vec![0f32; out * inp];
    for o in 0..out {
        let src = &net.classifier.weights.data()[o * inp..(o + 1) * inp];
        let dst = &mut cw[o * inp..(o + 1) * inp];
        for pos in 0..last.filters {
            let old_f = last.filter_perm[pos] as usize;
            for i in 0..block {
                dst[pos * block + i] = src[old_f * block + i] as f32;
            }
        }
    }
    let cb: Vec<f32> = net.classifier.bias.data().iter().map(|&v| v as f32).collect();

    let packed = PackedModel {
        layers,
        classifier_dims: (out, inp),
        classifier_weights: cw,
        classifier_bias: cb,
    };
    packed.validate()?;
    Ok(packed)
}

/// Reconstructs the dense network: zeros at pruned positions, original
/// filter order and channel labels restored.
pub fn unpack(packed: &PackedModel) -> Result<Network> {
    packed.validate()?;
    let mut layers = Vec::new();
    let mut prev_perm: Option<&[u32]> = None;

    for (li, pl) in packed.layers.iter().enumerate() {
        let mut weights = Tensor::zeros(&[pl.filters, pl.channels, KERNEL_SIDE, KERNEL_SIDE]);
        let mut bias = Tensor::zeros(&[pl.filters]);
        let mut w_iter = pl.weights.iter();
        for pos in 0..pl.filters {
            let old_f = pl.filter_perm[pos] as usize;
            bias.data_mut()[old_f] = pl.bias[pos] as f64;
            for r in pl.records_of(pos) {
                let old_c = match prev_perm {
                    Some(perm) => perm[r.channel as usize] as usize,
                    None => r.channel as usize,
                };
                let mask = pl.library.mask(r.pattern as usize);
                let base = weights.offset4(old_f, old_c, 0, 0);
                for (row, col) in mask.positions() {
                    let w = *w_iter.next().ok_or_else(|| {
                        Error::format(0, format!("layer {li}: weight stream exhausted"))
                    })?;
                    weights.data_mut()[base + row * KERNEL_SIDE + col] = w as f64;
                }
            }
        }
        layers.push(Layer::Conv(ConvLayer::new(weights, bias, pl.stride, pl.pad)?));
        layers.push(Layer::Relu);
        if li + 1 < packed.layers.len() {
            layers.push(Layer::MaxPool2);
        }
        prev_perm = Some(&pl.filter_perm);
    }

    // un-permute classifier columns
    let (out, inp) = packed.classifier_dims;
    let last = packed.layers.last();
    let mut cw = vec![0f64; out * inp];
    match last {
        Some(pl) => {
            let block = inp / pl.filters;
            for o in 0..out {
                let src = &packed.classifier_weights[o * inp..(o + 1) * inp];
                let dst = &mut cw[o * inp..(o + 1) * inp];
                for pos in 0..pl.filters {
                    let old_f = pl.filter_perm[pos] as usize;
                    for i in 0..block {
                        dst[old_f * block + i] = src[pos * block + i] as f64;
                    }
                }
            }
        }
        None => {
            for (d, &s) in cw.iter_mut().zip(&packed.classifier_weights) {
                *d = s as f64;
            }
        }
    }
    let classifier = Linear::new(
        Tensor::from_vec(&[out, inp], cw)?,
        Tensor::from_vec(
            &[out],
            packed.classifier_bias.iter().map(|&v| v as f64).collect(),
        )?,
    )?;
    Network::new(layers, classifier)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::admm::Assignment;
    use crate::nn;
    use crate::pattern::derived_library;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A random toy-shaped net hard-pruned to random patterns, with random
    /// connectivity at the given keep ratio. Weights are f32-representable.
    pub(crate) fn random_pruned_model(
        seed: u64,
        keep_ratio: f64,
    ) -> (Network, PatternLibrary, Assignment, ConnectivityMask) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::toy(1, 4, (16, 16), seed);
        // replace weights with f32-representable randoms
        for conv in net.conv_layers_mut() {
            for w in conv.weights.data_mut() {
                *w = rng.random_range(-1.0f32..1.0) as f64;
            }
            for b in conv.bias.data_mut() {
                *b = rng.random_range(-0.5f32..0.5) as f64;
            }
        }
        for w in net.classifier.weights.data_mut() {
            *w = rng.random_range(-0.2f32..0.2) as f64;
        }
        let library = derived_library();
        let assignment = Assignment {
            per_layer: net
                .conv_layers()
                .iter()
                .map(|c| {
                    (0..c.filters() * c.channels())
                        .map(|_| rng.random_range(0..library.k()) as u8)
                        .collect()
                })
                .collect(),
        };
        let connectivity = if keep_ratio >= 1.0 {
            ConnectivityMask::dense(&net)
        } else {
            // the first toy layer has C=1 (kernels are whole filters), so
            // connectivity pruning applies to the later layers only
            let mut ratios = vec![keep_ratio; net.conv_count()];
            ratios[0] = 1.0;
            crate::admm::connectivity_prune(&net, &ratios).unwrap()
        };
        // hard-apply masks
        let masks = nn::KernelMasks {
            per_layer: net
                .conv_layers()
                .iter()
                .zip(&assignment.per_layer)
                .zip(&connectivity.per_layer)
                .map(|((conv, asg), conn)| {
                    (0..conv.filters() * conv.channels())
                        .map(|n| {
                            if conn.kept[n] {
                                library.mask(asg[n] as usize).bits()
                            } else {
                                0
                            }
                        })
                        .collect()
                })
                .collect(),
        };
        masks.apply(&mut net).unwrap();
        (net, library, assignment, connectivity)
    }

    #[test]
    fn reorder_sorts_by_descending_signature() {
        // two filters, K=2: signatures (1,3) and (3,1) -> the (3,1) filter first
        let mut weights = Tensor::zeros(&[2, 4, 3, 3]);
        for v in weights.data_mut().iter_mut() {
            *v = 1.0;
        }
        let layer = ConvLayer::new(weights, Tensor::zeros(&[2]), 1, 1).unwrap();
        let assignment = [0, 1, 1, 1, 0, 0, 0, 1];
        let kept = [true; 8];
        let perm = reorder_filters(&layer, &assignment, &kept, 2).unwrap();
        assert_eq!(perm, vec![1, 0]);

        // identical compositions keep original order
        let assignment = [0, 1, 0, 1, 1, 0, 1, 0];
        let perm = reorder_filters(&layer, &assignment, &kept, 2).unwrap();
        assert_eq!(perm, vec![0, 1]);
    }

    #[test]
    fn reordered_signatures_are_sorted_per_comparator() {
        let (net, library, assignment, connectivity) = random_pruned_model(5, 0.6);
        let packed = pack(&net, &library, &assignment, &connectivity).unwrap();
        for (li, pl) in packed.layers.iter().enumerate() {
            let conn = &connectivity.per_layer[li];
            let asg = &assignment.per_layer[li];
            let sigs: Vec<Vec<u32>> = (0..pl.filters)
                .map(|f| signature(asg, &conn.kept, pl.channels, f, library.k()))
                .collect();
            let permuted: Vec<&Vec<u32>> = pl
                .filter_perm
                .iter()
                .map(|&old| &sigs[old as usize])
                .collect();
            let mut sorted = permuted.clone();
            sorted.sort_by(|a, b| b.cmp(a));
            assert_eq!(permuted, sorted, "layer {li} not signature-sorted");
        }
    }

    #[test]
    fn dense_connectivity_packs_every_kernel() {
        let (net, library, assignment, connectivity) = random_pruned_model(6, 1.0);
        let packed = pack(&net, &library, &assignment, &connectivity).unwrap();
        for (pl, conv) in packed.layers.iter().zip(net.conv_layers()) {
            assert_eq!(pl.records.len(), conv.filters() * conv.channels());
            assert_eq!(pl.weights.len(), 4 * pl.records.len());
        }
    }

    #[test]
    fn pruned_connectivity_packs_exactly_the_kept_kernels() {
        let (net, library, assignment, connectivity) = random_pruned_model(7, 0.5);
        let packed = pack(&net, &library, &assignment, &connectivity).unwrap();
        for (pl, conn) in packed.layers.iter().zip(&connectivity.per_layer) {
            assert_eq!(pl.records.len(), conn.kept_count());
        }
        assert_eq!(packed.kept_kernels(), connectivity.kept_kernels());
    }

    #[test]
    fn grouping_invariant_holds() {
        let (net, library, assignment, connectivity) = random_pruned_model(8, 0.5);
        let packed = pack(&net, &library, &assignment, &connectivity).unwrap();
        for pl in &packed.layers {
            for p in 0..pl.filters {
                assert!(pl.pattern_transitions(p) <= library.k() - 1);
            }
        }
    }

    #[test]
    fn unpack_restores_the_hard_masked_model_exactly() {
        let (net, library, assignment, connectivity) = random_pruned_model(9, 0.6);
        let packed = pack(&net, &library, &assignment, &connectivity).unwrap();
        let restored = unpack(&packed).unwrap();
        // connectivity-dropped kernels were zeroed by the hard mask, so the
        // restored net is elementwise f32-equal to the source
        assert_eq!(restored.layers.len(), net.layers.len());
        for (a, b) in net.conv_layers().iter().zip(restored.conv_layers()) {
            assert_eq!(a.weights.shape(), b.weights.shape());
            for (x, y) in a.weights.data().iter().zip(b.weights.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
            for (x, y) in a.bias.data().iter().zip(b.bias.data()) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        for (x, y) in net
            .classifier
            .weights
            .data()
            .iter()
            .zip(restored.classifier.weights.data())
        {
            assert_eq!(*x as f32, *y as f32);
        }

        // pack -> unpack -> re-pack is idempotent
        let repacked = pack(&restored, &library, &assignment, &connectivity).unwrap();
        assert_eq!(repacked, packed);
    }

    #[test]
    fn non_pruned_weight_is_rejected_with_coordinates() {
        let (mut net, library, assignment, connectivity) = random_pruned_model(10, 1.0);
        // poke a weight outside the assigned mask of kernel (layer 0, f 1, c 0)
        let mask = library.mask(assignment.per_layer[0][1 * net.conv_layers()[0].channels()] as usize);
        let outside = (0..9).find(|i| mask.bits() & (1 << i) == 0).unwrap();
        {
            let mut convs = net.conv_layers_mut();
            convs[0].kernel_mut(1, 0)[outside] = 0.5;
        }
        let err = pack(&net, &library, &assignment, &connectivity).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("filter 1"), "{msg}");
        assert!(msg.contains("channel 0"), "{msg}");
    }

    #[test]
    fn functional_preservation_under_permutation() {
        let (net, library, assignment, connectivity) = random_pruned_model(11, 0.5);
        let packed = pack(&net, &library, &assignment, &connectivity).unwrap();
        let restored = unpack(&packed).unwrap();
        let input = {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let data: Vec<f64> = (0..2 * 1 * 16 * 16)
                .map(|_| rng.random_range(-1.0f32..1.0) as f64)
                .collect();
            Tensor::from_vec(&[2, 1, 16, 16], data).unwrap()
        };
        let a = nn::forward(&net, &input, None).unwrap();
        let b = nn::forward(&restored, &input, None).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x, y, "dense inference must be identical");
        }
    }
}
