use super::conv::{conv2d_backward, conv2d_forward_with, ConvLayer};
use super::{Dataset, Tensor};
use crate::pattern::{PatternLibrary, KERNEL_AREA, KERNEL_SIDE};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One stage of the convolutional trunk.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Relu,
    /// 2x2 max pooling with stride 2 (odd trailing rows/cols dropped).
    MaxPool2,
}

/// Fully connected classifier head, weights `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self> {
        if weights.shape().len() != 2 || bias.shape() != [weights.shape()[0]] {
            return Err(Error::ShapeMismatch {
                context: "linear head",
                left: weights.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Linear { weights, bias })
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// A small CNN: conv/ReLU/pool trunk plus one linear classifier trained
/// with cross-entropy.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub classifier: Linear,
}

impl Network {
    pub fn new(layers: Vec<Layer>, classifier: Linear) -> Result<Self> {
        let mut channels: Option<usize> = None;
        for layer in &layers {
            if let Layer::Conv(conv) = layer {
                if let Some(c) = channels {
                    if conv.channels() != c {
                        return Err(Error::ShapeMismatch {
                            context: "adjacent conv channel counts",
                            left: vec![c],
                            right: vec![conv.channels()],
                        });
                    }
                }
                channels = Some(conv.filters());
            }
        }
        Ok(Network { layers, classifier })
    }

    /// The fixed desk-scale architecture:
    /// conv(cin->8)-ReLU-pool-conv(8->16)-ReLU-pool-conv(16->16)-ReLU-linear,
    /// 3x3 kernels, stride 1, pad 1, Kaiming-uniform init.
    pub fn toy(in_channels: usize, classes: usize, input_hw: (usize, usize), seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [(in_channels, 8), (8, 16), (16, 16)];
        let mut layers = Vec::new();
        let (mut h, mut w) = input_hw;
        for (i, &(cin, cout)) in widths.iter().enumerate() {
            layers.push(Layer::Conv(init_conv(cout, cin, &mut rng)));
            layers.push(Layer::Relu);
            if i + 1 < widths.len() {
                layers.push(Layer::MaxPool2);
                h /= 2;
                w /= 2;
            }
        }
        let feat = 16 * h * w;
        let classifier = init_linear(classes, feat, &mut rng);
        Network::new(layers, classifier).expect("toy architecture is consistent")
    }

    pub fn conv_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l, Layer::Conv(_)))
            .count()
    }

    pub fn conv_layers(&self) -> Vec<&ConvLayer> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some(c),
                _ => None,
            })
            .collect()
    }

    pub fn conv_layers_mut(&mut self) -> Vec<&mut ConvLayer> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::Conv(c) => Some(c),
                _ => None,
            })
            .collect()
    }
}

fn init_conv(filters: usize, channels: usize, rng: &mut ChaCha8Rng) -> ConvLayer {
    let fan_in = channels * KERNEL_AREA;
    let bound = (6.0 / fan_in as f64).sqrt();
    let n = filters * channels * KERNEL_AREA;
    let weights = Tensor::from_vec(
        &[filters, channels, KERNEL_SIDE, KERNEL_SIDE],
        (0..n).map(|_| rng.random_range(-bound..bound)).collect(),
    )
    .unwrap();
    ConvLayer::new(weights, Tensor::zeros(&[filters]), 1, 1).unwrap()
}

fn init_linear(outputs: usize, inputs: usize, rng: &mut ChaCha8Rng) -> Linear {
    let bound = (6.0 / inputs as f64).sqrt();
    let weights = Tensor::from_vec(
        &[outputs, inputs],
        (0..outputs * inputs)
            .map(|_| rng.random_range(-bound..bound))
            .collect(),
    )
    .unwrap();
    Linear::new(weights, Tensor::zeros(&[outputs])).unwrap()
}

/// Per-kernel pattern selection weights for every conv layer, kernels
/// enumerated filter-major.
#[derive(Clone, Debug)]
pub struct LayerSelection {
    pub k: usize,
    /// Flat `[kernels * k]`.
    pub z: Vec<f64>,
}

/// Selection state attached to a network during pattern-aware training.
#[derive(Clone, Debug)]
pub struct PatternSelection {
    pub library: PatternLibrary,
    pub layers: Vec<LayerSelection>,
}

impl PatternSelection {
    /// Uniform selection 1/K for every kernel of every conv layer.
    pub fn uniform(net: &Network, library: PatternLibrary) -> Self {
        let k = library.k();
        let layers = net
            .conv_layers()
            .iter()
            .map(|conv| LayerSelection {
                k,
                z: vec![1.0 / k as f64; conv.filters() * conv.channels() * k],
            })
            .collect();
        PatternSelection { library, layers }
    }

    pub fn kernel_z(&self, layer: usize, kernel: usize) -> &[f64] {
        let sel = &self.layers[layer];
        &sel.z[kernel * sel.k..(kernel + 1) * sel.k]
    }
}

/// Extra differentiable loss on the selection variables, evaluated per
/// kernel during the SGD update (the ADMM proximal pull uses this hook).
pub trait SelectionPenalty {
    /// Adds d(penalty)/dz into `grad` and returns the penalty value.
    fn apply(&self, layer: usize, kernel: usize, z: &[f64], grad: &mut [f64]) -> f64;
}

/// Hard sparsity masks: one 9-bit occupancy bitmap per kernel (0 drops the
/// kernel entirely). Applied by zeroing weights outside the bitmap.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelMasks {
    pub per_layer: Vec<Vec<u16>>,
}

impl KernelMasks {
    pub fn apply(&self, net: &mut Network) -> Result<()> {
        let mut convs = net.conv_layers_mut();
        if convs.len() != self.per_layer.len() {
            return Err(Error::ShapeMismatch {
                context: "mask layer count",
                left: vec![self.per_layer.len()],
                right: vec![convs.len()],
            });
        }
        for (conv, masks) in convs.iter_mut().zip(&self.per_layer) {
            let kernels = conv.filters() * conv.channels();
            if masks.len() != kernels {
                return Err(Error::ShapeMismatch {
                    context: "mask kernel count",
                    left: vec![masks.len()],
                    right: vec![kernels],
                });
            }
            let data = conv.weights.data_mut();
            for (n, &bits) in masks.iter().enumerate() {
                for i in 0..KERNEL_AREA {
                    if bits & (1 << i) == 0 {
                        data[n * KERNEL_AREA + i] = 0.0;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Forward through trunk and classifier; returns the logits `[B, classes]`.
pub fn forward(
    net: &Network,
    input: &Tensor,
    selection: Option<&PatternSelection>,
) -> Result<Tensor> {
    let mut cur = input.clone();
    let mut conv_idx = 0;
    for layer in &net.layers {
        cur = match layer {
            Layer::Conv(conv) => {
                let sel = selection.map(|s| {
                    let row = &s.layers[conv_idx];
                    (&s.library, row.z.as_slice())
                });
                conv_idx += 1;
                conv2d_forward_with(&cur, conv, sel)?
            }
            Layer::Relu => relu(&cur),
            Layer::MaxPool2 => maxpool2(&cur).0,
        };
    }
    let features = flatten(&cur);
    if features.shape()[1] != net.classifier.inputs() {
        return Err(Error::ShapeMismatch {
            context: "classifier input size",
            left: vec![features.shape()[1]],
            right: vec![net.classifier.inputs()],
        });
    }
    Ok(linear_forward(&net.classifier, &features))
}

fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_vec(x.shape(), data).unwrap()
}

fn maxpool2(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (b_n, c_n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[b_n, c_n, oh, ow]);
    let mut argmax = vec![0usize; b_n * c_n * oh * ow];
    let mut oi = 0;
    for b in 0..b_n {
        for c in 0..c_n {
            let base = x.offset4(b, c, 0, 0);
            let plane = &x.data()[base..base + h * w];
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best_idx = (2 * y) * w + 2 * xx;
                    let mut best = plane[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * y + dy) * w + 2 * xx + dx;
                        if plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                    out.data_mut()[oi] = best;
                    argmax[oi] = base + best_idx;
                    oi += 1;
                }
            }
        }
    }
    (out, argmax)
}

fn flatten(x: &Tensor) -> Tensor {
    let b = x.shape()[0];
    let feat = x.len() / b;
    Tensor::from_vec(&[b, feat], x.data().to_vec()).unwrap()
}

fn linear_forward(lin: &Linear, x: &Tensor) -> Tensor {
    let (b_n, in_n) = (x.shape()[0], x.shape()[1]);
    let out_n = lin.outputs();
    let mut out = Tensor::zeros(&[b_n, out_n]);
    for b in 0..b_n {
        let row = &x.data()[b * in_n..(b + 1) * in_n];
        for o in 0..out_n {
            let wrow = &lin.weights.data()[o * in_n..(o + 1) * in_n];
            let mut acc = lin.bias.data()[o];
            for i in 0..in_n {
                acc += wrow[i] * row[i];
            }
            out.data_mut()[b * out_n + o] = acc;
        }
    }
    out
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
/// Softmax is computed with max subtraction; each row of probabilities
/// sums to 1 up to f64 rounding.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b_n, classes) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != b_n {
        return Err(Error::ShapeMismatch {
            context: "labels vs logits batch",
            left: vec![labels.len()],
            right: vec![b_n],
        });
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = 0.0;
    for b in 0..b_n {
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let label = labels[b];
        if label >= classes {
            return Err(Error::IndexOutOfRange(format!(
                "label {label} for {classes} classes"
            )));
        }
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        loss += denom.ln() - (row[label] - max);
        let grow = &mut grad.data_mut()[b * classes..(b + 1) * classes];
        for (i, &v) in row.iter().enumerate() {
            let p = (v - max).exp() / denom;
            grow[i] = (p - if i == label { 1.0 } else { 0.0 }) / b_n as f64;
        }
    }
    Ok((loss / b_n as f64, grad))
}

/// Softmax probabilities per row (used by reports and tests).
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (b_n, classes) = (logits.shape()[0], logits.shape()[1]);
    let mut out = Tensor::zeros(logits.shape());
    for b in 0..b_n {
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        for (i, &v) in row.iter().enumerate() {
            out.data_mut()[b * classes + i] = (v - max).exp() / denom;
        }
    }
    out
}

/// Gradients for every trainable quantity in one batch.
struct BatchGrads {
    conv_weights: Vec<Tensor>,
    conv_bias: Vec<Tensor>,
    selection: Vec<Vec<f64>>,
    linear_weights: Tensor,
    linear_bias: Tensor,
    logits: Tensor,
    loss: f64,
}

fn backward_batch(
    net: &Network,
    selection: Option<&PatternSelection>,
    input: &Tensor,
    labels: &[usize],
) -> Result<BatchGrads> {
    // re-run the trunk, keeping pool argmaxes this time
    let mut stages = Vec::with_capacity(net.layers.len() + 1);
    let mut argmaxes = Vec::new();
    let mut cur = input.clone();
    let mut conv_idx = 0;
    for layer in &net.layers {
        stages.push(cur.clone());
        cur = match layer {
            Layer::Conv(conv) => {
                let sel = selection.map(|s| (&s.library, s.layers[conv_idx].z.as_slice()));
                conv_idx += 1;
                conv2d_forward_with(&cur, conv, sel)?
            }
            Layer::Relu => relu(&cur),
            Layer::MaxPool2 => {
                let (o, am) = maxpool2(&cur);
                argmaxes.push(am);
                o
            }
        };
    }
    let trunk_out = cur;
    let features = flatten(&trunk_out);
    if features.shape()[1] != net.classifier.inputs() {
        return Err(Error::ShapeMismatch {
            context: "classifier input size",
            left: vec![features.shape()[1]],
            right: vec![net.classifier.inputs()],
        });
    }
    let logits = linear_forward(&net.classifier, &features);
    let (loss, grad_logits) = cross_entropy(&logits, labels)?;

    // classifier gradients
    let (b_n, in_n) = (features.shape()[0], features.shape()[1]);
    let out_n = net.classifier.outputs();
    let mut gw_lin = Tensor::zeros(net.classifier.weights.shape());
    let mut gb_lin = Tensor::zeros(&[out_n]);
    let mut grad_features = Tensor::zeros(features.shape());
    for b in 0..b_n {
        let frow = &features.data()[b * in_n..(b + 1) * in_n];
        let grow = &grad_logits.data()[b * out_n..(b + 1) * out_n];
        for o in 0..out_n {
            let g = grow[o];
            gb_lin.data_mut()[o] += g;
            let wrow = &net.classifier.weights.data()[o * in_n..(o + 1) * in_n];
            let gwrow = &mut gw_lin.data_mut()[o * in_n..(o + 1) * in_n];
            let gfrow = &mut grad_features.data_mut()[b * in_n..(b + 1) * in_n];
            for i in 0..in_n {
                gwrow[i] += g * frow[i];
                gfrow[i] += g * wrow[i];
            }
        }
    }

    // walk the trunk backwards
    let mut grad = Tensor::from_vec(trunk_out.shape(), grad_features.data().to_vec())?;
    let mut conv_w = vec![Tensor::zeros(&[1]); conv_idx];
    let mut conv_b = vec![Tensor::zeros(&[1]); conv_idx];
    let mut sel_grads = vec![Vec::new(); conv_idx];
    let mut pool_iter = argmaxes.len();
    let mut conv_iter = conv_idx;
    for (i, layer) in net.layers.iter().enumerate().rev() {
        let stage_in = &stages[i];
        grad = match layer {
            Layer::Conv(conv) => {
                conv_iter -= 1;
                let sel = selection.map(|s| (&s.library, s.layers[conv_iter].z.as_slice()));
                let grads = conv2d_backward(stage_in, conv, sel, &grad)?;
                conv_w[conv_iter] = grads.weights;
                conv_b[conv_iter] = grads.bias;
                sel_grads[conv_iter] = grads.selection;
                grads.input
            }
            Layer::Relu => {
                let mut g = grad;
                for (gv, &xv) in g.data_mut().iter_mut().zip(stage_in.data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                g
            }
            Layer::MaxPool2 => {
                pool_iter -= 1;
                let am = &argmaxes[pool_iter];
                let mut g_in = Tensor::zeros(stage_in.shape());
                for (oi, &src) in am.iter().enumerate() {
                    g_in.data_mut()[src] += grad.data()[oi];
                }
                g_in
            }
        };
    }

    Ok(BatchGrads {
        conv_weights: conv_w,
        conv_bias: conv_b,
        selection: sel_grads,
        linear_weights: gw_lin,
        linear_bias: gb_lin,
        logits,
        loss,
    })
}

/// SGD hyper-parameters for one epoch.
#[derive(Clone, Copy, Debug)]
pub struct TrainConfig {
    pub lr: f64,
    /// Step size for selection variables.
    pub z_lr: f64,
    /// L2 penalty on conv and classifier weights (not biases, not z).
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            z_lr: 0.02,
            weight_decay: 0.0,
            batch_size: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct EpochStats {
    pub task_loss: f64,
    pub penalty: f64,
    pub accuracy: f64,
    pub batches: usize,
}

/// One pass of mini-batch SGD over `data`, in shuffled order drawn from
/// `rng`. Optionally trains pattern-selection variables alongside weights,
/// adds a [`SelectionPenalty`] to their gradient, and re-applies hard
/// `masks` after every step so pruned positions stay zero.
///
/// The trajectory is a pure function of (net, selection, data, cfg, rng
/// state); reruns from equal seeds are bitwise identical.
pub fn train_epoch(
    net: &mut Network,
    mut selection: Option<&mut PatternSelection>,
    data: &Dataset,
    cfg: &TrainConfig,
    penalty: Option<&dyn SelectionPenalty>,
    masks: Option<&KernelMasks>,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(rng);

    let mut stats = EpochStats::default();
    let mut correct = 0usize;
    let mut seen = 0usize;

    for (batch_idx, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
        let (inputs, labels) = data.batch(chunk);
        let grads = backward_batch(net, selection.as_deref(), &inputs, &labels)?;
        if !grads.loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss {} at batch {batch_idx}",
                grads.loss
            )));
        }
        stats.task_loss += grads.loss;
        stats.batches += 1;

        // accuracy from the pre-update logits of the gradient pass
        let classes = net.classifier.outputs();
        for (b, &label) in labels.iter().enumerate() {
            if argmax(&grads.logits.data()[b * classes..(b + 1) * classes]) == label {
                correct += 1;
            }
        }
        seen += labels.len();

        if cfg.lr != 0.0 {
            let decay = 1.0 - cfg.lr * cfg.weight_decay;
            let mut conv_iter = 0;
            for layer in net.layers.iter_mut() {
                if let Layer::Conv(conv) = layer {
                    if cfg.weight_decay != 0.0 {
                        scale(conv.weights.data_mut(), decay);
                    }
                    axpy(conv.weights.data_mut(), grads.conv_weights[conv_iter].data(), -cfg.lr);
                    axpy(conv.bias.data_mut(), grads.conv_bias[conv_iter].data(), -cfg.lr);
                    conv_iter += 1;
                }
            }
            if cfg.weight_decay != 0.0 {
                scale(net.classifier.weights.data_mut(), decay);
            }
            axpy(
                net.classifier.weights.data_mut(),
                grads.linear_weights.data(),
                -cfg.lr,
            );
            axpy(net.classifier.bias.data_mut(), grads.linear_bias.data(), -cfg.lr);
            if let Some(m) = masks {
                m.apply(net)?;
            }
        }

        if let Some(sel) = selection.as_deref_mut() {
            if cfg.z_lr != 0.0 {
                for (layer_idx, layer_sel) in sel.layers.iter_mut().enumerate() {
                    let k = layer_sel.k;
                    let task = &grads.selection[layer_idx];
                    let kernels = layer_sel.z.len() / k;
                    for kernel in 0..kernels {
                        let mut g: Vec<f64> = task[kernel * k..(kernel + 1) * k].to_vec();
                        if let Some(p) = penalty {
                            stats.penalty += p.apply(
                                layer_idx,
                                kernel,
                                &layer_sel.z[kernel * k..(kernel + 1) * k],
                                &mut g,
                            );
                        }
                        axpy(&mut layer_sel.z[kernel * k..(kernel + 1) * k], &g, -cfg.z_lr);
                    }
                }
            }
        }
    }

    if stats.batches > 0 {
        stats.task_loss /= stats.batches as f64;
        stats.penalty /= stats.batches as f64;
    }
    stats.accuracy = if seen == 0 {
        0.0
    } else {
        correct as f64 / seen as f64
    };
    Ok(stats)
}

fn axpy(dst: &mut [f64], src: &[f64], scale: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Class predictions for a batch of inputs.
pub fn predict(net: &Network, inputs: &Tensor) -> Result<Vec<usize>> {
    let logits = forward(net, inputs, None)?;
    let classes = net.classifier.outputs();
    Ok((0..inputs.shape()[0])
        .map(|b| argmax(&logits.data()[b * classes..(b + 1) * classes]))
        .collect())
}

/// Fraction of `data` classified correctly, evaluated in batches.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    let mut correct = 0usize;
    let idxs: Vec<usize> = (0..data.len()).collect();
    for chunk in idxs.chunks(64) {
        let (inputs, labels) = data.batch(chunk);
        let preds = predict(net, &inputs)?;
        correct += preds
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_dataset(seed: u64) -> Dataset {
        Dataset::synthetic_blobs(64, 2, (8, 8), 0.05, seed)
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits =
            Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 0.5, 100.0, 99.0, 98.0]).unwrap();
        let p = softmax_rows(&logits);
        for b in 0..2 {
            let s: f64 = p.data()[b * 3..(b + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let (loss, _) = cross_entropy(&logits, &[0, 2]).unwrap();
        assert!(loss >= 0.0);
    }

    #[test]
    fn zero_learning_rate_is_bitwise_noop() {
        let mut net = Network::toy(1, 2, (8, 8), 5);
        let reference = net.clone();
        let data = tiny_dataset(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = TrainConfig {
            lr: 0.0,
            z_lr: 0.0,
            ..TrainConfig::default()
        };
        train_epoch(&mut net, None, &data, &cfg, None, None, &mut rng).unwrap();
        assert_eq!(net, reference);
    }

    #[test]
    fn fixed_seed_training_is_bitwise_reproducible() {
        let run = || {
            let mut net = Network::toy(1, 2, (8, 8), 5);
            let data = tiny_dataset(6);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let cfg = TrainConfig::default();
            for _ in 0..2 {
                train_epoch(&mut net, None, &data, &cfg, None, None, &mut rng).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn separable_toy_batch_reaches_full_accuracy() {
        let mut net = Network::toy(1, 2, (8, 8), 42);
        let data = tiny_dataset(43);
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let cfg = TrainConfig {
            lr: 0.1,
            ..TrainConfig::default()
        };
        for _ in 0..50 {
            train_epoch(&mut net, None, &data, &cfg, None, None, &mut rng).unwrap();
        }
        assert_eq!(accuracy(&net, &data).unwrap(), 1.0);
    }

    struct PullTowards {
        target: Vec<f64>,
        rho: f64,
    }

    impl SelectionPenalty for PullTowards {
        fn apply(&self, _layer: usize, _kernel: usize, z: &[f64], grad: &mut [f64]) -> f64 {
            let mut val = 0.0;
            for ((g, &zv), &t) in grad.iter_mut().zip(z).zip(&self.target) {
                *g += self.rho * (zv - t);
                val += 0.5 * self.rho * (zv - t) * (zv - t);
            }
            val
        }
    }

    #[test]
    fn quadratic_penalty_pulls_z_towards_target_when_task_gradient_is_zero() {
        // all-zero inputs give zero task gradient for z
        let mut net = Network::toy(1, 2, (8, 8), 1);
        let data = Dataset::new(Tensor::zeros(&[8, 1, 8, 8]), vec![0; 8], 2).unwrap();
        let library = crate::pattern::derived_library();
        let k = library.k();
        let mut sel = PatternSelection::uniform(&net, library);
        let mut target = vec![0.0; k];
        target[3] = 1.0;
        let penalty = PullTowards {
            target: target.clone(),
            rho: 1.0,
        };
        let before: Vec<f64> = sel.kernel_z(0, 0).to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = TrainConfig {
            lr: 0.0,
            z_lr: 0.2,
            batch_size: 8,
        };
        for _ in 0..20 {
            train_epoch(
                &mut net,
                Some(&mut sel),
                &data,
                &cfg,
                Some(&penalty),
                None,
                &mut rng,
            )
            .unwrap();
        }
        let after = sel.kernel_z(0, 0);
        let dist = |v: &[f64]| -> f64 {
            v.iter()
                .zip(&target)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        assert!(dist(after) < 0.05 * dist(&before));
    }

    #[test]
    fn masks_zero_weights_and_survive_training_steps() {
        let mut net = Network::toy(1, 2, (8, 8), 9);
        let bitmap = 0b000011011u16; // 4-entry corner mask
        let masks = KernelMasks {
            per_layer: net
                .conv_layers()
                .iter()
                .map(|c| vec![bitmap; c.filters() * c.channels()])
                .collect(),
        };
        masks.apply(&mut net).unwrap();
        let data = tiny_dataset(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        train_epoch(
            &mut net,
            None,
            &data,
            &TrainConfig::default(),
            None,
            Some(&masks),
            &mut rng,
        )
        .unwrap();
        for conv in net.conv_layers() {
            for f in 0..conv.filters() {
                for c in 0..conv.channels() {
                    for i in 0..KERNEL_AREA {
                        if bitmap & (1 << i) == 0 {
                            assert_eq!(conv.kernel(f, c)[i], 0.0);
                        }
                    }
                }
            }
        }
    }
}
