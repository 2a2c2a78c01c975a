use super::Tensor;
use crate::pattern::{PatternLibrary, KERNEL_AREA, KERNEL_SIDE};
use crate::{Error, Result};

/// One 3x3 convolution layer, filter-major weights `[F, C, 3, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    pub fn new(weights: Tensor, bias: Tensor, stride: usize, pad: usize) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 4 || s[2] != KERNEL_SIDE || s[3] != KERNEL_SIDE {
            return Err(Error::ShapeMismatch {
                context: "conv weights must be [F, C, 3, 3]",
                left: s.to_vec(),
                right: vec![0, 0, KERNEL_SIDE, KERNEL_SIDE],
            });
        }
        if bias.shape() != [s[0]] {
            return Err(Error::ShapeMismatch {
                context: "conv bias must be [F]",
                left: bias.shape().to_vec(),
                right: vec![s[0]],
            });
        }
        if stride == 0 {
            return Err(Error::Infeasible("conv stride must be positive".into()));
        }
        Ok(ConvLayer {
            weights,
            bias,
            stride,
            pad,
        })
    }

    pub fn filters(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.weights.shape()[1]
    }

    /// The 9 weights of kernel (f, c).
    pub fn kernel(&self, f: usize, c: usize) -> &[f64] {
        let off = self.weights.offset4(f, c, 0, 0);
        &self.weights.data()[off..off + KERNEL_AREA]
    }

    pub fn kernel_mut(&mut self, f: usize, c: usize) -> &mut [f64] {
        let off = self.weights.offset4(f, c, 0, 0);
        &mut self.weights.data_mut()[off..off + KERNEL_AREA]
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - KERNEL_SIDE) / self.stride + 1,
            (w + 2 * self.pad - KERNEL_SIDE) / self.stride + 1,
        )
    }
}

fn check_input(input: &Tensor, layer: &ConvLayer) -> Result<(usize, usize, usize, usize)> {
    let s = input.shape();
    if s.len() != 4 || s[1] != layer.channels() {
        return Err(Error::ShapeMismatch {
            context: "conv input must be [B, C, H, W] with C matching the layer",
            left: s.to_vec(),
            right: layer.weights.shape().to_vec(),
        });
    }
    if s[2] + 2 * layer.pad < KERNEL_SIDE || s[3] + 2 * layer.pad < KERNEL_SIDE {
        return Err(Error::ShapeMismatch {
            context: "conv input smaller than the kernel",
            left: s.to_vec(),
            right: vec![KERNEL_SIDE, KERNEL_SIDE],
        });
    }
    Ok((s[0], s[1], s[2], s[3]))
}

/// Copies one `[H, W]` plane into a zero-padded `[H+2p, W+2p]` buffer.
fn pad_plane(src: &[f64], h: usize, w: usize, pad: usize, dst: &mut [f64]) {
    let wp = w + 2 * pad;
    dst.fill(0.0);
    for y in 0..h {
        let drow = (y + pad) * wp + pad;
        dst[drow..drow + w].copy_from_slice(&src[y * w..(y + 1) * w]);
    }
}

/// Direct cross-correlation, `[B, C, H, W] -> [B, F, H', W']`.
///
/// Accumulation order is fixed: channels outermost, then the 9 kernel taps,
/// then output pixels; results are bit-reproducible run to run.
pub fn conv2d_forward(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    conv2d_forward_with(input, layer, None)
}

/// As [`conv2d_forward`], with kernels optionally replaced by their
/// pattern-weighted form `w ∘ Σ_j z_j M_j`. `selection` holds one flat
/// row of K selection weights per kernel, kernels enumerated (f-major, c).
pub fn conv2d_forward_with(
    input: &Tensor,
    layer: &ConvLayer,
    selection: Option<(&PatternLibrary, &[f64])>,
) -> Result<Tensor> {
    let (batch, channels, h, w) = check_input(input, layer)?;
    let filters = layer.filters();
    let (oh, ow) = layer.out_hw(h, w);
    let (hp, wp) = (h + 2 * layer.pad, w + 2 * layer.pad);
    let stride = layer.stride;

    if let Some((library, z)) = selection {
        let want = filters * channels * library.k();
        if z.len() != want {
            return Err(Error::SelectionSize {
                got: z.len(),
                expected: want,
            });
        }
    }

    let mut out = Tensor::zeros(&[batch, filters, oh, ow]);
    let mut padded = vec![0.0f64; channels * hp * wp];
    let mut eff = [0.0f64; KERNEL_AREA];

    for b in 0..batch {
        for c in 0..channels {
            let src = &input.data()[input.offset4(b, c, 0, 0)..];
            pad_plane(&src[..h * w], h, w, layer.pad, &mut padded[c * hp * wp..(c + 1) * hp * wp]);
        }
        for f in 0..filters {
            let out_off = out.offset4(b, f, 0, 0);
            let plane = &mut out.data_mut()[out_off..out_off + oh * ow];
            plane.fill(layer.bias.data()[f]);
            for c in 0..channels {
                let kernel = layer.kernel(f, c);
                let kernel: &[f64] = match selection {
                    Some((library, z)) => {
                        let k = library.k();
                        let row = &z[(f * channels + c) * k..(f * channels + c + 1) * k];
                        let scale = mask_weighted_sum(library, row);
                        for i in 0..KERNEL_AREA {
                            eff[i] = kernel[i] * scale[i];
                        }
                        &eff
                    }
                    None => kernel,
                };
                let pad_plane = &padded[c * hp * wp..(c + 1) * hp * wp];
                for ky in 0..KERNEL_SIDE {
                    for kx in 0..KERNEL_SIDE {
                        let wv = kernel[ky * KERNEL_SIDE + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..oh {
                            let prow = (y * stride + ky) * wp + kx;
                            let orow = y * ow;
                            for x in 0..ow {
                                plane[orow + x] += wv * pad_plane[prow + x * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a scalar loss w.r.t. a conv layer's inputs and parameters.
#[derive(Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
    /// Per-kernel selection gradients, same layout as the `selection` row
    /// passed to the forward pass. Empty when no selection was used.
    pub selection: Vec<f64>,
}

/// Backward pass of [`conv2d_forward_with`] given `grad_out = dL/d(output)`.
pub fn conv2d_backward(
    input: &Tensor,
    layer: &ConvLayer,
    selection: Option<(&PatternLibrary, &[f64])>,
    grad_out: &Tensor,
) -> Result<ConvGrads> {
    let (batch, channels, h, w) = check_input(input, layer)?;
    let filters = layer.filters();
    let (oh, ow) = layer.out_hw(h, w);
    if grad_out.shape() != [batch, filters, oh, ow] {
        return Err(Error::ShapeMismatch {
            context: "conv grad_out",
            left: grad_out.shape().to_vec(),
            right: vec![batch, filters, oh, ow],
        });
    }
    let (hp, wp) = (h + 2 * layer.pad, w + 2 * layer.pad);
    let stride = layer.stride;
    let k = selection.map(|(lib, _)| lib.k()).unwrap_or(0);

    let mut grad_in = Tensor::zeros(&[batch, channels, h, w]);
    let mut grad_w = Tensor::zeros(layer.weights.shape());
    let mut grad_b = Tensor::zeros(&[filters]);
    let mut grad_z = vec![0.0f64; filters * channels * k];

    let mut padded = vec![0.0f64; channels * hp * wp];
    let mut gpad = vec![0.0f64; hp * wp];
    // dL/d(effective kernel), accumulated per (f, c) over the batch
    let mut grad_eff = vec![0.0f64; filters * channels * KERNEL_AREA];

    for b in 0..batch {
        for c in 0..channels {
            let src = &input.data()[input.offset4(b, c, 0, 0)..];
            pad_plane(&src[..h * w], h, w, layer.pad, &mut padded[c * hp * wp..(c + 1) * hp * wp]);
        }
        for f in 0..filters {
            let g_off = grad_out.offset4(b, f, 0, 0);
            let gplane = &grad_out.data()[g_off..g_off + oh * ow];
            grad_b.data_mut()[f] += gplane.iter().sum::<f64>();
            for c in 0..channels {
                let pad_plane_c = &padded[c * hp * wp..(c + 1) * hp * wp];
                let ge = &mut grad_eff[(f * channels + c) * KERNEL_AREA..][..KERNEL_AREA];
                for ky in 0..KERNEL_SIDE {
                    for kx in 0..KERNEL_SIDE {
                        let mut acc = 0.0;
                        for y in 0..oh {
                            let prow = (y * stride + ky) * wp + kx;
                            let orow = y * ow;
                            for x in 0..ow {
                                acc += gplane[orow + x] * pad_plane_c[prow + x * stride];
                            }
                        }
                        ge[ky * KERNEL_SIDE + kx] += acc;
                    }
                }
            }
        }
        // input gradient: scatter through the effective kernels
        for c in 0..channels {
            gpad.fill(0.0);
            for f in 0..filters {
                let g_off = grad_out.offset4(b, f, 0, 0);
                let gplane = &grad_out.data()[g_off..g_off + oh * ow];
                let kernel = layer.kernel(f, c);
                let mut eff = [0.0f64; KERNEL_AREA];
                let kernel: &[f64] = match selection {
                    Some((library, z)) => {
                        let row = &z[(f * channels + c) * k..(f * channels + c + 1) * k];
                        let scale = mask_weighted_sum(library, row);
                        for i in 0..KERNEL_AREA {
                            eff[i] = kernel[i] * scale[i];
                        }
                        &eff
                    }
                    None => kernel,
                };
                for ky in 0..KERNEL_SIDE {
                    for kx in 0..KERNEL_SIDE {
                        let wv = kernel[ky * KERNEL_SIDE + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        for y in 0..oh {
                            let prow = (y * stride + ky) * wp + kx;
                            let orow = y * ow;
                            for x in 0..ow {
                                gpad[prow + x * stride] += wv * gplane[orow + x];
                            }
                        }
                    }
                }
            }
            let gi_off = grad_in.offset4(b, c, 0, 0);
            let gi = &mut grad_in.data_mut()[gi_off..gi_off + h * w];
            for y in 0..h {
                let prow = (y + layer.pad) * wp + layer.pad;
                for x in 0..w {
                    gi[y * w + x] = gpad[prow + x];
                }
            }
        }
    }

    // chain dL/d(effective) into weight and selection gradients
    for f in 0..filters {
        for c in 0..channels {
            let ge = &grad_eff[(f * channels + c) * KERNEL_AREA..][..KERNEL_AREA];
            let kernel_off = layer.weights.offset4(f, c, 0, 0);
            match selection {
                Some((library, z)) => {
                    let row = &z[(f * channels + c) * k..(f * channels + c + 1) * k];
                    let scale = mask_weighted_sum(library, row);
                    let kernel = &layer.weights.data()[kernel_off..kernel_off + KERNEL_AREA];
                    let gz = &mut grad_z[(f * channels + c) * k..(f * channels + c + 1) * k];
                    for (j, mask) in library.masks().iter().enumerate() {
                        let mut acc = 0.0;
                        for (r, cc) in mask.positions() {
                            let i = r * KERNEL_SIDE + cc;
                            acc += ge[i] * kernel[i];
                        }
                        gz[j] = acc;
                    }
                    let gw = &mut grad_w.data_mut()[kernel_off..kernel_off + KERNEL_AREA];
                    for i in 0..KERNEL_AREA {
                        gw[i] = ge[i] * scale[i];
                    }
                }
                None => {
                    grad_w.data_mut()[kernel_off..kernel_off + KERNEL_AREA].copy_from_slice(ge);
                }
            }
        }
    }

    Ok(ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias: grad_b,
        selection: grad_z,
    })
}

/// `Σ_j z_j M_j` as a 9-entry position scale.
pub fn mask_weighted_sum(library: &PatternLibrary, z: &[f64]) -> [f64; KERNEL_AREA] {
    debug_assert_eq!(z.len(), library.k());
    let mut scale = [0.0f64; KERNEL_AREA];
    for (j, mask) in library.masks().iter().enumerate() {
        let zj = z[j];
        for (r, c) in mask.positions() {
            scale[r * KERNEL_SIDE + c] += zj;
        }
    }
    scale
}

/// The pattern-weighted kernel `w ∘ Σ_j z_j M_j` for a single 3x3 kernel.
pub fn masked_effective_kernel(
    weights: &Tensor,
    z: &[f64],
    library: &PatternLibrary,
) -> Result<Tensor> {
    if weights.shape() != [KERNEL_SIDE, KERNEL_SIDE] {
        return Err(Error::ShapeMismatch {
            context: "masked kernel weights must be [3, 3]",
            left: weights.shape().to_vec(),
            right: vec![KERNEL_SIDE, KERNEL_SIDE],
        });
    }
    if z.len() != library.k() {
        return Err(Error::SelectionSize {
            got: z.len(),
            expected: library.k(),
        });
    }
    let scale = mask_weighted_sum(library, z);
    let data = weights
        .data()
        .iter()
        .zip(scale.iter())
        .map(|(w, s)| w * s)
        .collect();
    Tensor::from_vec(&[KERNEL_SIDE, KERNEL_SIDE], data)
}

/// Gradients of a scalar loss through [`masked_effective_kernel`]:
/// given `grad_eff = dL/d(effective kernel)`, returns
/// `(dL/d(weights), dL/dz)`.
pub fn masked_kernel_grads(
    weights: &Tensor,
    z: &[f64],
    library: &PatternLibrary,
    grad_eff: &Tensor,
) -> Result<(Tensor, Vec<f64>)> {
    if grad_eff.shape() != weights.shape() {
        return Err(Error::ShapeMismatch {
            context: "masked kernel grad",
            left: grad_eff.shape().to_vec(),
            right: weights.shape().to_vec(),
        });
    }
    let scale = mask_weighted_sum(library, z);
    let gw: Vec<f64> = grad_eff
        .data()
        .iter()
        .zip(scale.iter())
        .map(|(g, s)| g * s)
        .collect();
    let mut gz = vec![0.0; library.k()];
    for (j, mask) in library.masks().iter().enumerate() {
        let mut acc = 0.0;
        for (r, c) in mask.positions() {
            let i = r * KERNEL_SIDE + c;
            acc += grad_eff.data()[i] * weights.data()[i];
        }
        gz[j] = acc;
    }
    Ok((Tensor::from_vec(weights.shape(), gw)?, gz))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern;

    fn layer_from(weights: Vec<f64>, f: usize, c: usize, bias: Vec<f64>, pad: usize) -> ConvLayer {
        ConvLayer::new(
            Tensor::from_vec(&[f, c, 3, 3], weights).unwrap(),
            Tensor::from_vec(&[f], bias).unwrap(),
            1,
            pad,
        )
        .unwrap()
    }

    #[test]
    fn all_ones_kernel_sums_the_input() {
        let input = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let layer = layer_from(vec![1.0; 9], 1, 1, vec![0.0], 0);
        let out = conv2d_forward(&input, &layer).unwrap();
        assert_eq!(out.shape(), [1, 1, 1, 1]);
        assert_eq!(out.data()[0], 45.0);
    }

    #[test]
    fn impulse_kernel_is_identity() {
        let input =
            Tensor::from_vec(&[1, 1, 4, 5], (0..20).map(|v| v as f64 * 0.5 - 3.0).collect())
                .unwrap();
        let mut w = vec![0.0; 9];
        w[4] = 1.0; // center tap
        let layer = layer_from(w, 1, 1, vec![0.0], 1);
        let out = conv2d_forward(&input, &layer).unwrap();
        assert_eq!(out.shape(), input.shape());
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn shape_mismatch_is_rejected_with_both_shapes() {
        let input = Tensor::zeros(&[1, 2, 4, 4]);
        let layer = layer_from(vec![0.0; 9], 1, 1, vec![0.0], 0);
        let err = conv2d_forward(&input, &layer).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 2, 4, 4]"), "got: {msg}");
        assert!(msg.contains("[1, 1, 3, 3]"), "got: {msg}");
    }

    /// Plain seven-loop reference, written independently of the production
    /// path (no padding buffer, no tap hoisting).
    fn naive_conv(input: &Tensor, layer: &ConvLayer) -> Tensor {
        let (b_n, c_n, h, w) = (
            input.shape()[0],
            input.shape()[1],
            input.shape()[2],
            input.shape()[3],
        );
        let f_n = layer.filters();
        let (oh, ow) = layer.out_hw(h, w);
        let mut out = Tensor::zeros(&[b_n, f_n, oh, ow]);
        for b in 0..b_n {
            for f in 0..f_n {
                for y in 0..oh {
                    for x in 0..ow {
                        let mut acc = layer.bias.data()[f];
                        for c in 0..c_n {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (y * layer.stride + ky) as isize - layer.pad as isize;
                                    let ix = (x * layer.stride + kx) as isize - layer.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w
                                    {
                                        acc += layer.kernel(f, c)[ky * 3 + kx]
                                            * input.at(&[b, c, iy as usize, ix as usize]);
                                    }
                                }
                            }
                        }
                        out.set(&[b, f, y, x], acc);
                    }
                }
            }
        }
        out
    }

    fn seeded_tensor(shape: &[usize], seed: u64) -> Tensor {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn forward_matches_naive_loop_oracle() {
        let input = seeded_tensor(&[2, 3, 8, 8], 7);
        let weights = seeded_tensor(&[4, 3, 3, 3], 8);
        let bias = seeded_tensor(&[4], 9);
        for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
            let layer = ConvLayer::new(weights.clone(), bias.clone(), stride, pad).unwrap();
            let got = conv2d_forward(&input, &layer).unwrap();
            let want = naive_conv(&input, &layer);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let input = seeded_tensor(&[1, 2, 5, 5], 3);
        let layer = ConvLayer::new(seeded_tensor(&[3, 2, 3, 3], 4), Tensor::zeros(&[3]), 1, 1)
            .unwrap();
        let out = conv2d_forward(&input, &layer).unwrap();
        let grads =
            conv2d_backward(&input, &layer, None, &Tensor::zeros(out.shape())).unwrap();
        assert!(grads.weights.data().iter().all(|&g| g == 0.0));
        assert!(grads.bias.data().iter().all(|&g| g == 0.0));
        assert!(grads.input.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn single_pixel_upstream_gradient_selects_the_input_patch() {
        let input = seeded_tensor(&[1, 1, 5, 5], 11);
        let layer = ConvLayer::new(seeded_tensor(&[1, 1, 3, 3], 12), Tensor::zeros(&[1]), 1, 0)
            .unwrap();
        let out = conv2d_forward(&input, &layer).unwrap();
        let mut g = Tensor::zeros(out.shape());
        g.set(&[0, 0, 1, 2], 1.0);
        let grads = conv2d_backward(&input, &layer, None, &g).unwrap();
        for ky in 0..3 {
            for kx in 0..3 {
                assert!(
                    (grads.weights.at(&[0, 0, ky, kx]) - input.at(&[0, 0, 1 + ky, 2 + kx])).abs()
                        < 1e-15
                );
            }
        }
    }

    #[test]
    fn masked_kernel_basics() {
        let lib = pattern::derived_library();
        let w = seeded_tensor(&[3, 3], 21);
        let mut z = vec![0.0; lib.k()];
        // one-hot zeroes the kernel outside the mask
        z[2] = 1.0;
        let eff = masked_effective_kernel(&w, &z, &lib).unwrap();
        let mask = lib.mask(2);
        for r in 0..3 {
            for c in 0..3 {
                let want = if mask.contains(r, c) { w.at(&[r, c]) } else { 0.0 };
                assert_eq!(eff.at(&[r, c]), want);
            }
        }
        // zero selection annihilates
        let eff = masked_effective_kernel(&w, &vec![0.0; lib.k()], &lib).unwrap();
        assert!(eff.data().iter().all(|&v| v == 0.0));
        // K mismatch rejected
        assert!(masked_effective_kernel(&w, &[1.0, 0.0], &lib).is_err());
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let lib = pattern::derived_library();
        for seed in 0..4u64 {
            let input = seeded_tensor(&[2, 2, 5, 5], 100 + seed);
            let layer = ConvLayer::new(
                seeded_tensor(&[3, 2, 3, 3], 200 + seed),
                seeded_tensor(&[3], 300 + seed),
                1,
                1,
            )
            .unwrap();
            let z: Vec<f64> = {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(400 + seed);
                (0..3 * 2 * lib.k())
                    .map(|_| rng.random_range(0.0..0.4))
                    .collect()
            };
            let proj = seeded_tensor(&[2, 3, 5, 5], 500 + seed);
            let loss = |layer: &ConvLayer, z: &[f64]| -> f64 {
                let out = conv2d_forward_with(&input, layer, Some((&lib, z))).unwrap();
                out.data().iter().zip(proj.data()).map(|(a, b)| a * b).sum()
            };

            let out_shape = conv2d_forward_with(&input, &layer, Some((&lib, &z)))
                .unwrap()
                .shape()
                .to_vec();
            assert_eq!(proj.shape(), out_shape.as_slice());
            let grads = conv2d_backward(&input, &layer, Some((&lib, &z)), &proj).unwrap();

            let h = 1e-5;
            // a few weight coordinates
            for &(f, c, ky, kx) in &[(0, 0, 0, 0), (1, 1, 2, 1), (2, 0, 1, 1)] {
                let mut plus = layer.clone();
                plus.weights.set(&[f, c, ky, kx], layer.weights.at(&[f, c, ky, kx]) + h);
                let mut minus = layer.clone();
                minus.weights.set(&[f, c, ky, kx], layer.weights.at(&[f, c, ky, kx]) - h);
                let fd = (loss(&plus, &z) - loss(&minus, &z)) / (2.0 * h);
                let an = grads.weights.at(&[f, c, ky, kx]);
                assert!(
                    (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3) < 1e-6,
                    "weight grad {an} vs fd {fd}"
                );
            }
            // a few selection coordinates
            for j in [0usize, 5, 11] {
                let idx = (1 * 2 + 1) * lib.k() + j % lib.k();
                let mut zp = z.clone();
                zp[idx] += h;
                let mut zm = z.clone();
                zm[idx] -= h;
                let fd = (loss(&layer, &zp) - loss(&layer, &zm)) / (2.0 * h);
                let an = grads.selection[idx];
                assert!(
                    (an - fd).abs() / an.abs().max(fd.abs()).max(1e-3) < 1e-6,
                    "z grad {an} vs fd {fd}"
                );
            }
        }
    }
}
