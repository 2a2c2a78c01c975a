use super::Assignment;
use crate::nn::{ConvLayer, Network};
use crate::pattern::KERNEL_AREA;
use crate::{Error, Result};

/// Connectivity decision for one conv layer: which (filter, channel)
/// kernels survive, plus the L2 scores the decision was made from.
#[derive(Clone, Debug)]
pub struct LayerMask {
    pub filters: usize,
    pub channels: usize,
    /// Flat `[F * C]`, filter-major. True keeps the kernel.
    pub kept: Vec<bool>,
    pub gamma: Vec<f64>,
}

impl LayerMask {
    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }

    fn filter_kept(&self, f: usize) -> usize {
        (0..self.channels)
            .filter(|&c| self.kept[f * self.channels + c])
            .count()
    }

    fn channel_kept(&self, c: usize) -> usize {
        (0..self.filters)
            .filter(|&f| self.kept[f * self.channels + c])
            .count()
    }
}

/// Per-layer connectivity masks for a whole network.
#[derive(Clone, Debug)]
pub struct ConnectivityMask {
    pub per_layer: Vec<LayerMask>,
}

impl ConnectivityMask {
    /// All-true mask (no connectivity pruning).
    pub fn dense(net: &Network) -> Self {
        let per_layer = net
            .conv_layers()
            .iter()
            .map(|conv| LayerMask {
                filters: conv.filters(),
                channels: conv.channels(),
                kept: vec![true; conv.filters() * conv.channels()],
                gamma: gamma_matrix(conv),
            })
            .collect();
        ConnectivityMask { per_layer }
    }

    pub fn kept_kernels(&self) -> usize {
        self.per_layer.iter().map(|l| l.kept_count()).sum()
    }

    pub fn total_kernels(&self) -> usize {
        self.per_layer.iter().map(|l| l.kept.len()).sum()
    }

    /// Checks that every filter keeps a kernel and every input channel
    /// still feeds one.
    pub fn validate(&self) -> Result<()> {
        for (i, layer) in self.per_layer.iter().enumerate() {
            for f in 0..layer.filters {
                if layer.filter_kept(f) == 0 {
                    return Err(Error::Infeasible(format!(
                        "layer {i}: filter {f} lost all kernels"
                    )));
                }
            }
            for c in 0..layer.channels {
                if layer.channel_kept(c) == 0 {
                    return Err(Error::Infeasible(format!(
                        "layer {i}: input channel {c} feeds no kept kernel"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// L2 norm of the 3x3 kernel (f, c) — the critical connectivity score.
pub fn connectivity_score(layer: &ConvLayer, f: usize, c: usize) -> Result<f64> {
    if f >= layer.filters() || c >= layer.channels() {
        return Err(Error::IndexOutOfRange(format!(
            "kernel ({f}, {c}) in a [{} x {}] layer",
            layer.filters(),
            layer.channels()
        )));
    }
    Ok(layer.kernel(f, c).iter().map(|w| w * w).sum::<f64>().sqrt())
}

fn gamma_matrix(layer: &ConvLayer) -> Vec<f64> {
    let mut out = Vec::with_capacity(layer.filters() * layer.channels());
    for f in 0..layer.filters() {
        for c in 0..layer.channels() {
            out.push(layer.kernel(f, c).iter().map(|w| w * w).sum::<f64>().sqrt());
        }
    }
    out
}

/// Uniform keep ratio across every prunable layer.
pub fn connectivity_prune_uniform(net: &Network, keep_ratio: f64) -> Result<ConnectivityMask> {
    connectivity_prune(net, &vec![keep_ratio; net.conv_count()])
}

/// Keeps the `ceil(keep_ratio * F * C)` highest-score kernels per layer
/// (one ratio per conv layer), then repairs: any filter left empty gets its
/// best excluded kernel back, paid for by evicting the lowest-score kept
/// kernel whose removal breaks nothing; unfed input channels are repaired
/// the same way. Kept counts per layer are exact.
pub fn connectivity_prune(net: &Network, keep_ratios: &[f64]) -> Result<ConnectivityMask> {
    if keep_ratios.len() != net.conv_count() {
        return Err(Error::ShapeMismatch {
            context: "keep ratios vs conv layers",
            left: vec![keep_ratios.len()],
            right: vec![net.conv_count()],
        });
    }
    if let Some(&bad) = keep_ratios.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
        return Err(Error::Infeasible(format!(
            "keep_ratio must be in (0, 1], got {bad}"
        )));
    }
    let mut per_layer = Vec::new();
    for (i, conv) in net.conv_layers().iter().enumerate() {
        let keep_ratio = keep_ratios[i];
        let (filters, channels) = (conv.filters(), conv.channels());
        let total = filters * channels;
        let target = ((keep_ratio * total as f64).ceil() as usize).clamp(1, total);
        if target < filters.max(channels) {
            return Err(Error::Infeasible(format!(
                "layer {i}: keeping {target} of {total} kernels cannot cover {} filters and {} channels",
                filters, channels
            )));
        }
        let gamma = gamma_matrix(conv);
        // rank descending by score; ties keep the smaller index
        let mut order: Vec<usize> = (0..total).collect();
        order.sort_by(|&a, &b| gamma[b].partial_cmp(&gamma[a]).unwrap().then(a.cmp(&b)));
        let mut kept = vec![false; total];
        for &idx in &order[..target] {
            kept[idx] = true;
        }

        let mut layer = LayerMask {
            filters,
            channels,
            kept,
            gamma,
        };
        repair(&mut layer, i)?;
        per_layer.push(layer);
    }
    let mask = ConnectivityMask { per_layer };
    mask.validate()?;
    Ok(mask)
}

/// Restores coverage for empty filters / unfed channels by swapping: bring
/// back the best excluded kernel of the violated row or column, evict the
/// globally worst kept kernel that is safe to drop.
fn repair(layer: &mut LayerMask, layer_idx: usize) -> Result<()> {
    loop {
        let violation = (0..layer.filters)
            .find(|&f| layer.filter_kept(f) == 0)
            .map(|f| (true, f))
            .or_else(|| {
                (0..layer.channels)
                    .find(|&c| layer.channel_kept(c) == 0)
                    .map(|c| (false, c))
            });
        let Some((is_filter, idx)) = violation else {
            return Ok(());
        };

        let candidates: Vec<usize> = if is_filter {
            (0..layer.channels).map(|c| idx * layer.channels + c).collect()
        } else {
            (0..layer.filters).map(|f| f * layer.channels + idx).collect()
        };
        let restore = candidates
            .into_iter()
            .filter(|&n| !layer.kept[n])
            .max_by(|&a, &b| layer.gamma[a].partial_cmp(&layer.gamma[b]).unwrap().then(b.cmp(&a)))
            .expect("a fully-excluded row/col always has a restore candidate");
        layer.kept[restore] = true;

        // evict the weakest kept kernel whose filter and channel both stay covered
        let evict = (0..layer.kept.len())
            .filter(|&n| n != restore && layer.kept[n])
            .filter(|&n| {
                let (f, c) = (n / layer.channels, n % layer.channels);
                layer.filter_kept(f) > 1 && layer.channel_kept(c) > 1
            })
            .min_by(|&a, &b| layer.gamma[a].partial_cmp(&layer.gamma[b]).unwrap().then(a.cmp(&b)));
        match evict {
            Some(n) => layer.kept[n] = false,
            None => {
                return Err(Error::Infeasible(format!(
                    "layer {layer_idx}: repair rule cannot keep every filter and channel covered at this keep_ratio"
                )))
            }
        }
    }
}

/// Compression over prunable conv weights for a stated keep ratio:
/// pattern sparsity alone is 9/4, connectivity divides further.
pub fn compression_for_keep_ratio(keep_ratio: f64) -> f64 {
    (KERNEL_AREA as f64 / 4.0) / keep_ratio
}

/// Achieved compression: (9/4) divided by the realized kept-kernel ratio.
pub fn overall_compression(assignment: &Assignment, connectivity: &ConnectivityMask) -> Result<f64> {
    let assigned: usize = assignment.per_layer.iter().map(|l| l.len()).sum();
    let total = connectivity.total_kernels();
    if assigned != total {
        return Err(Error::ShapeMismatch {
            context: "assignment vs connectivity kernel counts",
            left: vec![assigned],
            right: vec![total],
        });
    }
    let kept = connectivity.kept_kernels();
    if kept == 0 {
        return Err(Error::Infeasible("no kernels kept".into()));
    }
    Ok(compression_for_keep_ratio(kept as f64 / total as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn layer_with_kernels(filters: usize, channels: usize, values: &[f64]) -> ConvLayer {
        // kernel (f, c) filled with values[f*C+c] at one position, zero elsewhere
        let mut w = vec![0.0; filters * channels * KERNEL_AREA];
        for (n, &v) in values.iter().enumerate() {
            w[n * KERNEL_AREA] = v;
        }
        ConvLayer::new(
            Tensor::from_vec(&[filters, channels, 3, 3], w).unwrap(),
            Tensor::zeros(&[filters]),
            1,
            1,
        )
        .unwrap()
    }

    #[test]
    fn score_is_the_l2_norm() {
        let mut w = vec![0.0; KERNEL_AREA];
        w[0] = 1.0;
        w[1] = 2.0;
        w[2] = 2.0;
        let layer = ConvLayer::new(
            Tensor::from_vec(&[1, 1, 3, 3], w).unwrap(),
            Tensor::zeros(&[1]),
            1,
            1,
        )
        .unwrap();
        assert_eq!(connectivity_score(&layer, 0, 0).unwrap(), 3.0);
        assert!(connectivity_score(&layer, 1, 0).is_err());

        let zero = layer_with_kernels(1, 1, &[0.0]);
        assert_eq!(connectivity_score(&zero, 0, 0).unwrap(), 0.0);
    }

    #[test]
    fn score_matches_direct_arithmetic_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let w: Vec<f64> = (0..2 * 3 * KERNEL_AREA).map(|_| rng.random_range(-1.0..1.0)).collect();
        let layer = ConvLayer::new(
            Tensor::from_vec(&[2, 3, 3, 3], w.clone()).unwrap(),
            Tensor::zeros(&[2]),
            1,
            1,
        )
        .unwrap();
        for f in 0..2 {
            for c in 0..3 {
                let mut acc = 0.0;
                for i in 0..KERNEL_AREA {
                    let v = w[(f * 3 + c) * KERNEL_AREA + i];
                    acc += v * v;
                }
                let want = acc.sqrt();
                let got = connectivity_score(&layer, f, c).unwrap();
                assert!((got - want).abs() <= 1e-12);
            }
        }
    }

    fn net_from_layer(layer: ConvLayer) -> Network {
        let feat = layer.filters() * 8 * 8;
        let classifier = crate::nn::Linear::new(
            Tensor::zeros(&[2, feat]),
            Tensor::zeros(&[2]),
        )
        .unwrap();
        Network::new(vec![crate::nn::Layer::Conv(layer), crate::nn::Layer::Relu], classifier)
            .unwrap()
    }

    #[test]
    fn keep_ratio_one_keeps_everything() {
        let net = net_from_layer(layer_with_kernels(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let mask = connectivity_prune(&net, &[1.0]).unwrap();
        assert!(mask.per_layer[0].kept.iter().all(|&k| k));
        let assignment = Assignment {
            per_layer: vec![vec![0; 6]],
        };
        assert_eq!(overall_compression(&assignment, &mask).unwrap(), 2.25);
    }

    #[test]
    fn dominant_kernel_survives_minimal_ratio() {
        // 2x2 layer: one kernel much larger; minimum feasible keep is 2 of 4
        let net = net_from_layer(layer_with_kernels(2, 2, &[100.0, 0.1, 0.2, 0.3]));
        let mask = connectivity_prune(&net, &[0.5]).unwrap();
        assert!(mask.per_layer[0].kept[0]);
        assert_eq!(mask.per_layer[0].kept_count(), 2);
        mask.validate().unwrap();
    }

    #[test]
    fn kept_set_matches_sort_oracle_after_repair() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let values: Vec<f64> = (0..8 * 8).map(|_| rng.random_range(0.01..1.0)).collect();
        let net = net_from_layer(layer_with_kernels(8, 8, &values));
        let mask = connectivity_prune(&net, &[0.5]).unwrap();
        mask.validate().unwrap();
        assert_eq!(mask.per_layer[0].kept_count(), 32);

        // oracle: independent re-selection + same repair policy
        let gamma = &mask.per_layer[0].gamma;
        let mut order: Vec<usize> = (0..64).collect();
        order.sort_by(|&a, &b| gamma[b].partial_cmp(&gamma[a]).unwrap().then(a.cmp(&b)));
        let mut want = vec![false; 64];
        for &i in &order[..32] {
            want[i] = true;
        }
        // with continuous random scores repair is almost surely a no-op in
        // this configuration; verify that directly
        let mut oracle_layer = LayerMask {
            filters: 8,
            channels: 8,
            kept: want.clone(),
            gamma: gamma.clone(),
        };
        repair(&mut oracle_layer, 0).unwrap();
        assert_eq!(mask.per_layer[0].kept, oracle_layer.kept);
    }

    #[test]
    fn infeasible_ratio_is_rejected() {
        let net = net_from_layer(layer_with_kernels(4, 4, &[1.0; 16]));
        // 0.1 of 16 kernels = 2 kept, but 4 filters need covering
        let err = connectivity_prune(&net, &[0.1]).unwrap_err();
        assert!(err.to_string().contains("cannot cover"), "{err}");
        assert!(connectivity_prune(&net, &[0.0]).is_err());
        assert!(connectivity_prune(&net, &[1.5]).is_err());
    }

    #[test]
    fn compression_arithmetic() {
        assert_eq!(compression_for_keep_ratio(1.0), 2.25);
        assert_eq!(compression_for_keep_ratio(0.5), 4.5);
        assert_eq!(compression_for_keep_ratio(0.28125), 8.0);
    }
}
