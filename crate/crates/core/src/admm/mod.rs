//! Pattern-aware network pruning: ADMM pattern selection over a shrinking
//! library, plus connectivity pruning by kernel L2 score.
//!
//! Each 3x3 kernel carries a selection vector z over the current library.
//! One ADMM iteration is: SGD on weights and z with the proximal pull
//! `rho/2 * ||z - (u - mu/rho)||^2` (primal), per-kernel projection of
//! `z + mu/rho` onto the probability simplex (proximal), then the dual
//! ascent `mu += rho * (z - u)`. Between iterations the library is shrunk
//! by dropping the patterns selected least often.

mod connectivity;
mod extract;
mod pas;
mod simplex;

pub use connectivity::{
    compression_for_keep_ratio, connectivity_prune, connectivity_prune_uniform,
    connectivity_score, overall_compression, ConnectivityMask, LayerMask,
};
pub use extract::{
    extract_pattern_library, ExtractionLog, ExtractionResult,
    ExtractionSchedule, LogRow,
};
pub use pas::{read_pas, write_pas, PasFile, PasLayer};
pub use simplex::{simplex_project, simplex_threshold};

use crate::nn::{
    train_epoch, Dataset, EpochStats, LayerSelection, Network, PatternSelection,
    SelectionPenalty, TrainConfig,
};
use crate::pattern::{PatternLibrary, PatternMask};
use crate::{Error, Result};
use rand_chacha::ChaCha8Rng;

/// Per-kernel ADMM variables for one conv layer, flat `[kernels * K]`,
/// kernels enumerated filter-major.
#[derive(Clone, Debug)]
pub struct LayerState {
    pub kernels: usize,
    pub k: usize,
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub mu: Vec<f64>,
}

/// Full ADMM state: selection variables for every prunable layer, the
/// current library, the penalty weight rho, and the iteration counter.
#[derive(Clone, Debug)]
pub struct AdmmState {
    pub library: PatternLibrary,
    pub rho: f64,
    pub iteration: u64,
    pub layers: Vec<LayerState>,
}

impl AdmmState {
    /// Uniform initialization: z = u = 1/K everywhere, mu = 0.
    pub fn init(net: &Network, library: PatternLibrary, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::Infeasible(format!("rho must be positive, got {rho}")));
        }
        let k = library.k();
        let layers = net
            .conv_layers()
            .iter()
            .map(|conv| {
                let kernels = conv.filters() * conv.channels();
                LayerState {
                    kernels,
                    k,
                    z: vec![1.0 / k as f64; kernels * k],
                    u: vec![1.0 / k as f64; kernels * k],
                    mu: vec![0.0; kernels * k],
                }
            })
            .collect();
        Ok(AdmmState {
            library,
            rho,
            iteration: 0,
            layers,
        })
    }

    /// Sum over kernels of the per-kernel L2 norm of z - u.
    pub fn residual(&self) -> f64 {
        let mut total = 0.0;
        for layer in &self.layers {
            for kernel in 0..layer.kernels {
                let mut sq = 0.0;
                for j in 0..layer.k {
                    let d = layer.z[kernel * layer.k + j] - layer.u[kernel * layer.k + j];
                    sq += d * d;
                }
                total += sq.sqrt();
            }
        }
        total
    }

    /// Restricts all per-kernel vectors to the masks surviving in
    /// `new_library`. Both z and u are re-projected onto the simplex: u to
    /// keep the state invariant, z because the surviving entries sum to
    /// well below 1 after a shrink (the removed mass would otherwise
    /// collapse the effective kernels and stall training). The Euclidean
    /// projection is a uniform shift, so relative preferences survive.
    pub fn restrict_to(&mut self, new_library: &PatternLibrary) -> Result<()> {
        let keep: Vec<usize> = new_library
            .masks()
            .iter()
            .map(|m| {
                self.library
                    .index_of(*m)
                    .ok_or_else(|| Error::InvalidLibrary(format!("{m:?} not in current library")))
            })
            .collect::<Result<_>>()?;
        let new_k = keep.len();
        for layer in &mut self.layers {
            let old_k = layer.k;
            let mut z = Vec::with_capacity(layer.kernels * new_k);
            let mut u = Vec::with_capacity(layer.kernels * new_k);
            let mut mu = Vec::with_capacity(layer.kernels * new_k);
            for kernel in 0..layer.kernels {
                for &j in &keep {
                    z.push(layer.z[kernel * old_k + j]);
                    u.push(layer.u[kernel * old_k + j]);
                    mu.push(layer.mu[kernel * old_k + j]);
                }
            }
            for kernel in 0..layer.kernels {
                let span = kernel * new_k..(kernel + 1) * new_k;
                let row = simplex_project(&u[span.clone()])?;
                u[span.clone()].copy_from_slice(&row);
                let row = simplex_project(&z[span.clone()])?;
                z[span].copy_from_slice(&row);
            }
            layer.k = new_k;
            layer.z = z;
            layer.u = u;
            layer.mu = mu;
        }
        self.library = new_library.clone();
        Ok(())
    }

    fn to_selection(&self) -> PatternSelection {
        PatternSelection {
            library: self.library.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerSelection {
                    k: l.k,
                    z: l.z.clone(),
                })
                .collect(),
        }
    }

    fn take_selection(&mut self, sel: PatternSelection) {
        for (layer, from) in self.layers.iter_mut().zip(sel.layers) {
            layer.z = from.z;
        }
    }
}

/// The proximal pull `rho/2 * ||z - a||^2` with `a = u - mu/rho`, injected
/// into SGD as a [`SelectionPenalty`].
struct ProximalPull {
    rho: f64,
    /// Per layer, flat `[kernels * K]`.
    a: Vec<Vec<f64>>,
}

impl SelectionPenalty for ProximalPull {
    fn apply(&self, layer: usize, kernel: usize, z: &[f64], grad: &mut [f64]) -> f64 {
        let k = z.len();
        let a = &self.a[layer][kernel * k..(kernel + 1) * k];
        let mut val = 0.0;
        for j in 0..k {
            let d = z[j] - a[j];
            grad[j] += self.rho * d;
            val += 0.5 * self.rho * d * d;
        }
        val
    }
}

/// Primal step: `epochs` passes of SGD on weights and z, minimizing the
/// task loss plus the proximal pull towards `a = u - mu/rho`. u and mu are
/// held fixed. Returns per-epoch statistics.
pub fn primal_step(
    net: &mut Network,
    state: &mut AdmmState,
    data: &Dataset,
    epochs: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpochStats>> {
    let expected: Vec<usize> = net
        .conv_layers()
        .iter()
        .map(|c| c.filters() * c.channels())
        .collect();
    for (layer, &kernels) in state.layers.iter().zip(&expected) {
        if layer.kernels != kernels || layer.k != state.library.k() {
            return Err(Error::ShapeMismatch {
                context: "ADMM state vs network kernels",
                left: vec![layer.kernels, layer.k],
                right: vec![kernels, state.library.k()],
            });
        }
    }

    let pull = ProximalPull {
        rho: state.rho,
        a: state
            .layers
            .iter()
            .map(|l| {
                l.u.iter()
                    .zip(&l.mu)
                    .map(|(u, mu)| u - mu / state.rho)
                    .collect()
            })
            .collect(),
    };

    let mut sel = state.to_selection();
    let mut stats = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        stats.push(train_epoch(
            net,
            Some(&mut sel),
            data,
            cfg,
            Some(&pull),
            None,
            rng,
        )?);
    }
    state.take_selection(sel);
    Ok(stats)
}

/// Proximal step: per kernel, `u = project(z + mu/rho)` onto the simplex.
pub fn proximal_step(state: &mut AdmmState) -> Result<()> {
    let rho = state.rho;
    for layer in &mut state.layers {
        let k = layer.k;
        for kernel in 0..layer.kernels {
            let d: Vec<f64> = (0..k)
                .map(|j| layer.z[kernel * k + j] + layer.mu[kernel * k + j] / rho)
                .collect();
            let u = simplex_project(&d)?;
            layer.u[kernel * k..(kernel + 1) * k].copy_from_slice(&u);
        }
    }
    Ok(())
}

/// Dual ascent: `mu += rho * (z - u)`.
pub fn dual_update(state: &mut AdmmState) {
    let rho = state.rho;
    for layer in &mut state.layers {
        for i in 0..layer.mu.len() {
            layer.mu[i] += rho * (layer.z[i] - layer.u[i]);
        }
    }
    state.iteration += 1;
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax_index(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = i;
        }
    }
    best
}

/// One-hot projection of a selection vector at its argmax.
pub fn binarize(z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    out[argmax_index(z)] = 1.0;
    out
}

/// One pattern index per kernel for every prunable layer, kernels
/// enumerated filter-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub per_layer: Vec<Vec<u8>>,
}

impl Assignment {
    pub fn kernel_count(&self) -> usize {
        self.per_layer.iter().map(|l| l.len()).sum()
    }

    /// Occurrence count per library pattern across all kernels.
    pub fn histogram(&self, k: usize) -> Vec<u32> {
        let mut counts = vec![0u32; k];
        for layer in &self.per_layer {
            for &idx in layer {
                counts[idx as usize] += 1;
            }
        }
        counts
    }
}

/// Materializes the current z as hard per-kernel pattern choices.
pub fn binarize_state(state: &AdmmState) -> Assignment {
    let per_layer = state
        .layers
        .iter()
        .map(|layer| {
            (0..layer.kernels)
                .map(|kernel| {
                    argmax_index(&layer.z[kernel * layer.k..(kernel + 1) * layer.k]) as u8
                })
                .collect()
        })
        .collect();
    Assignment { per_layer }
}

/// The hard kernel bitmaps implied by an assignment: each kept kernel gets
/// its assigned pattern's bitmap, dropped kernels get 0 (fully pruned).
pub fn hard_masks(
    library: &PatternLibrary,
    assignment: &Assignment,
    connectivity: Option<&ConnectivityMask>,
) -> Result<crate::nn::KernelMasks> {
    if let Some(conn) = connectivity {
        if conn.per_layer.len() != assignment.per_layer.len() {
            return Err(Error::ShapeMismatch {
                context: "hard masks: assignment vs connectivity layers",
                left: vec![assignment.per_layer.len()],
                right: vec![conn.per_layer.len()],
            });
        }
    }
    let per_layer = assignment
        .per_layer
        .iter()
        .enumerate()
        .map(|(li, layer)| {
            layer
                .iter()
                .enumerate()
                .map(|(n, &idx)| {
                    if idx as usize >= library.k() {
                        return Err(Error::IndexOutOfRange(format!(
                            "pattern index {idx} for K={}",
                            library.k()
                        )));
                    }
                    let kept = connectivity.map_or(true, |c| c.per_layer[li].kept[n]);
                    Ok(if kept {
                        library.mask(idx as usize).bits()
                    } else {
                        0
                    })
                })
                .collect::<Result<Vec<u16>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(crate::nn::KernelMasks { per_layer })
}

/// Keeps the `new_k` most frequently assigned patterns. Ties are broken by
/// retaining the smaller bitmap first. The result is in canonical
/// (ascending bitmap) order.
pub fn shrink_library(
    library: &PatternLibrary,
    assignment: &Assignment,
    new_k: usize,
) -> Result<PatternLibrary> {
    if new_k < 1 {
        return Err(Error::Infeasible("cannot shrink a library below 1".into()));
    }
    if new_k >= library.k() {
        return Err(Error::Infeasible(format!(
            "shrink target {new_k} is not below the current K {}",
            library.k()
        )));
    }
    let counts = assignment.histogram(library.k());
    let mut order: Vec<usize> = (0..library.k()).collect();
    order.sort_by(|&a, &b| {
        counts[b]
            .cmp(&counts[a])
            .then(library.mask(a).bits().cmp(&library.mask(b).bits()))
    });
    let mut masks: Vec<PatternMask> = order[..new_k]
        .iter()
        .map(|&i| library.mask(i))
        .collect();
    masks.sort();
    PatternLibrary::new(masks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pattern::{derived_library, enumerate_candidate_masks};
    use rand::{Rng, SeedableRng};

    #[test]
    fn dual_update_is_the_affine_formula() {
        let net = Network::toy(1, 2, (8, 8), 1);
        let mut state = AdmmState::init(&net, derived_library(), 2.0).unwrap();
        state.layers[0].z[0] = 0.35;
        state.layers[0].u[0] = 0.15;
        let before = state.layers[0].mu[0];
        dual_update(&mut state);
        assert!((state.layers[0].mu[0] - (before + 2.0 * 0.2)).abs() < 1e-15);
        // z == u leaves mu unchanged
        let mut state2 = AdmmState::init(&net, derived_library(), 1.0).unwrap();
        let mu_before = state2.layers[0].mu.clone();
        dual_update(&mut state2);
        assert_eq!(state2.layers[0].mu, mu_before);
        assert_eq!(state2.iteration, 1);
    }

    #[test]
    fn proximal_fixed_points() {
        let net = Network::toy(1, 2, (8, 8), 1);
        let lib = derived_library();
        let k = lib.k();
        let mut state = AdmmState::init(&net, lib, 1.0).unwrap();
        // uniform z with zero mu stays uniform
        proximal_step(&mut state).unwrap();
        for &u in &state.layers[0].u {
            assert!((u - 1.0 / k as f64).abs() < 1e-12);
        }
        // one-hot z with zero mu is a fixed point
        for j in 0..k {
            state.layers[0].z[j] = if j == 2 { 1.0 } else { 0.0 };
        }
        proximal_step(&mut state).unwrap();
        for j in 0..k {
            let want = if j == 2 { 1.0 } else { 0.0 };
            assert!((state.layers[0].u[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn proximal_output_stays_on_simplex() {
        let net = Network::toy(1, 2, (8, 8), 1);
        let mut state = AdmmState::init(&net, derived_library(), 0.7).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for layer in &mut state.layers {
            for v in layer.z.iter_mut().chain(layer.mu.iter_mut()) {
                *v = rng.random_range(-2.0..2.0);
            }
        }
        proximal_step(&mut state).unwrap();
        for layer in &state.layers {
            for kernel in 0..layer.kernels {
                let row = &layer.u[kernel * layer.k..(kernel + 1) * layer.k];
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn binarize_one_hot_and_ties() {
        assert_eq!(binarize(&[0.2, 0.7, 0.1]), vec![0.0, 1.0, 0.0]);
        assert_eq!(binarize(&[0.5, 0.5]), vec![1.0, 0.0]);
        let one_hot = vec![0.0, 0.0, 1.0];
        assert_eq!(binarize(&one_hot), one_hot);
    }

    #[test]
    fn shrink_keeps_top_counts_with_bitmap_tiebreak() {
        let lib = {
            let all = enumerate_candidate_masks();
            PatternLibrary::new(all.masks()[..3].to_vec()).unwrap()
        };
        let assignment = Assignment {
            per_layer: vec![vec![0, 0, 1, 2, 0]],
        };
        let out = shrink_library(&lib, &assignment, 2).unwrap();
        assert_eq!(out.k(), 2);
        assert!(out.index_of(lib.mask(0)).is_some());
        // 1 and 2 tie at one occurrence; the smaller bitmap (mask 1) stays
        assert!(out.index_of(lib.mask(1)).is_some());

        let unanimous = Assignment {
            per_layer: vec![vec![2, 2, 2]],
        };
        let out = shrink_library(&lib, &unanimous, 1).unwrap();
        assert_eq!(out.k(), 1);
        assert_eq!(out.mask(0), lib.mask(2));

        assert!(shrink_library(&lib, &assignment, 0).is_err());
        assert!(shrink_library(&lib, &assignment, 3).is_err());
    }

    #[test]
    fn shrink_matches_independent_recount() {
        let lib = enumerate_candidate_masks();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let assignment = Assignment {
            per_layer: vec![(0..5000)
                .map(|_| rng.random_range(0..lib.k()) as u8)
                .collect()],
        };
        let out = shrink_library(&lib, &assignment, 12).unwrap();

        // independent histogram: count with a map, rank by (count, -bits)
        let mut counts = std::collections::BTreeMap::new();
        for &idx in &assignment.per_layer[0] {
            *counts.entry(lib.mask(idx as usize).bits()).or_insert(0u32) += 1;
        }
        let mut ranked: Vec<(u32, u16)> = lib
            .masks()
            .iter()
            .map(|m| (*counts.get(&m.bits()).unwrap_or(&0), m.bits()))
            .collect();
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut want: Vec<u16> = ranked[..12].iter().map(|&(_, bits)| bits).collect();
        want.sort();
        let got: Vec<u16> = out.masks().iter().map(|m| m.bits()).collect();
        assert_eq!(got, want);

        // never drop a pattern that outscores a retained one
        let min_kept = out
            .masks()
            .iter()
            .map(|m| counts.get(&m.bits()).unwrap_or(&0))
            .min()
            .unwrap();
        for m in lib.masks() {
            if out.index_of(*m).is_none() {
                assert!(counts.get(&m.bits()).unwrap_or(&0) <= min_kept);
            }
        }
    }

    #[test]
    fn restrict_remaps_and_reprojects() {
        let net = Network::toy(1, 2, (8, 8), 1);
        let lib = derived_library();
        let mut state = AdmmState::init(&net, lib.clone(), 1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for layer in &mut state.layers {
            for v in layer.z.iter_mut() {
                *v = rng.random_range(0.0..1.0);
            }
        }
        let smaller = PatternLibrary::new(lib.masks()[2..6].to_vec()).unwrap();
        let z_before = state.layers[0].z.clone();
        state.restrict_to(&smaller).unwrap();
        assert_eq!(state.library, smaller);
        assert_eq!(state.layers[0].k, 4);
        // z keeps the surviving entries' relative order (projection shifts
        // uniformly) and lands back on the simplex, as does u
        for kernel in 0..state.layers[0].kernels {
            let z_row = &state.layers[0].z[kernel * 4..(kernel + 1) * 4];
            let old_row: Vec<f64> = (0..4).map(|j| z_before[kernel * 8 + 2 + j]).collect();
            for a in 0..4 {
                for b in 0..4 {
                    if old_row[a] > old_row[b] && z_row[b] > 0.0 {
                        assert!(z_row[a] > z_row[b]);
                    }
                }
            }
            for row in [z_row, &state.layers[0].u[kernel * 4..(kernel + 1) * 4]] {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
