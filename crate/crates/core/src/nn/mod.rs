//! Minimal dense CNN substrate: tensors, conv2d with analytic gradients,
//! ReLU / 2x2 max-pool / linear-classifier layers, cross-entropy, and plain
//! SGD. Training runs in f64 so gradient checks are clean; the inference
//! engine re-executes models in f32.

mod conv;
mod data;
mod network;
mod pnm;
mod tensor;

pub use conv::{
    conv2d_backward, conv2d_forward, masked_effective_kernel, masked_kernel_grads,
    mask_weighted_sum, ConvGrads, ConvLayer,
};
pub use data::Dataset;
pub use network::{
    accuracy, cross_entropy, forward, predict, softmax_rows, train_epoch, EpochStats,
    KernelMasks, Layer, LayerSelection, Linear, Network, PatternSelection, SelectionPenalty,
    TrainConfig,
};
pub use pnm::{read_pnm, write_pnm};
pub use tensor::Tensor;
