//! Dataset resolution shared by the training-side commands: either the
//! bundled synthetic-blob generator (`--data synth`) or a directory of
//! MNIST-layout IDX ubyte files.

use psparse_core::nn::Dataset;
use psparse_core::{Error, Result};
use std::path::PathBuf;

#[derive(Clone, Debug)]
pub struct DataSpec {
    pub source: String,
    pub samples: usize,
    pub classes: usize,
    pub image_size: usize,
    pub noise: f64,
}

impl DataSpec {
    /// Train and held-out test sets. Synthetic data derives both from the
    /// seed (test uses an independent stream); IDX directories must hold
    /// the standard MNIST file names.
    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        if self.source == "synth" {
            let train = Dataset::synthetic_blobs(
                self.samples,
                self.classes,
                (self.image_size, self.image_size),
                self.noise,
                seed,
            );
            let test = Dataset::synthetic_blobs(
                (self.samples / 4).max(self.classes * 8),
                self.classes,
                (self.image_size, self.image_size),
                self.noise,
                seed.wrapping_add(0x9E37_79B9),
            );
            return Ok((train, test));
        }
        let dir = PathBuf::from(&self.source);
        if !dir.is_dir() {
            return Err(Error::Infeasible(format!(
                "--data must be \"synth\" or a directory of IDX files, got {:?}",
                self.source
            )));
        }
        let train = Dataset::from_idx(
            &dir.join("train-images-idx3-ubyte"),
            &dir.join("train-labels-idx1-ubyte"),
            Some(self.samples),
            self.classes,
        )?;
        let test = Dataset::from_idx(
            &dir.join("t10k-images-idx3-ubyte"),
            &dir.join("t10k-labels-idx1-ubyte"),
            Some((self.samples / 4).max(64)),
            self.classes,
        )?;
        Ok((train, test))
    }
}
