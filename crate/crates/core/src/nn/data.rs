use super::Tensor;
use crate::{Error, Result};
use byteorder::{BigEndian, ReadBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

/// A labelled image set, inputs `[B, C, H, W]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.shape().len() != 4 || inputs.shape()[0] != labels.len() {
            return Err(Error::ShapeMismatch {
                context: "dataset inputs vs labels",
                left: inputs.shape().to_vec(),
                right: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::IndexOutOfRange(format!(
                "label {bad} for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gathers the selected samples into a batch tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let s = self.inputs.shape();
        let sample = s[1] * s[2] * s[3];
        let mut data = Vec::with_capacity(indices.len() * sample);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&self.inputs.data()[i * sample..(i + 1) * sample]);
            labels.push(self.labels[i]);
        }
        let t = Tensor::from_vec(&[indices.len(), s[1], s[2], s[3]], data)
            .expect("batch gather preserves shape");
        (t, labels)
    }

    /// Single-channel anisotropic Gaussian blobs: class k is an elongated
    /// blob oriented at angle pi*k/classes, with positional jitter and
    /// uniform pixel noise. Orientation is what the classes differ by, so
    /// trained kernels become orientation-selective. Fully determined by
    /// the seed.
    pub fn synthetic_blobs(
        samples: usize,
        classes: usize,
        hw: (usize, usize),
        noise: f64,
        seed: u64,
    ) -> Self {
        assert!(classes >= 2, "need at least two classes");
        let (h, w) = hw;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = h.min(w) as f64;
        let sigma_major = side / 3.5;
        let sigma_minor = side / 12.0;
        let mut data = Vec::with_capacity(samples * h * w);
        let mut labels = Vec::with_capacity(samples);
        for i in 0..samples {
            let class = i % classes;
            let theta = std::f64::consts::PI * class as f64 / classes as f64
                + rng.random_range(-0.08..0.08);
            let (sin_t, cos_t) = theta.sin_cos();
            let cy = h as f64 / 2.0 + rng.random_range(-1.5..1.5);
            let cx = w as f64 / 2.0 + rng.random_range(-1.5..1.5);
            let amp = rng.random_range(0.8..1.2);
            for y in 0..h {
                for x in 0..w {
                    let dy = y as f64 - cy;
                    let dx = x as f64 - cx;
                    let major = dx * cos_t + dy * sin_t;
                    let minor = -dx * sin_t + dy * cos_t;
                    let v = amp
                        * (-major * major / (2.0 * sigma_major * sigma_major)
                            - minor * minor / (2.0 * sigma_minor * sigma_minor))
                            .exp()
                        + noise * rng.random_range(-1.0..1.0);
                    data.push(v);
                }
            }
            labels.push(class);
        }
        Dataset {
            inputs: Tensor::from_vec(&[samples, 1, h, w], data).unwrap(),
            labels,
            num_classes: classes,
        }
    }

    /// Loads an IDX ubyte image/label file pair (the MNIST layout: both
    /// headers big-endian, pixels scaled to [0, 1]).
    pub fn from_idx(
        images: &Path,
        labels: &Path,
        limit: Option<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        let mut img = BufReader::new(File::open(images).map_err(|e| Error::File {
            path: images.to_path_buf(),
            source: e,
        })?);
        let magic = img.read_u32::<BigEndian>()?;
        if magic != 0x0000_0803 {
            return Err(Error::format(0, format!("bad IDX image magic {magic:#010x}")));
        }
        let count = img.read_u32::<BigEndian>()? as usize;
        let h = img.read_u32::<BigEndian>()? as usize;
        let w = img.read_u32::<BigEndian>()? as usize;
        let take = limit.map_or(count, |l| l.min(count));
        let mut pixels = vec![0u8; take * h * w];
        img.read_exact(&mut pixels)?;

        let mut lbl = BufReader::new(File::open(labels).map_err(|e| Error::File {
            path: labels.to_path_buf(),
            source: e,
        })?);
        let magic = lbl.read_u32::<BigEndian>()?;
        if magic != 0x0000_0801 {
            return Err(Error::format(0, format!("bad IDX label magic {magic:#010x}")));
        }
        let lcount = lbl.read_u32::<BigEndian>()? as usize;
        if lcount != count {
            return Err(Error::format(
                4,
                format!("IDX image/label count mismatch: {count} vs {lcount}"),
            ));
        }
        let mut raw_labels = vec![0u8; take];
        lbl.read_exact(&mut raw_labels)?;

        let data: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
        Dataset::new(
            Tensor::from_vec(&[take, 1, h, w], data)?,
            raw_labels.iter().map(|&l| l as usize).collect(),
            num_classes,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_balanced() {
        let a = Dataset::synthetic_blobs(40, 4, (16, 16), 0.1, 9);
        let b = Dataset::synthetic_blobs(40, 4, (16, 16), 0.1, 9);
        assert_eq!(a.inputs.data(), b.inputs.data());
        assert_eq!(a.labels, b.labels);
        for class in 0..4 {
            assert_eq!(a.labels.iter().filter(|&&l| l == class).count(), 10);
        }
    }

    #[test]
    fn batch_gathers_in_order() {
        let d = Dataset::synthetic_blobs(10, 2, (8, 8), 0.0, 1);
        let (inputs, labels) = d.batch(&[3, 7]);
        assert_eq!(inputs.shape(), [2, 1, 8, 8]);
        assert_eq!(labels, vec![d.labels[3], d.labels[7]]);
        assert_eq!(
            &inputs.data()[..64],
            &d.inputs.data()[3 * 64..4 * 64]
        );
    }

    #[test]
    fn labels_must_fit_num_classes() {
        let t = Tensor::zeros(&[2, 1, 4, 4]);
        assert!(Dataset::new(t.clone(), vec![0, 2], 2).is_err());
        assert!(Dataset::new(t, vec![0, 1], 2).is_ok());
    }
}
