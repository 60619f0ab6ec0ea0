use std::fmt;

use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

/// Identifies an embedder; equal descriptors give identical embeddings.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EmbedderDescriptor {
    pub name: String,
    pub dim: usize,
    pub seed: u64,
}

impl fmt::Display for EmbedderDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/d{}/seed{}", self.name, self.dim, self.seed)
    }
}

/// Maps a `[3, H, W]` image in `[-1, 1]` to a fixed-length vector.
pub trait FeatureEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor;

    fn embed(&self, images: &[Tensor<f32>]) -> Result<Vec<Vec<f64>>>;
}

/// Fixed seeded network: two stride-2 3×3 convolutions with ReLU, then
/// global average pooling.
#[derive(Clone, Debug)]
pub struct RandomProjectionEmbedder {
    seed: u64,
    hidden: usize,
    dim: usize,
    w1: Tensor<f32>,
    w2: Tensor<f32>,
}

impl RandomProjectionEmbedder {
    pub const NAME: &'static str = "random-projection";

    pub fn new(seed: u64) -> Self {
        Self::with_dims(seed, 32, 64)
    }

    pub fn with_dims(seed: u64, hidden: usize, dim: usize) -> Self {
        let he = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let mut r1 = SplitMix64::new(derive_seed(seed, &[1]));
        let mut r2 = SplitMix64::new(derive_seed(seed, &[2]));
        Self {
            seed,
            hidden,
            dim,
            w1: Tensor::randn([hidden, 3, 3, 3], 0.0, he(27), &mut r1),
            w2: Tensor::randn([dim, hidden, 3, 3], 0.0, he(hidden * 9), &mut r2),
        }
    }
}

impl FeatureEmbedder for RandomProjectionEmbedder {
    fn descriptor(&self) -> EmbedderDescriptor {
        EmbedderDescriptor {
            name: format!("{}-h{}", Self::NAME, self.hidden),
            dim: self.dim,
            seed: self.seed,
        }
    }

    fn embed(&self, images: &[Tensor<f32>]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for img in images {
            if img.rank() != 3 || img.shape()[0] != 3 {
                return Err(Error::Shape(format!(
                    "embedder expects [3, H, W], got {:?}",
                    img.shape()
                )));
            }
            let tape = Tape::<f32>::new();
            let x = tape.constant(img.reshape([1, 3, img.shape()[1], img.shape()[2]])?);
            let w1 = tape.constant(self.w1.clone());
            let w2 = tape.constant(self.w2.clone());
            let h = x.conv2d(&w1, 2, 1)?.relu().conv2d(&w2, 2, 1)?.relu();
            let pooled = h.mean(&[2, 3], false)?;
            out.push(pooled.value().data().iter().map(|&v| v as f64).collect());
        }
        Ok(out)
    }
}
