use crate::autodiff::{Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

use super::params::{Bindings, Init, ParamSpec};
use super::INIT_STD;

/// Patch feature head over the generator's encoder taps.
///
/// Each tap gets a two-layer perceptron projecting channel vectors to a
/// shared embedding width; projected rows are L2-normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEncoder {
    prefix: String,
    tap_channels: Vec<usize>,
    tap_sizes: Vec<usize>,
    embed_dim: usize,
}

/// Flat spatial indices (`row * width + col`) to sample, one list per tap.
pub type PatchIndices = Vec<Vec<usize>>;

// Added in quadrature, so rows with norm well above 1e-7 come out at unit
// norm to f32 precision rather than being shrunk by a fixed ε.
const NORM_EPS: f64 = 1e-7;

impl FeatureEncoder {
    pub fn new(
        prefix: &str,
        tap_channels: &[usize],
        tap_sizes: &[usize],
        embed_dim: usize,
    ) -> Self {
        Self {
            prefix: prefix.to_string(),
            tap_channels: tap_channels.to_vec(),
            tap_sizes: tap_sizes.to_vec(),
            embed_dim,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn num_taps(&self) -> usize {
        self.tap_channels.len()
    }

    fn name(&self, tap: usize, part: &str) -> String {
        format!("{}.mlp{tap}.{part}", self.prefix)
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let e = self.embed_dim;
        let n = Init::Normal { std: INIT_STD };
        self.tap_channels
            .iter()
            .enumerate()
            .flat_map(|(t, &c)| {
                [
                    ParamSpec::new(self.name(t, "w1"), &[c, e], n),
                    ParamSpec::new(self.name(t, "b1"), &[e], Init::Zeros),
                    ParamSpec::new(self.name(t, "w2"), &[e, e], n),
                    ParamSpec::new(self.name(t, "b2"), &[e], Init::Zeros),
                ]
            })
            .collect()
    }

    /// Draw up to `num_patches` distinct locations per tap.
    pub fn sample_indices(&self, num_patches: usize, rng: &mut SplitMix64) -> PatchIndices {
        self.tap_sizes
            .iter()
            .map(|&s| {
                let plane = s * s;
                rng.sample_without_replacement(plane, num_patches.min(plane))
            })
            .collect()
    }

    /// Embed the selected locations of every tap.
    ///
    /// Returns one `[N·P, embed_dim]` matrix per tap with unit-norm rows,
    /// ordered sample-major. The same indices select the same spatial
    /// locations for any input.
    pub fn extract_patch_features<'t, T: Scalar>(
        &self,
        b: &Bindings<'t, T>,
        taps: &[Var<'t, T>],
        indices: &PatchIndices,
    ) -> Result<Vec<Var<'t, T>>> {
        if taps.len() != self.num_taps() || indices.len() != self.num_taps() {
            return Err(Error::Contract(format!(
                "expected {} taps and index lists, got {} and {}",
                self.num_taps(),
                taps.len(),
                indices.len()
            )));
        }
        taps.iter()
            .zip(indices)
            .enumerate()
            .map(|(t, (tap, idx))| {
                let s = tap.shape();
                if s.len() != 4 || s[1] != self.tap_channels[t] {
                    return Err(Error::Shape(format!("tap {t} has shape {s:?}")));
                }
                let patches = tap.select_patches(idx)?;
                let rows = s[0] * idx.len();
                let flat = patches.reshape(&[rows, s[1]])?;
                let h = flat
                    .matmul(&b.get(&self.name(t, "w1"))?)?
                    .add(&b.get(&self.name(t, "b1"))?)?
                    .relu();
                let z = h
                    .matmul(&b.get(&self.name(t, "w2"))?)?
                    .add(&b.get(&self.name(t, "b2"))?)?;
                l2_normalize_rows(&z)
            })
            .collect()
    }
}

/// `x / sqrt(‖x‖₂² + ε²)` row by row for a `[rows, d]` matrix.
pub fn l2_normalize_rows<'t, T: Scalar>(x: &Var<'t, T>) -> Result<Var<'t, T>> {
    let norm = x
        .square()
        .sum(&[1], true)?
        .add_scalar(NORM_EPS * NORM_EPS)
        .sqrt()?;
    x.div(&norm)
}

/// Convenience for tests and tools: row norms of a `[rows, d]` tensor.
pub fn row_norms<T: Scalar>(x: &Tensor<T>) -> Vec<f64> {
    let d = *x.shape().last().unwrap_or(&1);
    x.data()
        .chunks(d)
        .map(|r| r.iter().map(|v| v.to_f64().powi(2)).sum::<f64>().sqrt())
        .collect()
}
