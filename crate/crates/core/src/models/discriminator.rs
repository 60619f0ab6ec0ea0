use crate::autodiff::{Scalar, Var};
use crate::error::{Error, Result};

use super::generator::IMAGE_CHANNELS;
use super::params::{Bindings, Init, ParamSpec};
use super::INIT_STD;

/// Three-layer strided patch classifier emitting raw (unsquashed) scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    prefix: String,
    width: usize,
    image_size: usize,
}

impl Discriminator {
    pub fn new(prefix: &str, width: usize, image_size: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            width,
            image_size,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn name(&self, layer: &str) -> String {
        format!("{}.{layer}", self.prefix)
    }

    /// Side length of the score map.
    pub fn score_size(&self) -> usize {
        self.image_size / 4
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let w = self.width;
        let n = Init::Normal { std: INIT_STD };
        vec![
            ParamSpec::new(self.name("conv1.weight"), &[w, IMAGE_CHANNELS, 4, 4], n),
            ParamSpec::new(self.name("conv1.bias"), &[w, 1, 1], Init::Zeros),
            ParamSpec::new(self.name("conv2.weight"), &[2 * w, w, 4, 4], n),
            ParamSpec::new(self.name("conv3.weight"), &[1, 2 * w, 3, 3], n),
            ParamSpec::new(self.name("conv3.bias"), &[1, 1, 1], Init::Zeros),
        ]
    }

    /// Score a `[N,3,H,W]` batch; returns `[N,1,H/4,W/4]`.
    pub fn discriminate<'t, T: Scalar>(
        &self,
        b: &Bindings<'t, T>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 4 || s[1..] != [IMAGE_CHANNELS, self.image_size, self.image_size] {
            return Err(Error::Shape(format!(
                "discriminator {} expects [N,3,{},{}], got {s:?}",
                self.prefix, self.image_size, self.image_size
            )));
        }
        let h = x
            .conv2d(&b.get(&self.name("conv1.weight"))?, 2, 1)?
            .add(&b.get(&self.name("conv1.bias"))?)?
            .leaky_relu();
        let h = h
            .conv2d(&b.get(&self.name("conv2.weight"))?, 2, 1)?
            .instance_norm()?
            .leaky_relu();
        h.conv2d(&b.get(&self.name("conv3.weight"))?, 1, 1)?
            .add(&b.get(&self.name("conv3.bias"))?)
    }
}
