use crate::autodiff::{Scalar, Var};
use crate::error::{Error, Result};

use super::params::{Bindings, Init, ParamSpec};
use super::INIT_STD;

/// ResNet-style encoder/decoder generator.
///
/// `7×7 stem → two stride-2 downsamples → residual blocks → two
/// nearest-upsample convs → 7×7 head → tanh`. Instance normalization follows
/// every conv except the head.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    prefix: String,
    width: usize,
    res_blocks: usize,
    image_size: usize,
}

/// Generator output plus the encoder activations used as feature taps.
pub struct GeneratorPass<'t, T: Scalar> {
    pub output: Var<'t, T>,
    /// Activations after the first and second downsampling stage.
    pub taps: Vec<Var<'t, T>>,
}

pub const IMAGE_CHANNELS: usize = 3;

impl Generator {
    pub fn new(prefix: &str, width: usize, res_blocks: usize, image_size: usize) -> Self {
        Self {
            prefix: prefix.to_string(),
            width,
            res_blocks,
            image_size,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn name(&self, layer: &str) -> String {
        format!("{}.{layer}", self.prefix)
    }

    /// Channel counts of the feature taps.
    pub fn tap_channels(&self) -> [usize; 2] {
        [2 * self.width, 4 * self.width]
    }

    /// Spatial extents of the feature taps.
    pub fn tap_sizes(&self) -> [usize; 2] {
        [self.image_size / 2, self.image_size / 4]
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let w = self.width;
        let n = Init::Normal { std: INIT_STD };
        let mut specs = vec![
            ParamSpec::new(self.name("stem.weight"), &[w, IMAGE_CHANNELS, 7, 7], n),
            ParamSpec::new(self.name("down1.weight"), &[2 * w, w, 3, 3], n),
            ParamSpec::new(self.name("down2.weight"), &[4 * w, 2 * w, 3, 3], n),
        ];
        for i in 0..self.res_blocks {
            for conv in ["conv1", "conv2"] {
                specs.push(ParamSpec::new(
                    self.name(&format!("res{i}.{conv}.weight")),
                    &[4 * w, 4 * w, 3, 3],
                    n,
                ));
            }
        }
        specs.extend([
            ParamSpec::new(self.name("up1.weight"), &[2 * w, 4 * w, 3, 3], n),
            ParamSpec::new(self.name("up2.weight"), &[w, 2 * w, 3, 3], n),
            ParamSpec::new(self.name("head.weight"), &[IMAGE_CHANNELS, w, 7, 7], n),
            ParamSpec::new(self.name("head.bias"), &[IMAGE_CHANNELS, 1, 1], Init::Zeros),
        ]);
        specs
    }

    pub(crate) fn check_input<T: Scalar>(&self, x: &Var<'_, T>) -> Result<()> {
        let s = x.shape();
        let want = [IMAGE_CHANNELS, self.image_size, self.image_size];
        if s.len() != 4 || s[1..] != want {
            return Err(Error::Shape(format!(
                "generator {} expects [N,{},{},{}], got {s:?}",
                self.prefix, want[0], want[1], want[2]
            )));
        }
        Ok(())
    }

    fn conv_norm_relu<'t, T: Scalar>(
        &self,
        b: &Bindings<'t, T>,
        x: &Var<'t, T>,
        layer: &str,
        stride: usize,
        pad: usize,
    ) -> Result<Var<'t, T>> {
        Ok(x.conv2d(&b.get(&self.name(layer))?, stride, pad)?
            .instance_norm()?
            .relu())
    }

    /// Encoder half only: returns the two tap activations and the bottleneck.
    pub fn encode<'t, T: Scalar>(
        &self,
        b: &Bindings<'t, T>,
        x: &Var<'t, T>,
    ) -> Result<(Vec<Var<'t, T>>, Var<'t, T>)> {
        self.check_input(x)?;
        let h = self.conv_norm_relu(b, x, "stem.weight", 1, 3)?;
        let t1 = self.conv_norm_relu(b, &h, "down1.weight", 2, 1)?;
        let t2 = self.conv_norm_relu(b, &t1, "down2.weight", 2, 1)?;
        Ok((vec![t1, t2], t2))
    }

    pub fn forward_with_taps<'t, T: Scalar>(
        &self,
        b: &Bindings<'t, T>,
        x: &Var<'t, T>,
    ) -> Result<GeneratorPass<'t, T>> {
        let (taps, mut h) = self.encode(b, x)?;
        for i in 0..self.res_blocks {
            let r = self.conv_norm_relu(b, &h, &format!("res{i}.conv1.weight"), 1, 1)?;
            let r = r
                .conv2d(&b.get(&self.name(&format!("res{i}.conv2.weight")))?, 1, 1)?
                .instance_norm()?;
            h = h.add(&r)?;
        }
        let h = self.conv_norm_relu(b, &h.upsample2x()?, "up1.weight", 1, 1)?;
        let h = self.conv_norm_relu(b, &h.upsample2x()?, "up2.weight", 1, 1)?;
        let output = h
            .conv2d(&b.get(&self.name("head.weight"))?, 1, 3)?
            .add(&b.get(&self.name("head.bias"))?)?
            .tanh();
        Ok(GeneratorPass { output, taps })
    }

    /// Translate a `[N,3,H,W]` batch in `[-1,1]` to the same shape.
    pub fn generate<'t, T: Scalar>(
        &self,
        b: &Bindings<'t, T>,
        x: &Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        Ok(self.forward_with_taps(b, x)?.output)
    }
}
