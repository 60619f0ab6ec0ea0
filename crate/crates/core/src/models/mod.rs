//! Network architectures: generators, patch discriminators and the
//! patch-feature head used by the contrastive model.

mod discriminator;
mod encoder;
mod generator;
mod params;

use std::fmt;
use std::str::FromStr;

pub use discriminator::Discriminator;
pub use encoder::{l2_normalize_rows, row_norms, FeatureEncoder, PatchIndices};
pub use generator::{Generator, GeneratorPass, IMAGE_CHANNELS};
pub use params::{Bindings, Init, ParamSpec, ParamStore};

use crate::error::{Error, Result};

/// Standard deviation of Gaussian weight initialization.
pub const INIT_STD: f64 = 0.02;

/// Downsampling stages in every generator.
pub const DOWNSAMPLE_DEPTH: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Two generators and two discriminators with cycle reconstruction.
    CycleGan,
    /// One generator, one discriminator and a patch-contrastive feature head.
    Cut,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::CycleGan => "cyclegan",
            ModelKind::Cut => "cut",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cyclegan" => Ok(ModelKind::CycleGan),
            "cut" => Ok(ModelKind::Cut),
            other => Err(Error::Config(format!(
                "unknown model kind {other:?}; expected cyclegan or cut"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArchConfig {
    pub kind: ModelKind,
    pub image_size: usize,
    pub base_width: usize,
    pub res_blocks: usize,
    /// Width of projected patch embeddings (contrastive model only).
    pub embed_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::Cut,
            image_size: 32,
            base_width: 32,
            res_blocks: 2,
            embed_dim: 256,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let step = 1usize << DOWNSAMPLE_DEPTH;
        if self.image_size == 0 || self.image_size % step != 0 {
            return Err(Error::Config(format!(
                "image size {} must be a positive multiple of {step}",
                self.image_size
            )));
        }
        if self.base_width == 0 || self.embed_dim == 0 {
            return Err(Error::Config("widths must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter-name prefixes of the generator side (updated by the generator optimizer).
pub fn is_generator_param(name: &str) -> bool {
    name.starts_with("g") || name.starts_with("f.")
}

pub fn is_discriminator_param(name: &str) -> bool {
    name.starts_with("d")
}

/// All networks of one model plus their parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub arch: ArchConfig,
    pub params: ParamStore,
    pub generators: Vec<Generator>,
    pub discriminators: Vec<Discriminator>,
    pub encoder: Option<FeatureEncoder>,
}

impl ModelBundle {
    /// Build and initialize a bundle.
    ///
    /// `cyclegan` → `g_a, g_b, d_a, d_b`; `cut` → `g, d, f`.
    pub fn build(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let (w, r, s) = (arch.base_width, arch.res_blocks, arch.image_size);
        let (generators, discriminators, encoder) = match arch.kind {
            ModelKind::CycleGan => (
                vec![
                    Generator::new("g_a", w, r, s),
                    Generator::new("g_b", w, r, s),
                ],
                vec![
                    Discriminator::new("d_a", w, s),
                    Discriminator::new("d_b", w, s),
                ],
                None,
            ),
            ModelKind::Cut => {
                let g = Generator::new("g", w, r, s);
                let f = FeatureEncoder::new("f", &g.tap_channels(), &g.tap_sizes(), arch.embed_dim);
                (vec![g], vec![Discriminator::new("d", w, s)], Some(f))
            }
        };
        let mut specs: Vec<ParamSpec> =
            generators.iter().flat_map(Generator::param_specs).collect();
        specs.extend(discriminators.iter().flat_map(Discriminator::param_specs));
        if let Some(f) = &encoder {
            specs.extend(f.param_specs());
        }
        let params = ParamStore::initialize(&specs, seed)?;
        Ok(Self {
            arch,
            params,
            generators,
            discriminators,
            encoder,
        })
    }

    /// The generator used at test time (source → target).
    pub fn translator(&self) -> &Generator {
        &self.generators[0]
    }

    pub fn generator_param_names(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| is_generator_param(n))
            .map(str::to_string)
            .collect()
    }

    pub fn discriminator_param_names(&self) -> Vec<String> {
        self.params
            .names()
            .filter(|n| is_discriminator_param(n))
            .map(str::to_string)
            .collect()
    }
}
