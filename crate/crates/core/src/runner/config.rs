use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::models::{ArchConfig, ModelKind};
use crate::optimizer::AdamConfig;
use crate::schedule::{build_plan, PhasePlan, ScheduleSpec};
use crate::synthdata::DatasetConfig;

/// Every key accepted in a config file, in canonical order.
pub const CONFIG_KEYS: [&str; 34] = [
    "model",
    "ratio",
    "epochs",
    "chunk_epochs",
    "lr_divisor",
    "base_lr",
    "batch_size",
    "image_size",
    "num_train",
    "num_test",
    "categories",
    "palette",
    "data_seed",
    "data_dir",
    "base_width",
    "res_blocks",
    "embed_dim",
    "lambda_cycle",
    "lambda_nce",
    "nce_temperature",
    "num_patches",
    "nce_identity",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "reset_moments_on_phase",
    "eval_every",
    "kid_subsets",
    "embedder_seed",
    "embedder_hidden",
    "sample_images",
    "seed",
    "run_id",
    "out_dir",
];

/// Keys that name locations rather than affect results; left out of the
/// digest.
const UNDIGESTED: [&str; 3] = ["data_dir", "run_id", "out_dir"];

/// A complete, reproducible description of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Original:semantic split such as `80:20`; the parts sum to 100.
    pub ratio: String,
    pub epochs: u32,
    /// Length of each semantic chunk.
    pub chunk_epochs: u32,
    pub lr_divisor: f64,
    pub base_lr: f64,
    pub batch_size: usize,
    pub data: DatasetConfig,
    /// Load the dataset from here instead of generating it in memory.
    pub data_dir: Option<PathBuf>,
    pub base_width: usize,
    pub res_blocks: usize,
    pub embed_dim: usize,
    pub losses: LossWeights,
    pub adam: AdamConfig,
    pub reset_moments_on_phase: bool,
    pub eval_every: u32,
    pub kid_subsets: usize,
    pub embedder_seed: u64,
    pub embedder_hidden: usize,
    /// Test images written as PPM at each evaluation.
    pub sample_images: usize,
    pub seed: u64,
    pub run_id: String,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Cut,
            ratio: "100:0".into(),
            epochs: 100,
            chunk_epochs: 10,
            lr_divisor: 1.0,
            base_lr: 0.002,
            batch_size: 2,
            data: DatasetConfig::default(),
            data_dir: None,
            base_width: 32,
            res_blocks: 2,
            embed_dim: 256,
            losses: LossWeights::default(),
            adam: AdamConfig::default(),
            reset_moments_on_phase: false,
            eval_every: 10,
            kid_subsets: 10,
            embedder_seed: 0,
            embedder_hidden: 32,
            sample_images: 4,
            seed: 0,
            run_id: "run".into(),
            out_dir: PathBuf::from("runs/run"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// Parses `a:b` with `a + b = 100`.
pub fn parse_ratio(ratio: &str) -> Result<(u32, u32)> {
    let bad = || {
        Error::Config(format!(
            "ratio must look like 80:20 and sum to 100, got {ratio:?}"
        ))
    };
    let (a, b) = ratio.split_once(':').ok_or_else(bad)?;
    let (a, b): (u32, u32) = (
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    );
    if a + b != 100 {
        return Err(bad());
    }
    Ok((a, b))
}

impl RunConfig {
    /// Assigns one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "model" => self.model = v.parse()?,
            "ratio" => self.ratio = v.to_string(),
            "epochs" => self.epochs = parse(key, v)?,
            "chunk_epochs" => self.chunk_epochs = parse(key, v)?,
            "lr_divisor" => self.lr_divisor = parse(key, v)?,
            "base_lr" => self.base_lr = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "image_size" => self.data.image_size = parse(key, v)?,
            "num_train" => self.data.num_train = parse(key, v)?,
            "num_test" => self.data.num_test = parse(key, v)?,
            "categories" => self.data.categories = parse(key, v)?,
            "palette" => self.data.palette = v.parse()?,
            "data_seed" => self.data.seed = parse(key, v)?,
            "data_dir" => self.data_dir = (!v.is_empty()).then(|| PathBuf::from(v)),
            "base_width" => self.base_width = parse(key, v)?,
            "res_blocks" => self.res_blocks = parse(key, v)?,
            "embed_dim" => self.embed_dim = parse(key, v)?,
            "lambda_cycle" => self.losses.lambda_cycle = parse(key, v)?,
            "lambda_nce" => self.losses.lambda_nce = parse(key, v)?,
            "nce_temperature" => self.losses.nce_temperature = parse(key, v)?,
            "num_patches" => self.losses.num_patches = parse(key, v)?,
            "nce_identity" => self.losses.nce_identity = parse(key, v)?,
            "adam_beta1" => self.adam.beta1 = parse(key, v)?,
            "adam_beta2" => self.adam.beta2 = parse(key, v)?,
            "adam_eps" => self.adam.eps = parse(key, v)?,
            "reset_moments_on_phase" => self.reset_moments_on_phase = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "kid_subsets" => self.kid_subsets = parse(key, v)?,
            "embedder_seed" => self.embedder_seed = parse(key, v)?,
            "embedder_hidden" => self.embedder_hidden = parse(key, v)?,
            "sample_images" => self.sample_images = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "run_id" => self.run_id = v.to_string(),
            "out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// `(key, value)` pairs in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let d = &self.data;
        let l = &self.losses;
        let values = [
            self.model.to_string(),
            self.ratio.clone(),
            self.epochs.to_string(),
            self.chunk_epochs.to_string(),
            self.lr_divisor.to_string(),
            self.base_lr.to_string(),
            self.batch_size.to_string(),
            d.image_size.to_string(),
            d.num_train.to_string(),
            d.num_test.to_string(),
            d.categories.to_string(),
            d.palette.to_string(),
            d.seed.to_string(),
            self.data_dir
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            self.base_width.to_string(),
            self.res_blocks.to_string(),
            self.embed_dim.to_string(),
            l.lambda_cycle.to_string(),
            l.lambda_nce.to_string(),
            l.nce_temperature.to_string(),
            l.num_patches.to_string(),
            l.nce_identity.to_string(),
            self.adam.beta1.to_string(),
            self.adam.beta2.to_string(),
            self.adam.eps.to_string(),
            self.reset_moments_on_phase.to_string(),
            self.eval_every.to_string(),
            self.kid_subsets.to_string(),
            self.embedder_seed.to_string(),
            self.embedder_hidden.to_string(),
            self.sample_images.to_string(),
            self.seed.to_string(),
            self.run_id.clone(),
            self.out_dir.display().to_string(),
        ];
        CONFIG_KEYS.into_iter().zip(values).collect()
    }

    /// Canonical `key = value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Applies `key = value` lines on top of `self`. Blank lines and `#`
    /// comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = body
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// SHA-256 over the canonical text of every result-affecting key.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if !UNDIGESTED.contains(&k) {
                h.update(format!("{k} = {v}\n"));
            }
        }
        hex::encode(h.finalize())
    }

    pub fn arch(&self) -> ArchConfig {
        ArchConfig {
            kind: self.model,
            image_size: self.data.image_size,
            base_width: self.base_width,
            res_blocks: self.res_blocks,
            embed_dim: self.embed_dim,
        }
    }

    pub fn schedule_spec(&self) -> Result<ScheduleSpec> {
        let (_, semantic) = parse_ratio(&self.ratio)?;
        let sem_epochs = self.epochs as u64 * semantic as u64;
        let chunk = 100 * self.chunk_epochs.max(1) as u64;
        if sem_epochs % chunk != 0 {
            return Err(Error::Config(format!(
                "ratio {} of {} epochs is not a whole number of {}-epoch semantic chunks",
                self.ratio, self.epochs, self.chunk_epochs
            )));
        }
        let spec = ScheduleSpec {
            total_epochs: self.epochs,
            semantic_chunks: (sem_epochs / chunk) as u32,
            chunk_epochs: self.chunk_epochs,
            lr_divisor: self.lr_divisor,
            base_lr: self.base_lr,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn plan(&self) -> Result<PhasePlan> {
        build_plan(&self.schedule_spec()?)
    }

    /// Checks every key, including that the schedule can be built.
    pub fn validate(&self) -> Result<()> {
        self.plan()?;
        self.arch().validate()?;
        self.data.validate()?;
        self.losses.validate()?;
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.kid_subsets == 0 || self.embedder_hidden == 0 {
            return Err(Error::Config(
                "kid_subsets and embedder_hidden must be positive".into(),
            ));
        }
        if self.data.num_test < 2 {
            return Err(Error::Config(
                "num_test must be at least 2 for FID and KID".into(),
            ));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\n']) {
            return Err(Error::Config(format!("invalid run_id {:?}", self.run_id)));
        }
        Ok(())
    }
}
