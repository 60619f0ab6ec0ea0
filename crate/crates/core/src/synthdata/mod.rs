//! Procedural urban scenes: a grayscale source, its RGB target and a
//! palette-colored semantic map, plus PPM file I/O.
//!
//! Every random draw comes from [`SplitMix64`](crate::rng::SplitMix64), so
//! datasets are bit-reproducible on any platform.

mod dataset;
mod ppm;
mod scene;

pub use dataset::{
    build_dataset, item_seed, load_split, manifest_text, parse_manifest, read_manifest,
    write_dataset, Dataset, Split, MANIFEST_FILE,
};
pub use ppm::{decode_ppm, encode_ppm, from_byte, read_image, to_byte, write_image};
pub use scene::{generate_scene, luminance, SceneTriplet};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const MIN_IMAGE_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Sky,
    Road,
    Building,
    Vegetation,
    Vehicle,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Sky,
        Category::Road,
        Category::Building,
        Category::Vegetation,
        Category::Vehicle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Sky => "sky",
            Category::Road => "road",
            Category::Building => "building",
            Category::Vegetation => "vegetation",
            Category::Vehicle => "vehicle",
        }
    }

    pub fn label(self) -> u8 {
        self as u8
    }
}

/// One RGB color per category label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Palette(pub Vec<[u8; 3]>);

impl Default for Palette {
    /// Street-scene colors in the style of common segmentation benchmarks.
    fn default() -> Self {
        Palette(vec![
            [70, 130, 180],
            [128, 64, 128],
            [70, 70, 70],
            [107, 142, 35],
            [0, 0, 142],
        ])
    }
}

impl Palette {
    /// Color of `label` as `[-1, 1]` floats.
    pub fn color(&self, label: u8) -> [f32; 3] {
        self.0[label as usize].map(from_byte)
    }
}

impl fmt::Display for Palette {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|[r, g, b]| format!("{r}/{g}/{b}"))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

impl FromStr for Palette {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let colors = s
            .split_whitespace()
            .map(|c| {
                let ch: Vec<u8> = c
                    .split('/')
                    .map(|v| v.parse::<u8>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Config(format!("bad palette color {c:?}")))?;
                <[u8; 3]>::try_from(ch)
                    .map_err(|_| Error::Config(format!("palette color {c:?} needs r/g/b")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Palette(colors))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub num_train: usize,
    pub num_test: usize,
    pub image_size: usize,
    /// Number of categories drawn, taken in [`Category::ALL`] order.
    pub categories: usize,
    pub seed: u64,
    pub palette: Palette,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            num_train: 200,
            num_test: 40,
            image_size: 32,
            categories: 5,
            seed: 0,
            palette: Palette::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_train == 0 || self.num_test == 0 {
            return Err(Error::Config("dataset splits must be non-empty".into()));
        }
        if self.image_size < MIN_IMAGE_SIZE {
            return Err(Error::Config(format!(
                "image_size {} is below the minimum of {MIN_IMAGE_SIZE}",
                self.image_size
            )));
        }
        if !(2..=Category::ALL.len()).contains(&self.categories) {
            return Err(Error::Config(format!(
                "categories must be between 2 and {}, got {}",
                Category::ALL.len(),
                self.categories
            )));
        }
        if self.palette.0.len() < self.categories {
            return Err(Error::Config(format!(
                "palette has {} colors for {} categories",
                self.palette.0.len(),
                self.categories
            )));
        }
        Ok(())
    }
}
