use std::fs;
use std::path::Path;

use super::{generate_scene, read_image, write_image, Category, DatasetConfig, SceneTriplet};
use crate::error::{Error, Result};
use crate::rng::mix64;

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

/// Seed of item `index` in `split`.
///
/// The split tag occupies the top bit of the key and `mix64` is a bijection,
/// so distinct (split, index) pairs never share a seed.
pub fn item_seed(seed: u64, split: Split, index: usize) -> u64 {
    let key = (split.tag() << 63) | index as u64;
    mix64(key ^ mix64(seed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub train: Vec<SceneTriplet>,
    pub test: Vec<SceneTriplet>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[SceneTriplet] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

pub fn build_dataset(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let make = |split: Split, n: usize| {
        (0..n)
            .map(|i| generate_scene(item_seed(config.seed, split, i), config))
            .collect::<Result<Vec<_>>>()
    };
    Ok(Dataset {
        config: config.clone(),
        train: make(Split::Train, config.num_train)?,
        test: make(Split::Test, config.num_test)?,
    })
}

pub fn manifest_text(config: &DatasetConfig) -> String {
    let names: Vec<&str> = Category::ALL[..config.categories]
        .iter()
        .map(|c| c.name())
        .collect();
    format!(
        "num_train={}\nnum_test={}\nimage_size={}\ncategories={}\nseed={}\npalette={}\ncategory_names={}\n",
        config.num_train,
        config.num_test,
        config.image_size,
        config.categories,
        config.seed,
        config.palette,
        names.join(" ")
    )
}

pub fn parse_manifest(text: &str) -> Result<DatasetConfig> {
    let mut cfg = DatasetConfig::default();
    let mut seen = 0;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim();
        let here = offset;
        offset += line.len();
        if body.is_empty() {
            continue;
        }
        let fmt_err = |message: String| Error::Format {
            offset: here,
            message,
        };
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| fmt_err(format!("expected key=value, got {body:?}")))?;
        let int = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| fmt_err(format!("{k} is not an integer")))
        };
        match k {
            "num_train" => cfg.num_train = int(v)?,
            "num_test" => cfg.num_test = int(v)?,
            "image_size" => cfg.image_size = int(v)?,
            "categories" => cfg.categories = int(v)?,
            "seed" => {
                cfg.seed = v
                    .parse()
                    .map_err(|_| fmt_err("seed is not an integer".into()))?
            }
            "palette" => cfg.palette = v.parse()?,
            "category_names" => continue,
            _ => return Err(fmt_err(format!("unknown manifest key {k}"))),
        }
        seen += 1;
    }
    if seen != 6 {
        return Err(Error::Format {
            offset: text.len(),
            message: "manifest is missing keys".into(),
        });
    }
    cfg.validate()?;
    Ok(cfg)
}

fn item_path(dir: &Path, split: Split, index: usize, stream: &str) -> std::path::PathBuf {
    dir.join(split.name()).join(format!("{index}_{stream}.ppm"))
}

/// Writes `{split}/{index}_{source|target|semantic}.ppm` and the manifest.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    for split in [Split::Train, Split::Test] {
        let sub = dir.join(split.name());
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        for (i, item) in data.split(split).iter().enumerate() {
            write_image(&item_path(dir, split, i, "source"), &item.source)?;
            write_image(&item_path(dir, split, i, "target"), &item.target)?;
            write_image(&item_path(dir, split, i, "semantic"), &item.semantic)?;
        }
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest_text(&data.config)).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetConfig> {
    let path = dir.join(MANIFEST_FILE);
    parse_manifest(&fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?)
}

/// Loads one split written by [`write_dataset`]. Category labels are
/// recovered from the semantic colors.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<SceneTriplet>> {
    let config = read_manifest(dir)?;
    let n = match split {
        Split::Train => config.num_train,
        Split::Test => config.num_test,
    };
    let palette: Vec<[u8; 3]> = config.palette.0[..config.categories].to_vec();
    (0..n)
        .map(|i| {
            let semantic = read_image(&item_path(dir, split, i, "semantic"))?;
            let plane = semantic.len() / 3;
            let d = semantic.data();
            let category_grid = (0..plane)
                .map(|p| {
                    let px = [0, 1, 2].map(|c| super::to_byte(d[c * plane + p]));
                    palette
                        .iter()
                        .position(|c| *c == px)
                        .map(|l| l as u8)
                        .ok_or_else(|| Error::Format {
                            offset: 0,
                            message: format!(
                                "{} item {i} pixel {p} is not a palette color",
                                split.name()
                            ),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SceneTriplet {
                source: read_image(&item_path(dir, split, i, "source"))?,
                target: read_image(&item_path(dir, split, i, "target"))?,
                semantic,
                category_grid,
            })
        })
        .collect()
}
