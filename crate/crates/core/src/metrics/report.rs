use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{
    fid, gaussian_stats, kid, ssim, to_unit_range, FeatureEmbedder, KID_DEFAULT_SUBSETS,
    KID_MAX_SUBSET,
};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 9] = [
    "run_id",
    "ratio",
    "lr_setting",
    "ssim_percent",
    "fid",
    "kid_mean",
    "kid_variance",
    "n_images",
    "embedder",
];

/// One evaluation of a translator on a test set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_id: String,
    /// Injection ratio name such as `80:20`.
    pub ratio: String,
    /// LR divisor `l`.
    pub lr_setting: f64,
    pub ssim_percent: f64,
    pub fid: f64,
    pub kid_mean: f64,
    pub kid_variance: f64,
    pub n_images: usize,
    pub embedder: String,
}

impl MetricReport {
    pub fn labeled(mut self, run_id: &str, ratio: &str, lr_setting: f64) -> Self {
        self.run_id = run_id.to_string();
        self.ratio = ratio.to_string();
        self.lr_setting = lr_setting;
        self
    }

    /// Placeholder row for a run that produced no metrics.
    pub fn failed(run_id: &str, ratio: &str, lr_setting: f64) -> Self {
        Self {
            run_id: run_id.to_string(),
            ratio: ratio.to_string(),
            lr_setting,
            ssim_percent: f64::NAN,
            fid: f64::NAN,
            kid_mean: f64::NAN,
            kid_variance: f64::NAN,
            n_images: 0,
            embedder: String::new(),
        }
    }

    /// Header plus one row per report.
    pub fn to_csv(reports: &[MetricReport]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        if reports.is_empty() {
            w.write_record(CSV_HEADER).map_err(csv_err)?;
        }
        for r in reports {
            w.serialize(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Contract(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Contract(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Vec<MetricReport>> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(csv_err)?.clone();
        if header.iter().ne(CSV_HEADER) {
            return Err(Error::Format {
                offset: 0,
                message: format!("unexpected metrics header {header:?}"),
            });
        }
        r.deserialize().map(|row| row.map_err(csv_err)).collect()
    }

    /// `key=value` lines in header order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run_id={}", self.run_id);
        let _ = writeln!(s, "ratio={}", self.ratio);
        let _ = writeln!(s, "lr_setting={}", self.lr_setting);
        let _ = writeln!(s, "ssim_percent={}", self.ssim_percent);
        let _ = writeln!(s, "fid={}", self.fid);
        let _ = writeln!(s, "kid_mean={}", self.kid_mean);
        let _ = writeln!(s, "kid_variance={}", self.kid_variance);
        let _ = writeln!(s, "n_images={}", self.n_images);
        let _ = writeln!(s, "embedder={}", self.embedder);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut fields = std::collections::BTreeMap::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let body = line.trim_end_matches(['\n', '\r']);
            if !body.is_empty() {
                let (k, v) = body.split_once('=').ok_or_else(|| Error::Format {
                    offset,
                    message: format!("expected key=value, got {body:?}"),
                })?;
                fields.insert(k.to_string(), (offset, v.to_string()));
            }
            offset += line.len();
        }
        let get = |k: &str| {
            fields.get(k).cloned().ok_or_else(|| Error::Format {
                offset: text.len(),
                message: format!("missing field {k}"),
            })
        };
        let num = |k: &str| -> Result<f64> {
            let (off, v) = get(k)?;
            v.parse().map_err(|_| Error::Format {
                offset: off,
                message: format!("{k} is not a number: {v:?}"),
            })
        };
        let (n_off, n) = get("n_images")?;
        Ok(Self {
            run_id: get("run_id")?.1,
            ratio: get("ratio")?.1,
            lr_setting: num("lr_setting")?,
            ssim_percent: num("ssim_percent")?,
            fid: num("fid")?,
            kid_mean: num("kid_mean")?,
            kid_variance: num("kid_variance")?,
            n_images: n.parse().map_err(|_| Error::Format {
                offset: n_off,
                message: format!("n_images is not an integer: {n:?}"),
            })?,
            embedder: get("embedder")?.1,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    Error::Format {
        offset,
        message: e.to_string(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    pub kid_subsets: usize,
    /// Defaults to `min(100, available rows)`.
    pub kid_subset_size: Option<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            kid_subsets: KID_DEFAULT_SUBSETS,
            kid_subset_size: None,
            seed: 0,
        }
    }
}

/// Scores translated images against their paired targets.
///
/// Images are `[3, H, W]` in `[-1, 1]`. The reported FID is clamped at zero.
pub fn evaluate_run(
    generated: &[Tensor<f32>],
    targets: &[Tensor<f32>],
    embedder: &dyn FeatureEmbedder,
    config: &EvalConfig,
) -> Result<MetricReport> {
    if generated.is_empty() || targets.is_empty() {
        return Err(Error::Contract(
            "evaluation needs at least one image".into(),
        ));
    }
    if generated.len() != targets.len() {
        return Err(Error::Contract(format!(
            "paired evaluation got {} generated and {} target images",
            generated.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (g, t) in generated.iter().zip(targets) {
        total += ssim(&to_unit_range(g), &to_unit_range(t))?;
    }
    let ssim_percent = 100.0 * total / generated.len() as f64;

    let eg = embedder.embed(generated)?;
    let et = embedder.embed(targets)?;
    let fid_value = fid(&gaussian_stats(&eg)?, &gaussian_stats(&et)?)?;
    let b = config
        .kid_subset_size
        .unwrap_or_else(|| KID_MAX_SUBSET.min(eg.len()).min(et.len()));
    let k = kid(&eg, &et, b, config.kid_subsets, config.seed)?;
    Ok(MetricReport {
        run_id: String::new(),
        ratio: String::new(),
        lr_setting: f64::NAN,
        ssim_percent,
        fid: fid_value.max(0.0),
        kid_mean: k.mean,
        kid_variance: k.variance,
        n_images: generated.len(),
        embedder: embedder.descriptor().to_string(),
    })
}
