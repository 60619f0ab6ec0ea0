use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use super::config::{parse_ratio, RunConfig};
use super::train::train;
use crate::error::{Error, Result};
use crate::metrics::MetricReport;

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_BEST_CSV: &str = "sweep_best.csv";
pub const SWEEP_STATUS: &str = "sweep_status.tsv";

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRun {
    pub ratio: String,
    pub lr_setting: f64,
    pub run_dir: PathBuf,
    /// `ok`, or the error that stopped the run.
    pub status: String,
    pub final_report: MetricReport,
    pub best_report: MetricReport,
}

/// Directory name of one sweep cell.
pub fn sweep_run_id(ratio: &str, lr_setting: f64) -> String {
    format!("r{}_l{lr_setting}", ratio.replace(':', "-"))
}

/// One run per (ratio, l) pair, LR-major. Failed runs are recorded and the
/// sweep continues.
pub fn sweep(base: &RunConfig, ratios: &[String], lr_settings: &[f64]) -> Result<Vec<SweepRun>> {
    if ratios.is_empty() || lr_settings.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one ratio and one lr setting".into(),
        ));
    }
    for r in ratios {
        parse_ratio(r)?;
    }
    fs::create_dir_all(&base.out_dir).map_err(|e| Error::io(&base.out_dir, e))?;
    let mut runs = Vec::new();
    for &l in lr_settings {
        for ratio in ratios {
            let mut cfg = base.clone();
            cfg.ratio = ratio.clone();
            cfg.lr_divisor = l;
            cfg.run_id = sweep_run_id(ratio, l);
            cfg.out_dir = base.out_dir.join(&cfg.run_id);
            let failed = MetricReport::failed(&cfg.run_id, ratio, l);
            let run = match train(&cfg) {
                Ok(out) => SweepRun {
                    ratio: ratio.clone(),
                    lr_setting: l,
                    run_dir: cfg.out_dir.clone(),
                    status: "ok".into(),
                    final_report: out.final_report.unwrap_or_else(|| failed.clone()),
                    best_report: out.best_report.unwrap_or(failed),
                },
                Err(e) => SweepRun {
                    ratio: ratio.clone(),
                    lr_setting: l,
                    run_dir: cfg.out_dir.clone(),
                    status: format!(
                        "failed: kind={} msg={}",
                        e.kind(),
                        e.to_string().replace(['\t', '\n'], " ")
                    ),
                    final_report: failed.clone(),
                    best_report: failed,
                },
            };
            runs.push(run);
        }
    }
    write_outputs(base, ratios, lr_settings, &runs)?;
    Ok(runs)
}

fn write_outputs(
    base: &RunConfig,
    ratios: &[String],
    lrs: &[f64],
    runs: &[SweepRun],
) -> Result<()> {
    let dir = &base.out_dir;
    let write = |name: &str, text: String| {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))
    };
    let finals: Vec<MetricReport> = runs.iter().map(|r| r.final_report.clone()).collect();
    let bests: Vec<MetricReport> = runs.iter().map(|r| r.best_report.clone()).collect();
    write(SWEEP_CSV, MetricReport::to_csv(&finals)?)?;
    write(SWEEP_BEST_CSV, MetricReport::to_csv(&bests)?)?;
    let mut status = String::from("run_id\tratio\tlr_setting\tstatus\n");
    for r in runs {
        let _ = writeln!(
            status,
            "{}\t{}\t{}\t{}",
            r.final_report.run_id, r.ratio, r.lr_setting, r.status
        );
    }
    write(SWEEP_STATUS, status)?;
    type Metric = fn(&MetricReport) -> f64;
    let metrics: [(&str, Metric); 4] = [
        ("ssim_percent", |r| r.ssim_percent),
        ("fid", |r| r.fid),
        ("kid_mean", |r| r.kid_mean),
        ("kid_variance", |r| r.kid_variance),
    ];
    for (name, get) in metrics {
        write(&format!("pivot_{name}.tsv"), pivot(ratios, lrs, runs, get))?;
    }
    Ok(())
}

/// Ratio columns by LR-setting rows.
pub fn pivot(
    ratios: &[String],
    lrs: &[f64],
    runs: &[SweepRun],
    get: fn(&MetricReport) -> f64,
) -> String {
    let mut s = format!("lr_setting\t{}\n", ratios.join("\t"));
    for &l in lrs {
        let cells: Vec<String> = ratios
            .iter()
            .map(|r| {
                runs.iter()
                    .find(|x| &x.ratio == r && x.lr_setting == l)
                    .map_or("NaN".to_string(), |x| get(&x.final_report).to_string())
            })
            .collect();
        let _ = writeln!(s, "{l}\t{}", cells.join("\t"));
    }
    s
}
