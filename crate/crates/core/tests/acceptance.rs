//! Acceptance suite. Each criterion prints one line:
//! `ACCEPTANCE PASS|FAIL <name>: <details> (<seconds> s)`.
//!
//! Positional arguments select criteria by substring; flags are ignored.
//! Exits nonzero when any selected criterion fails.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use semgan_core::autodiff::Tensor;
use semgan_core::metrics::{fid, gaussian_stats, kid, ssim, GaussianStats, MetricReport, SSIM_C1};
use semgan_core::models::ModelKind;
use semgan_core::rng::SplitMix64;
use semgan_core::runner::{
    evaluate_untrained, read_epoch_log, resume, sweep, train, train_with, Checkpoint, RunConfig,
    TrainOptions, CHECKPOINT_FILE, EPOCH_LOG, FINAL_CHECKPOINT, FINAL_REPORT, SWEEP_CSV,
};
use semgan_core::schedule::{preset_plan, PhaseKind, PhasePlan};

use common::grad_cases::gradient_cases;
use common::{mmd2_oracle, FD_REL_TOL};

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T>(r: semgan_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| format!("error kind={}: {e}", e.kind()))
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

const RATIOS: [&str; 5] = ["100:0", "90:10", "80:20", "70:30", "60:40"];
const LR_SETTINGS: [f64; 3] = [1.0, 10.0, 100.0];
const BASE_LR: f64 = 0.002;

fn criteria() -> Vec<Criterion> {
    let mins = |m: u64| Duration::from_secs(60 * m);
    vec![
        Criterion {
            name: "schedule_golden",
            budget: Duration::from_secs(1),
            run: schedule_golden,
        },
        Criterion {
            name: "gradient_suite",
            budget: Duration::from_secs(30),
            run: gradient_suite,
        },
        Criterion {
            name: "metric_oracles",
            budget: Duration::from_secs(10),
            run: metric_oracles,
        },
        Criterion {
            name: "phase_fidelity",
            budget: mins(15),
            run: phase_fidelity,
        },
        Criterion {
            name: "reproducibility",
            budget: mins(10),
            run: reproducibility,
        },
        Criterion {
            name: "training_efficacy",
            budget: mins(30),
            run: training_efficacy,
        },
        Criterion {
            name: "injection_direction",
            budget: mins(30),
            run: injection_direction,
        },
        Criterion {
            name: "sweep_structure",
            budget: mins(10),
            run: sweep_structure,
        },
    ]
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected: Vec<Criterion> = criteria()
        .into_iter()
        .filter(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str())))
        .collect();
    let mut failed = 0;
    for c in &selected {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.run))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            })
            .and_then(|d| {
                if start.elapsed() <= c.budget {
                    Ok(d)
                } else {
                    Err(format!("{d}; over the {} s budget", c.budget.as_secs()))
                }
            });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(d) => println!("ACCEPTANCE PASS {}: {d} ({secs:.2} s)", c.name),
            Err(d) => {
                failed += 1;
                println!("ACCEPTANCE FAIL {}: {d} ({secs:.2} s)", c.name);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        selected.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn schedule_golden() -> Outcome {
    let golden: [&[u32]; 5] = [
        &[100],
        &[45, 10, 45],
        &[30, 10, 20, 10, 30],
        &[20, 10, 15, 10, 15, 10, 20],
        &[15, 10, 10, 10, 10, 10, 10, 10, 15],
    ];
    let (n, y) = (100u32, 10u32);
    let mut pairs = 0;
    for (name, seq) in RATIOS.iter().zip(golden) {
        let (o, s): (u32, u32) = {
            let (a, b) = name.split_once(':').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        };
        let chunks = (seq.len() / 2) as u32;
        for l in LR_SETTINGS {
            let plan = ok(preset_plan(name, BASE_LR, l))?;
            check!(
                plan.epoch_sequence() == seq,
                "{name}: sequence {:?}",
                plan.epoch_sequence()
            );
            // ratio from chunk count and chunk length
            let expect = (n - chunks * y, chunks * y);
            let got = (
                plan.epochs_of(PhaseKind::Original),
                plan.epochs_of(PhaseKind::Semantic),
            );
            check!(
                got == expect && expect == (o, s),
                "{name} l={l}: ratio {got:?}, expected {expect:?}"
            );
            // lr per epoch: base for original, base/l for semantic
            let semantic_lr = BASE_LR * (1.0 / l);
            let mut epochs = 0;
            for e in plan.cursor() {
                let want = match e.kind {
                    PhaseKind::Original => BASE_LR,
                    PhaseKind::Semantic => semantic_lr,
                };
                check!(
                    (e.lr - want).abs() <= 1e-15 * want,
                    "{name} l={l} epoch {}: lr {} vs {want}",
                    e.epoch,
                    e.lr
                );
                epochs += 1;
            }
            check!(epochs == n, "{name} l={l}: cursor yields {epochs} epochs");
            // the config route builds the same plan
            let mut cfg = RunConfig::default();
            cfg.ratio = name.to_string();
            cfg.lr_divisor = l;
            check!(
                ok(cfg.plan())? == plan,
                "{name} l={l}: config plan differs from preset"
            );
            pairs += 1;
        }
    }
    Ok(format!(
        "5 sequences exact; ratio and lr exact for {pairs} (ratio, l) pairs"
    ))
}

fn gradient_suite() -> Outcome {
    let cases = gradient_cases();
    let mut worst = (0.0f64, String::new());
    for c in &cases {
        let (err, seed) = c.worst();
        check!(
            err <= FD_REL_TOL,
            "{} seed {seed}: rel err {err:.3e} > {FD_REL_TOL:e}",
            c.name
        );
        if err > worst.0 {
            worst = (err, c.name.to_string());
        }
    }
    Ok(format!(
        "{} cases x {} seeds, worst rel err {:.2e} ({})",
        cases.len(),
        common::SEEDS.len(),
        worst.0,
        worst.1
    ))
}

fn random_rows(n: usize, d: usize, rng: &mut SplitMix64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.normal()).collect())
        .collect()
}

fn metric_oracles() -> Outcome {
    let mut rng = SplitMix64::new(2024);

    let mut ssim_self = 0.0f64;
    for size in [11, 16, 23, 32] {
        for _ in 0..5 {
            let x = Tensor::<f64>::rand_uniform([3, size, size], 0.0, 1.0, &mut rng);
            ssim_self = ssim_self.max((ok(ssim(&x, &x))? - 1.0).abs());
        }
    }
    check!(ssim_self <= 1e-9, "ssim(x,x) off by {ssim_self:e}");

    let mut constant = 0.0f64;
    for _ in 0..50 {
        let (a, b) = (rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0));
        let x = Tensor::<f64>::full([1, 12, 12], a);
        let y = Tensor::<f64>::full([1, 12, 12], b);
        let want = (2.0 * a * b + SSIM_C1) / (a * a + b * b + SSIM_C1);
        constant = constant.max((ok(ssim(&x, &y))? - want).abs());
    }
    check!(constant <= 1e-8, "constant-image ssim off by {constant:e}");

    let mut fid_self = 0.0f64;
    for _ in 0..200 {
        let n = 2 + (rng.next_u64() % 30) as usize;
        let d = 1 + (rng.next_u64() % 8) as usize;
        let s = ok(gaussian_stats(&random_rows(n, d, &mut rng)))?;
        fid_self = fid_self.max(ok(fid(&s, &s))?.abs());
    }
    check!(fid_self <= 1e-6, "fid of identical stats = {fid_self:e}");

    let mut shift = 0.0f64;
    for _ in 0..100 {
        let d = 1 + (rng.next_u64() % 8) as usize;
        let rank = 1 + (rng.next_u64() as usize % d);
        let f = DMatrix::from_fn(d, rank, |_, _| rng.normal());
        let sigma = &f * f.transpose();
        let mu = DVector::from_fn(d, |_, _| rng.normal());
        let delta = DVector::from_fn(d, |_, _| rng.uniform(-3.0, 3.0));
        let a = GaussianStats {
            mu: mu.clone(),
            sigma: sigma.clone(),
        };
        let b = GaussianStats {
            mu: &mu + &delta,
            sigma,
        };
        let want: f64 = delta.iter().map(|v| v * v).sum();
        shift = shift.max((ok(fid(&a, &b))? - want).abs());
    }
    check!(shift <= 1e-5, "fid covariance-shift case off by {shift:e}");

    let mut kid_err = 0.0f64;
    for seed in 0..300u64 {
        let b = 2 + (seed % 3) as usize;
        let d = 1 + (seed % 4) as usize;
        let x = random_rows(b, d, &mut rng);
        let y = random_rows(b, d, &mut rng);
        let est = ok(kid(&x, &y, b, 1, seed))?;
        kid_err = kid_err.max((est.mean - mmd2_oracle(&x, &y)).abs());
    }
    check!(kid_err <= 1e-9, "kid vs kernel sums off by {kid_err:e}");

    Ok(format!(
        "ssim self {ssim_self:.1e}, constant {constant:.1e}, fid self {fid_self:.1e}, \
         fid shift {shift:.1e}, kid {kid_err:.1e}"
    ))
}

fn desk_config(dir: &Path, text: &str) -> Result<RunConfig, String> {
    let mut c = RunConfig::default();
    ok(c.apply_text(text))?;
    c.out_dir = dir.to_path_buf();
    Ok(c)
}

fn phase_fidelity() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let c = desk_config(
        dir.path(),
        "model = cut\nratio = 70:30\nlr_divisor = 10\nepochs = 100\nchunk_epochs = 10\n\
         image_size = 16\nnum_train = 40\nnum_test = 8\n",
    )?;
    let out = ok(train(&c))?;
    check!(
        out.epochs_completed == 100 && !out.interrupted,
        "completed {} epochs",
        out.epochs_completed
    );
    check!(
        dir.path().join(FINAL_CHECKPOINT).exists(),
        "no final checkpoint"
    );
    let plan: PhasePlan = ok(c.plan())?;
    let log = ok(read_epoch_log(dir.path()))?;
    let cursor: Vec<_> = plan.cursor().collect();
    check!(
        log.len() == cursor.len(),
        "log has {} rows, plan {}",
        log.len(),
        cursor.len()
    );
    for ((epoch, kind, lr, _), e) in log.iter().zip(&cursor) {
        check!(
            *epoch == e.epoch && *kind == e.kind && *lr == e.lr,
            "epoch {epoch}: logged ({kind}, {lr}), planned ({}, {})",
            e.kind,
            e.lr
        );
    }
    let names = |k: PhaseKind| -> Vec<Vec<String>> {
        log.iter()
            .filter(|r| r.1 == k)
            .map(|r| r.3.keys().cloned().collect())
            .collect()
    };
    let (orig, sem) = (names(PhaseKind::Original), names(PhaseKind::Semantic));
    check!(!sem.is_empty(), "no semantic epochs logged");
    let first = &orig[0];
    check!(
        orig.iter().chain(&sem).all(|n| n == first),
        "component name sets differ between epochs"
    );
    check!(
        log.iter().all(|r| r.3.values().all(|v| v.is_finite())),
        "non-finite loss component"
    );
    Ok(format!(
        "100 epochs, (kind, lr) log equals plan cursor, {} original / {} semantic epochs share components {:?}",
        orig.len(),
        sem.len(),
        first
    ))
}

fn read(path: &Path) -> Result<Vec<u8>, String> {
    fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn reproducibility() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for kind in [ModelKind::Cut, ModelKind::CycleGan] {
        let base = root.path().join(kind.as_str());
        let mut c = desk_config(
            &base.join("a"),
            "ratio = 80:20\nepochs = 10\nchunk_epochs = 1\nimage_size = 16\nnum_train = 8\n\
             num_test = 4\nbase_width = 8\nembed_dim = 64\neval_every = 5\nseed = 7\n",
        )?;
        c.model = kind;
        ok(train(&c))?;
        let mut twin = c.clone();
        twin.out_dir = base.join("b");
        ok(train(&twin))?;
        let mut split = c.clone();
        split.out_dir = base.join("c");
        let first = ok(train_with(
            &split,
            &TrainOptions {
                stop_after: Some(4),
            },
        ))?;
        check!(
            first.interrupted && first.epochs_completed == 4,
            "{kind:?}: stop_after did not interrupt at 4"
        );
        let resumed = ok(resume(
            &split.out_dir.join(CHECKPOINT_FILE),
            &split,
            &TrainOptions::default(),
        ))?;
        check!(
            resumed.epochs_completed == 10,
            "{kind:?}: resume ended early"
        );
        let reference = read(&c.out_dir.join(FINAL_CHECKPOINT))?;
        check!(
            reference == read(&twin.out_dir.join(FINAL_CHECKPOINT))?,
            "{kind:?}: two seeded runs differ"
        );
        check!(
            reference == read(&split.out_dir.join(FINAL_CHECKPOINT))?,
            "{kind:?}: resumed run differs"
        );
        for file in [EPOCH_LOG, FINAL_REPORT] {
            check!(
                read(&c.out_dir.join(file))? == read(&split.out_dir.join(file))?,
                "{kind:?}: {file} differs after resume"
            );
        }
        lines.push(format!("{kind:?} {} bytes identical x3", reference.len()));
    }
    Ok(lines.join("; "))
}

/// Per-seed (untrained, final) SSIM percent.
fn training_efficacy() -> Outcome {
    let mut rows = Vec::new();
    for seed in [0u64, 1, 2] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut c = desk_config(
            dir.path(),
            "model = cut\nepochs = 30\nimage_size = 32\nnum_train = 200\nbase_width = 16\n\
             eval_every = 10\n",
        )?;
        c.seed = seed;
        let untrained = ok(evaluate_untrained(&c))?.ssim_percent;
        let out = ok(train(&c))?;
        let trained = out
            .final_report
            .ok_or("run produced no final report")?
            .ssim_percent;
        rows.push((seed, untrained, trained));
    }
    let text: Vec<String> = rows
        .iter()
        .map(|(s, u, t)| format!("seed {s}: {u:.2} -> {t:.2}"))
        .collect();
    let text = text.join(", ");
    check!(
        rows.iter().all(|(_, u, t)| *t >= u + 10.0),
        "final ssim_percent not 10 points above untrained for every seed: {text}"
    );
    Ok(text)
}

fn injection_direction() -> Outcome {
    const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
    let mut means = Vec::new();
    for ratio in ["100:0", "80:20"] {
        let mut scores = Vec::new();
        for seed in SEEDS {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            let mut c = desk_config(
                dir.path(),
                "model = cut\nepochs = 100\nchunk_epochs = 10\nimage_size = 16\n\
                 num_train = 40\nnum_test = 8\nbase_width = 8\n",
            )?;
            c.ratio = ratio.into();
            c.seed = seed;
            let out = ok(train(&c))?;
            scores.push(out.final_report.ok_or("no final report")?.ssim_percent);
        }
        means.push(scores.iter().sum::<f64>() / scores.len() as f64);
    }
    let (plain, injected) = (means[0], means[1]);
    let text = format!(
        "mean ssim_percent 100:0 {plain:.2}, 80:20 {injected:.2}, difference {:+.2} ({})",
        injected - plain,
        if injected > plain {
            "injection ahead"
        } else {
            "injection not ahead"
        }
    );
    check!(
        injected >= plain - 0.5,
        "non-inferiority bound missed: {text}"
    );
    Ok(text)
}

fn sweep_structure() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let c = desk_config(
        dir.path(),
        "model = cut\nepochs = 100\nchunk_epochs = 10\nimage_size = 16\nnum_train = 2\n\
         num_test = 2\nbase_width = 4\nres_blocks = 1\nembed_dim = 16\nnum_patches = 8\n\
         eval_every = 50\nkid_subsets = 2\nsample_images = 0\n",
    )?;
    let ratios: Vec<String> = RATIOS.iter().map(|r| r.to_string()).collect();
    let runs = ok(sweep(&c, &ratios, &LR_SETTINGS))?;
    check!(
        runs.iter().all(|r| r.status == "ok"),
        "failed cells: {:?}",
        runs.iter()
            .filter(|r| r.status != "ok")
            .map(|r| &r.status)
            .collect::<Vec<_>>()
    );
    let text = fs::read_to_string(dir.path().join(SWEEP_CSV)).map_err(|e| e.to_string())?;
    let rows = ok(MetricReport::from_csv(&text))?;
    check!(rows.len() == 15, "{} rows", rows.len());
    // LR-setting blocks in order, ratios in column order inside each block
    for (i, r) in rows.iter().enumerate() {
        let (l, ratio) = (LR_SETTINGS[i / 5], RATIOS[i % 5]);
        check!(
            r.lr_setting == l && r.ratio == ratio,
            "row {i} is ({}, {}), expected ({ratio}, {l})",
            r.ratio,
            r.lr_setting
        );
        check!(r.ssim_percent.is_finite(), "row {i} has no score");
    }
    let pivot =
        fs::read_to_string(dir.path().join("pivot_ssim_percent.tsv")).map_err(|e| e.to_string())?;
    let pivot_rows: Vec<&str> = pivot.lines().collect();
    check!(
        pivot_rows.len() == 4 && pivot_rows[0] == format!("lr_setting\t{}", RATIOS.join("\t")),
        "pivot layout {pivot_rows:?}"
    );
    let baseline: Vec<&MetricReport> = rows.iter().filter(|r| r.ratio == "100:0").collect();
    let metrics = |r: &MetricReport| (r.ssim_percent, r.fid, r.kid_mean, r.kid_variance);
    check!(
        baseline.len() == 3 && baseline.iter().all(|r| metrics(r) == metrics(baseline[0])),
        "100:0 metrics differ across l"
    );
    let params: Vec<_> = runs
        .iter()
        .filter(|r| r.ratio == "100:0")
        .map(|r| Checkpoint::read(&r.run_dir.join(FINAL_CHECKPOINT)).map(|ck| ck.params))
        .collect::<semgan_core::Result<_>>()
        .map_err(|e| e.to_string())?;
    check!(
        params.iter().all(|p| *p == params[0]),
        "100:0 final weights differ across l"
    );
    Ok(format!(
        "15 rows in 3 lr blocks x 5 ratios; 100:0 identical across l (ssim {:.2})",
        baseline[0].ssim_percent
    ))
}
