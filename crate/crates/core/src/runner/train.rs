use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use super::checkpoint::{Checkpoint, OptimizerSnapshot};
use super::config::RunConfig;
use super::step::{discriminator_names, train_step, translate, Batch, StepOutcome};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::losses::component_names;
use crate::metrics::{
    evaluate_run, EvalConfig, MetricReport, RandomProjectionEmbedder, CSV_HEADER,
};
use crate::models::ModelBundle;
use crate::optimizer::Adam;
use crate::rng::{derive_seed, SplitMix64};
use crate::schedule::{PhaseKind, PhasePlan};
use crate::synthdata::{
    build_dataset, load_split, read_manifest, write_image, SceneTriplet, Split,
};

pub const CONFIG_FILE: &str = "config.txt";
pub const PLAN_FILE: &str = "plan.txt";
pub const EPOCH_LOG: &str = "epochs.tsv";
pub const EVAL_LOG: &str = "evaluations.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const FINAL_REPORT: &str = "report_final.txt";
pub const BEST_REPORT: &str = "report_best.txt";
pub const SAMPLES_DIR: &str = "samples";

const MODEL_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const PATCH_STREAM: u64 = 3;

/// Hooks for tests and tooling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Stop once this many epochs are complete, as if interrupted.
    pub stop_after: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub epochs_completed: u32,
    pub interrupted: bool,
    /// Evaluation after the last epoch.
    pub final_report: Option<MetricReport>,
    /// Evaluation with the highest SSIM.
    pub best_report: Option<MetricReport>,
}

/// Run seed, model and data: everything needed to continue training.
struct Session {
    config: RunConfig,
    plan: PhasePlan,
    bundle: ModelBundle,
    opt_g: Adam,
    opt_d: Adam,
    train: Vec<SceneTriplet>,
    test: Vec<SceneTriplet>,
    epoch: u32,
    phase_index: usize,
    step: u64,
    patch_rng: SplitMix64,
    best: Option<(u32, f64)>,
    embedder: RandomProjectionEmbedder,
}

/// Data for `config`, loaded from `data_dir` when set.
pub fn load_data(config: &RunConfig) -> Result<(Vec<SceneTriplet>, Vec<SceneTriplet>)> {
    match &config.data_dir {
        Some(dir) => {
            let on_disk = read_manifest(dir)?;
            if on_disk != config.data {
                return Err(Error::Config(format!(
                    "dataset in {} does not match the run config",
                    dir.display()
                )));
            }
            Ok((
                load_split(dir, Split::Train)?,
                load_split(dir, Split::Test)?,
            ))
        }
        None => {
            let d = build_dataset(&config.data)?;
            Ok((d.train, d.test))
        }
    }
}

/// Text embedded in checkpoints: every digested key.
pub fn result_config_text(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.data_dir = None;
    c.run_id = RunConfig::default().run_id;
    c.out_dir = RunConfig::default().out_dir;
    c.to_text()
}

pub fn embedder_for(config: &RunConfig) -> RandomProjectionEmbedder {
    RandomProjectionEmbedder::with_dims(config.embedder_seed, config.embedder_hidden, 64)
}

fn epoch_log_header(config: &RunConfig) -> String {
    let mut names: Vec<String> = component_names(config.model, &config.losses)
        .into_iter()
        .map(String::from)
        .collect();
    names.push("total".into());
    names.extend(
        discriminator_names(config.model)
            .into_iter()
            .map(String::from),
    );
    // matches the BTreeMap order of the logged values
    names.sort();
    format!("epoch\tkind\tlr\t{}\n", names.join("\t"))
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T> {
    r.map_err(|e| Error::io(path, e))
}

fn append(path: &Path, text: &str) -> Result<()> {
    let mut f = io(
        path,
        OpenOptions::new().create(true).append(true).open(path),
    )?;
    io(path, f.write_all(text.as_bytes()))
}

/// Keeps the header and the lines whose leading epoch is below `epoch`.
fn truncate_log(path: &Path, epoch: u32, sep: char) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = io(path, fs::read_to_string(path))?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let first = line.split(sep).next().unwrap_or("");
        let keep = i == 0 || first.parse::<u32>().map_or(false, |e| e < epoch);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    io(path, fs::write(path, kept))
}

impl Session {
    fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let plan = config.plan()?;
        let bundle = ModelBundle::build(config.arch(), derive_seed(config.seed, &[MODEL_STREAM]))?;
        let g_names = bundle.generator_param_names();
        let d_names = bundle.discriminator_param_names();
        let opt_g = Adam::new(
            &bundle.params,
            g_names.iter().map(String::as_str),
            config.base_lr,
            config.adam,
        )?;
        let opt_d = Adam::new(
            &bundle.params,
            d_names.iter().map(String::as_str),
            config.base_lr,
            config.adam,
        )?;
        let (train, test) = load_data(config)?;
        Ok(Self {
            config: config.clone(),
            plan,
            bundle,
            opt_g,
            opt_d,
            train,
            test,
            epoch: 0,
            phase_index: 0,
            step: 0,
            patch_rng: SplitMix64::new(derive_seed(config.seed, &[PATCH_STREAM])),
            best: None,
            embedder: embedder_for(config),
        })
    }

    fn dir(&self) -> &Path {
        &self.config.out_dir
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            digest: self.config.digest(),
            epoch: self.epoch,
            phase_index: self.phase_index,
            step: self.step,
            rng_state: self.patch_rng.state(),
            best: self.best,
            config_text: result_config_text(&self.config),
            params: self.bundle.params.clone(),
            opt_g: OptimizerSnapshot::of(&self.opt_g),
            opt_d: OptimizerSnapshot::of(&self.opt_d),
        }
    }

    fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        if ck.digest != self.config.digest() {
            return Err(Error::Config(format!(
                "checkpoint config digest {} does not match the supplied config ({})",
                ck.digest,
                self.config.digest()
            )));
        }
        if ck.epoch > self.plan.total_epochs() {
            return Err(Error::Config(format!(
                "checkpoint epoch {} is past the plan",
                ck.epoch
            )));
        }
        for (name, t) in ck.params.iter() {
            self.bundle.params.set(name, t.clone())?;
        }
        if ck.params.len() != self.bundle.params.len() {
            return Err(Error::Config(
                "checkpoint parameter set differs from the model".into(),
            ));
        }
        ck.opt_g.restore_into(&mut self.opt_g)?;
        ck.opt_d.restore_into(&mut self.opt_d)?;
        self.epoch = ck.epoch;
        self.phase_index = ck.phase_index;
        self.step = ck.step;
        self.patch_rng = SplitMix64::new(ck.rng_state);
        self.best = ck.best;
        Ok(())
    }

    fn order(&self, epoch: u32) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.train.len()).collect();
        SplitMix64::new(derive_seed(
            self.config.seed,
            &[SHUFFLE_STREAM, epoch as u64],
        ))
        .shuffle(&mut idx);
        idx
    }

    fn run_epoch(&mut self, epoch: u32, kind: PhaseKind) -> Result<BTreeMap<String, f64>> {
        let mut sums: BTreeMap<String, f64> = BTreeMap::new();
        let mut batches = 0usize;
        let order = self.order(epoch);
        for chunk in order.chunks(self.config.batch_size) {
            let sources: Vec<&Tensor<f32>> = chunk.iter().map(|&i| &self.train[i].source).collect();
            let targets: Vec<&Tensor<f32>> = chunk
                .iter()
                .map(|&i| match kind {
                    PhaseKind::Original => &self.train[i].target,
                    PhaseKind::Semantic => &self.train[i].semantic,
                })
                .collect();
            let batch = Batch::stack(&sources, &targets)?;
            let out: StepOutcome = train_step(
                &mut self.bundle,
                &mut self.opt_g,
                &mut self.opt_d,
                &batch,
                &self.config.losses,
                &mut self.patch_rng,
            )?;
            for (k, v) in out.generator.into_iter().chain(out.discriminator) {
                *sums.entry(k).or_default() += v;
            }
            batches += 1;
            self.step += 1;
        }
        sums.values_mut().for_each(|v| *v /= batches as f64);
        Ok(sums)
    }

    fn evaluate(&self, epoch: u32) -> Result<MetricReport> {
        let sources: Vec<Tensor<f32>> = self.test.iter().map(|s| s.source.clone()).collect();
        let targets: Vec<Tensor<f32>> = self.test.iter().map(|s| s.target.clone()).collect();
        let generated = translate(&self.bundle, &sources, 8)?;
        let samples = self.dir().join(SAMPLES_DIR);
        io(&samples, fs::create_dir_all(&samples))?;
        for (i, img) in generated.iter().take(self.config.sample_images).enumerate() {
            write_image(&samples.join(format!("epoch{epoch:03}_{i}.ppm")), img)?;
        }
        let report = evaluate_run(
            &generated,
            &targets,
            &self.embedder,
            &eval_config(&self.config),
        )?;
        Ok(report.labeled(
            &self.config.run_id,
            &self.config.ratio,
            self.config.lr_divisor,
        ))
    }

    fn run(&mut self, opts: &TrainOptions) -> Result<RunOutcome> {
        let total = self.plan.total_epochs();
        let log = self.dir().join(EPOCH_LOG);
        let evals = self.dir().join(EVAL_LOG);
        while self.epoch < total {
            if opts.stop_after.is_some_and(|s| self.epoch >= s) {
                return Ok(self.outcome(true));
            }
            let e = self.epoch;
            let entry = self.plan.entry(e).expect("epoch inside plan");
            if e > 0 && entry.phase_index != self.phase_index && self.config.reset_moments_on_phase
            {
                self.opt_g.reset_moments();
                self.opt_d.reset_moments();
            }
            self.opt_g.set_lr(entry.lr)?;
            self.opt_d.set_lr(entry.lr)?;
            let losses = self.run_epoch(e, entry.kind)?;
            let values: Vec<String> = losses.values().map(f64::to_string).collect();
            append(
                &log,
                &format!("{e}\t{}\t{}\t{}\n", entry.kind, entry.lr, values.join("\t")),
            )?;

            if (e + 1) % self.config.eval_every == 0 || self.plan.is_phase_end(e) {
                let report = self.evaluate(e)?;
                let mut w = csv::WriterBuilder::new()
                    .has_headers(false)
                    .from_writer(Vec::new());
                w.serialize(&report)
                    .map_err(|err| Error::Contract(err.to_string()))?;
                let row = String::from_utf8(
                    w.into_inner()
                        .map_err(|err| Error::Contract(err.to_string()))?,
                )
                .map_err(|err| Error::Contract(err.to_string()))?;
                append(&evals, &format!("{e},{row}"))?;
                if self.best.map_or(true, |(_, s)| report.ssim_percent > s) {
                    self.best = Some((e, report.ssim_percent));
                }
            }
            self.epoch += 1;
            self.phase_index = entry.phase_index;
            self.checkpoint()
                .write_atomic(&self.dir().join(CHECKPOINT_FILE))?;
        }
        self.checkpoint()
            .write_atomic(&self.dir().join(FINAL_CHECKPOINT))?;
        let outcome = self.outcome(false);
        if let Some(r) = &outcome.final_report {
            io(
                &self.dir().join(FINAL_REPORT),
                fs::write(self.dir().join(FINAL_REPORT), r.to_text()),
            )?;
        }
        if let Some(r) = &outcome.best_report {
            io(
                &self.dir().join(BEST_REPORT),
                fs::write(self.dir().join(BEST_REPORT), r.to_text()),
            )?;
        }
        Ok(outcome)
    }

    fn outcome(&self, interrupted: bool) -> RunOutcome {
        let rows = read_evaluations(self.dir()).unwrap_or_default();
        let final_report = if interrupted {
            None
        } else {
            rows.iter()
                .rfind(|(e, _)| *e + 1 == self.plan.total_epochs())
                .map(|(_, r)| r.clone())
        };
        let best_report = self
            .best
            .and_then(|(b, _)| rows.iter().find(|(e, _)| *e == b).map(|(_, r)| r.clone()));
        RunOutcome {
            run_dir: self.dir().to_path_buf(),
            epochs_completed: self.epoch,
            interrupted,
            final_report,
            best_report,
        }
    }
}

pub fn eval_config(config: &RunConfig) -> EvalConfig {
    EvalConfig {
        kid_subsets: config.kid_subsets,
        kid_subset_size: None,
        seed: config.embedder_seed,
    }
}

/// Evaluation rows of a run directory as `(epoch, report)`.
pub fn read_evaluations(run_dir: &Path) -> Result<Vec<(u32, MetricReport)>> {
    let path = run_dir.join(EVAL_LOG);
    let text = io(&path, fs::read_to_string(&path))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for (i, line) in text.lines().enumerate() {
        let here = offset;
        offset += line.len() + 1;
        if i == 0 {
            continue;
        }
        let (epoch, row) = line.split_once(',').ok_or_else(|| Error::Format {
            offset: here,
            message: "evaluation row without epoch".into(),
        })?;
        let epoch = epoch.parse().map_err(|_| Error::Format {
            offset: here,
            message: format!("bad epoch {epoch:?}"),
        })?;
        let mut reports = MetricReport::from_csv(&format!("{}\n{row}\n", CSV_HEADER.join(",")))?;
        out.push((epoch, reports.remove(0)));
    }
    Ok(out)
}

fn prepare_dir(config: &RunConfig, plan: &PhasePlan) -> Result<()> {
    let dir = &config.out_dir;
    io(dir, fs::create_dir_all(dir))?;
    io(dir, fs::write(dir.join(CONFIG_FILE), config.to_text()))?;
    io(
        dir,
        fs::write(dir.join(PLAN_FILE), plan.to_entries() + "\n"),
    )?;
    Ok(())
}

/// Trains from scratch into `config.out_dir`.
pub fn train(config: &RunConfig) -> Result<RunOutcome> {
    train_with(config, &TrainOptions::default())
}

pub fn train_with(config: &RunConfig, opts: &TrainOptions) -> Result<RunOutcome> {
    let mut s = Session::new(config)?;
    prepare_dir(config, &s.plan)?;
    let dir = &config.out_dir;
    io(
        dir,
        fs::write(dir.join(EPOCH_LOG), epoch_log_header(config)),
    )?;
    io(
        dir,
        fs::write(
            dir.join(EVAL_LOG),
            format!("epoch,{}\n", CSV_HEADER.join(",")),
        ),
    )?;
    for stale in [CHECKPOINT_FILE, FINAL_CHECKPOINT, FINAL_REPORT, BEST_REPORT] {
        let _ = fs::remove_file(dir.join(stale));
    }
    s.run(opts)
}

/// Continues a run from `checkpoint`; `config` must digest to the same value.
pub fn resume(checkpoint: &Path, config: &RunConfig, opts: &TrainOptions) -> Result<RunOutcome> {
    let ck = Checkpoint::read(checkpoint)?;
    let mut s = Session::new(config)?;
    s.restore(&ck)?;
    prepare_dir(config, &s.plan)?;
    let dir = &config.out_dir;
    for (file, header, sep) in [
        (EPOCH_LOG, epoch_log_header(config), '\t'),
        (EVAL_LOG, format!("epoch,{}\n", CSV_HEADER.join(",")), ','),
    ] {
        let path = dir.join(file);
        if path.exists() {
            truncate_log(&path, ck.epoch, sep)?;
        } else {
            io(&path, fs::write(&path, header))?;
        }
    }
    s.run(opts)
}

/// Loads the model stored in a checkpoint together with its config.
///
/// Location keys (`out_dir`, `run_id`, `data_dir`) come from `locations`
/// when given.
pub fn load_checkpoint(
    path: &Path,
    locations: Option<&RunConfig>,
) -> Result<(RunConfig, ModelBundle)> {
    let ck = Checkpoint::read(path)?;
    let mut config = RunConfig::from_text(&ck.config_text)?;
    if config.digest() != ck.digest {
        return Err(Error::Format {
            offset: 0,
            message: "embedded config does not match the checkpoint digest".into(),
        });
    }
    if let Some(loc) = locations {
        config.out_dir = loc.out_dir.clone();
        config.run_id = loc.run_id.clone();
        config.data_dir = loc.data_dir.clone();
    }
    let mut bundle = ModelBundle::build(config.arch(), 0)?;
    if ck.params.len() != bundle.params.len() {
        return Err(Error::Config(
            "checkpoint parameter set differs from the model".into(),
        ));
    }
    for (name, t) in ck.params.iter() {
        bundle.params.set(name, t.clone())?;
    }
    Ok((config, bundle))
}

/// Scores the checkpoint's translator on the test split.
pub fn evaluate_checkpoint(path: &Path, locations: Option<&RunConfig>) -> Result<MetricReport> {
    let (config, bundle) = load_checkpoint(path, locations)?;
    evaluate_bundle(&config, &bundle)
}

/// Scores the generator a run with `config` starts from, before any step.
pub fn evaluate_untrained(config: &RunConfig) -> Result<MetricReport> {
    config.validate()?;
    let bundle = ModelBundle::build(config.arch(), derive_seed(config.seed, &[MODEL_STREAM]))?;
    evaluate_bundle(config, &bundle)
}

fn evaluate_bundle(config: &RunConfig, bundle: &ModelBundle) -> Result<MetricReport> {
    let (_, test) = load_data(config)?;
    let sources: Vec<Tensor<f32>> = test.iter().map(|s| s.source.clone()).collect();
    let targets: Vec<Tensor<f32>> = test.iter().map(|s| s.target.clone()).collect();
    let generated = translate(bundle, &sources, 8)?;
    Ok(evaluate_run(
        &generated,
        &targets,
        &embedder_for(config),
        &eval_config(config),
    )?
    .labeled(&config.run_id, &config.ratio, config.lr_divisor))
}

/// Debug evaluation where the "translator" returns the targets unchanged.
pub fn evaluate_identity(config: &RunConfig) -> Result<MetricReport> {
    config.validate()?;
    let (_, test) = load_data(config)?;
    let targets: Vec<Tensor<f32>> = test.iter().map(|s| s.target.clone()).collect();
    Ok(evaluate_run(
        &targets,
        &targets,
        &embedder_for(config),
        &eval_config(config),
    )?
    .labeled(&config.run_id, &config.ratio, config.lr_divisor))
}

/// Parses an epoch log into `(epoch, kind, lr, components)` rows.
pub fn read_epoch_log(run_dir: &Path) -> Result<Vec<(u32, PhaseKind, f64, BTreeMap<String, f64>)>> {
    let path = run_dir.join(EPOCH_LOG);
    let text = io(&path, fs::read_to_string(&path))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split('\t').collect();
    let bad = |m: String| Error::Format {
        offset: 0,
        message: m,
    };
    lines
        .map(|line| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != header.len() || f.len() < 3 {
                return Err(bad(format!("epoch log row has {} fields", f.len())));
            }
            let comps = header[3..]
                .iter()
                .zip(&f[3..])
                .map(|(k, v)| {
                    Ok((
                        k.to_string(),
                        v.parse().map_err(|_| bad(format!("bad value {v}")))?,
                    ))
                })
                .collect::<Result<_>>()?;
            Ok((
                f[0].parse()
                    .map_err(|_| bad(format!("bad epoch {}", f[0])))?,
                f[1].parse()?,
                f[2].parse().map_err(|_| bad(format!("bad lr {}", f[2])))?,
                comps,
            ))
        })
        .collect()
}
