use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};
use semgan_core::metrics::MetricReport;
use semgan_core::runner::{
    evaluate_checkpoint, evaluate_identity, resume, sweep, train_with, RunConfig, TrainOptions,
    CONFIG_FILE, CONFIG_KEYS, SWEEP_CSV,
};
use semgan_core::synthdata::{build_dataset, write_dataset};
use semgan_core::{Error, Result};

const BOOL_KEYS: [&str; 2] = ["nce_identity", "reset_moments_on_phase"];

fn config_args(cmd: Command) -> Command {
    let cmd = cmd.arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .value_parser(clap::value_parser!(PathBuf))
            .help("key = value config file; flags override it"),
    );
    CONFIG_KEYS.iter().fold(cmd, |cmd, &key| {
        let hyphen: &'static str = Box::leak(key.replace('_', "-").into_boxed_str());
        let mut arg = Arg::new(key)
            .long(key)
            .value_name("VALUE")
            .help_heading("Config keys")
            .action(ArgAction::Set);
        if hyphen != key {
            arg = arg.alias(hyphen);
        }
        if BOOL_KEYS.contains(&key) {
            arg = arg.num_args(0..=1).default_missing_value("true");
        }
        cmd.arg(arg)
    })
}

fn cli() -> Command {
    let stop_after = Arg::new("stop-after")
        .long("stop-after")
        .value_name("EPOCHS")
        .value_parser(clap::value_parser!(u32))
        .help("Stop after this many completed epochs in total, leaving a resumable checkpoint");
    let checkpoint = Arg::new("checkpoint")
        .long("checkpoint")
        .value_name("FILE")
        .value_parser(clap::value_parser!(PathBuf));
    Command::new("semgan")
        .about("Semantic-map injected GAN training on synthetic scenes")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(
            Command::new("generate-data")
                .about("Write the synthetic dataset described by the config")
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("DIR")
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("Target directory (defaults to data_dir)"),
                ),
        ))
        .subcommand(config_args(
            Command::new("train")
                .about("Train one run into out_dir")
                .arg(stop_after.clone()),
        ))
        .subcommand(config_args(
            Command::new("resume")
                .about("Continue a run from its checkpoint")
                .arg(checkpoint.clone().required(true))
                .arg(stop_after),
        ))
        .subcommand(config_args(
            Command::new("evaluate")
                .about("Score a checkpoint, or the identity translator, on the test split")
                .arg(checkpoint.conflicts_with("identity"))
                .arg(
                    Arg::new("identity")
                        .long("identity")
                        .action(ArgAction::SetTrue)
                        .help("Evaluate targets against themselves"),
                )
                .arg(
                    Arg::new("csv")
                        .long("csv")
                        .action(ArgAction::SetTrue)
                        .help("Print a CSV row instead of key = value text"),
                ),
        ))
        .subcommand(config_args(
            Command::new("sweep")
                .about("Train a ratio by lr-setting grid under out_dir")
                .arg(
                    Arg::new("ratios")
                        .long("ratios")
                        .value_delimiter(',')
                        .default_value("100:0,90:10,80:20,70:30,60:40"),
                )
                .arg(
                    Arg::new("lr-settings")
                        .long("lr-settings")
                        .value_delimiter(',')
                        .value_parser(clap::value_parser!(f64))
                        .default_value("1,10,100"),
                ),
        ))
}

/// Keys given as flags, in `CONFIG_KEYS` order.
fn flag_overrides(m: &ArgMatches) -> Vec<(&'static str, String)> {
    CONFIG_KEYS
        .iter()
        .filter_map(|&k| m.get_one::<String>(k).map(|v| (k, v.clone())))
        .collect()
}

fn build_config(base: RunConfig, m: &ArgMatches) -> Result<RunConfig> {
    let mut config = base;
    if let Some(path) = m.get_one::<PathBuf>("config") {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        config.apply_text(&text)?;
    }
    for (k, v) in flag_overrides(m) {
        config.set(k, &v)?;
    }
    config.validate()?;
    Ok(config)
}

fn sets(m: &ArgMatches, key: &str) -> bool {
    m.get_one::<String>(key).is_some()
}

fn config_file_sets(m: &ArgMatches, key: &str) -> Result<bool> {
    let Some(path) = m.get_one::<PathBuf>("config") else {
        return Ok(false);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    Ok(text
        .lines()
        .filter_map(|l| l.split('#').next()?.split_once('='))
        .any(|(k, _)| k.trim() == key))
}

fn print_outcome(final_report: Option<&MetricReport>, dir: &Path, epochs: u32, interrupted: bool) {
    println!("run_dir={}", dir.display());
    println!("epochs_completed={epochs}");
    println!("interrupted={interrupted}");
    if let Some(r) = final_report {
        print!("{}", r.to_text());
    }
}

fn run(m: &ArgMatches) -> Result<()> {
    match m.subcommand() {
        Some(("generate-data", sub)) => {
            let config = build_config(RunConfig::default(), sub)?;
            let dir = sub
                .get_one::<PathBuf>("out")
                .cloned()
                .or(config.data_dir.clone())
                .ok_or_else(|| Error::Config("generate-data needs --out or data_dir".into()))?;
            write_dataset(&dir, &build_dataset(&config.data)?)?;
            println!("dataset={}", dir.display());
        }
        Some(("train", sub)) => {
            let config = build_config(RunConfig::default(), sub)?;
            let opts = TrainOptions {
                stop_after: sub.get_one::<u32>("stop-after").copied(),
            };
            let out = train_with(&config, &opts)?;
            print_outcome(
                out.final_report.as_ref(),
                &out.run_dir,
                out.epochs_completed,
                out.interrupted,
            );
        }
        Some(("resume", sub)) => {
            let ck = sub.get_one::<PathBuf>("checkpoint").expect("required");
            let run_dir = ck.parent().unwrap_or(Path::new(".")).to_path_buf();
            // The run's own config copy is the base; --config and flags refine it.
            let saved = run_dir.join(CONFIG_FILE);
            let mut base = if saved.exists() {
                RunConfig::load(&saved)?
            } else {
                RunConfig::default()
            };
            if !sets(sub, "out_dir") && !config_file_sets(sub, "out_dir")? {
                base.out_dir = run_dir;
            }
            let config = build_config(base, sub)?;
            let opts = TrainOptions {
                stop_after: sub.get_one::<u32>("stop-after").copied(),
            };
            let out = resume(ck, &config, &opts)?;
            print_outcome(
                out.final_report.as_ref(),
                &out.run_dir,
                out.epochs_completed,
                out.interrupted,
            );
        }
        Some(("evaluate", sub)) => {
            let report = if sub.get_flag("identity") {
                evaluate_identity(&build_config(RunConfig::default(), sub)?)?
            } else {
                let ck = sub.get_one::<PathBuf>("checkpoint").ok_or_else(|| {
                    Error::Config("evaluate needs --checkpoint or --identity".into())
                })?;
                let locations = if sub.get_one::<PathBuf>("config").is_some()
                    || !flag_overrides(sub).is_empty()
                {
                    Some(build_config(RunConfig::default(), sub)?)
                } else {
                    None
                };
                evaluate_checkpoint(ck, locations.as_ref())?
            };
            if sub.get_flag("csv") {
                print!("{}", MetricReport::to_csv(std::slice::from_ref(&report))?);
            } else {
                print!("{}", report.to_text());
            }
        }
        Some(("sweep", sub)) => {
            let config = build_config(RunConfig::default(), sub)?;
            let ratios: Vec<String> = sub
                .get_many::<String>("ratios")
                .into_iter()
                .flatten()
                .cloned()
                .collect();
            let lrs: Vec<f64> = sub
                .get_many::<f64>("lr-settings")
                .into_iter()
                .flatten()
                .copied()
                .collect();
            let runs = sweep(&config, &ratios, &lrs)?;
            for r in &runs {
                println!("{}\t{}\t{}", r.ratio, r.lr_setting, r.status);
            }
            println!("results={}", config.out_dir.join(SWEEP_CSV).display());
        }
        _ => unreachable!("subcommand_required"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = cli().get_matches();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: kind={} msg={msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}
