//! Experiment orchestration: configs, the phase-aware training loop,
//! checkpoints, evaluation and sweeps.
//!
//! A run directory holds `config.txt`, `plan.txt`, `epochs.tsv` (epoch,
//! kind, lr, loss components), `evaluations.csv`, `checkpoint.ckpt`,
//! `final.ckpt`, `report_final.txt`, `report_best.txt` and `samples/`.

mod checkpoint;
mod config;
mod step;
mod sweep;
mod train;

pub use checkpoint::{Checkpoint, OptimizerSnapshot, CHECKPOINT_MAGIC};
pub use config::{parse_ratio, RunConfig, CONFIG_KEYS};
pub use step::{discriminator_names, stack, train_step, translate, Batch, StepOutcome};
pub use sweep::{pivot, sweep, sweep_run_id, SweepRun, SWEEP_BEST_CSV, SWEEP_CSV, SWEEP_STATUS};
pub use train::{
    embedder_for, eval_config, evaluate_checkpoint, evaluate_identity, evaluate_untrained,
    load_checkpoint, load_data, read_epoch_log, read_evaluations, result_config_text, resume,
    train, train_with, RunOutcome, TrainOptions, BEST_REPORT, CHECKPOINT_FILE, CONFIG_FILE,
    EPOCH_LOG, EVAL_LOG, FINAL_CHECKPOINT, FINAL_REPORT, PLAN_FILE, SAMPLES_DIR,
};
