//! Distributed training over simulated devices, its single-device oracle,
//! and the experiment driver.

mod allreduce;
mod bound;
mod config;
mod engine;
mod experiment;
mod metrics;
mod reference;

pub use allreduce::{allreduce_time, allreduce_weight_grads};
pub use bound::{convergence_bound, ConvergenceBound};
pub use config::{ComputeModel, PrecisionMode, TrainConfig};
pub use engine::{
    build_layout, calibrate_cost_model, run_rng, DistributedTrainer, EpochProfile, Evaluation,
    GradientSample, TrainerOptions,
};
pub use experiment::{
    mode_slug, read_summary_csv, run_experiment, run_metrics_path, run_once, trainer_options,
    write_summary_csv, ExperimentResult, ModeSummary, RunResult, Setup, CALIBRATED_GAMMA_SHARE,
};
pub use metrics::{mean_std, read_jsonl, write_jsonl, EpochMetrics, InstanceRecord, ResolveRecord};
pub use reference::ReferenceTrainer;
