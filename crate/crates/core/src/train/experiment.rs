use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::comm::{CostModel, ExecMode};
use crate::error::{Error, Result};
use crate::graph::{partition_graph, Graph, Partition};

use super::config::{PrecisionMode, TrainConfig};
use super::engine::{calibrate_cost_model, DistributedTrainer, Evaluation, TrainerOptions};
use super::metrics::{mean_std, write_jsonl, EpochMetrics, ResolveRecord};

/// Latency share of calibrated communication time.
pub const CALIBRATED_GAMMA_SHARE: f64 = 0.05;

/// One training run of one mode with one seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub mode: PrecisionMode,
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
    pub resolves: Vec<ResolveRecord>,
    /// Full-precision evaluation of the trained weights.
    pub final_eval: Evaluation,
}

impl RunResult {
    pub fn mean_sim_epoch(&self) -> f64 {
        self.epochs.iter().map(|e| e.sim_epoch).sum::<f64>() / self.epochs.len().max(1) as f64
    }
}

/// One CSV row: a mode aggregated over its seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: String,
    pub runs: usize,
    pub val_acc_mean: f64,
    pub val_acc_std: f64,
    pub test_acc_mean: f64,
    pub test_acc_std: f64,
    pub final_loss_mean: f64,
    pub sim_epoch: f64,
    pub sim_comm: f64,
    pub sim_central: f64,
    pub sim_marginal: f64,
    pub sim_quant: f64,
    pub sim_serialized: f64,
    pub wall_epoch: f64,
    pub bytes_epoch: f64,
}

impl ModeSummary {
    pub fn from_runs(mode: PrecisionMode, runs: &[&RunResult]) -> Self {
        let per_run = |f: &dyn Fn(&RunResult) -> f64| runs.iter().map(|r| f(r)).collect::<Vec<_>>();
        let per_epoch = |f: &dyn Fn(&EpochMetrics) -> f64| {
            let xs: Vec<f64> = runs.iter().flat_map(|r| r.epochs.iter().map(f)).collect();
            xs.iter().sum::<f64>() / xs.len().max(1) as f64
        };
        let (val_acc_mean, val_acc_std) = mean_std(&per_run(&|r| r.final_eval.val_acc));
        let (test_acc_mean, test_acc_std) = mean_std(&per_run(&|r| r.final_eval.test_acc));
        ModeSummary {
            mode: mode.to_string(),
            runs: runs.len(),
            val_acc_mean,
            val_acc_std,
            test_acc_mean,
            test_acc_std,
            final_loss_mean: mean_std(&per_run(&|r| r.final_eval.loss)).0,
            sim_epoch: per_epoch(&|e| e.sim_epoch),
            sim_comm: per_epoch(&|e| e.sim.communication),
            sim_central: per_epoch(&|e| e.sim.central_comp),
            sim_marginal: per_epoch(&|e| e.sim.marginal_comp),
            sim_quant: per_epoch(&|e| e.sim.quantization),
            sim_serialized: per_epoch(&|e| e.sim_serialized),
            wall_epoch: per_epoch(&|e| e.wall_seconds),
            bytes_epoch: per_epoch(&|e| e.total_bytes() as f64),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub cost: CostModel,
    pub runs: Vec<RunResult>,
    pub summary: Vec<ModeSummary>,
}

impl ExperimentResult {
    pub fn runs_of(&self, mode: PrecisionMode) -> Vec<&RunResult> {
        self.runs.iter().filter(|r| r.mode == mode).collect()
    }
}

/// File-name friendly mode label (`fixed:2` → `fixed2`).
pub fn mode_slug(mode: PrecisionMode) -> String {
    mode.to_string().replace(':', "")
}

/// Graph, partitions and cost model shared by every run of an experiment.
pub struct Setup {
    pub graph: Graph,
    pub parts: Vec<Partition>,
    pub cost: CostModel,
}

impl Setup {
    pub fn prepare(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let graph = cfg.dataset.load()?;
        let parts = partition_graph(&graph, cfg.n_parts, cfg.seed)?;
        let cost = match &cfg.cost_model {
            Some(path) => CostModel::load(path, cfg.n_parts)?,
            None => {
                let opts = trainer_options(
                    cfg,
                    &graph,
                    PrecisionMode::Fp,
                    cfg.seed,
                    ExecMode::Deterministic,
                );
                calibrate_cost_model(
                    &graph,
                    &parts,
                    &opts,
                    cfg.comm_fraction,
                    CALIBRATED_GAMMA_SHARE,
                )?
            }
        };
        Ok(Setup { graph, parts, cost })
    }
}

pub fn trainer_options(
    cfg: &TrainConfig,
    g: &Graph,
    mode: PrecisionMode,
    seed: u64,
    exec: ExecMode,
) -> TrainerOptions {
    TrainerOptions {
        dims: cfg.dims(g.feature_dim(), g.num_classes()),
        agg: cfg.agg,
        optimizer: cfg.optimizer,
        lr: cfg.lr,
        precision: mode,
        assigner: cfg.assigner,
        overlap: cfg.overlap,
        exec,
        seed,
        compute: cfg.compute,
    }
}

/// Trains one mode with one seed for `cfg.epochs` epochs.
pub fn run_once(
    cfg: &TrainConfig,
    setup: &Setup,
    mode: PrecisionMode,
    seed: u64,
    exec: ExecMode,
) -> Result<RunResult> {
    let opts = trainer_options(cfg, &setup.graph, mode, seed, exec);
    let mut trainer =
        DistributedTrainer::new(&setup.graph, setup.parts.clone(), setup.cost.clone(), opts)?;
    let epochs = (0..cfg.epochs)
        .map(|_| trainer.train_epoch())
        .collect::<Result<Vec<_>>>()?;
    let final_eval = trainer.evaluate()?;
    Ok(RunResult {
        mode,
        seed,
        epochs,
        resolves: trainer.resolves().to_vec(),
        final_eval,
    })
}

/// Runs every configured mode over seeds `seed, seed+1, ...`, writing
/// per-run JSONL metrics and `summary.csv` into `out` when given.
pub fn run_experiment(
    cfg: &TrainConfig,
    out: Option<&Path>,
    exec: ExecMode,
) -> Result<ExperimentResult> {
    let setup = Setup::prepare(cfg)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        setup.cost.save(&dir.join("cost_model.txt"))?;
    }
    let mut runs = Vec::new();
    for &mode in &cfg.modes {
        for r in 0..cfg.runs {
            let seed = cfg.seed + r as u64;
            let run = run_once(cfg, &setup, mode, seed, exec)?;
            if let Some(dir) = out {
                write_jsonl(&run_metrics_path(dir, mode, seed), &run.epochs)?;
                if !run.resolves.is_empty() {
                    let path = dir.join(format!("{}_seed{seed}_resolves.jsonl", mode_slug(mode)));
                    write_jsonl(&path, &run.resolves)?;
                }
            }
            runs.push(run);
        }
    }
    let summary: Vec<ModeSummary> = cfg
        .modes
        .iter()
        .map(|&m| {
            ModeSummary::from_runs(m, &runs.iter().filter(|r| r.mode == m).collect::<Vec<_>>())
        })
        .collect();
    if let Some(dir) = out {
        write_summary_csv(&dir.join("summary.csv"), &summary)?;
    }
    Ok(ExperimentResult {
        cost: setup.cost,
        runs,
        summary,
    })
}

pub fn write_summary_csv(path: &Path, rows: &[ModeSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<ModeSummary>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(path, i + 2, e.to_string())))
        .collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let msg = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        _ => Error::parse(path, 0, msg),
    }
}

/// Path of a run's metrics file inside an output directory.
pub fn run_metrics_path(dir: &Path, mode: PrecisionMode, seed: u64) -> PathBuf {
    dir.join(format!("{}_seed{seed}.jsonl", mode_slug(mode)))
}
