use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adaqp_core::assign::{
    brute_force_assignment, evaluate, group_and_order, solve_assignment, AssignmentProblem,
    InstanceStats,
};
use adaqp_core::comm::{CostModel, ExecMode};
use adaqp_core::graph::io::DatasetFiles;
use adaqp_core::quant::{dequantize, quantize, BitWidth, RngStream};
use adaqp_core::train::{read_jsonl, run_experiment, EpochMetrics, ModeSummary, TrainConfig};
use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "adaqp",
    version,
    about = "Distributed full-graph GNN training with adaptive message quantization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured mode over several seeds and summarize.
    Train(TrainArgs),
    /// Solve a bit-width assignment from a traced statistics file.
    Assign(AssignArgs),
    /// Monte Carlo check of quantization bias and variance.
    Quantbench(QuantArgs),
    /// Aggregate per-epoch JSONL metrics into a time breakdown.
    Report(ReportArgs),
    /// Generate the configured synthetic dataset into a directory.
    Gen(GenArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run only this mode: fp, fixed:B, uniform or adaptive.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    parts: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    period: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AssignArgs {
    /// JSON file with the traced statistics of one exchange.
    #[arg(long)]
    stats: PathBuf,
    /// Cost model (`src dst theta gamma` lines); defaults to θ = 1, γ = 0.
    #[arg(long)]
    cost: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 4)]
    group_size: usize,
    /// Use the exhaustive oracle instead of the exact solver.
    #[arg(long)]
    brute_force: bool,
}

#[derive(Args)]
struct QuantArgs {
    /// Bit-widths to test.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    bits: Vec<u32>,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    vectors: usize,
    #[arg(long, default_value_t = 500)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding `<mode>_seed<N>.jsonl` files.
    dir: PathBuf,
    /// Write the table as CSV here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

/// Bad flag values detected after parsing; reported with exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Assign(a) => cmd_assign(a),
        Command::Quantbench(a) => cmd_quantbench(a),
        Command::Report(a) => cmd_report(a),
        Command::Gen(a) => cmd_gen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Usage>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<TrainConfig> {
    match path {
        Some(p) => Ok(TrainConfig::load(p)?),
        None => Ok(TrainConfig::default()),
    }
}

/// Applies command-line overrides through the same keys a config file uses.
fn apply(cfg: &mut TrainConfig, overrides: &[(&str, Option<String>)]) -> anyhow::Result<()> {
    for (key, value) in overrides {
        if let Some(v) = value {
            let flag = match *key {
                "modes" => "mode",
                "n_parts" => "parts",
                "dataset.seed" => "seed",
                other => other,
            };
            cfg.set(key, v, Path::new("."))
                .map_err(|m| usage(format!("--{}: {m}", flag.replace('_', "-"))))?;
        }
    }
    cfg.validate().map_err(|e| usage(e.to_string()))
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    apply(
        &mut cfg,
        &[
            ("seed", a.seed.map(|v| v.to_string())),
            ("modes", a.mode),
            ("n_parts", a.parts.map(|v| v.to_string())),
            ("lambda", a.lambda.map(|v| v.to_string())),
            ("period", a.period.map(|v| v.to_string())),
            ("group_size", a.group_size.map(|v| v.to_string())),
            ("epochs", a.epochs.map(|v| v.to_string())),
            ("runs", a.runs.map(|v| v.to_string())),
        ],
    )?;
    let result = run_experiment(&cfg, a.out.as_deref(), ExecMode::from_env())?;
    print_summary(&result.summary);
    Ok(())
}

fn print_summary(rows: &[ModeSummary]) {
    println!(
        "{:<10} {:>4} {:>16} {:>16} {:>11} {:>11} {:>11} {:>12}",
        "mode",
        "runs",
        "val acc %",
        "test acc %",
        "epoch (s)",
        "comm (s)",
        "quant (s)",
        "bytes/epoch"
    );
    for r in rows {
        println!(
            "{:<10} {:>4} {:>9.2} ± {:<4.2} {:>9.2} ± {:<4.2} {:>11.4e} {:>11.4e} {:>11.4e} {:>12.0}",
            r.mode,
            r.runs,
            100.0 * r.val_acc_mean,
            100.0 * r.val_acc_std,
            100.0 * r.test_acc_mean,
            100.0 * r.test_acc_std,
            r.sim_epoch,
            r.sim_comm,
            r.sim_quant,
            r.bytes_epoch
        );
    }
}

fn cmd_assign(a: AssignArgs) -> anyhow::Result<()> {
    if !(0.0..=1.0).contains(&a.lambda) {
        return Err(usage(format!(
            "--lambda must lie in [0, 1], got {}",
            a.lambda
        )));
    }
    if a.group_size == 0 {
        return Err(usage("--group-size must be positive"));
    }
    let text = std::fs::read_to_string(&a.stats)
        .with_context(|| format!("reading {}", a.stats.display()))?;
    let stats: InstanceStats =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", a.stats.display()))?;
    stats.validate()?;
    let n = stats
        .pairs
        .iter()
        .map(|p| p.src.max(p.dst) + 1)
        .max()
        .unwrap_or(1);
    let cost = match &a.cost {
        Some(p) => CostModel::load(p, n)?,
        None => CostModel::uniform(n, 1.0, 0.0)?,
    };

    let groups = group_and_order(&stats, a.group_size)?;
    let pairs: Vec<(usize, usize)> = stats.pairs.iter().map(|p| (p.src, p.dst)).collect();
    let problem = AssignmentProblem::from_groups(&pairs, &groups);
    let (scaled, scaled_cost) = problem.normalized(&cost);
    let solution = if a.brute_force {
        brute_force_assignment(&scaled, &scaled_cost, a.lambda)?
    } else {
        solve_assignment(&scaled, &scaled_cost, a.lambda)?
    };
    let raw = evaluate(&problem, &cost, a.lambda, &solution.bits);

    let pair_json: Vec<_> = pairs
        .iter()
        .zip(groups.iter().zip(&solution.bits))
        .map(|(&(src, dst), (gs, bits))| {
            let gj: Vec<_> = gs
                .iter()
                .zip(bits)
                .map(|(g, b)| json!({ "members": g.members, "beta": g.beta, "dim": g.dim, "bits": b }))
                .collect();
            json!({ "src": src, "dst": dst, "groups": gj })
        })
        .collect();
    let out = json!({
        "key": stats.key,
        "lambda": a.lambda,
        "solver": if a.brute_force { "brute-force" } else { "exact" },
        "pairs": pair_json,
        "objective": solution.objective,
        "variance": raw.variance,
        "z": raw.z,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_quantbench(a: QuantArgs) -> anyhow::Result<()> {
    let widths = a
        .bits
        .iter()
        .map(|&b| BitWidth::from_bits(b).map_err(|e| usage(format!("--bits: {e}"))))
        .collect::<anyhow::Result<Vec<_>>>()?;
    if a.dim < 2 || a.vectors == 0 || a.draws < 2 {
        return Err(usage("need --dim ≥ 2, --vectors ≥ 1 and --draws ≥ 2"));
    }
    let stream = RngStream::new(a.seed);
    println!("bits,vectors,draws,mean_abs_bias_over_s,max_bias_z,variance_ratio");
    for bits in widths {
        let (mut bias_sum, mut max_z, mut emp, mut pred) = (0.0, 0.0f64, 0.0, 0.0);
        for v in 0..a.vectors {
            let vs = stream.at(&[u64::from(bits.bits()), v as u64]);
            let mut r = vs.at(&[0]).rng();
            let h: Vec<f64> = (0..a.dim).map(|_| StandardNormal.sample(&mut r)).collect();
            let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s = (hi - lo) / f64::from(bits.max_code());
            let mut sum = vec![0.0; a.dim];
            let mut sq = 0.0;
            let mut qr = vs.at(&[1]).rng();
            for _ in 0..a.draws {
                let q: Vec<f64> = dequantize(&quantize(&h, bits, &mut qr)?)?;
                for ((acc, x), y) in sum.iter_mut().zip(&q).zip(&h) {
                    *acc += x;
                    sq += (x - y) * (x - y);
                }
            }
            for (acc, x) in sum.iter().zip(&h) {
                let err = (acc / a.draws as f64 - x).abs();
                bias_sum += err / s;
                let p = ((x - lo) / s).fract();
                let se = s * (p * (1.0 - p) / a.draws as f64).sqrt();
                if err > 1e-9 * s {
                    max_z = max_z.max(err / se);
                }
            }
            emp += sq / a.draws as f64;
            pred += a.dim as f64 * s * s / 6.0;
        }
        println!(
            "{},{},{},{:.3e},{:.2},{:.4}",
            bits,
            a.vectors,
            a.draws,
            bias_sum / (a.vectors * a.dim) as f64,
            max_z,
            emp / pred
        );
    }
    Ok(())
}

#[derive(Default)]
struct Breakdown {
    runs: usize,
    epochs: usize,
    sim_epoch: f64,
    comm: f64,
    central: f64,
    marginal: f64,
    quant: f64,
    serialized: f64,
    bytes: f64,
}

fn cmd_report(a: ReportArgs) -> anyhow::Result<()> {
    let entries =
        std::fs::read_dir(&a.dir).with_context(|| format!("reading {}", a.dir.display()))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".jsonl") && !name.ends_with("_resolves.jsonl") && name.contains("_seed")
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no <mode>_seed<N>.jsonl files in {}", a.dir.display());
    }
    let mut by_mode: BTreeMap<String, Breakdown> = BTreeMap::new();
    for path in &files {
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        let mode = name[..name.rfind("_seed").unwrap_or(name.len())].to_string();
        let rows: Vec<EpochMetrics> = read_jsonl(path)?;
        let b = by_mode.entry(mode).or_default();
        b.runs += 1;
        for e in &rows {
            b.epochs += 1;
            b.sim_epoch += e.sim_epoch;
            b.comm += e.sim.communication;
            b.central += e.sim.central_comp;
            b.marginal += e.sim.marginal_comp;
            b.quant += e.sim.quantization;
            b.serialized += e.sim_serialized;
            b.bytes += e.total_bytes() as f64;
        }
    }
    let mut csv = String::from(
        "mode,runs,epochs,sim_epoch,communication,central_comp,marginal_comp,quantization,comm_share,serialized,bytes_epoch\n",
    );
    for (mode, b) in &by_mode {
        let n = b.epochs.max(1) as f64;
        csv.push_str(&format!(
            "{mode},{},{},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.4},{:.6e},{:.0}\n",
            b.runs,
            b.epochs,
            b.sim_epoch / n,
            b.comm / n,
            b.central / n,
            b.marginal / n,
            b.quant / n,
            if b.sim_epoch > 0.0 {
                b.comm / b.sim_epoch
            } else {
                0.0
            },
            b.serialized / n,
            b.bytes / n
        ));
    }
    match &a.out {
        Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    apply(&mut cfg, &[("dataset.seed", a.seed.map(|v| v.to_string()))])?;
    let g = cfg.dataset.load()?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    DatasetFiles::in_dir(&a.out).save(&g)?;
    println!(
        "wrote {} nodes, {} edges, {} features, {} classes to {}",
        g.num_nodes(),
        g.edge_list().len(),
        g.feature_dim(),
        g.num_classes(),
        a.out.display()
    );
    Ok(())
}
