//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs as a plain binary (`harness = false`) so the lines
//! come out in order and unbuffered.

mod common;

use std::time::Instant;

use adaqp_core::assign::{
    brute_force_assignment, evaluate, solve_assignment, variance_bound_q, NormBounds,
};
use adaqp_core::comm::{CostModel, ExecMode};
use adaqp_core::data::DatasetSpec;
use adaqp_core::graph::{partition_graph, partitions_from_owner, AggMode, Graph, NodeId};
use adaqp_core::quant::{
    decode_message_set, dequantize, encode_message_set, encode_message_set_par, pack, packed_len,
    quantize, unpack, BitWidth, QuantizedChunk, RngStream, HEADER_LEN,
};
use adaqp_core::tensor::{Matrix, OptimizerKind};
use adaqp_core::train::{
    convergence_bound, trainer_options, ConvergenceBound, DistributedTrainer, EpochMetrics,
    Evaluation, PrecisionMode, ReferenceTrainer, Setup, TrainConfig, TrainerOptions,
};
use adaqp_core::Result;
use rand::Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

// ---------------------------------------------------------------------------
// 1. unbiased stochastic quantization with the predicted variance

fn quantization_unbiased(_: &mut Bench) -> Result<Outcome> {
    let dim = 64;
    let mut r = common::rng(101);
    let vectors: Vec<Vec<f64>> = (0..1000)
        .map(|_| {
            let (c, w) = (r.gen_range(-5.0..5.0), r.gen_range(0.1..4.0));
            (0..dim).map(|_| c + w * r.gen_range(-1.0..1.0)).collect()
        })
        .collect();
    let mut worst_z: f64 = 0.0;
    let mut ratios = Vec::new();
    let mut pass = true;
    for bits in BitWidth::ALL {
        // per-element means over 10^5 draws on a sample of vectors
        let sample_draws = 100_000u64;
        let z: Vec<f64> = vectors[..8]
            .par_iter()
            .enumerate()
            .map(|(vi, h)| {
                let mut rng = RngStream::new(1)
                    .at(&[u64::from(bits.bits()), vi as u64])
                    .rng();
                let mut sum = vec![0.0; h.len()];
                for _ in 0..sample_draws {
                    let q: Vec<f64> = dequantize(&quantize(h, bits, &mut rng).unwrap()).unwrap();
                    for (a, x) in sum.iter_mut().zip(&q) {
                        *a += x;
                    }
                }
                let (lo, hi) = min_max(h);
                let s = (hi - lo) / f64::from(bits.max_code());
                sum.iter()
                    .zip(h)
                    .map(|(a, x)| {
                        let p = ((x - lo) / s).fract();
                        let se = s * (p * (1.0 - p) / sample_draws as f64).sqrt();
                        let err = (a / sample_draws as f64 - x).abs();
                        // rounding slack for elements that sit exactly on a level
                        if err <= 1e-9 * s {
                            0.0
                        } else {
                            err / se
                        }
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
        let z = z.into_iter().fold(0.0, f64::max);
        worst_z = worst_z.max(z);
        pass &= z <= 4.0;

        // pooled squared error against D·S²/6 over all vectors
        let draws = 100;
        let (emp, pred) = vectors
            .par_iter()
            .enumerate()
            .map(|(vi, h)| {
                let mut rng = RngStream::new(2)
                    .at(&[u64::from(bits.bits()), vi as u64])
                    .rng();
                let mut sq = 0.0;
                for _ in 0..draws {
                    let q: Vec<f64> = dequantize(&quantize(h, bits, &mut rng).unwrap()).unwrap();
                    sq += q.iter().zip(h).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                }
                let (lo, hi) = min_max(h);
                let s = (hi - lo) / f64::from(bits.max_code());
                (sq / draws as f64, dim as f64 * s * s / 6.0)
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let ratio = emp / pred;
        pass &= (0.9..=1.1).contains(&ratio);
        ratios.push(format!("b={bits}: {ratio:.3}"));
    }
    outcome(
        pass,
        format!(
            "max |mean−h|/SE {worst_z:.2} (≤ 4); variance / (D·S²/6) {}",
            ratios.join(", ")
        ),
    )
}

fn min_max(h: &[f64]) -> (f64, f64) {
    h.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
            (a.min(x), b.max(x))
        })
}

// ---------------------------------------------------------------------------
// 2. lossless packing and message-set framing

fn packing_roundtrip(_: &mut Bench) -> Result<Outcome> {
    let mut r = common::rng(202);
    let mut failures = 0usize;
    for bits in BitWidth::ALL {
        for _ in 0..10_000 {
            let n = r.gen_range(1..=200);
            let codes: Vec<u8> = (0..n)
                .map(|_| r.gen_range(0..=bits.max_code()) as u8)
                .collect();
            let packed = pack(&codes, bits)?;
            if packed.len() != packed_len(n, bits) || unpack(&packed, bits, n)? != codes {
                failures += 1;
            }
        }
    }
    let msgs: Vec<Vec<f64>> = (0..50)
        .map(|_| {
            (0..r.gen_range(1..100))
                .map(|_| r.gen_range(-2.0..2.0))
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = msgs.iter().map(|m| m.as_slice()).collect();
    let bits: Vec<BitWidth> = (0..50).map(|_| BitWidth::ALL[r.gen_range(0..3)]).collect();
    let stream = RngStream::new(5);
    let (bytes, index) = encode_message_set(&refs, &bits, |i| stream.at(&[i as u64]))?;
    let (par, _) = encode_message_set_par(&refs, &bits, |i| stream.at(&[i as u64]))?;
    let decoded: Vec<Vec<f64>> = decode_message_set(&bytes, &index)?;
    let expected_len: usize = msgs
        .iter()
        .zip(&bits)
        .map(|(m, &b)| QuantizedChunk::encoded_len(m.len(), b))
        .sum();
    let mut set_ok = par == bytes && bytes.len() == expected_len;
    for (i, (m, &b)) in msgs.iter().zip(&bits).enumerate() {
        let direct: Vec<f64> = dequantize(&quantize(m, b, &mut stream.at(&[i as u64]).rng())?)?;
        set_ok &= decoded[i] == direct;
    }
    let chunk_ok = msgs.iter().zip(&bits).all(|(m, &b)| {
        let c = quantize(m, b, &mut common::rng(0)).unwrap();
        c.wire_len() == HEADER_LEN + packed_len(m.len(), b)
            && QuantizedChunk::from_bytes(&c.to_bytes()).unwrap() == c
    });
    outcome(
        failures == 0 && set_ok && chunk_ok,
        format!(
            "{failures} of 30000 packed vectors differ; 50-message mixed-width set roundtrip {}",
            if set_ok && chunk_ok {
                "exact"
            } else {
                "MISMATCH"
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. 4-device full-precision training equals single-device training

fn small_sbm() -> Result<Graph> {
    DatasetSpec {
        nodes: 200,
        feature_dim: 16,
        p_intra: 0.12,
        p_inter: 0.02,
        ..Default::default()
    }
    .load()
}

fn distributed_equals_single(_: &mut Bench) -> Result<Outcome> {
    let g = small_sbm()?;
    let dims = vec![g.feature_dim(), 16, 16, g.num_classes()];
    let opts = TrainerOptions::new(dims.clone(), PrecisionMode::Fp, 11);
    let mut four = DistributedTrainer::new(
        &g,
        partition_graph(&g, 4, 3)?,
        CostModel::uniform(4, 1e-9, 1e-6)?,
        opts,
    )?;
    let mut one =
        ReferenceTrainer::<f64>::new(&g, &dims, AggMode::Gcn, OptimizerKind::adam(), 0.01, 11)?;
    let mut worst_loss: f64 = 0.0;
    for _ in 0..50 {
        let a = four.train_epoch()?;
        let b = one.train_epoch()?;
        worst_loss = worst_loss.max(rel(a.train_loss, b.loss));
    }
    let worst_w = four
        .model()
        .weights()
        .iter()
        .zip(one.model().weights())
        .flat_map(|(x, y)| {
            x.data()
                .iter()
                .zip(y.data())
                .map(|(p, q)| (p - q).abs() / p.abs().max(q.abs()).max(1.0))
        })
        .fold(0.0, f64::max);
    outcome(
        worst_loss <= 1e-10 && worst_w <= 1e-10,
        format!(
            "50 epochs: max loss rel err {worst_loss:.1e}, max weight err {worst_w:.1e} (≤ 1e-10)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. exact assignment solver

fn solver_exact(_: &mut Bench) -> Result<Outcome> {
    let lambdas: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
    let (mut mismatches, mut non_monotone, mut not_all_8) = (0, 0, 0);
    for seed in 0..100u64 {
        let pairs = 1 + (seed as usize % 4);
        let groups = pairs + (seed as usize * 5) % (13 - pairs);
        let (problem, cost) = common::random_problem(pairs, groups, 10_000 + seed);
        let mut prev: Option<(f64, f64)> = None;
        for &lambda in &lambdas {
            let exact = solve_assignment(&problem, &cost, lambda)?;
            let brute = brute_force_assignment(&problem, &cost, lambda)?;
            if exact.objective.value != brute.objective.value {
                mismatches += 1;
            }
            let raw = evaluate(&problem, &cost, lambda, &exact.bits);
            if let Some((v, z)) = prev {
                if raw.variance > v * (1.0 + 1e-12) || raw.z < z * (1.0 - 1e-12) {
                    non_monotone += 1;
                }
            }
            prev = Some((raw.variance, raw.z));
            if lambda == 1.0 && !exact.bits.iter().flatten().all(|&b| b == BitWidth::B8) {
                not_all_8 += 1;
            }
        }
    }
    outcome(
        mismatches == 0 && non_monotone == 0 && not_all_8 == 0,
        format!(
            "100 instances × 11 λ: {mismatches} objective mismatches vs exhaustive, \
             {non_monotone} monotonicity violations, {not_all_8} λ=1 plans not all 8-bit"
        ),
    )
}

// ---------------------------------------------------------------------------
// Benchmark runs shared by criteria 5, 6 and 8.

const BENCH_EPOCHS: usize = 200;
const CATCH_UP_EPOCHS: usize = 230;

struct ModeRun {
    epochs: Vec<EpochMetrics>,
    /// Full-precision evaluation of the weights after `BENCH_EPOCHS` epochs.
    eval: Evaluation,
    resolves: Vec<adaqp_core::train::ResolveRecord>,
}

struct BenchRuns {
    setup: Setup,
    cfg: TrainConfig,
    fp: Vec<ModeRun>,
    uniform: Vec<ModeRun>,
    adaptive: Vec<ModeRun>,
}

#[derive(Default)]
struct Bench(Option<BenchRuns>);

impl Bench {
    fn get(&mut self) -> Result<&BenchRuns> {
        if self.0.is_none() {
            self.0 = Some(BenchRuns::run()?);
        }
        Ok(self.0.as_ref().unwrap())
    }
}

impl BenchRuns {
    fn run() -> Result<Self> {
        let cfg = TrainConfig::default();
        let setup = Setup::prepare(&cfg)?;
        let seeds: Vec<u64> = (0..cfg.runs as u64).map(|r| cfg.seed + r).collect();
        let run_mode = |mode: PrecisionMode, total: usize| -> Result<Vec<ModeRun>> {
            seeds
                .par_iter()
                .map(|&seed| {
                    let opts =
                        trainer_options(&cfg, &setup.graph, mode, seed, ExecMode::Deterministic);
                    let mut t = DistributedTrainer::new(
                        &setup.graph,
                        setup.parts.clone(),
                        setup.cost.clone(),
                        opts,
                    )?;
                    let mut epochs = Vec::with_capacity(total);
                    let mut eval = None;
                    for e in 1..=total {
                        epochs.push(t.train_epoch()?);
                        if e == BENCH_EPOCHS {
                            eval = Some(t.evaluate()?);
                        }
                    }
                    Ok(ModeRun {
                        epochs,
                        eval: eval.expect("at least BENCH_EPOCHS epochs"),
                        resolves: t.resolves().to_vec(),
                    })
                })
                .collect()
        };
        let fp = run_mode(PrecisionMode::Fp, BENCH_EPOCHS)?;
        let uniform = run_mode(PrecisionMode::Uniform, BENCH_EPOCHS)?;
        let adaptive = run_mode(PrecisionMode::Adaptive, CATCH_UP_EPOCHS)?;
        Ok(BenchRuns {
            setup,
            cfg,
            fp,
            uniform,
            adaptive,
        })
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

// 5. adaptive accuracy and convergence within reach of full precision

fn adaptive_accuracy(bench: &mut Bench) -> Result<Outcome> {
    let b = bench.get()?;
    let fp_val = mean(b.fp.iter().map(|r| r.eval.val_acc));
    let ada_val = mean(b.adaptive.iter().map(|r| r.eval.val_acc));
    let mut reached = Vec::new();
    for (f, a) in b.fp.iter().zip(&b.adaptive) {
        let target = f.epochs[BENCH_EPOCHS - 1].train_loss;
        reached.push(
            a.epochs
                .iter()
                .find(|e| e.train_loss <= target)
                .map(|e| e.epoch),
        );
    }
    let all_reached = reached.iter().all(|r| r.is_some());
    let gap_pp = 100.0 * (fp_val - ada_val);
    outcome(
        gap_pp.abs() <= 1.0 && all_reached,
        format!(
            "val acc fp {:.2}% vs adaptive {:.2}% (|Δ| {:.2}pp ≤ 1pp); fp epoch-{BENCH_EPOCHS} loss reached at epochs {:?} (≤ {CATCH_UP_EPOCHS})",
            100.0 * fp_val,
            100.0 * ada_val,
            gap_pp.abs(),
            reached.iter().map(|r| r.map_or("never".to_string(), |e| e.to_string())).collect::<Vec<_>>()
        ),
    )
}

// 6. adaptive assignment beats uniform random widths

fn adaptive_vs_uniform(bench: &mut Bench) -> Result<Outcome> {
    let b = bench.get()?;
    let uni_val = mean(b.uniform.iter().map(|r| r.eval.val_acc));
    let ada_val = mean(b.adaptive.iter().map(|r| r.eval.val_acc));
    let (mut instances, mut worse) = (0, 0);
    for r in &b.adaptive {
        for rec in &r.resolves {
            for i in &rec.instances {
                instances += 1;
                if i.variance > i.uniform_variance {
                    worse += 1;
                }
            }
        }
    }
    outcome(
        ada_val >= uni_val - 0.002 && worse == 0 && instances > 0,
        format!(
            "val acc adaptive {:.2}% vs uniform {:.2}% (≥ −0.2pp); {worse} of {instances} solved instances above the uniform expected variance",
            100.0 * ada_val,
            100.0 * uni_val
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. 2-bit messages cut traffic at least 20×

fn traffic_reduction(_: &mut Bench) -> Result<Outcome> {
    let width = 256;
    let g = DatasetSpec {
        feature_dim: width,
        ..Default::default()
    }
    .load()?;
    let parts = partition_graph(&g, 4, 7)?;
    let dims = vec![width, width, width, g.num_classes()];
    let bytes = |mode| -> Result<(EpochMetrics, Option<adaqp_core::assign::BitWidthPlan>)> {
        let opts = TrainerOptions::new(dims.clone(), mode, 0);
        let mut t =
            DistributedTrainer::new(&g, parts.clone(), CostModel::uniform(4, 1e-9, 1e-6)?, opts)?;
        let m = t.train_epoch()?;
        Ok((m, t.plan().cloned()))
    };
    let (fp, _) = bytes(PrecisionMode::Fp)?;
    let (two, plan) = bytes(PrecisionMode::Fixed(BitWidth::B2))?;
    let plan = plan.expect("quantized modes install a plan");
    let mut per_message_ok = true;
    for inst in &plan.instances {
        for p in &inst.pairs {
            let expect: u64 = p
                .dims
                .iter()
                .map(|&d| (d.div_ceil(4) + HEADER_LEN) as u64)
                .sum();
            per_message_ok &= p.wire_bytes() == expect;
        }
    }
    let ratio = fp.total_bytes() as f64 / two.total_bytes() as f64;
    outcome(
        ratio >= 20.0 && per_message_ok,
        format!(
            "width {width}: fp {} B vs 2-bit {} B per epoch, ratio {ratio:.2} (≥ 20); 2-bit message size ⌈D/4⌉+{HEADER_LEN} B {}",
            fp.total_bytes(),
            two.total_bytes(),
            if per_message_ok { "holds" } else { "VIOLATED" }
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. simulated speed-up on a communication-bound setup

fn simulated_speedup(bench: &mut Bench) -> Result<Outcome> {
    let b = bench.get()?;
    // vanilla: full precision, communication not overlapped with compute
    let mut opts = trainer_options(
        &b.cfg,
        &b.setup.graph,
        PrecisionMode::Fp,
        b.cfg.seed,
        ExecMode::Deterministic,
    );
    opts.overlap = false;
    let mut vanilla = DistributedTrainer::new(
        &b.setup.graph,
        b.setup.parts.clone(),
        b.setup.cost.clone(),
        opts,
    )?;
    let v: Vec<EpochMetrics> = (0..10)
        .map(|_| vanilla.train_epoch())
        .collect::<Result<_>>()?;
    let v_epoch = mean(v.iter().map(|e| e.sim_epoch));
    let v_share = mean(v.iter().map(|e| e.sim.communication / e.sim_epoch));
    let ada_epoch = mean(
        b.adaptive
            .iter()
            .flat_map(|r| r.epochs[..BENCH_EPOCHS].iter().map(|e| e.sim_epoch)),
    );
    let fp_epoch = mean(
        b.fp.iter()
            .flat_map(|r| r.epochs.iter().map(|e| e.sim_epoch)),
    );
    let ratio = ada_epoch / v_epoch;
    let overlap_ok =
        b.fp.iter()
            .chain(&b.uniform)
            .chain(&b.adaptive)
            .flat_map(|r| &r.epochs)
            .all(|e| e.sim_epoch <= e.sim_serialized * (1.0 + 1e-12));
    outcome(
        v_share >= 0.70 && ratio <= 0.5 && overlap_ok,
        format!(
            "vanilla comm share {:.1}% (≥ 70%); adaptive/vanilla epoch {ratio:.3} (≤ 0.5; adaptive/overlapped-fp {:.3}); overlapped ≤ serialized on every epoch: {overlap_ok}",
            100.0 * v_share,
            ada_epoch / fp_epoch
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. analytic gradients through the split aggregation

fn gradient_correctness(_: &mut Bench) -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let n = 20 + (i as usize * 7) % 25;
        let g = common::random_graph(n, 0.15 + 0.01 * (i % 5) as f64, 5, 3, 500 + i);
        let agg = if i % 2 == 0 {
            AggMode::Gcn
        } else {
            AggMode::SageMean
        };
        let parts = 1 + (i as usize % 4);
        let dims = if i % 3 == 0 {
            vec![5, 3]
        } else {
            vec![5, 4, 3]
        };
        worst = worst.max(common::gradient_check(&g, parts, agg, &dims, i));
    }
    outcome(
        worst < 1e-5,
        format!("20 instances: max relative error {worst:.1e} (< 1e-5)"),
    )
}

// ---------------------------------------------------------------------------
// 10. Monte Carlo gradient variance under the analytic bound

/// Two devices of `half` nodes; node `i` on device 0 is linked to node
/// `i + half` on device 1, so every remote message has exactly one consumer.
fn mirrored_graph(half: usize, cross: bool, seed: u64) -> Result<(Graph, Vec<usize>)> {
    let n = 2 * half;
    let mut r = common::rng(seed);
    let mut edges: Vec<(NodeId, NodeId)> = Vec::new();
    for side in [0, half] {
        for i in 0..half - 1 {
            edges.push((side + i, side + i + 1));
        }
    }
    if cross {
        edges.extend((0..half).map(|i| (i, i + half)));
    }
    let dim = 6;
    let feats: Vec<f64> = (0..n * dim).map(|_| r.gen_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let split = |k: usize| {
        (0..n)
            .map(|v| v % 4 == k || (k == 0 && v % 4 == 1))
            .collect::<Vec<_>>()
    };
    let g = Graph::from_edges(
        n,
        &edges,
        Matrix::from_vec(n, dim, feats)?,
        labels,
        [split(0), split(2), split(3)],
    )?;
    let owner = (0..n).map(|v| usize::from(v >= half)).collect();
    Ok((g, owner))
}

fn variance_bound_holds(_: &mut Bench) -> Result<Outcome> {
    let draws = 10_000u64;
    let mut pass = true;
    let mut lines = Vec::new();
    for (cross, widths) in [(true, &BitWidth::ALL[..]), (false, &[BitWidth::B2][..])] {
        let (g, owner) = mirrored_graph(12, cross, 77)?;
        for &bits in widths {
            let opts = TrainerOptions::new(
                vec![g.feature_dim(), g.num_classes()],
                PrecisionMode::Fixed(bits),
                3,
            );
            let parts = partitions_from_owner(&g, &owner, 2)?;
            let mut t = DistributedTrainer::new(&g, parts, CostModel::uniform(2, 0.0, 0.0)?, opts)?;
            let samples: Vec<_> = (0..draws)
                .map(|d| t.compute_gradients(d))
                .collect::<Result<_>>()?;
            let k = samples[0].grads[0].data().len();
            let mut var = 0.0;
            for j in 0..k {
                let xs: Vec<f64> = samples.iter().map(|s| s.grads[0].data()[j]).collect();
                let m = xs.iter().sum::<f64>() / draws as f64;
                var += xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (draws - 1) as f64;
            }
            let bound = samples
                .iter()
                .fold(NormBounds::default(), |acc, s| NormBounds {
                    m: acc.m.max(s.norms[0].m),
                    n: acc.n.max(s.norms[0].n),
                });
            let plan = t.plan().expect("quantized modes install a plan");
            let q = variance_bound_q(&samples[0].traces, plan, t.remote_edges(), 1, &[bound])?[0];
            // without remote neighbors nothing is quantized, so every draw is identical
            let ok = if cross {
                var <= q && q > 0.0
            } else {
                q == 0.0 && samples.iter().all(|s| s.grads == samples[0].grads)
            };
            pass &= ok;
            lines.push(if cross {
                format!("b={bits}: MC {var:.3e} ≤ Q {q:.3e}")
            } else {
                format!("no cross edges: Q {q:.1e}, draws identical {ok}")
            });
        }
    }
    outcome(
        pass,
        format!(
            "10^4 draws, 1-layer model on 2 devices: {}",
            lines.join("; ")
        ),
    )
}

// ---------------------------------------------------------------------------
// 11. convergence bound arithmetic

fn bound_arithmetic(_: &mut Bench) -> Result<Outcome> {
    let cb = |l2, alpha, t, q, gap| ConvergenceBound {
        l2,
        alpha,
        t,
        q,
        gap,
    };
    let cases = [
        (cb(1.0, 1.0, 10, 1.0, 1.0), 1.2),
        (cb(2.0, 0.5, 4, 0.0, 3.0), 3.0),
        (cb(4.0, 0.25, 8, 2.0, 2.0), 6.0),
    ];
    let mut worst: f64 = 0.0;
    for (c, expect) in &cases {
        worst = worst.max((convergence_bound(c)? - expect).abs());
    }
    let rejected = convergence_bound(&cb(4.0, 0.5, 10, 1.0, 1.0)).is_err()
        && convergence_bound(&cb(1.0, 2.5, 10, 1.0, 1.0)).is_err();
    let from_layers = ConvergenceBound::from_layers(1.0, 1.0, 1, &[1.0, 3.0], 0.0).q == 2.0;
    outcome(
        worst <= 1e-12 && rejected && from_layers,
        format!("3 hand-computed cases max |err| {worst:.1e}; α ≥ 2/L2 rejected: {rejected}; Q = √ΣQ^l: {from_layers}"),
    )
}

// ---------------------------------------------------------------------------

type Criterion = fn(&mut Bench) -> Result<Outcome>;

fn main() {
    // `cargo test -- --list` and similar probes expect no work to be done
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, Criterion); 11] = [
        (
            "quantization is unbiased with variance D·S²/6",
            quantization_unbiased,
        ),
        (
            "packing and message sets roundtrip losslessly",
            packing_roundtrip,
        ),
        (
            "distributed full precision equals single device",
            distributed_equals_single,
        ),
        ("exact solver matches exhaustive search", solver_exact),
        (
            "adaptive accuracy and convergence match full precision",
            adaptive_accuracy,
        ),
        (
            "adaptive assignment is no worse than uniform",
            adaptive_vs_uniform,
        ),
        ("2-bit messages cut traffic ≥ 20×", traffic_reduction),
        (
            "simulated epoch time halves on a comm-bound setup",
            simulated_speedup,
        ),
        (
            "split-aggregation gradients are correct",
            gradient_correctness,
        ),
        (
            "Monte Carlo gradient variance stays under Q",
            variance_bound_holds,
        ),
        ("convergence bound arithmetic", bound_arithmetic),
    ];
    // numeric arguments select criteria, e.g. `cargo test --test acceptance -- 5 8`
    let only: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut bench = Bench::default();
    let (mut passed, mut failed) = (0, 0);
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let (pass, detail) = match f(&mut bench) {
            Ok(o) => (o.pass, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if pass {
            passed += 1;
        } else {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {detail} [{:.1}s]",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {passed} passed, {failed} failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
