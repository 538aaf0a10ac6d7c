// Device- and layer-indexed loops address several parallel arrays at once.
#![allow(clippy::needless_range_loop)]

//! Synchronous distributed full-graph training over simulated devices.
//!
//! Each layer runs in three stages per device: encode outgoing marginal
//! messages, exchange them (ring all2all) while central rows are computed,
//! then decode and finish the marginal rows. Numerically every row is
//! computed from the same inputs regardless of stage, so the stage split
//! only affects the simulated clock.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assign::{
    reassignment_round, remote_edges, variance_bound_q, AssignerConfig, BitWidthPlan, Direction,
    InstanceKey, InstancePlan, MessageStat, NormBounds, PlanLayout, RemoteEdge, TraceStats,
};
use crate::comm::{
    negotiate_buffers, ring_all2all, CostModel, ExchangePayload, ExecMode, SimClock, StageWork,
    TimeBuckets, Topology,
};
use crate::error::{Error, Result};
use crate::graph::{compute_coeffs, owner_map, AggCoeffs, AggMode, Graph, Partition, Split};
use crate::quant::{decode_message_set, encode_message_set, BitWidth, RetrievalIndex, RngStream};
use crate::tensor::{
    correct_predictions, scaled_loss_and_grad, AggregationPlan, GnnModel, LayerCache, Matrix,
    OptimizerKind, OptimizerState,
};

use super::allreduce::{allreduce_time, allreduce_weight_grads};
use super::config::{ComputeModel, PrecisionMode};
use super::metrics::{EpochMetrics, InstanceRecord, ResolveRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerOptions {
    /// Layer widths `[F, hidden, ..., classes]`.
    pub dims: Vec<usize>,
    pub agg: AggMode,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub precision: PrecisionMode,
    pub assigner: AssignerConfig,
    pub overlap: bool,
    #[serde(skip)]
    pub exec: ExecMode,
    pub seed: u64,
    pub compute: ComputeModel,
}

impl TrainerOptions {
    pub fn new(dims: Vec<usize>, precision: PrecisionMode, seed: u64) -> Self {
        TrainerOptions {
            dims,
            agg: AggMode::Gcn,
            optimizer: OptimizerKind::adam(),
            lr: 0.01,
            precision,
            assigner: AssignerConfig::default(),
            overlap: true,
            exec: ExecMode::Deterministic,
            seed,
            compute: ComputeModel::default(),
        }
    }
}

/// Loss and accuracies of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

struct Device {
    id: usize,
    part: Partition,
    agg: AggregationPlan,
    features: Matrix<f64>,
    labels: Vec<usize>,
    masks: [Vec<bool>; 3],
    central_rows: Vec<usize>,
    marginal_rows: Vec<usize>,
    /// Local row indices of `remote_out[t]`.
    send_rows: Vec<Vec<usize>>,
    /// `Σ α²` of each sent node over its consumers on the target.
    send_alpha_sq: Vec<Vec<f64>>,
    model: GnnModel<f64>,
    opt: OptimizerState<f64>,
    plan: Option<BitWidthPlan>,
    traces: TraceStats,
}

/// Read-only state shared by all device workers.
struct Shared {
    n: usize,
    opts: TrainerOptions,
    cost: CostModel,
    topology: Topology,
    stream: RngStream,
    counts: [usize; 3],
}

#[derive(Clone, Copy)]
struct PassOptions {
    quantized: bool,
    trace: bool,
    backward: bool,
    /// RNG coordinate distinguishing passes (the epoch during training).
    key: u64,
}

struct PassOutput {
    eval: Evaluation,
    grads: Vec<Matrix<f64>>,
    /// Max row norms of `h̄` and of the gradient w.r.t. each layer's output.
    norms: Vec<NormBounds>,
}

/// Simulated-time accumulator for one epoch.
struct EpochSim {
    clock: SimClock,
    overlap: bool,
    buckets: TimeBuckets,
    serialized: f64,
    comm_raw: f64,
    compute_crit: f64,
    bytes: Vec<Vec<u64>>,
}

impl EpochSim {
    fn new(n: usize, overlap: bool) -> Self {
        EpochSim {
            clock: SimClock::new(n),
            overlap,
            buckets: TimeBuckets::default(),
            serialized: 0.0,
            comm_raw: 0.0,
            compute_crit: 0.0,
            bytes: vec![vec![0; n]; n],
        }
    }

    fn stage(&mut self, work: &[StageWork], comm: f64) {
        let (_, crit) = self.clock.advance_layer(work, comm, self.overlap);
        self.buckets.add(&crit);
        self.serialized += work.iter().map(|w| w.serialized(comm)).fold(0.0, f64::max);
        self.compute_crit += work.iter().map(|w| w.serialized(0.0)).fold(0.0, f64::max);
        self.comm_raw += comm;
    }
}

/// One gradient evaluation with the statistics of the messages it sent.
#[derive(Clone, Debug)]
pub struct GradientSample {
    pub loss: f64,
    pub grads: Vec<Matrix<f64>>,
    /// Per-layer max row norms of `h̄` (`m`) and of `∂L/∂h` (`n`).
    pub norms: Vec<NormBounds>,
    pub traces: TraceStats,
}

/// Split of an epoch's simulated time used to calibrate cost models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochProfile {
    /// Sum of exchange and all-reduce durations.
    pub comm: f64,
    /// Sum over stages of the slowest device's compute and quantization.
    pub compute: f64,
}

pub struct DistributedTrainer {
    devices: Vec<Device>,
    shared: Shared,
    layout: PlanLayout,
    edges: Vec<RemoteEdge>,
    epoch: usize,
    norms: Vec<NormBounds>,
    resolves: Vec<ResolveRecord>,
}

fn run_devices<T, F>(exec: ExecMode, devices: &mut [Device], f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut Device) -> Result<T> + Sync,
{
    match exec {
        ExecMode::Deterministic => devices.iter_mut().map(&f).collect(),
        ExecMode::Threaded => std::thread::scope(|s| {
            let f = &f;
            let handles: Vec<_> = devices.iter_mut().map(|d| s.spawn(move || f(d))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("device worker panicked"))
                .collect()
        }),
    }
}

fn max_row_norm(m: &Matrix<f64>) -> f64 {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

fn direction_code(d: Direction) -> u64 {
    match d {
        Direction::Forward => 0,
        Direction::Backward => 1,
    }
}

/// Message traffic of every exchange: forward layer `l` carries the layer's
/// input rows of `remote_out`, backward layer `l ≥ 1` carries gradient
/// partials of `remote_in` rows back to their owners.
pub fn build_layout(parts: &[Partition], dims: &[usize]) -> PlanLayout {
    let layers = dims.len() - 1;
    let mut layout = PlanLayout::new();
    for l in 0..layers {
        let fwd = layout.entry(InstanceKey::forward(l)).or_default();
        for p in parts {
            for (t, out) in p.remote_out.iter().enumerate() {
                if !out.is_empty() {
                    fwd.insert((p.device_id, t), vec![dims[l]; out.len()]);
                }
            }
        }
        if l > 0 {
            let bwd = layout.entry(InstanceKey::backward(l)).or_default();
            for p in parts {
                for (t, inn) in p.remote_in.iter().enumerate() {
                    if !inn.is_empty() {
                        bwd.insert((p.device_id, t), vec![dims[l]; inn.len()]);
                    }
                }
            }
        }
    }
    layout.retain(|_, pairs| !pairs.is_empty());
    layout
}

impl DistributedTrainer {
    pub fn new(
        g: &Graph,
        parts: Vec<Partition>,
        cost: CostModel,
        opts: TrainerOptions,
    ) -> Result<Self> {
        let n = parts.len();
        if n == 0 {
            return Err(Error::invalid("need at least one partition"));
        }
        if cost.num_devices() != n {
            return Err(Error::invalid(format!(
                "cost model covers {} devices, got {n} partitions",
                cost.num_devices()
            )));
        }
        if opts.dims.first() != Some(&g.feature_dim()) {
            return Err(Error::invalid(format!(
                "model input width {:?} does not match feature dimension {}",
                opts.dims.first(),
                g.feature_dim()
            )));
        }
        if opts.dims.last().copied().unwrap_or(0) < g.num_classes() {
            return Err(Error::invalid(
                "model output is narrower than the number of classes",
            ));
        }
        opts.assigner.validate()?;
        let coeffs = compute_coeffs(g, opts.agg);
        let owner = owner_map(&parts, g.num_nodes());
        let model = GnnModel::init(&opts.dims, opts.agg, opts.seed)?;
        let layout = build_layout(&parts, &opts.dims);
        let plan = match opts.precision {
            PrecisionMode::Fp => None,
            PrecisionMode::Fixed(b) => Some(BitWidthPlan::uniform(&layout, b)),
            PrecisionMode::Uniform | PrecisionMode::Adaptive => {
                Some(BitWidthPlan::uniform(&layout, BitWidth::B8))
            }
        };

        let mut topology = Topology::new(n);
        for p in &parts {
            for t in p.peers() {
                topology.set_active(p.device_id, t);
            }
        }

        let devices = parts
            .into_iter()
            .map(|part| Self::make_device(g, &coeffs, &owner, part, &model, &opts, plan.clone()))
            .collect::<Result<Vec<_>>>()?;
        let counts = [Split::Train, Split::Val, Split::Test]
            .map(|s| g.mask(s).iter().filter(|&&m| m).count());
        if counts[0] == 0 {
            return Err(Error::invalid("training mask is empty"));
        }
        let edges = remote_edges(
            g,
            &coeffs,
            &devices.iter().map(|d| d.part.clone()).collect::<Vec<_>>(),
        );
        let layers = opts.dims.len() - 1;
        Ok(DistributedTrainer {
            devices,
            shared: Shared {
                n,
                stream: RngStream::new(opts.seed ^ 0x0005_eed0_fa11_c0de),
                opts,
                cost,
                topology,
                counts,
            },
            layout,
            edges,
            epoch: 0,
            norms: vec![NormBounds::default(); layers],
            resolves: Vec::new(),
        })
    }

    fn make_device(
        g: &Graph,
        coeffs: &AggCoeffs,
        owner: &[usize],
        part: Partition,
        model: &GnnModel<f64>,
        opts: &TrainerOptions,
        plan: Option<BitWidthPlan>,
    ) -> Result<Device> {
        let agg = AggregationPlan::for_partition(g, coeffs, &part);
        let local = |v| part.local_index(v).expect("owned node");
        let rows_of = |nodes: &[usize]| nodes.iter().map(|&v| local(v)).collect::<Vec<_>>();
        let send_rows: Vec<Vec<usize>> = part.remote_out.iter().map(|out| rows_of(out)).collect();
        let send_alpha_sq = part
            .remote_out
            .iter()
            .enumerate()
            .map(|(t, out)| {
                out.iter()
                    .map(|&k| {
                        g.neighbors(k)
                            .iter()
                            .zip(coeffs.neighbor_coeffs(k))
                            .filter(|(&v, _)| owner[v] == t)
                            .map(|(&v, _)| {
                                let a = coeffs.get(g, k, v).expect("edge");
                                a * a
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let pick = |m: &[bool]| part.owned_nodes.iter().map(|&v| m[v]).collect::<Vec<_>>();
        Ok(Device {
            id: part.device_id,
            agg,
            features: g.features().gather_rows(&rows_of_global(&part)),
            labels: part.owned_nodes.iter().map(|&v| g.labels()[v]).collect(),
            masks: [
                pick(g.mask(Split::Train)),
                pick(g.mask(Split::Val)),
                pick(g.mask(Split::Test)),
            ],
            central_rows: rows_of(&part.central_nodes),
            marginal_rows: rows_of(&part.marginal_nodes),
            send_rows,
            send_alpha_sq,
            model: model.clone(),
            opt: OptimizerState::new(opts.optimizer, opts.lr)?,
            plan,
            traces: TraceStats::default(),
            part,
        })
    }

    pub fn num_devices(&self) -> usize {
        self.shared.n
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn options(&self) -> &TrainerOptions {
        &self.shared.opts
    }

    /// Device 0's replica (all replicas are identical).
    pub fn model(&self) -> &GnnModel<f64> {
        &self.devices[0].model
    }

    pub fn plan(&self) -> Option<&BitWidthPlan> {
        self.devices[0].plan.as_ref()
    }

    pub fn layout(&self) -> &PlanLayout {
        &self.layout
    }

    pub fn remote_edges(&self) -> &[RemoteEdge] {
        &self.edges
    }

    pub fn resolves(&self) -> &[ResolveRecord] {
        &self.resolves
    }

    pub fn norm_bounds(&self) -> &[NormBounds] {
        &self.norms
    }

    pub fn cost_model(&self) -> &CostModel {
        &self.shared.cost
    }

    /// Installs the same plan on every device.
    pub fn install_plan(&mut self, plan: BitWidthPlan) -> Result<()> {
        plan.check_layout(&self.layout)?;
        for d in &mut self.devices {
            d.plan = Some(plan.clone());
        }
        let plans: Vec<BitWidthPlan> = self.devices.iter().filter_map(|d| d.plan.clone()).collect();
        negotiate_buffers(&plans)?;
        Ok(())
    }

    /// Runs one synchronous training epoch.
    pub fn train_epoch(&mut self) -> Result<EpochMetrics> {
        let started = Instant::now();
        self.epoch += 1;
        let epoch = self.epoch;
        let precision = self.shared.opts.precision;
        if precision == PrecisionMode::Uniform {
            let mut rng = self.shared.stream.at(&[epoch as u64, u64::MAX]).rng();
            let mut plan = BitWidthPlan::random(&self.layout, &mut rng);
            plan.version = epoch as u64;
            self.install_plan(plan)?;
        }
        let mut sim = EpochSim::new(self.shared.n, self.shared.opts.overlap);
        let out = self.pass(
            PassOptions {
                quantized: precision.is_quantized(),
                trace: precision == PrecisionMode::Adaptive,
                backward: true,
                key: epoch as u64,
            },
            Some(&mut sim),
        )?;
        if !out.eval.loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                reason: format!("training loss is {}", out.eval.loss),
            });
        }
        for (acc, n) in self.norms.iter_mut().zip(&out.norms) {
            acc.m = acc.m.max(n.m);
            acc.n = acc.n.max(n.n);
        }
        let grads = out.grads;
        run_devices(self.shared.opts.exec, &mut self.devices, |d| {
            let mut params = d.model.weights_mut();
            d.opt.step(&mut params, &grads)
        })?;
        if precision == PrecisionMode::Adaptive
            && self.shared.opts.assigner.is_reassignment_epoch(epoch)
        {
            self.resolve(epoch)?;
        }
        Ok(EpochMetrics {
            epoch,
            train_loss: out.eval.loss,
            train_acc: out.eval.train_acc,
            val_acc: out.eval.val_acc,
            test_acc: out.eval.test_acc,
            sim: sim.buckets,
            sim_epoch: sim.buckets.total(),
            sim_serialized: sim.serialized,
            wall_seconds: started.elapsed().as_secs_f64(),
            bytes: sim.bytes,
            plan_version: self.plan().map_or(0, |p| p.version),
        })
    }

    /// Master-side re-solve at the end of a period.
    fn resolve(&mut self, epoch: usize) -> Result<()> {
        let started = Instant::now();
        let traces: Vec<TraceStats> = self
            .devices
            .iter_mut()
            .map(|d| std::mem::take(&mut d.traces))
            .collect();
        let merged = TraceStats::merge(traces.clone())?;
        let current = self.devices[0]
            .plan
            .clone()
            .ok_or_else(|| Error::protocol("adaptive training without a plan"))?;
        let Some((next, solutions)) = reassignment_round(
            epoch,
            &self.shared.opts.assigner,
            traces,
            &current,
            &self.shared.cost,
        )?
        else {
            return Ok(());
        };
        let q = variance_bound_q(&merged, &next, &self.edges, self.norms.len(), &self.norms)?;
        let instances = solutions
            .iter()
            .map(|s| InstanceRecord {
                key: s.key,
                variance: s.variance,
                uniform_variance: InstancePlan::expected_uniform_variance(
                    &merged.instances[&s.key],
                ),
                z: s.z,
            })
            .collect();
        self.install_plan(next.clone())?;
        self.resolves.push(ResolveRecord {
            epoch,
            version: next.version,
            instances,
            q,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        Ok(())
    }

    /// Full-precision forward pass over the current weights.
    pub fn evaluate(&mut self) -> Result<Evaluation> {
        let out = self.pass(
            PassOptions {
                quantized: false,
                trace: false,
                backward: false,
                key: u64::MAX,
            },
            None,
        )?;
        Ok(out.eval)
    }

    /// Loss and all-reduced weight gradients under the current precision,
    /// with quantization draws keyed by `draw`. Weights, traces and norm
    /// estimates are left untouched.
    pub fn compute_gradients(&mut self, draw: u64) -> Result<GradientSample> {
        let saved: Vec<TraceStats> = self
            .devices
            .iter_mut()
            .map(|d| std::mem::take(&mut d.traces))
            .collect();
        let out = self.pass(
            PassOptions {
                quantized: self.shared.opts.precision.is_quantized(),
                trace: true,
                backward: true,
                key: draw,
            },
            None,
        );
        let traced: Vec<TraceStats> = self
            .devices
            .iter_mut()
            .zip(saved)
            .map(|(d, s)| std::mem::replace(&mut d.traces, s))
            .collect();
        let out = out?;
        Ok(GradientSample {
            loss: out.eval.loss,
            grads: out.grads,
            norms: out.norms,
            traces: TraceStats::merge(traced)?,
        })
    }

    /// Overwrites the weights of every replica.
    pub fn set_weights(&mut self, weights: &[Matrix<f64>]) -> Result<()> {
        for d in &mut self.devices {
            let mut params = d.model.weights_mut();
            if params.len() != weights.len() {
                return Err(Error::invalid(format!(
                    "{} weight matrices for {} layers",
                    weights.len(),
                    params.len()
                )));
            }
            for (p, w) in params.iter_mut().zip(weights) {
                if p.shape() != w.shape() {
                    return Err(Error::invalid(format!(
                        "weight is {:?}, expected {:?}",
                        w.shape(),
                        p.shape()
                    )));
                }
                **p = w.clone();
            }
        }
        Ok(())
    }

    /// Installs a plan on one device only. Devices must agree on the plan
    /// before the next exchange, so this exists to exercise that check.
    pub fn set_device_plan(&mut self, device: usize, plan: BitWidthPlan) -> Result<()> {
        plan.check_layout(&self.layout)?;
        let d = self
            .devices
            .get_mut(device)
            .ok_or_else(|| Error::invalid(format!("no device {device}")))?;
        d.plan = Some(plan);
        Ok(())
    }

    /// Simulates one training epoch without updating anything, for cost
    /// calibration.
    pub fn profile_epoch(&mut self) -> Result<EpochProfile> {
        let mut sim = EpochSim::new(self.shared.n, self.shared.opts.overlap);
        self.pass(
            PassOptions {
                quantized: self.shared.opts.precision.is_quantized(),
                trace: false,
                backward: true,
                key: u64::MAX - 1,
            },
            Some(&mut sim),
        )?;
        Ok(EpochProfile {
            comm: sim.comm_raw,
            compute: sim.compute_crit,
        })
    }

    fn check_plan_versions(&self) -> Result<()> {
        let v0 = self.devices[0].plan.as_ref().map(|p| p.version);
        for d in &self.devices[1..] {
            let v = d.plan.as_ref().map(|p| p.version);
            if v != v0 {
                return Err(Error::protocol(format!(
                    "device {} holds plan version {v:?}, device 0 holds {v0:?}",
                    d.id
                )));
            }
        }
        Ok(())
    }

    fn pass(&mut self, po: PassOptions, mut sim: Option<&mut EpochSim>) -> Result<PassOutput> {
        if po.quantized {
            self.check_plan_versions()?;
        }
        let shared = &self.shared;
        let exec = shared.opts.exec;
        let layers = shared.opts.dims.len() - 1;
        let cm = shared.opts.compute;
        let mut norms = vec![NormBounds::default(); layers];

        // ---------------- forward ----------------
        let mut h: Vec<Matrix<f64>> = self.devices.iter().map(|d| d.features.clone()).collect();
        let mut caches: Vec<Vec<LayerCache<f64>>> = vec![Vec::with_capacity(layers); shared.n];
        for l in 0..layers {
            let key = InstanceKey::forward(l);
            let dim = shared.opts.dims[l];
            let encoded = run_devices(exec, &mut self.devices, |d| {
                let targets: Vec<Target> = (0..shared.n)
                    .map(|t| {
                        (
                            d.send_rows[t].clone(),
                            d.part.remote_out[t].clone(),
                            d.send_alpha_sq[t].clone(),
                        )
                    })
                    .collect();
                encode_outgoing(shared, d, key, &h[d.id], &targets, po)
            })?;
            let (received, comm) = exchange(
                shared,
                encoded.iter().map(|e| e.0.clone()).collect(),
                sim.as_deref_mut(),
            )?;
            let outs = run_devices(exec, &mut self.devices, |d| {
                let mut remote = Matrix::zeros(d.agg.num_remote(), dim);
                let mut recv_elems = 0;
                for s in 0..shared.n {
                    let rows = decode_incoming(
                        shared,
                        d,
                        key,
                        s,
                        &received[d.id][s],
                        d.part.remote_in[s].len(),
                        dim,
                        po,
                    )?;
                    let base = d.agg.remote_offsets[s];
                    for (j, r) in rows.into_iter().enumerate() {
                        recv_elems += r.len();
                        remote.row_mut(base + j).copy_from_slice(&r);
                    }
                }
                let hbar = d.agg.forward.apply(&h[d.id], &remote)?;
                let m = max_row_norm(&hbar);
                let (out, cache) = d.model.layer_forward(l, hbar)?;
                let out_dim = shared.opts.dims[l + 1];
                let flops = |rows: &[usize]| {
                    2.0 * (d.agg.forward.nnz_of(rows) * dim) as f64
                        + 2.0 * (rows.len() * dim * out_dim) as f64
                };
                let work = StageWork {
                    pre: 0.0,
                    quantize: if po.quantized {
                        encoded[d.id].1 as f64 * cm.sec_per_quant_elem
                    } else {
                        0.0
                    },
                    central: flops(&d.central_rows) * cm.sec_per_flop,
                    dequantize: if po.quantized {
                        recv_elems as f64 * cm.sec_per_dequant_elem
                    } else {
                        0.0
                    },
                    marginal: flops(&d.marginal_rows) * cm.sec_per_flop,
                };
                Ok((out, cache, work, m))
            })?;
            let mut works = Vec::with_capacity(shared.n);
            for (d, (out, cache, work, m)) in outs.into_iter().enumerate() {
                if !out.all_finite() || !cache.pre_activation.all_finite() {
                    return Err(Error::Diverged {
                        epoch: self.epoch,
                        reason: format!("non-finite activations in layer {l} on device {d}"),
                    });
                }
                h[d] = out;
                caches[d].push(cache);
                works.push(work);
                norms[l].m = norms[l].m.max(m);
            }
            if let Some(s) = sim.as_deref_mut() {
                s.stage(&works, comm);
            }
        }

        // ---------------- loss ----------------
        let losses = run_devices(exec, &mut self.devices, |d| {
            let (loss, grad) =
                scaled_loss_and_grad(&h[d.id], &d.labels, &d.masks[0], shared.counts[0])?;
            let correct =
                [0, 1, 2].map(|i| correct_predictions(&h[d.id], &d.labels, &d.masks[i]).0);
            Ok((loss, grad, correct))
        })?;
        let mut loss = 0.0;
        let mut correct = [0usize; 3];
        let mut grad_out = Vec::with_capacity(shared.n);
        for (l, g, c) in losses {
            loss += l;
            for i in 0..3 {
                correct[i] += c[i];
            }
            grad_out.push(g);
        }
        let frac = |i: usize| {
            if shared.counts[i] == 0 {
                0.0
            } else {
                correct[i] as f64 / shared.counts[i] as f64
            }
        };
        let eval = Evaluation {
            loss,
            train_acc: frac(0),
            val_acc: frac(1),
            test_acc: frac(2),
        };
        if !po.backward {
            return Ok(PassOutput {
                eval,
                grads: Vec::new(),
                norms,
            });
        }

        // ---------------- backward ----------------
        let mut weight_grads: Vec<Vec<Matrix<f64>>> = vec![Vec::with_capacity(layers); shared.n];
        for l in (0..layers).rev() {
            let key = InstanceKey::backward(l);
            let in_dim = shared.opts.dims[l];
            let out_dim = shared.opts.dims[l + 1];
            let step = run_devices(exec, &mut self.devices, |d| {
                let n_norm = max_row_norm(&grad_out[d.id]);
                let (gw, g) = d
                    .model
                    .layer_backward(l, &caches[d.id][l], &grad_out[d.id])?;
                let dense = |rows: usize| 4.0 * (rows * in_dim * out_dim) as f64;
                if l == 0 {
                    let work = StageWork {
                        central: dense(d.part.owned_nodes.len()) * cm.sec_per_flop,
                        ..Default::default()
                    };
                    return Ok((gw, None, Matrix::zeros(0, 0), work, n_norm));
                }
                let empty = Matrix::zeros(0, in_dim);
                let local = d.agg.backward_local.apply(&g, &empty)?;
                let partials = d.agg.backward_remote.apply(&g, &empty)?;
                let targets: Vec<Target> = (0..shared.n)
                    .map(|t| {
                        let (a, b) = (d.agg.remote_offsets[t], d.agg.remote_offsets[t + 1]);
                        ((a..b).collect(), d.part.remote_in[t].clone(), Vec::new())
                    })
                    .collect();
                let (slots, sent) = encode_outgoing(shared, d, key, &partials, &targets, po)?;
                let all_rows: Vec<usize> = (0..d.part.owned_nodes.len()).collect();
                let work = StageWork {
                    pre: (dense(d.marginal_rows.len())
                        + 2.0
                            * (d.agg
                                .backward_remote
                                .nnz_of(&(0..d.agg.num_remote()).collect::<Vec<_>>())
                                * in_dim) as f64)
                        * cm.sec_per_flop,
                    quantize: if po.quantized {
                        sent as f64 * cm.sec_per_quant_elem
                    } else {
                        0.0
                    },
                    central: (dense(d.central_rows.len())
                        + 2.0 * (d.agg.backward_local.nnz_of(&all_rows) * in_dim) as f64)
                        * cm.sec_per_flop,
                    dequantize: 0.0,
                    marginal: 0.0,
                };
                Ok((gw, Some(slots), local, work, n_norm))
            })?;
            let mut works = Vec::with_capacity(shared.n);
            let mut locals = Vec::with_capacity(shared.n);
            let mut grid = Vec::with_capacity(shared.n);
            for (d, (gw, slots, local, work, n_norm)) in step.into_iter().enumerate() {
                weight_grads[d].push(gw);
                works.push(work);
                locals.push(local);
                norms[l].n = norms[l].n.max(n_norm);
                if let Some(s) = slots {
                    grid.push(s);
                }
            }
            if l == 0 {
                if let Some(s) = sim.as_deref_mut() {
                    s.stage(&works, 0.0);
                }
                break;
            }
            let (received, comm) = exchange(shared, grid, sim.as_deref_mut())?;
            let locals_ref = &locals;
            let merged = run_devices(exec, &mut self.devices, |d| {
                let mut acc = locals_ref[d.id].clone();
                let mut recv_elems = 0;
                for s in 0..shared.n {
                    let rows = decode_incoming(
                        shared,
                        d,
                        key,
                        s,
                        &received[d.id][s],
                        d.send_rows[s].len(),
                        in_dim,
                        po,
                    )?;
                    for (j, r) in rows.into_iter().enumerate() {
                        recv_elems += r.len();
                        for (o, x) in acc.row_mut(d.send_rows[s][j]).iter_mut().zip(r) {
                            *o += x;
                        }
                    }
                }
                if !acc.all_finite() {
                    return Err(Error::Diverged {
                        epoch: 0,
                        reason: format!("non-finite gradients in layer {l} on device {}", d.id),
                    });
                }
                Ok((acc, recv_elems))
            })?;
            grad_out.clear();
            for (d, (acc, recv)) in merged.into_iter().enumerate() {
                if po.quantized {
                    works[d].dequantize = recv as f64 * cm.sec_per_dequant_elem;
                }
                works[d].marginal = recv as f64 * cm.sec_per_flop;
                grad_out.push(acc);
            }
            if let Some(s) = sim.as_deref_mut() {
                s.stage(&works, comm);
            }
        }
        for g in &mut weight_grads {
            g.reverse();
        }
        let grads = allreduce_weight_grads(&weight_grads)?;
        if let Some(s) = sim {
            let params: usize = grads.iter().map(|g| g.rows() * g.cols()).sum();
            let t = allreduce_time(&shared.cost, params);
            s.stage(&vec![StageWork::default(); shared.n], t);
        }
        Ok(PassOutput { eval, grads, norms })
    }
}

/// Rows to send, their global ids, and their `Σα²` on the target.
type Target = (Vec<usize>, Vec<usize>, Vec<f64>);

fn rows_of_global(p: &Partition) -> Vec<usize> {
    p.owned_nodes.clone()
}

/// Encodes a device's outgoing messages for one exchange. `targets[t]` holds
/// the rows of `msgs` to send to `t`, their global node ids, and (forward
/// only) their `Σα²` on `t`; empty `alpha_sq` means already-weighted
/// backward partials. Returns the payload slots and the element count sent.
fn encode_outgoing(
    shared: &Shared,
    d: &mut Device,
    key: InstanceKey,
    msgs: &Matrix<f64>,
    targets: &[Target],
    po: PassOptions,
) -> Result<(Vec<Option<ExchangePayload>>, usize)> {
    let mut slots = vec![None; shared.n];
    let mut elems = 0;
    for (t, (rows, nodes, alpha_sq)) in targets.iter().enumerate() {
        if t == d.id {
            continue;
        }
        let rows_data: Vec<&[f64]> = rows.iter().map(|&r| msgs.row(r)).collect();
        elems += rows_data.iter().map(|r| r.len()).sum::<usize>();
        if po.trace {
            for (pos, (r, &node)) in rows_data.iter().zip(nodes.iter()).enumerate() {
                let (min, max) = r
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| {
                        (a.min(x), b.max(x))
                    });
                let stat = MessageStat {
                    node,
                    dim: r.len(),
                    min,
                    max,
                    sum_alpha_sq: alpha_sq.get(pos).copied().unwrap_or(1.0),
                };
                d.traces.record(key, d.id, t, pos, stat);
            }
        }
        let bytes = if rows_data.is_empty() {
            Vec::new()
        } else if po.quantized {
            let bits = message_bits(d, key, d.id, t, rows_data.len())?;
            let stream = shared.stream.at(&[
                po.key,
                key.layer as u64,
                direction_code(key.direction),
                d.id as u64,
                t as u64,
            ]);
            encode_message_set(&rows_data, &bits, |i| stream.at(&[i as u64]))?.0
        } else {
            let mut out = Vec::with_capacity(8 * elems);
            for r in &rows_data {
                for x in *r {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            out
        };
        slots[t] = Some(ExchangePayload::new(d.id, t, bytes));
    }
    Ok((slots, elems))
}

fn message_bits(
    d: &Device,
    key: InstanceKey,
    src: usize,
    dst: usize,
    count: usize,
) -> Result<Vec<BitWidth>> {
    let plan = d
        .plan
        .as_ref()
        .ok_or_else(|| Error::protocol(format!("device {} has no bit-width plan", d.id)))?;
    let pair = plan.pair(key, src, dst).ok_or_else(|| {
        Error::protocol(format!(
            "plan v{} has no entry for {src} -> {dst} in {key}",
            plan.version
        ))
    })?;
    if pair.message_bits.len() != count {
        return Err(Error::protocol(format!(
            "plan v{} covers {} messages for {src} -> {dst} in {key}, exchange has {count}",
            plan.version,
            pair.message_bits.len()
        )));
    }
    Ok(pair.message_bits.clone())
}

/// Decodes what device `d` received from `s`: `count` rows of width `dim`.
#[allow(clippy::too_many_arguments)]
fn decode_incoming(
    _shared: &Shared,
    d: &Device,
    key: InstanceKey,
    s: usize,
    payload: &Option<ExchangePayload>,
    count: usize,
    dim: usize,
    po: PassOptions,
) -> Result<Vec<Vec<f64>>> {
    if s == d.id || count == 0 {
        return Ok(Vec::new());
    }
    let bytes = &payload
        .as_ref()
        .ok_or_else(|| Error::protocol(format!("device {} got no payload from {s}", d.id)))?
        .bytes;
    if po.quantized {
        let bits = message_bits(d, key, s, d.id, count)?;
        let index = RetrievalIndex::build(&vec![dim; count], &bits)?;
        decode_message_set(bytes, &index)
    } else {
        if bytes.len() != 8 * count * dim {
            return Err(Error::decode(format!(
                "device {} expected {} bytes from {s}, got {}",
                d.id,
                8 * count * dim,
                bytes.len()
            )));
        }
        Ok(bytes
            .chunks_exact(8 * dim)
            .map(|row| {
                row.chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect()
            })
            .collect())
    }
}

/// Runs the ring exchange and charges payload bytes.
fn exchange(
    shared: &Shared,
    grid: Vec<Vec<Option<ExchangePayload>>>,
    sim: Option<&mut EpochSim>,
) -> Result<(Vec<Vec<Option<ExchangePayload>>>, f64)> {
    if let Some(s) = sim {
        for row in &grid {
            for p in row.iter().flatten() {
                s.bytes[p.source][p.target] += p.bytes.len() as u64;
            }
        }
    }
    if shared.n == 1 {
        return Ok((grid, 0.0));
    }
    let out = ring_all2all(grid, &shared.cost, &shared.topology, shared.opts.exec)?;
    let t = out.total_time();
    Ok((out.received, t))
}

/// Fits a uniform cost model so that communication takes `comm_fraction` of
/// a full-precision, non-overlapped epoch, with `gamma_share` of that
/// communication time being per-message latency.
pub fn calibrate_cost_model(
    g: &Graph,
    parts: &[Partition],
    opts: &TrainerOptions,
    comm_fraction: f64,
    gamma_share: f64,
) -> Result<CostModel> {
    if !(comm_fraction > 0.0 && comm_fraction < 1.0) || !(0.0..1.0).contains(&gamma_share) {
        return Err(Error::invalid(
            "comm_fraction must lie in (0,1) and gamma_share in [0,1)",
        ));
    }
    let n = parts.len();
    if n < 2 {
        return CostModel::uniform(n, 0.0, 0.0);
    }
    let mut o = opts.clone();
    o.precision = PrecisionMode::Fp;
    o.overlap = false;
    let per_bit = DistributedTrainer::new(
        g,
        parts.to_vec(),
        CostModel::uniform(n, 1.0, 0.0)?,
        o.clone(),
    )?
    .profile_epoch()?;
    let per_msg = DistributedTrainer::new(g, parts.to_vec(), CostModel::uniform(n, 0.0, 1.0)?, o)?
        .profile_epoch()?;
    let comm = comm_fraction / (1.0 - comm_fraction) * per_bit.compute;
    let theta = if per_bit.comm > 0.0 {
        (1.0 - gamma_share) * comm / per_bit.comm
    } else {
        0.0
    };
    let gamma = if per_msg.comm > 0.0 {
        gamma_share * comm / per_msg.comm
    } else {
        0.0
    };
    CostModel::uniform(n, theta, gamma)
}

/// Deterministic per-run RNG for anything outside the message streams.
pub fn run_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ salt)
}
