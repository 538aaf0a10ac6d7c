use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Barrier;

use crate::error::{Error, Result};

use super::cost::CostModel;

/// How device workers are scheduled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// Devices run one after another in id order.
    #[default]
    Deterministic,
    /// One OS thread per device.
    Threaded,
}

impl ExecMode {
    /// `Deterministic` when `ADAQP_DETERMINISTIC=1`, else `Threaded`.
    pub fn from_env() -> Self {
        match std::env::var("ADAQP_DETERMINISTIC") {
            Ok(v) if v == "1" => ExecMode::Deterministic,
            _ => ExecMode::Threaded,
        }
    }
}

/// Bytes one device addresses to another in a single exchange.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExchangePayload {
    pub source: usize,
    pub target: usize,
    pub bytes: Vec<u8>,
}

impl ExchangePayload {
    pub fn new(source: usize, target: usize, bytes: Vec<u8>) -> Self {
        ExchangePayload {
            source,
            target,
            bytes,
        }
    }

    pub fn bits(&self) -> u64 {
        8 * self.bytes.len() as u64
    }
}

/// Per-source, per-target payload slots. `slots[s][t]` must be filled for
/// every `s != t`; the diagonal is ignored.
pub type PayloadGrid = Vec<Vec<Option<ExchangePayload>>>;

/// Result of one all2all: `received[t][s]` is what `t` got from `s`.
#[derive(Debug)]
pub struct ExchangeOutcome {
    pub received: PayloadGrid,
    /// Simulated duration of each ring round (round `r` at index `r - 1`).
    pub round_times: Vec<f64>,
}

impl ExchangeOutcome {
    pub fn total_time(&self) -> f64 {
        self.round_times.iter().sum()
    }
}

/// Which pairs are in the communication set. Pairs in the set pay at least
/// their latency `γ` every exchange, even when the payload is empty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    n: usize,
    active: Vec<bool>,
}

impl Topology {
    pub fn new(n: usize) -> Self {
        Topology {
            n,
            active: vec![false; n * n],
        }
    }

    pub fn full(n: usize) -> Self {
        let mut t = Self::new(n);
        for s in 0..n {
            for d in 0..n {
                t.active[s * n + d] = s != d;
            }
        }
        t
    }

    pub fn set_active(&mut self, src: usize, dst: usize) {
        self.active[src * self.n + dst] = true;
    }

    pub fn is_active(&self, src: usize, dst: usize) -> bool {
        self.active[src * self.n + dst]
    }
}

/// Simulated seconds for one pair's transfer.
pub fn pair_time(cost: &CostModel, topology: &Topology, p: &ExchangePayload) -> f64 {
    if p.bytes.is_empty() && !topology.is_active(p.source, p.target) {
        0.0
    } else {
        cost.transfer_time(p.source, p.target, p.bits())
    }
}

/// Round time: concurrent pairs overlap, so the round lasts as long as its
/// slowest transfer.
fn round_time(
    cost: &CostModel,
    topology: &Topology,
    slots: &PayloadGrid,
    n: usize,
    round: usize,
) -> f64 {
    (0..n)
        .map(|d| {
            let t = (d + round) % n;
            slots[d][t]
                .as_ref()
                .map_or(0.0, |p| pair_time(cost, topology, p))
        })
        .fold(0.0, f64::max)
}

/// Ring all-to-all over in-process channels.
///
/// Runs `N−1` rounds; in round `r` device `d` sends to `(d+r) mod N` and
/// receives from `(d−r+N) mod N`. Simulated time is the sum of round times,
/// each the max over that round's transfers.
pub fn ring_all2all(
    mut slots: PayloadGrid,
    cost: &CostModel,
    topology: &Topology,
    mode: ExecMode,
) -> Result<ExchangeOutcome> {
    let n = slots.len();
    if cost.num_devices() != n {
        return Err(Error::protocol(format!(
            "cost model covers {} devices, exchange has {n}",
            cost.num_devices()
        )));
    }
    for (s, row) in slots.iter().enumerate() {
        if row.len() != n {
            return Err(Error::protocol(format!(
                "device {s} has {} payload slots, expected {n}",
                row.len()
            )));
        }
        for (t, slot) in row.iter().enumerate() {
            match slot {
                None if s != t => {
                    return Err(Error::protocol(format!("missing payload slot {s} -> {t}")));
                }
                Some(p) if s != t && (p.source != s || p.target != t) => {
                    return Err(Error::protocol(format!(
                        "slot {s} -> {t} holds a payload addressed {} -> {}",
                        p.source, p.target
                    )));
                }
                _ => {}
            }
        }
    }

    let round_times: Vec<f64> = (1..n)
        .map(|r| round_time(cost, topology, &slots, n, r))
        .collect();

    let (senders, receivers): (Vec<Sender<ExchangePayload>>, Vec<Receiver<ExchangePayload>>) =
        (0..n).map(|_| channel()).unzip();
    let mut received: PayloadGrid = (0..n).map(|_| vec![None; n]).collect();

    match mode {
        ExecMode::Deterministic => {
            for r in 1..n {
                for (d, row) in slots.iter_mut().enumerate() {
                    let t = (d + r) % n;
                    let p = row[t].take().expect("checked above");
                    senders[t]
                        .send(p)
                        .map_err(|_| Error::protocol("receiver hung up"))?;
                }
                for (d, rx) in receivers.iter().enumerate() {
                    let expect = (d + n - r) % n;
                    received[d][expect] = Some(recv_from(rx, d, expect)?);
                }
            }
        }
        ExecMode::Threaded => {
            let barrier = Barrier::new(n);
            let results: Vec<Result<Vec<Option<ExchangePayload>>>> = std::thread::scope(|scope| {
                let handles: Vec<_> = slots
                    .into_iter()
                    .zip(receivers)
                    .enumerate()
                    .map(|(d, (mut row, rx))| {
                        let senders = senders.clone();
                        let barrier = &barrier;
                        scope.spawn(move || -> Result<Vec<Option<ExchangePayload>>> {
                            let mut got = vec![None; n];
                            for r in 1..n {
                                let t = (d + r) % n;
                                let p = row[t].take().expect("checked above");
                                senders[t]
                                    .send(p)
                                    .map_err(|_| Error::protocol("receiver hung up"))?;
                                let expect = (d + n - r) % n;
                                got[expect] = Some(recv_from(&rx, d, expect)?);
                                barrier.wait();
                            }
                            Ok(got)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("exchange worker panicked"))
                    .collect()
            });
            for (d, r) in results.into_iter().enumerate() {
                received[d] = r?;
            }
        }
    }

    Ok(ExchangeOutcome {
        received,
        round_times,
    })
}

fn recv_from(rx: &Receiver<ExchangePayload>, me: usize, expect: usize) -> Result<ExchangePayload> {
    let p = rx
        .recv()
        .map_err(|_| Error::protocol(format!("device {me} got nothing from {expect}")))?;
    if p.source != expect || p.target != me {
        return Err(Error::protocol(format!(
            "device {me} expected a payload from {expect}, got {} -> {}",
            p.source, p.target
        )));
    }
    Ok(p)
}

/// Sender/receiver pairs active in ring round `r` of an `n`-device ring.
pub fn ring_round_pairs(n: usize, r: usize) -> Vec<(usize, usize)> {
    (0..n).map(|d| (d, (d + r) % n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, size: impl Fn(usize, usize) -> usize) -> PayloadGrid {
        (0..n)
            .map(|s| {
                (0..n)
                    .map(|t| {
                        (s != t).then(|| {
                            ExchangePayload::new(s, t, vec![(s * n + t) as u8; size(s, t)])
                        })
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn four_device_first_round_shifts_right_by_one() {
        assert_eq!(ring_round_pairs(4, 1), vec![(0, 1), (1, 2), (2, 3), (3, 0)]);
    }

    #[test]
    fn two_devices_swap_in_one_round() {
        let cost = CostModel::uniform(2, 1.0, 0.0).unwrap();
        let out = ring_all2all(
            grid(2, |_, _| 1),
            &cost,
            &Topology::full(2),
            ExecMode::Deterministic,
        )
        .unwrap();
        assert_eq!(out.round_times, vec![8.0]);
        assert_eq!(out.received[0][1].as_ref().unwrap().bytes, vec![2]);
        assert_eq!(out.received[1][0].as_ref().unwrap().bytes, vec![1]);
    }

    #[test]
    fn round_time_is_the_straggler_not_the_sum() {
        let cost = CostModel::uniform(3, 1.0, 0.5).unwrap();
        // round 1 pairs: 0->1 (3 bytes), 1->2 (1), 2->0 (1)
        let out = ring_all2all(
            grid(3, |s, t| if (s, t) == (0, 1) { 3 } else { 1 }),
            &cost,
            &Topology::full(3),
            ExecMode::Deterministic,
        )
        .unwrap();
        assert_eq!(out.round_times, vec![24.5, 8.5]);
        assert_eq!(out.total_time(), 33.0);
    }

    #[test]
    fn missing_slot_is_a_protocol_error() {
        let cost = CostModel::uniform(3, 1.0, 0.0).unwrap();
        let mut g = grid(3, |_, _| 1);
        g[2][0] = None;
        assert!(matches!(
            ring_all2all(g, &cost, &Topology::full(3), ExecMode::Deterministic),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn empty_payload_pays_latency_only_inside_topology() {
        let cost = CostModel::uniform(2, 1.0, 0.25).unwrap();
        let empty = grid(2, |_, _| 0);
        let none = ring_all2all(
            empty.clone(),
            &cost,
            &Topology::new(2),
            ExecMode::Deterministic,
        )
        .unwrap();
        assert_eq!(none.total_time(), 0.0);
        let some = ring_all2all(empty, &cost, &Topology::full(2), ExecMode::Deterministic).unwrap();
        assert_eq!(some.total_time(), 0.25);
    }

    #[test]
    fn threaded_and_deterministic_deliver_the_same() {
        let cost = CostModel::uniform(5, 1e-3, 1e-4).unwrap();
        let a = ring_all2all(
            grid(5, |s, t| s + 2 * t),
            &cost,
            &Topology::full(5),
            ExecMode::Deterministic,
        )
        .unwrap();
        let b = ring_all2all(
            grid(5, |s, t| s + 2 * t),
            &cost,
            &Topology::full(5),
            ExecMode::Threaded,
        )
        .unwrap();
        assert_eq!(a.received, b.received);
        assert_eq!(a.round_times, b.round_times);
    }
}
