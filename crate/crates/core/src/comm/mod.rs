//! Simulated device fabric: ring all2all over channels, the linear cost
//! model, and the per-device simulated clock.

mod buffers;
mod clock;
mod cost;
mod ring;

pub use buffers::{negotiate_buffers, ReceiveBuffers};
pub use clock::{SimClock, StageWork, TimeBuckets};
pub use cost::{fit_cost_model, fit_line, CostModel};
pub use ring::{
    pair_time, ring_all2all, ring_round_pairs, ExchangeOutcome, ExchangePayload, ExecMode,
    PayloadGrid, Topology,
};
