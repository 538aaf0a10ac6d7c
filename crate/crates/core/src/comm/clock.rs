use serde::{Deserialize, Serialize};

/// Simulated seconds split by what the device was doing.
///
/// `communication` holds only the exposed part of a transfer, i.e. time not
/// hidden behind central-graph compute, plus barrier waits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeBuckets {
    pub communication: f64,
    pub central_comp: f64,
    pub marginal_comp: f64,
    pub quantization: f64,
}

impl TimeBuckets {
    pub fn computation(&self) -> f64 {
        self.central_comp + self.marginal_comp
    }

    pub fn total(&self) -> f64 {
        self.communication + self.central_comp + self.marginal_comp + self.quantization
    }

    pub fn add(&mut self, other: &TimeBuckets) {
        self.communication += other.communication;
        self.central_comp += other.central_comp;
        self.marginal_comp += other.marginal_comp;
        self.quantization += other.quantization;
    }
}

/// Work one device does in one stage-structured layer pass.
///
/// The pass runs as: `pre` compute, quantize, then the exchange concurrently
/// with central compute, then de-quantize and marginal compute.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageWork {
    /// Marginal-side compute that must finish before quantization.
    pub pre: f64,
    pub quantize: f64,
    pub central: f64,
    pub dequantize: f64,
    pub marginal: f64,
}

impl StageWork {
    /// Wall time for this device given the exchange duration.
    pub fn duration(&self, comm: f64, overlap: bool) -> f64 {
        let middle = if overlap {
            comm.max(self.central)
        } else {
            comm + self.central
        };
        self.pre + self.quantize + middle + self.dequantize + self.marginal
    }

    /// Wall time with every stage serialized.
    pub fn serialized(&self, comm: f64) -> f64 {
        self.duration(comm, false)
    }
}

/// Per-device simulated timeline.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub devices: Vec<TimeBuckets>,
}

impl SimClock {
    pub fn new(n: usize) -> Self {
        SimClock {
            devices: vec![TimeBuckets::default(); n],
        }
    }

    pub fn elapsed(&self, device: usize) -> f64 {
        self.devices[device].total()
    }

    /// Advances every device through one barrier-terminated layer pass and
    /// returns the pass duration with the critical device's breakdown.
    ///
    /// Each device is charged its own compute and quantization; whatever
    /// remains of the pass duration (exposed transfer, waiting on the slowest
    /// device) lands in its communication bucket, so per-device buckets always
    /// sum to elapsed time.
    pub fn advance_layer(
        &mut self,
        work: &[StageWork],
        comm: f64,
        overlap: bool,
    ) -> (f64, TimeBuckets) {
        let durations: Vec<f64> = work.iter().map(|w| w.duration(comm, overlap)).collect();
        let span = durations.iter().copied().fold(0.0, f64::max);
        let critical = durations.iter().position(|&d| d == span).unwrap_or(0);
        let mut critical_buckets = TimeBuckets::default();
        for (d, w) in work.iter().enumerate() {
            let b = TimeBuckets {
                central_comp: w.central,
                marginal_comp: w.pre + w.marginal,
                quantization: w.quantize + w.dequantize,
                communication: span - (w.central + w.pre + w.marginal + w.quantize + w.dequantize),
            };
            self.devices[d].add(&b);
            if d == critical {
                critical_buckets = b;
            }
        }
        (span, critical_buckets)
    }
}
