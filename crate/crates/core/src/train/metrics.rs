use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assign::InstanceKey;
use crate::comm::TimeBuckets;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    /// Critical-path breakdown of the simulated epoch.
    pub sim: TimeBuckets,
    /// Simulated epoch seconds (sum of `sim`).
    pub sim_epoch: f64,
    /// Same epoch with every stage serialized.
    pub sim_serialized: f64,
    pub wall_seconds: f64,
    /// `bytes[src][dst]` put on the wire this epoch.
    pub bytes: Vec<Vec<u64>>,
    pub plan_version: u64,
}

impl EpochMetrics {
    pub fn total_bytes(&self) -> u64 {
        self.bytes.iter().flatten().sum()
    }
}

/// One exchange's outcome at a re-solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub key: InstanceKey,
    pub variance: f64,
    /// Expected variance had every message drawn its width uniformly.
    pub uniform_variance: f64,
    pub z: f64,
}

/// What the assigner produced at the end of an epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolveRecord {
    pub epoch: usize,
    pub version: u64,
    pub instances: Vec<InstanceRecord>,
    /// Per-layer variance bound of the new plan under the period's traces.
    pub q: Vec<f64>,
    pub wall_seconds: f64,
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for r in rows {
        let line = serde_json::to_string(r).expect("metrics serialize");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

/// Sample mean and (n−1) standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_of_three() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn jsonl_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let rows = vec![
            InstanceRecord {
                key: InstanceKey::forward(1),
                variance: 0.5,
                uniform_variance: 1.0,
                z: 2.0,
            };
            2
        ];
        write_jsonl(&p, &rows).unwrap();
        assert_eq!(read_jsonl::<InstanceRecord>(&p).unwrap(), rows);
    }
}
