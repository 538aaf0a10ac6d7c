use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assign::AssignerConfig;
use crate::data::{DatasetKind, DatasetSpec};
use crate::error::{Error, Result};
use crate::graph::AggMode;
use crate::quant::BitWidth;
use crate::tensor::OptimizerKind;

/// How messages are encoded on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMode {
    /// Raw 64-bit reals.
    Fp,
    /// Every message at one bit-width.
    Fixed(BitWidth),
    /// Every message draws its width uniformly from {2, 4, 8} each epoch.
    Uniform,
    /// Widths chosen by the variance/time assigner.
    Adaptive,
}

impl PrecisionMode {
    pub fn is_quantized(self) -> bool {
        self != PrecisionMode::Fp
    }

    pub fn name(self) -> String {
        self.to_string()
    }
}

impl std::fmt::Display for PrecisionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PrecisionMode::Fp => write!(f, "fp"),
            PrecisionMode::Fixed(b) => write!(f, "fixed:{b}"),
            PrecisionMode::Uniform => write!(f, "uniform"),
            PrecisionMode::Adaptive => write!(f, "adaptive"),
        }
    }
}

impl FromStr for PrecisionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fp" | "vanilla" => Ok(PrecisionMode::Fp),
            "uniform" => Ok(PrecisionMode::Uniform),
            "adaptive" => Ok(PrecisionMode::Adaptive),
            other => match other.strip_prefix("fixed:") {
                Some(b) => {
                    let bits: u32 = b
                        .parse()
                        .map_err(|_| format!("bad bit-width in '{other}'"))?;
                    BitWidth::from_bits(bits)
                        .map(PrecisionMode::Fixed)
                        .map_err(|e| e.to_string())
                }
                None => Err(format!(
                    "unknown mode '{other}' (expected fp, fixed:B, uniform or adaptive)"
                )),
            },
        }
    }
}

/// Simulated compute speeds of one device.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputeModel {
    pub sec_per_flop: f64,
    /// Per element quantized (range scan, rounding, packing).
    pub sec_per_quant_elem: f64,
    /// Per element de-quantized.
    pub sec_per_dequant_elem: f64,
}

impl Default for ComputeModel {
    fn default() -> Self {
        ComputeModel {
            sec_per_flop: 1e-10,
            sec_per_quant_elem: 4e-10,
            sec_per_dequant_elem: 2e-10,
        }
    }
}

/// Everything a training run needs, loadable from a key-value file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    pub n_parts: usize,
    pub agg: AggMode,
    /// Number of GNN layers.
    pub layers: usize,
    pub hidden: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub assigner: AssignerConfig,
    pub mode: PrecisionMode,
    /// Modes compared by an experiment run.
    pub modes: Vec<PrecisionMode>,
    pub seed: u64,
    /// Repetitions with seeds `seed, seed+1, ...`.
    pub runs: usize,
    pub epochs: usize,
    pub cost_model: Option<PathBuf>,
    /// Share of a full-precision, non-overlapped epoch spent communicating
    /// when the cost model is calibrated rather than loaded.
    pub comm_fraction: f64,
    pub overlap: bool,
    pub compute: ComputeModel,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dataset: DatasetSpec::default(),
            n_parts: 4,
            agg: AggMode::Gcn,
            layers: 3,
            hidden: 64,
            lr: 0.01,
            optimizer: OptimizerKind::adam(),
            assigner: AssignerConfig::default(),
            mode: PrecisionMode::Adaptive,
            modes: vec![
                PrecisionMode::Fp,
                PrecisionMode::Uniform,
                PrecisionMode::Adaptive,
            ],
            seed: 0,
            runs: 3,
            epochs: 200,
            cost_model: None,
            comm_fraction: 0.75,
            overlap: true,
            compute: ComputeModel::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_parts == 0 {
            return Err(Error::invalid("n_parts must be at least 1"));
        }
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::invalid("layers and hidden must be positive"));
        }
        if self.runs == 0 || self.epochs == 0 {
            return Err(Error::invalid("runs and epochs must be positive"));
        }
        if !(self.comm_fraction > 0.0 && self.comm_fraction < 1.0) {
            return Err(Error::invalid("comm_fraction must lie in (0, 1)"));
        }
        self.assigner.validate()?;
        if self.dataset.kind != DatasetKind::File {
            self.dataset.validate()?;
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Relative paths are
    /// resolved against the file's directory.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let base = origin.parent().unwrap_or(Path::new("."));
        let mut cfg = TrainConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(
                    origin,
                    line_no,
                    format!("expected 'key = value', got '{line}'"),
                )
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value, base)
                .map_err(|msg| Error::parse(origin, line_no, format!("{key}: {msg}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Applies one setting. Used by the file parser and command-line overrides.
    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> std::result::Result<(), String> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("cannot parse '{v}'"))
        }
        match key {
            "dataset" => match value.parse::<DatasetKind>() {
                Ok(kind) if kind != DatasetKind::File => self.dataset.kind = kind,
                _ => {
                    self.dataset.kind = DatasetKind::File;
                    self.dataset.path = Some(base.join(value));
                }
            },
            "dataset.nodes" => self.dataset.nodes = num(value)?,
            "dataset.communities" => self.dataset.communities = num(value)?,
            "dataset.classes" => self.dataset.classes = num(value)?,
            "dataset.p_intra" => self.dataset.p_intra = num(value)?,
            "dataset.p_inter" => self.dataset.p_inter = num(value)?,
            "dataset.feature_dim" => self.dataset.feature_dim = num(value)?,
            "dataset.noise" => self.dataset.feature_noise = num(value)?,
            "dataset.seed" => self.dataset.seed = num(value)?,
            "n_parts" | "parts" => self.n_parts = num(value)?,
            "model" => self.agg = value.parse()?,
            "layers" => self.layers = num(value)?,
            "hidden" => self.hidden = num(value)?,
            "lr" => self.lr = num(value)?,
            "optimizer" => {
                self.optimizer = match value {
                    "adam" => OptimizerKind::adam(),
                    "gd" => OptimizerKind::Gd,
                    other => return Err(format!("unknown optimizer '{other}'")),
                }
            }
            "lambda" => self.assigner.lambda = num(value)?,
            "group_size" => self.assigner.group_size = num(value)?,
            "period" => self.assigner.period = num(value)?,
            "mode" => self.mode = value.parse()?,
            "modes" => {
                self.modes = value
                    .split(',')
                    .map(|m| m.trim().parse())
                    .collect::<std::result::Result<_, _>>()?
            }
            "seed" => self.seed = num(value)?,
            "runs" => self.runs = num(value)?,
            "epochs" => self.epochs = num(value)?,
            "cost_model" => self.cost_model = Some(base.join(value)),
            "comm_fraction" => self.comm_fraction = num(value)?,
            "overlap" => self.overlap = num(value)?,
            "compute.sec_per_flop" => self.compute.sec_per_flop = num(value)?,
            "compute.sec_per_quant_elem" => self.compute.sec_per_quant_elem = num(value)?,
            "compute.sec_per_dequant_elem" => self.compute.sec_per_dequant_elem = num(value)?,
            other => return Err(format!("unknown key '{other}'")),
        }
        Ok(())
    }

    /// Layer widths `[F, hidden, ..., classes]` for a graph.
    pub fn dims(&self, feature_dim: usize, classes: usize) -> Vec<usize> {
        let mut d = vec![feature_dim];
        d.extend(std::iter::repeat_n(self.hidden, self.layers - 1));
        d.push(classes);
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_parse_and_print() {
        for s in ["fp", "fixed:2", "fixed:8", "uniform", "adaptive"] {
            assert_eq!(s.parse::<PrecisionMode>().unwrap().to_string(), s);
        }
        assert!("fixed:3".parse::<PrecisionMode>().is_err());
        assert!("half".parse::<PrecisionMode>().is_err());
    }

    #[test]
    fn key_value_file_overrides_defaults() {
        let text = "# desk run\nmode = fixed:4\nparts = 2\nlambda = 0.25 # weighted\ndataset = data/cora\nmodes = fp, adaptive\n";
        let cfg = TrainConfig::parse(text, Path::new("/tmp/run.cfg")).unwrap();
        assert_eq!(cfg.mode, PrecisionMode::Fixed(BitWidth::B4));
        assert_eq!(cfg.n_parts, 2);
        assert_eq!(cfg.assigner.lambda, 0.25);
        assert_eq!(cfg.dataset.kind, DatasetKind::File);
        assert_eq!(
            cfg.dataset.path.as_deref(),
            Some(Path::new("/tmp/data/cora"))
        );
        assert_eq!(cfg.modes, vec![PrecisionMode::Fp, PrecisionMode::Adaptive]);
    }

    #[test]
    fn bad_lines_report_their_position() {
        let err = TrainConfig::parse("epochs = 5\nbogus = 1\n", Path::new("x.cfg")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = TrainConfig::parse("lambda = 2\n", Path::new("x.cfg")).unwrap_err();
        assert!(matches!(err, Error::InvalidArgument(_)));
    }

    #[test]
    fn dims_follow_layers() {
        let cfg = TrainConfig {
            layers: 3,
            hidden: 16,
            ..Default::default()
        };
        assert_eq!(cfg.dims(8, 4), vec![8, 16, 16, 4]);
    }
}
