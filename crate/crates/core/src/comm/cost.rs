use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear transfer-time model per ordered device pair: `time = θ·bits + γ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    n: usize,
    /// Seconds per bit, row-major `[src][dst]`.
    theta: Vec<f64>,
    /// Fixed latency in seconds, row-major `[src][dst]`.
    gamma: Vec<f64>,
}

impl CostModel {
    pub fn uniform(n: usize, theta: f64, gamma: f64) -> Result<Self> {
        check_params(theta, gamma)?;
        Ok(CostModel {
            n,
            theta: vec![theta; n * n],
            gamma: vec![gamma; n * n],
        })
    }

    pub fn num_devices(&self) -> usize {
        self.n
    }

    pub fn set(&mut self, src: usize, dst: usize, theta: f64, gamma: f64) -> Result<()> {
        check_params(theta, gamma)?;
        self.check_pair(src, dst)?;
        self.theta[src * self.n + dst] = theta;
        self.gamma[src * self.n + dst] = gamma;
        Ok(())
    }

    #[inline]
    pub fn theta(&self, src: usize, dst: usize) -> f64 {
        self.theta[src * self.n + dst]
    }

    #[inline]
    pub fn gamma(&self, src: usize, dst: usize) -> f64 {
        self.gamma[src * self.n + dst]
    }

    /// Predicted seconds to move `bits` from `src` to `dst`.
    #[inline]
    pub fn transfer_time(&self, src: usize, dst: usize, bits: u64) -> f64 {
        self.theta(src, dst) * bits as f64 + self.gamma(src, dst)
    }

    /// Multiplies every θ and γ by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        CostModel {
            n: self.n,
            theta: self.theta.iter().map(|t| t * factor).collect(),
            gamma: self.gamma.iter().map(|g| g * factor).collect(),
        }
    }

    fn check_pair(&self, src: usize, dst: usize) -> Result<()> {
        if src >= self.n || dst >= self.n {
            return Err(Error::invalid(format!(
                "pair ({src}, {dst}) out of range for {} devices",
                self.n
            )));
        }
        Ok(())
    }

    /// Parses `src dst theta gamma` lines. Unlisted pairs keep zero cost.
    pub fn parse(text: &str, n: usize, origin: &Path) -> Result<Self> {
        let mut model = CostModel::uniform(n, 0.0, 0.0)?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    origin,
                    i + 1,
                    "expected 'src dst theta gamma'",
                ));
            }
            let bad = |e: &dyn std::fmt::Display| Error::parse(origin, i + 1, e.to_string());
            let src: usize = fields[0].parse().map_err(|e| bad(&e))?;
            let dst: usize = fields[1].parse().map_err(|e| bad(&e))?;
            let theta: f64 = fields[2].parse().map_err(|e| bad(&e))?;
            let gamma: f64 = fields[3].parse().map_err(|e| bad(&e))?;
            model.set(src, dst, theta, gamma).map_err(|e| bad(&e))?;
        }
        Ok(model)
    }

    pub fn load(path: &Path, n: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, n, path)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in 0..self.n {
            for d in 0..self.n {
                if s != d {
                    out.push_str(&format!(
                        "{s} {d} {:e} {:e}\n",
                        self.theta(s, d),
                        self.gamma(s, d)
                    ));
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn check_params(theta: f64, gamma: f64) -> Result<()> {
    if !(theta >= 0.0 && gamma >= 0.0 && theta.is_finite() && gamma.is_finite()) {
        return Err(Error::invalid(format!(
            "cost parameters must be finite and non-negative, got θ={theta}, γ={gamma}"
        )));
    }
    Ok(())
}

/// Least-squares fit of `seconds = θ·bits + γ` to probe samples.
///
/// Exact on two points. A negative slope or intercept is clamped to zero and
/// the other parameter refit under that constraint.
pub fn fit_line(samples: &[(u64, f64)]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|&(x, _)| x as f64).sum::<f64>() / n;
    let mean_y = samples.iter().map(|&(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in samples {
        let dx = x as f64 - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::invalid("samples need at least two distinct sizes"));
    }
    let theta = sxy / sxx;
    let gamma = mean_y - theta * mean_x;
    if theta < 0.0 {
        return Ok((0.0, mean_y.max(0.0)));
    }
    if gamma < 0.0 {
        let sx2: f64 = samples.iter().map(|&(x, _)| (x as f64) * (x as f64)).sum();
        let sxy0: f64 = samples.iter().map(|&(x, y)| x as f64 * y).sum();
        return Ok(((sxy0 / sx2).max(0.0), 0.0));
    }
    Ok((theta, gamma))
}

/// Fits every ordered pair from its probe samples.
pub fn fit_cost_model(
    n: usize,
    samples: &BTreeMap<(usize, usize), Vec<(u64, f64)>>,
) -> Result<CostModel> {
    let mut model = CostModel::uniform(n, 0.0, 0.0)?;
    for s in 0..n {
        for d in 0..n {
            if s == d {
                continue;
            }
            let pts = samples
                .get(&(s, d))
                .ok_or_else(|| Error::invalid(format!("no probe samples for pair ({s}, {d})")))?;
            let (theta, gamma) = fit_line(pts)?;
            model.set(s, d, theta, gamma)?;
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_fit_exactly() {
        let (theta, gamma) = fit_line(&[(100, 1.1), (200, 2.1)]).unwrap();
        assert!((theta - 0.01).abs() < 1e-15);
        assert!((gamma - 0.1).abs() < 1e-13);
    }

    #[test]
    fn constant_times_give_zero_slope() {
        assert_eq!(
            fit_line(&[(10, 0.5), (20, 0.5), (40, 0.5)]).unwrap(),
            (0.0, 0.5)
        );
    }

    #[test]
    fn negative_parameters_are_clamped() {
        let (theta, gamma) = fit_line(&[(10, 2.0), (20, 1.0)]).unwrap();
        assert_eq!(theta, 0.0);
        assert_eq!(gamma, 1.5);
        let (theta, gamma) = fit_line(&[(10, 0.1), (20, 0.3)]).unwrap();
        assert_eq!(gamma, 0.0);
        assert!(theta > 0.0);
    }

    #[test]
    fn too_few_samples_are_rejected() {
        assert!(matches!(
            fit_line(&[(1, 1.0)]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(fit_line(&[(5, 1.0), (5, 2.0)]).is_err());
    }

    #[test]
    fn text_format_round_trips() {
        let mut m = CostModel::uniform(3, 1e-9, 1e-5).unwrap();
        m.set(2, 0, 3e-9, 0.0).unwrap();
        let back = CostModel::parse(&m.to_text(), 3, Path::new("mem")).unwrap();
        assert_eq!(back.theta(2, 0), 3e-9);
        assert_eq!(back.gamma(0, 1), 1e-5);
        assert!(CostModel::parse("0 1 -1 0\n", 2, Path::new("mem")).is_err());
        assert!(CostModel::parse("0 1 1\n", 2, Path::new("mem")).is_err());
        assert!(CostModel::parse("0 5 1 1\n", 2, Path::new("mem")).is_err());
    }
}
