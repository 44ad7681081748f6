//! Nadaraya-Watson regression with a Gaussian product kernel.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;

/// Log-weights below this everywhere send a query to its nearest center.
const UNDERFLOW_LOG: f64 = -700.0;

static FALLBACKS: AtomicUsize = AtomicUsize::new(0);

/// Queries so far, process-wide, that fell back to the nearest center.
pub fn nearest_neighbor_fallbacks() -> usize {
    FALLBACKS.load(Ordering::Relaxed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelRegressor {
    dim: usize,
    centers: Vec<f64>,
    targets: Vec<f64>,
    bandwidth: Vec<f64>,
}

impl KernelRegressor {
    pub fn new(centers: Vec<Vec<f64>>, targets: Vec<f64>, bandwidth: Vec<f64>) -> Result<Self> {
        if centers.is_empty() || centers.len() != targets.len() {
            return Err(Error::Estimation("kernel regression needs matching nonempty centers and targets".into()));
        }
        let dim = centers[0].len();
        if bandwidth.len() != dim || bandwidth.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::Estimation(format!("bandwidths must be positive, got {bandwidth:?}")));
        }
        Ok(Self {
            dim,
            centers: centers.concat(),
            targets,
            bandwidth,
        })
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn center(&self, k: usize) -> &[f64] {
        &self.centers[k * self.dim..(k + 1) * self.dim]
    }

    fn log_weight(&self, x: &[f64], k: usize) -> f64 {
        let c = self.center(k);
        -0.5 * (0..self.dim)
            .map(|j| ((x[j] - c[j]) / self.bandwidth[j]).powi(2))
            .sum::<f64>()
    }

    /// Prediction and, when `grad` is given, its gradient.
    pub fn evaluate(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let logs: Vec<f64> = (0..self.len()).map(|k| self.log_weight(x, k)).collect();
        let (arg, top) = logs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, v)| if *v > acc.1 { (k, *v) } else { acc });
        if top < UNDERFLOW_LOG {
            if FALLBACKS.fetch_add(1, Ordering::Relaxed) == 0 {
                log::warn!("kernel weights underflow at {x:?}; using the nearest training target");
            }
            if let Some(g) = grad {
                g.iter_mut().for_each(|v| *v = 0.0);
            }
            return self.targets[arg];
        }
        let mut total = 0.0;
        let mut weighted = 0.0;
        let weights: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        for (w, y) in weights.iter().zip(&self.targets) {
            total += w;
            weighted += w * y;
        }
        let m = weighted / total;
        if let Some(g) = grad {
            g.iter_mut().for_each(|v| *v = 0.0);
            for (k, w) in weights.iter().enumerate() {
                let c = self.center(k);
                let r = w * (self.targets[k] - m);
                for j in 0..self.dim {
                    g[j] -= r * (x[j] - c[j]) / (self.bandwidth[j] * self.bandwidth[j]);
                }
            }
            g.iter_mut().for_each(|v| *v /= total);
        }
        m
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.evaluate(x, None)
    }

    pub fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        self.evaluate(x, Some(grad));
    }
}

/// Bandwidth for one covariate column.
pub trait BandwidthRule: Send + Sync {
    fn bandwidth(&self, column: &[f64]) -> f64;
}

fn sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return 0.0;
    }
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn iqr(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    crate::asymptotics::quantile(&s, 0.75) - crate::asymptotics::quantile(&s, 0.25)
}

pub struct Silverman;

impl BandwidthRule for Silverman {
    fn bandwidth(&self, column: &[f64]) -> f64 {
        let s = sd(column);
        let r = iqr(column) / 1.34;
        let spread = if r > 0.0 { s.min(r) } else { s };
        0.9 * spread * (column.len() as f64).powf(-0.2)
    }
}

pub struct Scott;

impl BandwidthRule for Scott {
    fn bandwidth(&self, column: &[f64]) -> f64 {
        1.06 * sd(column) * (column.len() as f64).powf(-0.2)
    }
}

pub struct Fixed(pub f64);

impl BandwidthRule for Fixed {
    fn bandwidth(&self, _column: &[f64]) -> f64 {
        self.0
    }
}

pub type BandwidthFactory = fn() -> Box<dyn BandwidthRule>;

pub fn bandwidth_registry() -> Registry<BandwidthFactory> {
    Registry::new("bandwidth rule")
        .register("silverman", (|| Box::new(Silverman) as Box<dyn BandwidthRule>) as BandwidthFactory)
        .register("scott", (|| Box::new(Scott) as Box<dyn BandwidthRule>) as BandwidthFactory)
}

/// A rule name from the registry, or a positive number for a fixed
/// bandwidth.
pub fn parse_bandwidth(spec: &str) -> Result<Box<dyn BandwidthRule>> {
    if let Ok(h) = spec.parse::<f64>() {
        if h > 0.0 && h.is_finite() {
            return Ok(Box::new(Fixed(h)));
        }
        return Err(Error::Config(format!("fixed bandwidth must be positive, got {spec}")));
    }
    Ok((bandwidth_registry().get(spec)?)())
}

/// Per-axis bandwidths for `rows`, floored at `1e-3` of `ranges`.
pub fn bandwidths(rule: &dyn BandwidthRule, rows: &[&[f64]], ranges: &[f64]) -> Vec<f64> {
    (0..ranges.len())
        .map(|j| {
            let column: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            let h = rule.bandwidth(&column);
            let floor = 1e-3 * ranges[j];
            if h.is_finite() && h > floor {
                h
            } else {
                floor
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gradcheck::{fd_error, FD_STEP};
    use crate::rng::stream_rng;
    use rand::Rng;

    fn noisy_line(n: usize, seed: u64) -> KernelRegressor {
        let mut rng = stream_rng(seed, 0);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(0.0..1.0)]).collect();
        let ys: Vec<f64> = xs
            .iter()
            .map(|x| 1.0 + x[0] + rng.random_range(-0.05f64..0.05) * 3f64.sqrt())
            .collect();
        let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let h = bandwidths(&Silverman, &rows, &[1.0]);
        KernelRegressor::new(xs, ys, h).unwrap()
    }

    #[test]
    fn constant_targets_are_reproduced() {
        let k = KernelRegressor::new(vec![vec![0.1], vec![0.5], vec![0.9]], vec![2.0; 3], vec![0.2]).unwrap();
        for x in [0.0, 0.33, 1.0] {
            assert!((k.predict(&[x]) - 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn recovers_a_line() {
        let k = noisy_line(2000, 5);
        for i in 0..=80 {
            let x = 0.1 + 0.01 * i as f64;
            assert!((k.predict(&[x]) - (1.0 + x)).abs() < 0.1);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let k = noisy_line(300, 6);
        let mut g = [0.0];
        for i in 1..20 {
            let x = [i as f64 / 20.0];
            k.gradient(&x, &mut g);
            assert!(fd_error(&|z| k.predict(z), &g, &x, FD_STEP) < 1e-4);
        }
    }

    #[test]
    fn far_queries_fall_back_to_nearest_center() {
        let k = KernelRegressor::new(vec![vec![0.0], vec![1.0]], vec![3.0, 7.0], vec![1e-3]).unwrap();
        let before = nearest_neighbor_fallbacks();
        assert_eq!(k.predict(&[0.8]), 7.0);
        assert!(nearest_neighbor_fallbacks() > before);
    }

    #[test]
    fn tiny_bandwidth_interpolates_centers() {
        let k = KernelRegressor::new(vec![vec![0.2], vec![0.6]], vec![1.0, 5.0], vec![0.01]).unwrap();
        assert!((k.predict(&[0.2]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_floor_and_parsing() {
        let rows: Vec<&[f64]> = vec![&[0.5], &[0.5], &[0.5]];
        assert_eq!(bandwidths(&Silverman, &rows, &[2.0]), vec![2e-3]);
        assert!(parse_bandwidth("scott").is_ok());
        assert!(parse_bandwidth("0.2").is_ok());
        assert!(parse_bandwidth("-1").is_err());
        assert!(parse_bandwidth("epanechnikov").is_err());
    }

    #[test]
    fn permutation_invariant() {
        let a = KernelRegressor::new(vec![vec![0.1], vec![0.4], vec![0.8]], vec![1.0, 2.0, 4.0], vec![0.3]).unwrap();
        let b = KernelRegressor::new(vec![vec![0.8], vec![0.1], vec![0.4]], vec![4.0, 1.0, 2.0], vec![0.3]).unwrap();
        for x in [0.0, 0.5, 0.9] {
            assert!((a.predict(&[x]) - b.predict(&[x])).abs() < 1e-14);
        }
    }
}
