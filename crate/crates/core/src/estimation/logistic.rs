//! Ridge-penalized logistic regression by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::analytic::sigmoid;

pub const MAX_ITERS: usize = 5000;
pub const GRAD_TOL: f64 = 1e-8;

/// Per-covariate centering and scaling applied before fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len() as f64;
        let mut center = vec![0.0; d];
        for r in &rows {
            for j in 0..d {
                center[j] += r[j] / n;
            }
        }
        let mut scale = vec![0.0; d];
        for r in &rows {
            for j in 0..d {
                scale[j] += (r[j] - center[j]).powi(2) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Self { center, scale }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            center: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = (x[j] - self.center[j]) / self.scale[j];
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Weights on the standardized covariates, bias last.
    pub weights: Vec<f64>,
    pub reg: f64,
    pub standardizer: Standardizer,
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective: f64,
}

impl LogisticFit {
    pub fn dim(&self) -> usize {
        self.weights.len() - 1
    }

    fn logit(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut z = self.weights[d];
        for j in 0..d {
            z += self.weights[j] * (x[j] - self.standardizer.center[j]) / self.standardizer.scale[j];
        }
        z
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Gradient of the predicted probability in original units.
    pub fn gradient(&self, x: &[f64], grad: &mut [f64]) {
        let p = self.predict(x);
        let s = p * (1.0 - p);
        for (j, g) in grad.iter_mut().enumerate() {
            *g = s * self.weights[j] / self.standardizer.scale[j];
        }
    }

    /// Slope and intercept in original covariate units.
    pub fn original_weights(&self) -> (Vec<f64>, f64) {
        let d = self.dim();
        let slope: Vec<f64> = (0..d).map(|j| self.weights[j] / self.standardizer.scale[j]).collect();
        let bias = self.weights[d] - (0..d).map(|j| slope[j] * self.standardizer.center[j]).sum::<f64>();
        (slope, bias)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

struct Problem {
    /// Standardized rows with a trailing 1.
    rows: Vec<Vec<f64>>,
    labels: Vec<f64>,
    reg: f64,
}

impl Problem {
    fn objective(&self, w: &[f64]) -> f64 {
        let n = self.rows.len() as f64;
        let loss: f64 = self
            .rows
            .iter()
            .zip(&self.labels)
            .map(|(r, y)| {
                let z: f64 = r.iter().zip(w).map(|(a, b)| a * b).sum();
                softplus(z) - y * z
            })
            .sum::<f64>()
            / n;
        loss + 0.5 * self.reg * w.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, w: &[f64], g: &mut [f64]) {
        let n = self.rows.len() as f64;
        g.iter_mut().zip(w).for_each(|(gi, wi)| *gi = self.reg * wi);
        for (r, y) in self.rows.iter().zip(&self.labels) {
            let z: f64 = r.iter().zip(w).map(|(a, b)| a * b).sum();
            let e = (sigmoid(z) - y) / n;
            for (gi, ri) in g.iter_mut().zip(r) {
                *gi += e * ri;
            }
        }
    }
}

/// Fit `P(y = 1 | x) = sigmoid(w . z(x) + b)` where `z` standardizes with
/// `standardizer`, minimizing mean log-loss plus `reg / 2 |(w, b)|^2`.
pub fn fit_logistic(
    rows: &[&[f64]],
    labels: &[f64],
    reg: f64,
    standardizer: Standardizer,
    init: Option<Vec<f64>>,
) -> Result<LogisticFit> {
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(Error::Estimation("logistic fit needs matching nonempty rows and labels".into()));
    }
    if !(reg >= 0.0 && reg.is_finite()) {
        return Err(Error::Config(format!("regularization must be finite and nonnegative, got {reg}")));
    }
    let d = rows[0].len();
    let problem = Problem {
        rows: rows
            .iter()
            .map(|x| {
                let mut r = vec![1.0; d + 1];
                standardizer.apply_into(x, &mut r[..d]);
                r
            })
            .collect(),
        labels: labels.to_vec(),
        reg,
    };
    let mut w = init.unwrap_or_else(|| vec![0.0; d + 1]);
    let mut f = problem.objective(&w);
    let mut g = vec![0.0; d + 1];
    let mut trial = vec![0.0; d + 1];
    let mut step: f64 = 1.0;
    let mut iterations = 0;
    let mut gnorm;
    loop {
        problem.gradient(&w, &mut g);
        gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < GRAD_TOL || iterations == MAX_ITERS {
            break;
        }
        iterations += 1;
        let g2 = gnorm * gnorm;
        let mut t = (step * 2.0).min(1e6);
        loop {
            for j in 0..=d {
                trial[j] = w[j] - t * g[j];
            }
            let ft = problem.objective(&trial);
            if ft <= f - 0.5 * t * g2 {
                w.copy_from_slice(&trial);
                f = ft;
                step = t;
                break;
            }
            t *= 0.5;
            if t < 1e-16 {
                break;
            }
        }
        if t < 1e-16 {
            break;
        }
    }
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Estimation("logistic weights diverged".into()));
    }
    Ok(LogisticFit {
        weights: w,
        reg,
        standardizer,
        iterations,
        grad_norm: gnorm,
        objective: f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn sample(n: usize, slope: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = stream_rng(seed, 0);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let x: f64 = rng.random_range(-2.0..2.0);
            let p = sigmoid(slope * x - 1.0);
            xs.push(vec![x]);
            ys.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
        }
        (xs, ys)
    }

    fn fit(xs: &[Vec<f64>], ys: &[f64], reg: f64) -> LogisticFit {
        let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let st = Standardizer::fit(rows.iter().copied());
        fit_logistic(&rows, ys, reg, st, None).unwrap()
    }

    #[test]
    fn recovers_slope() {
        let (xs, ys) = sample(5000, 2.0, 11);
        let f = fit(&xs, &ys, 1e-4);
        let (slope, bias) = f.original_weights();
        assert!((slope[0] - 2.0).abs() < 0.15, "{slope:?}");
        assert!((bias + 1.0).abs() < 0.2, "{bias}");
        assert!(f.grad_norm < GRAD_TOL);
    }

    #[test]
    fn heavy_shrinkage_gives_one_half() {
        let (xs, ys) = sample(300, 2.0, 1);
        let f = fit(&xs, &ys, 1e8);
        assert!(f.weights.iter().all(|w| w.abs() < 1e-6));
        assert!((f.predict(&[1.3]) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn separable_data_beats_null_model() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 40.0]).collect();
        let ys: Vec<f64> = (0..40).map(|i| if i >= 20 { 1.0 } else { 0.0 }).collect();
        let f = fit(&xs, &ys, 0.1);
        assert!(f.objective <= std::f64::consts::LN_2);
    }

    #[test]
    fn starting_point_does_not_matter() {
        let (xs, ys) = sample(400, 1.5, 3);
        let rows: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
        let st = Standardizer::fit(rows.iter().copied());
        let a = fit_logistic(&rows, &ys, 0.05, st.clone(), Some(vec![3.0, -2.0])).unwrap();
        let b = fit_logistic(&rows, &ys, 0.05, st, Some(vec![-4.0, 5.0])).unwrap();
        for (u, v) in a.weights.iter().zip(&b.weights) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn larger_penalty_shrinks_weights() {
        let (xs, ys) = sample(400, 1.5, 4);
        let norms: Vec<f64> = [0.001, 0.01, 0.1, 1.0]
            .iter()
            .map(|r| fit(&xs, &ys, *r).weights.iter().map(|w| w * w).sum::<f64>())
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    }
}
