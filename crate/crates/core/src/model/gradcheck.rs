//! Central finite-difference checks of the analytic gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::CompositeModel;
use crate::rng::stream_rng;

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-4;

/// Worst discrepancy per gradient, measured as
/// `max_j |g_j - fd_j| / max(1, |fd|_inf)`.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct GradCheck {
    pub probes: usize,
    pub propensity: f64,
    pub outcome: f64,
    pub group_prob: f64,
    pub utility: f64,
    pub worst_point: Option<Vec<f64>>,
}

impl GradCheck {
    pub fn max_error(&self) -> f64 {
        self.propensity
            .max(self.outcome)
            .max(self.group_prob)
            .max(self.utility)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_error() <= tol
    }
}

/// Relative error of an analytic gradient against a central difference of
/// `f` at `x`.
pub fn fd_error(f: &dyn Fn(&[f64]) -> f64, analytic: &[f64], x: &[f64], h: f64) -> f64 {
    let mut xp = x.to_vec();
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 1.0;
    let mut fd = vec![0.0; x.len()];
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let up = f(&xp);
        xp[j] = x[j] - h;
        let down = f(&xp);
        xp[j] = x[j];
        fd[j] = (up - down) / (2.0 * h);
        scale = scale.max(fd[j].abs());
    }
    for j in 0..x.len() {
        let e = (analytic[j] - fd[j]).abs();
        worst = worst.max(if e.is_nan() { f64::INFINITY } else { e });
    }
    worst / scale
}

/// Check every component gradient of `model` at `probes` uniform points in
/// its box. Probes are pulled in by `h` from the faces so the stencil stays
/// inside.
pub fn check_model(model: &CompositeModel, probes: usize, seed: u64) -> GradCheck {
    let d = model.dim();
    let space = model.space();
    let mut rng = stream_rng(seed, 0);
    let mut report = GradCheck {
        probes,
        ..GradCheck::default()
    };
    let mut worst = 0.0;
    let mut g = vec![0.0; d];
    let pol = model.policy();
    let util = model.utility();
    for _ in 0..probes {
        let x: Vec<f64> = (0..d)
            .map(|j| {
                let h = FD_STEP * space.width(j).max(1.0);
                rng.random_range(space.lower()[j] + h..=space.upper()[j] - h)
            })
            .collect();
        for a in 0..2 {
            pol.propensity_grad(&x, a, &mut g);
            let e = fd_error(&|z| pol.propensity(z, a), &g, &x, FD_STEP);
            report.propensity = report.propensity.max(e);
            for w in 0..2 {
                util.outcome_grad(w, &x, a, &mut g);
                let e = fd_error(&|z| util.outcome(w, z, a), &g, &x, FD_STEP);
                report.outcome = report.outcome.max(e);
            }
            util.group_prob_grad(&x, a, &mut g);
            let e = fd_error(&|z| util.group_prob(z, a), &g, &x, FD_STEP);
            report.group_prob = report.group_prob.max(e);
        }
        model.utility_grad_at(&x, &mut g);
        let e = fd_error(&|z| model.utility_at(z), &g, &x, FD_STEP);
        report.utility = report.utility.max(e);
        if report.max_error() > worst {
            worst = report.max_error();
            report.worst_point = Some(x);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::super::analytic::{logistic_benchmark, pricing_model};
    use super::*;

    #[test]
    fn analytic_families_pass() {
        for model in [pricing_model(0.7, 0.5).unwrap(), logistic_benchmark()] {
            let r = check_model(&model, 100, 3);
            assert!(r.passes(GRAD_TOL), "{r:?}");
        }
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = [0.3];
        let err = fd_error(&|z| z[0] * z[0], &[0.0], &x, FD_STEP);
        assert!(err > 0.5);
    }
}
