//! Propensity and utility models, the covariate box and the composite
//! utility `M(x)`.

pub mod analytic;
pub mod gradcheck;

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned covariate box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovariateSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl CovariateSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InvalidSpace("dimension must be at least 1".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::InvalidSpace(format!(
                "lower has {} entries but upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (j, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidSpace(format!(
                    "axis {j}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    /// Bounding box of `points` padded on each side by `pad` times the range.
    /// Degenerate axes get a unit-scale pad so the box stays nonempty.
    pub fn bounding<'a>(points: impl IntoIterator<Item = &'a [f64]>, pad: f64) -> Result<Self> {
        let mut lower: Vec<f64> = Vec::new();
        let mut upper: Vec<f64> = Vec::new();
        for x in points {
            if lower.is_empty() {
                lower = x.to_vec();
                upper = x.to_vec();
                continue;
            }
            if x.len() != lower.len() {
                return Err(Error::InvalidSpace("points have mixed dimensions".into()));
            }
            for j in 0..x.len() {
                lower[j] = lower[j].min(x[j]);
                upper[j] = upper[j].max(x[j]);
            }
        }
        for j in 0..lower.len() {
            let range = upper[j] - lower[j];
            let margin = if range > 0.0 {
                pad * range
            } else {
                pad * lower[j].abs().max(1.0)
            };
            lower[j] -= margin;
            upper[j] += margin;
        }
        Self::new(lower, upper)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, j: usize) -> f64 {
        self.upper[j] - self.lower[j]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { point: x.to_vec() })
        }
    }

    /// Clamp `x` into the box in place.
    pub fn project(&self, x: &mut [f64]) {
        for (j, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[j], self.upper[j]);
        }
    }

    /// Map a point of the unit cube onto the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(j, t)| self.lower[j] + t * self.width(j))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub s: u8,
    pub w: u8,
    pub y: f64,
}

impl Sample {
    pub fn group(&self) -> usize {
        self.s as usize
    }

    pub fn treatment(&self) -> usize {
        self.w as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    space: CovariateSpace,
    outcome_bound: Option<f64>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, space: CovariateSpace) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidDataset("no samples".into()));
        }
        let mut seen = [false; 2];
        for (i, smp) in samples.iter().enumerate() {
            if smp.x.len() != space.dim() {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} has {} covariates, box has {}",
                    smp.x.len(),
                    space.dim()
                )));
            }
            if smp.s > 1 || smp.w > 1 {
                return Err(Error::InvalidDataset(format!("sample {i}: s and w must be 0 or 1")));
            }
            if !smp.y.is_finite() || smp.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidDataset(format!("sample {i} has non-finite values")));
            }
            if !space.contains(&smp.x) {
                return Err(Error::InvalidDataset(format!(
                    "sample {i} at {:?} lies outside the covariate box",
                    smp.x
                )));
            }
            seen[smp.group()] = true;
        }
        if !seen[0] || !seen[1] {
            return Err(Error::InvalidDataset("both groups s=0 and s=1 must be present".into()));
        }
        Ok(Self {
            samples,
            space,
            outcome_bound: None,
        })
    }

    /// Dataset whose box is the padded bounding box of its covariates.
    pub fn with_padded_box(samples: Vec<Sample>, pad: f64) -> Result<Self> {
        let space = CovariateSpace::bounding(samples.iter().map(|s| s.x.as_slice()), pad)?;
        Self::new(samples, space)
    }

    pub fn with_outcome_bound(mut self, bound: Option<f64>) -> Self {
        self.outcome_bound = bound;
        self
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn space(&self) -> &CovariateSpace {
        &self.space
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Configured outcome bound, or the empirical max of `y`.
    pub fn outcome_bound(&self) -> f64 {
        self.outcome_bound.unwrap_or_else(|| {
            self.samples
                .iter()
                .map(|s| s.y)
                .fold(f64::NEG_INFINITY, f64::max)
        })
    }
}

/// Treatment propensities `pi_a(x)` for both groups.
pub trait PolicyModel: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn propensity(&self, x: &[f64], group: usize) -> f64;
    fn propensity_grad(&self, x: &[f64], group: usize, grad: &mut [f64]);
}

/// Conditional mean outcomes `m_w(x, a)` and group probabilities `p_a(x)`.
pub trait UtilityModel: Send + Sync + Debug {
    fn dim(&self) -> usize;
    fn outcome(&self, treatment: usize, x: &[f64], group: usize) -> f64;
    fn outcome_grad(&self, treatment: usize, x: &[f64], group: usize, grad: &mut [f64]);
    fn group_prob(&self, x: &[f64], group: usize) -> f64;
    fn group_prob_grad(&self, x: &[f64], group: usize, grad: &mut [f64]);
}

/// Utility and signed gap at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointValue {
    pub utility: f64,
    /// `pi_1(x) - pi_0(x)`
    pub diff: f64,
}

/// Policy and utility bundled over a covariate box.
#[derive(Clone, Debug)]
pub struct CompositeModel {
    space: CovariateSpace,
    policy: Arc<dyn PolicyModel>,
    utility: Arc<dyn UtilityModel>,
}

impl CompositeModel {
    pub fn new(
        space: CovariateSpace,
        policy: Arc<dyn PolicyModel>,
        utility: Arc<dyn UtilityModel>,
    ) -> Result<Self> {
        if policy.dim() != space.dim() || utility.dim() != space.dim() {
            return Err(Error::InvalidSpace(format!(
                "box has dimension {} but policy/utility expect {}/{}",
                space.dim(),
                policy.dim(),
                utility.dim()
            )));
        }
        Ok(Self {
            space,
            policy,
            utility,
        })
    }

    pub fn space(&self) -> &CovariateSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn policy(&self) -> &dyn PolicyModel {
        self.policy.as_ref()
    }

    pub fn utility(&self) -> &dyn UtilityModel {
        self.utility.as_ref()
    }

    /// Same models over a different box.
    pub fn with_space(&self, space: CovariateSpace) -> Result<Self> {
        Self::new(space, self.policy.clone(), self.utility.clone())
    }

    pub fn eval_m(&self, x: &[f64]) -> Result<f64> {
        self.space.check(x)?;
        finite(self.utility_at(x), x)
    }

    pub fn eval_grad_m(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.space.check(x)?;
        let mut g = vec![0.0; self.dim()];
        self.utility_grad_at(x, &mut g);
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(Error::NonFinite { point: x.to_vec() })
        }
    }

    /// `|pi_1(x) - pi_0(x)|`
    pub fn fairness_gap(&self, x: &[f64]) -> Result<f64> {
        self.space.check(x)?;
        finite(self.diff_at(x).abs(), x)
    }

    /// Gradient of `pi_1 - pi_0`.
    pub fn diff_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.space.check(x)?;
        let mut g = vec![0.0; self.dim()];
        self.diff_grad_at(x, &mut g);
        if g.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(Error::NonFinite { point: x.to_vec() })
        }
    }

    /// Unchecked composite utility.
    pub fn utility_at(&self, x: &[f64]) -> f64 {
        let u = self.utility.as_ref();
        let p = self.policy.as_ref();
        let mut total = 0.0;
        for a in 0..2 {
            let pi = p.propensity(x, a);
            let m1 = u.outcome(1, x, a);
            let m0 = u.outcome(0, x, a);
            total += u.group_prob(x, a) * (m1 * pi + m0 * (1.0 - pi));
        }
        total
    }

    /// Unchecked `pi_1(x) - pi_0(x)`.
    pub fn diff_at(&self, x: &[f64]) -> f64 {
        self.policy.propensity(x, 1) - self.policy.propensity(x, 0)
    }

    pub fn value_at(&self, x: &[f64]) -> PointValue {
        PointValue {
            utility: self.utility_at(x),
            diff: self.diff_at(x),
        }
    }

    /// Unchecked gradient of `M`, written into `grad`.
    pub fn utility_grad_at(&self, x: &[f64], grad: &mut [f64]) {
        let d = self.dim();
        let u = self.utility.as_ref();
        let p = self.policy.as_ref();
        with_scratch(4 * d, |buf| {
            let (dpi, rest) = buf.split_at_mut(d);
            let (dm1, rest) = rest.split_at_mut(d);
            let (dm0, dp) = rest.split_at_mut(d);
            grad.iter_mut().for_each(|g| *g = 0.0);
            for a in 0..2 {
                let pi = p.propensity(x, a);
                let m1 = u.outcome(1, x, a);
                let m0 = u.outcome(0, x, a);
                let pa = u.group_prob(x, a);
                p.propensity_grad(x, a, dpi);
                u.outcome_grad(1, x, a, dm1);
                u.outcome_grad(0, x, a, dm0);
                u.group_prob_grad(x, a, dp);
                let inner = m1 * pi + m0 * (1.0 - pi);
                for j in 0..d {
                    let d_inner = dm1[j] * pi + m1 * dpi[j] + dm0[j] * (1.0 - pi) - m0 * dpi[j];
                    grad[j] += dp[j] * inner + pa * d_inner;
                }
            }
        });
    }

    /// Unchecked gradient of `pi_1 - pi_0`, written into `grad`.
    pub fn diff_grad_at(&self, x: &[f64], grad: &mut [f64]) {
        with_scratch(self.dim(), |g0| {
            self.policy.propensity_grad(x, 1, grad);
            self.policy.propensity_grad(x, 0, g0);
            for (g, h) in grad.iter_mut().zip(g0.iter()) {
                *g -= h;
            }
        });
    }
}

/// Runs `f` on a zeroed buffer, on the stack when it is small.
pub(crate) fn with_scratch<R>(len: usize, f: impl FnOnce(&mut [f64]) -> R) -> R {
    const STACK: usize = 64;
    if len <= STACK {
        let mut buf = [0.0; STACK];
        f(&mut buf[..len])
    } else {
        f(&mut vec![0.0; len])
    }
}

fn finite(v: f64, x: &[f64]) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { point: x.to_vec() })
    }
}

/// Empirical plug-ins for the utility and fairness constraints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summaries {
    pub mean_m: f64,
    pub var_m: f64,
    pub mean_gap: f64,
    pub var_gap: f64,
    /// Sample covariance of `M(x_i)` and `|pi_1 - pi_0|(x_i)`.
    pub cov_m_gap: f64,
}

pub fn empirical_summaries(model: &CompositeModel, data: &Dataset) -> Result<Summaries> {
    let n = data.len();
    if n < 2 {
        return Err(Error::TooFewSamples(n));
    }
    let mut ms = Vec::with_capacity(n);
    let mut gaps = Vec::with_capacity(n);
    for s in data.samples() {
        ms.push(model.eval_m(&s.x)?);
        gaps.push(model.fairness_gap(&s.x)?);
    }
    let nf = n as f64;
    let mean_m = ms.iter().sum::<f64>() / nf;
    let mean_gap = gaps.iter().sum::<f64>() / nf;
    let mut var_m = 0.0;
    let mut var_gap = 0.0;
    let mut cov = 0.0;
    for (m, g) in ms.iter().zip(&gaps) {
        var_m += (m - mean_m) * (m - mean_m);
        var_gap += (g - mean_gap) * (g - mean_gap);
        cov += (m - mean_m) * (g - mean_gap);
    }
    Ok(Summaries {
        mean_m,
        var_m: var_m / (nf - 1.0),
        mean_gap,
        var_gap: var_gap / (nf - 1.0),
        cov_m_gap: cov / (nf - 1.0),
    })
}

/// Integral over thresholds of the gap between the groups' empirical score
/// exceedance curves, by a left Riemann sum with `steps` cells on `[0, 1]`.
pub fn threshold_discrepancy(model: &CompositeModel, data: &Dataset, steps: usize) -> f64 {
    let n = data.len() as f64;
    let mut p0: Vec<f64> = data.samples().iter().map(|s| model.policy().propensity(&s.x, 0)).collect();
    let mut p1: Vec<f64> = data.samples().iter().map(|s| model.policy().propensity(&s.x, 1)).collect();
    p0.sort_by(f64::total_cmp);
    p1.sort_by(f64::total_cmp);
    let exceed = |sorted: &[f64], t: f64| (sorted.len() - sorted.partition_point(|v| *v <= t)) as f64 / n;
    let h = 1.0 / steps as f64;
    (0..steps)
        .map(|k| {
            let t = k as f64 * h;
            (exceed(&p1, t) - exceed(&p0, t)).abs() * h
        })
        .sum()
}
