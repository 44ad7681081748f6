//! Fitted propensity, group-share and outcome models for observational data.
//!
//! Propensities are ridge logistic fits per group, or kernel interpolations
//! of externally supplied score columns. Group shares are a ridge logistic
//! fit of `s` on `x`. Conditional mean outcomes are Nadaraya-Watson
//! regressions per (treatment, group) cell.

pub mod kernel;
pub mod logistic;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CompositeModel, CovariateSpace, Dataset, PolicyModel, UtilityModel};

pub use kernel::{bandwidth_registry, nearest_neighbor_fallbacks, parse_bandwidth, BandwidthRule, KernelRegressor};
pub use logistic::{fit_logistic, LogisticFit, Standardizer};

/// Relative step for finite-difference gradients of score interpolants.
const SCORE_FD_STEP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimationConfig {
    /// Ridge weight for the propensity fits.
    pub reg: f64,
    /// Ridge weight for the group-share fit; defaults to `reg`.
    pub group_reg: Option<f64>,
    /// `silverman`, `scott`, or a positive fixed bandwidth.
    pub bandwidth: String,
    /// Use `score_0`/`score_1` columns as propensities when present.
    pub use_scores: bool,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            reg: 0.01,
            group_reg: None,
            bandwidth: "silverman".into(),
            use_scores: true,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("reg", Some(self.reg)), ("group_reg", self.group_reg)] {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
                }
            }
        }
        parse_bandwidth(&self.bandwidth).map(|_| ())
    }
}

fn rows_of(data: &Dataset, keep: impl Fn(usize) -> bool) -> Vec<&[f64]> {
    data.samples()
        .iter()
        .enumerate()
        .filter(|(i, _)| keep(*i))
        .map(|(_, s)| s.x.as_slice())
        .collect()
}

fn check_classes(labels: &[f64], group: usize) -> Result<()> {
    let ones = labels.iter().filter(|y| **y == 1.0).count();
    if ones == 0 || ones == labels.len() {
        return Err(Error::Separation { group });
    }
    Ok(())
}

/// Logistic propensity per group, `pi_a(x) = sigmoid(w_a . x + b_a)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticPropensity {
    pub groups: [LogisticFit; 2],
}

impl PolicyModel for LogisticPropensity {
    fn dim(&self) -> usize {
        self.groups[0].dim()
    }

    fn propensity(&self, x: &[f64], group: usize) -> f64 {
        self.groups[group].predict(x)
    }

    fn propensity_grad(&self, x: &[f64], group: usize, grad: &mut [f64]) {
        self.groups[group].gradient(x, grad)
    }
}

/// Fit one ridge logistic regression of `w` on `x` within each group. Both
/// groups share one standardization computed over the whole sample.
pub fn fit_propensity(data: &Dataset, reg: f64) -> Result<LogisticPropensity> {
    let st = Standardizer::fit(data.samples().iter().map(|s| s.x.as_slice()));
    let fit_group = |a: usize| -> Result<LogisticFit> {
        let rows = rows_of(data, |i| data.samples()[i].group() == a);
        let labels: Vec<f64> = data
            .samples()
            .iter()
            .filter(|s| s.group() == a)
            .map(|s| s.w as f64)
            .collect();
        check_classes(&labels, a)?;
        fit_logistic(&rows, &labels, reg, st.clone(), None)
    };
    Ok(LogisticPropensity {
        groups: [fit_group(0)?, fit_group(1)?],
    })
}

/// Ridge logistic regression of `s` on `x`; `p_1 = sigmoid(.)`, `p_0 = 1 - p_1`.
pub fn fit_group_model(data: &Dataset, reg: f64) -> Result<LogisticFit> {
    let rows = rows_of(data, |_| true);
    let labels: Vec<f64> = data.samples().iter().map(|s| s.s as f64).collect();
    if labels.iter().all(|y| *y == labels[0]) {
        return Err(Error::Separation { group: labels[0] as usize });
    }
    let st = Standardizer::fit(rows.iter().copied());
    fit_logistic(&rows, &labels, reg, st, None)
}

/// Propensities interpolated from per-sample score columns by kernel
/// regression, with central-difference gradients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorePropensity {
    pub groups: [KernelRegressor; 2],
    pub fd_step: Vec<f64>,
}

impl PolicyModel for ScorePropensity {
    fn dim(&self) -> usize {
        self.fd_step.len()
    }

    fn propensity(&self, x: &[f64], group: usize) -> f64 {
        self.groups[group].predict(x).clamp(0.0, 1.0)
    }

    fn propensity_grad(&self, x: &[f64], group: usize, grad: &mut [f64]) {
        let mut z = x.to_vec();
        for (j, g) in grad.iter_mut().enumerate() {
            let h = self.fd_step[j];
            z[j] = x[j] + h;
            let up = self.propensity(&z, group);
            z[j] = x[j] - h;
            let down = self.propensity(&z, group);
            z[j] = x[j];
            *g = (up - down) / (2.0 * h);
        }
    }
}

pub fn fit_score_propensity(data: &Dataset, scores: &[[f64; 2]], rule: &dyn BandwidthRule) -> Result<ScorePropensity> {
    if scores.len() != data.len() {
        return Err(Error::Estimation(format!(
            "{} score rows for {} samples",
            scores.len(),
            data.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.iter().any(|v| !(0.0..=1.0).contains(v))) {
        return Err(Error::Estimation(format!("score at row {} lies outside [0, 1]", i + 1)));
    }
    let space = data.space();
    let ranges: Vec<f64> = (0..space.dim()).map(|j| space.width(j)).collect();
    let rows = rows_of(data, |_| true);
    let h = kernel::bandwidths(rule, &rows, &ranges);
    let centers: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    let fit = |a: usize| KernelRegressor::new(centers.clone(), scores.iter().map(|s| s[a]).collect(), h.clone());
    Ok(ScorePropensity {
        groups: [fit(0)?, fit(1)?],
        fd_step: ranges.iter().map(|r| SCORE_FD_STEP * r).collect(),
    })
}

/// Kernel outcome regressions per (treatment, group) cell and a logistic
/// group-share model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedUtility {
    /// Indexed `[treatment][group]`.
    pub cells: [[KernelRegressor; 2]; 2],
    pub group: LogisticFit,
}

impl UtilityModel for FittedUtility {
    fn dim(&self) -> usize {
        self.group.dim()
    }

    fn outcome(&self, treatment: usize, x: &[f64], group: usize) -> f64 {
        self.cells[treatment][group].predict(x)
    }

    fn outcome_grad(&self, treatment: usize, x: &[f64], group: usize, grad: &mut [f64]) {
        self.cells[treatment][group].gradient(x, grad)
    }

    fn group_prob(&self, x: &[f64], group: usize) -> f64 {
        let p1 = self.group.predict(x);
        if group == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    fn group_prob_grad(&self, x: &[f64], group: usize, grad: &mut [f64]) {
        self.group.gradient(x, grad);
        if group == 0 {
            grad.iter_mut().for_each(|g| *g = -*g);
        }
    }
}

/// Nadaraya-Watson regression of `y` on `x` in each (treatment, group) cell.
pub fn fit_outcome(data: &Dataset, rule: &dyn BandwidthRule) -> Result<[[KernelRegressor; 2]; 2]> {
    let space = data.space();
    let ranges: Vec<f64> = (0..space.dim()).map(|j| space.width(j)).collect();
    let cell = |w: usize, a: usize| -> Result<KernelRegressor> {
        let members: Vec<_> = data
            .samples()
            .iter()
            .filter(|s| s.treatment() == w && s.group() == a)
            .collect();
        if members.is_empty() {
            return Err(Error::EmptyCell { treatment: w, group: a });
        }
        let rows: Vec<&[f64]> = members.iter().map(|s| s.x.as_slice()).collect();
        let h = kernel::bandwidths(rule, &rows, &ranges);
        KernelRegressor::new(
            members.iter().map(|s| s.x.clone()).collect(),
            members.iter().map(|s| s.y).collect(),
            h,
        )
    };
    Ok([[cell(0, 0)?, cell(0, 1)?], [cell(1, 0)?, cell(1, 1)?]])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FittedPolicy {
    Logistic(LogisticPropensity),
    Scores(ScorePropensity),
}

impl FittedPolicy {
    fn as_model(&self) -> Arc<dyn PolicyModel> {
        match self {
            Self::Logistic(p) => Arc::new(p.clone()),
            Self::Scores(p) => Arc::new(p.clone()),
        }
    }
}

/// Everything estimated from one dataset; serializable for reuse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedModels {
    pub config: EstimationConfig,
    pub space: CovariateSpace,
    pub policy: FittedPolicy,
    pub utility: FittedUtility,
}

impl FittedModels {
    pub fn composite(&self) -> Result<CompositeModel> {
        CompositeModel::new(self.space.clone(), self.policy.as_model(), Arc::new(self.utility.clone()))
    }

    pub fn diagnostics(&self) -> FitDiagnostics {
        let summarize = |f: &LogisticFit| {
            let (slope, bias) = f.original_weights();
            LogisticSummary {
                slope,
                bias,
                weight_norm: f.weights.iter().map(|w| w * w).sum::<f64>().sqrt(),
                iterations: f.iterations,
                grad_norm: f.grad_norm,
                objective: f.objective,
            }
        };
        let propensity = match &self.policy {
            FittedPolicy::Logistic(p) => Some([summarize(&p.groups[0]), summarize(&p.groups[1])]),
            FittedPolicy::Scores(_) => None,
        };
        let cells = &self.utility.cells;
        FitDiagnostics {
            propensity,
            group: summarize(&self.utility.group),
            outcome_bandwidths: [
                [cells[0][0].bandwidth().to_vec(), cells[0][1].bandwidth().to_vec()],
                [cells[1][0].bandwidth().to_vec(), cells[1][1].bandwidth().to_vec()],
            ],
            cell_sizes: [[cells[0][0].len(), cells[0][1].len()], [cells[1][0].len(), cells[1][1].len()]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticSummary {
    pub slope: Vec<f64>,
    pub bias: f64,
    /// Norm of the standardized weights including the bias.
    pub weight_norm: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub propensity: Option<[LogisticSummary; 2]>,
    pub group: LogisticSummary,
    /// Indexed `[treatment][group]`.
    pub outcome_bandwidths: [[Vec<f64>; 2]; 2],
    pub cell_sizes: [[usize; 2]; 2],
}

/// Fit every component. `scores` holds per-sample `(score_0, score_1)`
/// propensities and replaces the logistic fit when `cfg.use_scores` is set.
pub fn fit_models(data: &Dataset, scores: Option<&[[f64; 2]]>, cfg: &EstimationConfig) -> Result<FittedModels> {
    cfg.validate()?;
    let rule = parse_bandwidth(&cfg.bandwidth)?;
    let policy = match scores {
        Some(s) if cfg.use_scores => FittedPolicy::Scores(fit_score_propensity(data, s, rule.as_ref())?),
        _ => FittedPolicy::Logistic(fit_propensity(data, cfg.reg)?),
    };
    let group = fit_group_model(data, cfg.group_reg.unwrap_or(cfg.reg))?;
    let cells = fit_outcome(data, rule.as_ref())?;
    Ok(FittedModels {
        config: cfg.clone(),
        space: data.space().clone(),
        policy,
        utility: FittedUtility { cells, group },
    })
}
