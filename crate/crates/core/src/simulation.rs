//! Synthetic pricing scenarios, threshold sweeps and the classifier-audit
//! data generator.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{critical_value, BootstrapConfig};
use crate::audit::check_assumptions;
use crate::dual::{solve_dual, BoundaryPolicy, SolverConfig};
use crate::error::{Error, Result};
use crate::model::analytic::{pricing_model, sigmoid};
use crate::model::{CompositeModel, CovariateSpace, Dataset, Sample};
use crate::rng::{derive_seed, stream_rng};

pub const DEFAULT_NOISE: f64 = 0.05;
pub const DEFAULT_GROUP_SHARE: f64 = 0.5;

pub const FIG_THETAS: [f64; 8] = [0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9];
pub const FIG_RS: [f64; 5] = [1.2, 1.6, 2.0, 2.4, 2.8];
pub const FIG_EPSS: [f64; 5] = [0.01, 0.02, 0.03, 0.04, 0.05];

// Substreams, one per generated field.
const STREAM_X: u64 = 0;
const STREAM_S: u64 = 1;
const STREAM_W: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_LABEL: u64 = 4;

/// Draw `n` samples from `model` on its box: uniform covariates,
/// `s ~ Bernoulli(p_1(x))`, `w ~ Bernoulli(pi_s(x))` and
/// `y = m_w(x, s) + U(-noise, noise)` clipped at zero.
pub fn generate(model: &CompositeModel, n: usize, seed: u64, noise: f64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Config(format!("need at least 2 samples, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config(format!("noise must be finite and nonnegative, got {noise}")));
    }
    let space = model.space();
    let d = space.dim();
    let mut rx = stream_rng(seed, STREAM_X);
    let mut rs = stream_rng(seed, STREAM_S);
    let mut rw = stream_rng(seed, STREAM_W);
    let mut rn = stream_rng(seed, STREAM_NOISE);
    let samples = (0..n)
        .map(|_| {
            let u: Vec<f64> = (0..d).map(|_| rx.random::<f64>()).collect();
            let x = space.from_unit(&u);
            let s = (rs.random::<f64>() < model.utility().group_prob(&x, 1)) as u8;
            let w = (rw.random::<f64>() < model.policy().propensity(&x, s as usize)) as u8;
            let e = if noise > 0.0 { rn.random_range(-noise..=noise) } else { 0.0 };
            let y = (model.utility().outcome(w as usize, &x, s as usize) + e).max(0.0);
            Sample { x, s, w, y }
        })
        .collect();
    Dataset::new(samples, space.clone())
}

pub fn scenario_on(model: &CompositeModel, n: usize, seed: u64) -> Result<Dataset> {
    generate(model, n, seed, DEFAULT_NOISE)
}

/// Pricing model at `theta1` with equal group shares and a seeded sample.
pub fn make_scenario(theta1: f64, n: usize, seed: u64) -> Result<(CompositeModel, Dataset)> {
    let model = pricing_model(theta1, DEFAULT_GROUP_SHARE)?;
    let data = scenario_on(&model, n, seed)?;
    Ok((model, data))
}

/// Seed of the dataset for grid index `theta_index` and replication `rep`.
pub fn scenario_seed(seed: u64, theta_index: usize, rep: usize) -> u64 {
    derive_seed(seed, &[theta_index as u64, rep as u64])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub solver: SolverConfig,
    pub bootstrap: BootstrapConfig,
    pub seed: u64,
    pub replications: usize,
    pub noise: f64,
    pub group_share: f64,
    pub timings: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            solver: SolverConfig {
                boundary: BoundaryPolicy::Fixed,
                ..SolverConfig::default()
            },
            bootstrap: BootstrapConfig::default(),
            seed: 42,
            replications: 1,
            noise: DEFAULT_NOISE,
            group_share: DEFAULT_GROUP_SHARE,
            timings: false,
        }
    }
}

/// One sweep cell. Failed cells carry `error` and leave the numbers empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta1: f64,
    pub r: f64,
    pub eps: f64,
    pub rep: usize,
    pub n: usize,
    pub statistic: Option<f64>,
    pub critical_value: Option<f64>,
    pub reject: Option<bool>,
    pub boundary_hit: Option<bool>,
    pub assumptions_ok: Option<bool>,
    pub dual_lambda: Option<f64>,
    pub dual_alpha: Option<f64>,
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime_ms: Option<f64>,
}

impl SweepRow {
    fn failed(theta1: f64, r: f64, eps: f64, rep: usize, n: usize, err: &Error) -> Self {
        Self {
            theta1,
            r,
            eps,
            rep,
            n,
            statistic: None,
            critical_value: None,
            reject: None,
            boundary_hit: None,
            assumptions_ok: None,
            dual_lambda: None,
            dual_alpha: None,
            error: Some(err.to_string()),
            runtime_ms: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn errors(&self) -> usize {
        self.rows.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn rejections(&self) -> usize {
        self.rows.iter().filter(|r| r.reject == Some(true)).count()
    }
}

fn check_grid(name: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config(format!("{name} list is empty")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name} values must be finite")));
    }
    Ok(())
}

/// Run every `(theta1, r, eps)` cell of the grid for each replication.
///
/// Each `(theta1, rep)` pair draws one dataset, shared by all its threshold
/// cells, and one critical value, which does not depend on the thresholds.
/// The dual box is held fixed and assumption checks are recorded, not
/// enforced.
pub fn run_sweep(
    thetas: &[f64],
    rs: &[f64],
    epss: &[f64],
    n: usize,
    alpha_level: f64,
    cfg: &SweepConfig,
) -> Result<SweepResult> {
    check_grid("theta1", thetas)?;
    check_grid("r", rs)?;
    check_grid("eps", epss)?;
    if let Some(t) = thetas.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Config(format!("theta1 must lie in [0, 1], got {t}")));
    }
    if let Some(e) = epss.iter().find(|e| **e < 0.0) {
        return Err(Error::Config(format!("eps must be nonnegative, got {e}")));
    }
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha_level}")));
    }
    if n < 2 || cfg.replications == 0 {
        return Err(Error::Config("need n >= 2 and at least one replication".into()));
    }
    cfg.solver.validate()?;
    cfg.bootstrap.validate()?;

    let jobs: Vec<(usize, usize)> = (0..thetas.len())
        .flat_map(|t| (0..cfg.replications).map(move |rep| (t, rep)))
        .collect();
    let blocks: Vec<Vec<SweepRow>> = jobs
        .par_iter()
        .map(|&(t, rep)| sweep_block(thetas[t], t, rep, rs, epss, n, alpha_level, cfg))
        .collect();
    Ok(SweepResult {
        rows: blocks.into_iter().flatten().collect(),
    })
}

#[allow(clippy::too_many_arguments)]
fn sweep_block(
    theta1: f64,
    theta_index: usize,
    rep: usize,
    rs: &[f64],
    epss: &[f64],
    n: usize,
    alpha_level: f64,
    cfg: &SweepConfig,
) -> Vec<SweepRow> {
    let cells = || rs.iter().flat_map(|r| epss.iter().map(move |e| (*r, *e)));
    let seed = scenario_seed(cfg.seed, theta_index, rep);
    let setup = pricing_model(theta1, cfg.group_share).and_then(|m| {
        let data = generate(&m, n, seed, cfg.noise)?;
        let boot = BootstrapConfig {
            zeta_cap: cfg.bootstrap.zeta_cap.or(Some(cfg.bootstrap.cap(n, cfg.solver.b_dual))),
            ..cfg.bootstrap.clone()
        };
        let started = Instant::now();
        let eta = critical_value(&m, &data, alpha_level, &boot)?;
        Ok((m, data, eta.value, started.elapsed().as_secs_f64() * 1e3))
    });
    let (model, data, eta, eta_ms) = match setup {
        Ok(v) => v,
        Err(e) => return cells().map(|(r, eps)| SweepRow::failed(theta1, r, eps, rep, n, &e)).collect(),
    };
    cells()
        .map(|(r, eps)| {
            let started = Instant::now();
            match solve_dual(&model, &data, r, eps, &cfg.solver) {
                Ok(sol) => {
                    let ok = check_assumptions(&model, &data, r).passed();
                    let ms = started.elapsed().as_secs_f64() * 1e3 + eta_ms;
                    SweepRow {
                        theta1,
                        r,
                        eps,
                        rep,
                        n,
                        statistic: Some(sol.statistic),
                        critical_value: Some(eta),
                        reject: Some(sol.statistic > eta),
                        boundary_hit: Some(sol.boundary_hit),
                        assumptions_ok: Some(ok),
                        dual_lambda: Some(sol.argmax.lambda),
                        dual_alpha: Some(sol.argmax.alpha),
                        error: None,
                        runtime_ms: cfg.timings.then_some(ms),
                    }
                }
                Err(e) => SweepRow::failed(theta1, r, eps, rep, n, &e),
            }
        })
        .collect()
}

/// Long-format plotting table derived from sweep rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub series: String,
    pub theta1: Option<f64>,
    pub r: f64,
    pub eps: f64,
    pub value: Option<f64>,
}

fn distinct(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Statistic, critical value and rejection rate per `(theta1, r, eps)`,
/// averaged over replications, plus the smallest rejecting `theta1` per
/// `(r, eps)`. Error rows are skipped.
pub fn plot_data(rows: &[SweepRow]) -> Vec<PlotRow> {
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let thetas = distinct(ok.iter().map(|r| r.theta1));
    let rs = distinct(ok.iter().map(|r| r.r));
    let epss = distinct(ok.iter().map(|r| r.eps));
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let mut out = Vec::new();
    for &r in &rs {
        for &eps in &epss {
            let mut smallest = None;
            for &theta1 in &thetas {
                let cell: Vec<&&SweepRow> = ok
                    .iter()
                    .filter(|x| x.theta1 == theta1 && x.r == r && x.eps == eps)
                    .collect();
                if cell.is_empty() {
                    continue;
                }
                let stat: Vec<f64> = cell.iter().filter_map(|x| x.statistic).collect();
                let crit: Vec<f64> = cell.iter().filter_map(|x| x.critical_value).collect();
                let rej: Vec<f64> = cell.iter().filter_map(|x| x.reject.map(|b| b as u8 as f64)).collect();
                let rate = mean(&rej);
                if smallest.is_none() && rate.is_some_and(|v| v > 0.5) {
                    smallest = Some(theta1);
                }
                for (series, value) in [("statistic", mean(&stat)), ("critical_value", mean(&crit)), ("rejection_rate", rate)] {
                    out.push(PlotRow {
                        series: series.into(),
                        theta1: Some(theta1),
                        r,
                        eps,
                        value,
                    });
                }
            }
            out.push(PlotRow {
                series: "smallest_rejecting_theta1".into(),
                theta1: None,
                r,
                eps,
                value: smallest,
            });
        }
    }
    out
}

/// Synthetic audit of a binary classifier whose predictions `w` favour
/// group 1, in the ingestion format: `y = 1{w == label}` and the labels
/// are returned alongside.
///
/// Covariates are uniform on `[0, 1]^dim`, `s ~ Bernoulli(0.4 + 0.2 x_1)`,
/// the true label follows `sigmoid(3 (x_1 - 0.5))` and the classifier
/// predicts 1 with probability `sigmoid(4 (x_1 - 0.5) + bias_s + tilt_s x_2)`.
pub fn classifier_audit(n: usize, dim: usize, seed: u64) -> Result<(Dataset, Vec<u8>)> {
    if dim == 0 || n < 2 {
        return Err(Error::Config("need dim >= 1 and n >= 2".into()));
    }
    let mut rx = stream_rng(seed, STREAM_X);
    let mut rs = stream_rng(seed, STREAM_S);
    let mut rw = stream_rng(seed, STREAM_W);
    let mut rl = stream_rng(seed, STREAM_LABEL);
    let mut labels = Vec::with_capacity(n);
    let samples = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rx.random::<f64>()).collect();
            let x2 = if dim > 1 { x[1] } else { 0.5 };
            let s = (rs.random::<f64>() < 0.4 + 0.2 * x[0]) as u8;
            let label = (rl.random::<f64>() < sigmoid(3.0 * (x[0] - 0.5))) as u8;
            let (bias, tilt) = if s == 1 { (0.8, -1.0) } else { (-0.8, 1.0) };
            let w = (rw.random::<f64>() < sigmoid(4.0 * (x[0] - 0.5) + bias + tilt * x2)) as u8;
            labels.push(label);
            Sample {
                x,
                s,
                w,
                y: (w == label) as u8 as f64,
            }
        })
        .collect();
    Ok((Dataset::new(samples, CovariateSpace::unit(dim))?, labels))
}
