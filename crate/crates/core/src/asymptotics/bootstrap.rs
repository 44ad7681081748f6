//! Monte Carlo quantile of the limiting bound.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bound::{BoundEngine, Route};
use super::{build_scores, BootstrapConfig};
use crate::dual::DEFAULT_B_DUAL;
use crate::error::{Error, Result};
use crate::model::{empirical_summaries, CompositeModel, Dataset};
use crate::rng::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub value: f64,
    pub alpha_level: f64,
    pub draws: usize,
    pub cap: f64,
    /// Share of draws whose bound is exactly zero.
    pub zero_mass: f64,
    /// Branch solves settled by sector enumeration: the fixed point did not
    /// converge or converged to a smaller local value.
    pub enumerated: usize,
    /// Branches dropped as degenerate.
    pub dropped: usize,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample: Option<Vec<f64>>,
}

/// Type-7 (linear interpolation) quantile of an ascending sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `1 - alpha_level` quantile of the bound over Gaussian draws of the
/// limiting utility and gap fluctuations. Without `zeta_cap` the limiting
/// multipliers are capped at `sqrt(N)` times the default dual box bound.
pub fn critical_value(
    model: &CompositeModel,
    data: &Dataset,
    alpha_level: f64,
    cfg: &BootstrapConfig,
) -> Result<CriticalValue> {
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha_level}")));
    }
    cfg.validate()?;
    let summ = empirical_summaries(model, data)?;
    let cap = cfg.cap(data.len(), DEFAULT_B_DUAL);
    // Variances at rounding level of the means count as zero.
    let tiny = |var: f64, mean: f64| var <= 1e-20 * mean.abs().max(1.0).powi(2);
    if tiny(summ.var_m, summ.mean_m) && tiny(summ.var_gap, summ.mean_gap) {
        return Ok(CriticalValue {
            value: 0.0,
            alpha_level,
            draws: 0,
            cap,
            zero_mass: 1.0,
            enumerated: 0,
            dropped: 0,
            warnings: vec!["utility and gap have zero sample variance; critical value set to 0".into()],
            sample: None,
        });
    }
    let scores = build_scores(model, data)?;
    let engine = BoundEngine::new(&scores, cfg, cap);

    // Lower-triangular factor of the draw covariance.
    let sd_m = summ.var_m.sqrt();
    let (l21, l22) = if cfg.use_joint_cov && sd_m > 0.0 {
        let l21 = summ.cov_m_gap / sd_m;
        (l21, (summ.var_gap - l21 * l21).max(0.0).sqrt())
    } else {
        (0.0, summ.var_gap.sqrt())
    };

    let results: Vec<(f64, usize, usize)> = (0..cfg.draws)
        .into_par_iter()
        .with_min_len(64)
        .map(|k| {
            let mut rng = stream_rng(cfg.seed, k as u64);
            let z0: f64 = StandardNormal.sample(&mut rng);
            let z1: f64 = StandardNormal.sample(&mut rng);
            let w = [sd_m * z0, l21 * z0 + l22 * z1];
            let r = engine.bound(w);
            let count = |route: Route| [r.plus.route, r.minus.route].iter().filter(|x| **x == route).count();
            (r.value, count(Route::Enumeration), count(Route::Dropped))
        })
        .collect();

    let mut sample: Vec<f64> = results.iter().map(|r| r.0).collect();
    let enumerated = results.iter().map(|r| r.1).sum();
    let dropped: usize = results.iter().map(|r| r.2).sum();
    let zero_mass = sample.iter().filter(|v| **v == 0.0).count() as f64 / sample.len() as f64;
    let mut warnings = Vec::new();
    if dropped > 0 {
        warnings.push(format!("{dropped} branch solves dropped as degenerate (condition number above 1e12)"));
    }
    let kept = cfg.keep_draws.then(|| sample.clone());
    sample.sort_by(f64::total_cmp);
    Ok(CriticalValue {
        value: quantile(&sample, 1.0 - alpha_level),
        alpha_level,
        draws: cfg.draws,
        cap,
        zero_mass,
        enumerated,
        dropped,
        warnings,
        sample: kept,
    })
}
