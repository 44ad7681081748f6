//! Projection distance through the Lagrangian dual
//! `sup_{lambda, alpha >= 0} lambda r - alpha eps + mean_i gamma_i(lambda, alpha)`.

pub mod inner;
pub mod outer;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CompositeModel, Dataset};
use crate::registry::Registry;

pub use inner::{InnerMin, InnerMinimizer};
pub use outer::{Eval, OuterMaximizer};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DualPoint {
    pub lambda: f64,
    pub alpha: f64,
}

impl DualPoint {
    pub const ORIGIN: DualPoint = DualPoint {
        lambda: 0.0,
        alpha: 0.0,
    };

    pub fn new(lambda: f64, alpha: f64) -> Self {
        Self { lambda, alpha }
    }
}

pub const DEFAULT_B_DUAL: f64 = 50.0;

/// What to do when the maximizer sits on the edge of `[0, B]^2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPolicy {
    /// Double `B` and re-solve; give up after `max_doublings`.
    Escalate,
    /// Keep `B` and report the hit.
    Fixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub b_dual: f64,
    /// Lattice points per axis for seeding (used when `d <= 3`).
    pub inner_grid: usize,
    /// Sobol seeds when `d > 3`.
    pub sobol_points: usize,
    /// Best lattice seeds refined by projected gradient descent.
    pub polish_seeds: usize,
    pub inner_tol: f64,
    pub inner_max_iters: usize,
    pub outer_tol: f64,
    pub max_outer_iters: usize,
    pub restarts: usize,
    pub seed: u64,
    pub boundary: BoundaryPolicy,
    pub max_doublings: usize,
    pub inner: String,
    pub outer: String,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            b_dual: DEFAULT_B_DUAL,
            inner_grid: 33,
            sobol_points: 4096,
            polish_seeds: 5,
            inner_tol: 1e-10,
            inner_max_iters: 200,
            outer_tol: 1e-8,
            max_outer_iters: 100,
            restarts: 3,
            seed: 0,
            boundary: BoundaryPolicy::Escalate,
            max_doublings: 3,
            inner: "lattice-pgd".into(),
            outer: "coordinate-golden".into(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.b_dual.is_finite() && self.b_dual > 0.0) {
            return bad("b_dual must be positive");
        }
        if self.inner_grid < 3 {
            return bad("inner_grid must be at least 3");
        }
        if !(self.inner_tol > 0.0 && self.outer_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.max_outer_iters == 0 || self.inner_max_iters == 0 {
            return bad("iteration limits must be positive");
        }
        if self.sobol_points == 0 {
            return bad("sobol_points must be positive");
        }
        inner_registry().get(&self.inner)?;
        outer_registry().get(&self.outer)?;
        Ok(())
    }
}

pub type InnerFactory = fn(&CompositeModel, &SolverConfig) -> Result<Box<dyn InnerMinimizer>>;
pub type OuterFactory = fn() -> Box<dyn OuterMaximizer>;

pub fn inner_registry() -> Registry<InnerFactory> {
    Registry::new("inner minimizer")
        .register("lattice-pgd", inner::LatticePgd::build as InnerFactory)
        .register("lattice", inner::LatticeOnly::build as InnerFactory)
}

pub fn outer_registry() -> Registry<OuterFactory> {
    Registry::new("outer maximizer")
        .register("coordinate-golden", (|| Box::new(outer::CoordinateGolden) as Box<dyn OuterMaximizer>) as OuterFactory)
        .register("nested-golden", (|| Box::new(outer::NestedGolden) as Box<dyn OuterMaximizer>) as OuterFactory)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualSolution {
    pub value: f64,
    pub statistic: f64,
    pub argmax: DualPoint,
    /// Minimizing `x` of each inner problem at the argmax.
    pub inner_minimizers: Vec<Vec<f64>>,
    pub boundary_hit: bool,
    /// Box bound in effect for the final solve.
    pub b_dual: f64,
    pub doublings: usize,
    /// True when the empirical measure already satisfies both constraints.
    pub empirically_feasible: bool,
    pub evaluations: usize,
}

/// Minimum over the box of `|x - x_i|^2 + alpha |pi_1 - pi_0|(x) - lambda M(x)`.
pub fn gamma_i(
    model: &CompositeModel,
    x_i: &[f64],
    point: DualPoint,
    cfg: &SolverConfig,
) -> Result<(f64, Vec<f64>)> {
    model.space().check(x_i)?;
    check_point(point)?;
    let inner = (inner_registry().get(&cfg.inner)?)(model, cfg)?;
    let m = inner.minimize(x_i, point)?;
    Ok((m.value, m.x))
}

pub fn dual_objective(
    model: &CompositeModel,
    data: &Dataset,
    r: f64,
    eps: f64,
    point: DualPoint,
    cfg: &SolverConfig,
) -> Result<f64> {
    check_thresholds(r, eps)?;
    check_point(point)?;
    let problem = DualProblem::new(model, data, r, eps, cfg)?;
    Ok(problem.evaluate(point)?.0)
}

fn check_point(p: DualPoint) -> Result<()> {
    if p.lambda >= 0.0 && p.alpha >= 0.0 && p.lambda.is_finite() && p.alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("dual point must be finite and nonnegative, got {p:?}")))
    }
}

fn check_thresholds(r: f64, eps: f64) -> Result<()> {
    if !r.is_finite() {
        return Err(Error::Config("r must be finite".into()));
    }
    if !(eps.is_finite() && eps >= 0.0) {
        return Err(Error::Config(format!("eps must be finite and nonnegative, got {eps}")));
    }
    Ok(())
}

/// The dual objective bound to one dataset, with the inner minimizer's
/// caches built once.
pub struct DualProblem<'a> {
    model: CompositeModel,
    data: &'a Dataset,
    r: f64,
    eps: f64,
    inner: Box<dyn InnerMinimizer>,
}

impl<'a> DualProblem<'a> {
    pub fn new(
        model: &CompositeModel,
        data: &'a Dataset,
        r: f64,
        eps: f64,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        if model.space() != data.space() {
            return Err(Error::InvalidSpace("model and dataset use different boxes".into()));
        }
        let inner = (inner_registry().get(&cfg.inner)?)(model, cfg)?;
        Ok(Self {
            model: model.clone(),
            data,
            r,
            eps,
            inner,
        })
    }

    /// Objective value and the per-sample minimizers.
    pub fn evaluate(&self, p: DualPoint) -> Result<(f64, Vec<InnerMin>)> {
        let (e, mins) = self.evaluate_with_slope(p)?;
        Ok((e.value, mins))
    }

    /// Like [`evaluate`](Self::evaluate), plus the supergradient
    /// `(r - mean M(x*), mean |pi_1 - pi_0|(x*) - eps)` given by the inner
    /// minimizers `x*`.
    pub fn evaluate_with_slope(&self, p: DualPoint) -> Result<(Eval, Vec<InnerMin>)> {
        let found: Vec<(InnerMin, f64, f64)> = self
            .data
            .samples()
            .par_iter()
            .with_min_len(32)
            .map(|s| {
                let m = self.inner.minimize(&s.x, p)?;
                let v = self.model.value_at(&m.x);
                Ok((m, v.utility, v.diff.abs()))
            })
            .collect::<Result<_>>()?;
        let n = self.data.len() as f64;
        // Reduce in index order so the sums are independent of scheduling.
        let (mut total, mut utility, mut gap) = (0.0, 0.0, 0.0);
        for (m, u, g) in &found {
            total += m.value;
            utility += u;
            gap += g;
        }
        let value = p.lambda * self.r - p.alpha * self.eps + total / n;
        let slope = [self.r - utility / n, gap / n - self.eps];
        let eval = Eval {
            value,
            slope: slope.iter().all(|v| v.is_finite()).then_some(slope),
        };
        Ok((eval, found.into_iter().map(|f| f.0).collect()))
    }
}

pub fn solve_dual(
    model: &CompositeModel,
    data: &Dataset,
    r: f64,
    eps: f64,
    cfg: &SolverConfig,
) -> Result<DualSolution> {
    check_thresholds(r, eps)?;
    cfg.validate()?;
    let n = data.len() as f64;

    let (mut mean_m, mut mean_gap) = (0.0, 0.0);
    for s in data.samples() {
        let v = model.value_at(&s.x);
        if !(v.utility.is_finite() && v.diff.is_finite()) {
            return Err(Error::NonFinite { point: s.x.clone() });
        }
        mean_m += v.utility;
        mean_gap += v.diff.abs();
    }
    mean_m /= n;
    mean_gap /= n;
    if mean_m >= r && mean_gap <= eps {
        // Weak duality pins the value at zero.
        return Ok(DualSolution {
            value: 0.0,
            statistic: 0.0,
            argmax: DualPoint::ORIGIN,
            inner_minimizers: data.samples().iter().map(|s| s.x.clone()).collect(),
            boundary_hit: false,
            b_dual: cfg.b_dual,
            doublings: 0,
            empirically_feasible: true,
            evaluations: 0,
        });
    }

    let problem = DualProblem::new(model, data, r, eps, cfg)?;
    let outer = (outer_registry().get(&cfg.outer)?)();
    let mut bound = cfg.b_dual;
    let mut doublings = 0;
    loop {
        let mut evaluations = 0usize;
        let mut objective = |p: DualPoint| -> Result<Eval> {
            evaluations += 1;
            Ok(problem.evaluate_with_slope(p)?.0)
        };
        let (argmax, best) = outer.maximize(&mut objective, bound, cfg)?;
        let edge = bound * (1.0 - 1e-6);
        let boundary_hit = argmax.lambda >= edge || argmax.alpha >= edge;
        let done = !boundary_hit || cfg.boundary == BoundaryPolicy::Fixed;
        if done {
            let (value_at, mins) = problem.evaluate(argmax)?;
            debug_assert_eq!(value_at, best);
            let value = best.max(0.0);
            return Ok(DualSolution {
                value,
                statistic: n * value,
                argmax,
                inner_minimizers: mins.into_iter().map(|m| m.x).collect(),
                boundary_hit,
                b_dual: bound,
                doublings,
                empirically_feasible: false,
                evaluations,
            });
        }
        if doublings == cfg.max_doublings {
            return Err(Error::UnboundedDual { bound, doublings });
        }
        log::warn!("dual maximizer on the boundary of [0, {bound}]^2; doubling B_dual");
        bound *= 2.0;
        doublings += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::analytic::{logistic_benchmark, pricing_model};
    use crate::simulation::make_scenario;
    use proptest::prelude::*;

    // Brute force over a uniform grid of `k` points in [0, 1].
    fn grid_gamma(model: &CompositeModel, xi: f64, p: DualPoint, k: usize) -> f64 {
        (0..k)
            .map(|j| {
                let x = j as f64 / (k - 1) as f64;
                let v = model.value_at(&[x]);
                (x - xi).powi(2) + p.alpha * v.diff.abs() - p.lambda * v.utility
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn origin_gives_zero_at_anchor() {
        let model = logistic_benchmark();
        let (v, x) = gamma_i(&model, &[0.37], DualPoint::ORIGIN, &SolverConfig::default()).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(x, vec![0.37]);
    }

    #[test]
    fn pricing_inner_problem_matches_grid() {
        let model = pricing_model(0.6, 0.5).unwrap();
        let p = DualPoint::new(0.0, 1.0);
        let (v, _) = gamma_i(&model, &[0.5], p, &SolverConfig::default()).unwrap();
        // (x - 0.5)^2 + 0.2 x is minimized at x = 0.4 with value 0.09.
        let oracle = grid_gamma(&model, 0.5, p, 100_000);
        assert!((v - oracle).abs() < 1e-6);
        assert!((v - 0.09).abs() < 1e-12);
    }

    #[test]
    fn objective_at_origin_is_zero() {
        let (model, data) = make_scenario(0.7, 30, 1).unwrap();
        let v = dual_objective(&model, &data, 1.2, 0.01, DualPoint::ORIGIN, &SolverConfig::default()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn objective_matches_grid_oracle() {
        let (model, data) = make_scenario(0.6, 50, 11).unwrap();
        let p = DualPoint::new(0.5, 0.5);
        let v = dual_objective(&model, &data, 1.2, 0.01, p, &SolverConfig::default()).unwrap();
        let mean: f64 = data
            .samples()
            .iter()
            .map(|s| grid_gamma(&model, s.x[0], p, 100_000))
            .sum::<f64>()
            / 50.0;
        let oracle = 0.5 * 1.2 - 0.5 * 0.01 + mean;
        assert!((v - oracle).abs() < 1e-5, "{v} vs {oracle}");
    }

    #[test]
    fn feasible_measure_has_zero_value() {
        let (model, data) = make_scenario(0.8, 40, 2).unwrap();
        let sol = solve_dual(&model, &data, 0.6, 0.6, &SolverConfig::default()).unwrap();
        assert_eq!(sol.value, 0.0);
        assert!(sol.empirically_feasible);
    }

    #[test]
    fn escalation_gives_up_on_unreachable_utility() {
        let (model, data) = make_scenario(0.8, 20, 3).unwrap();
        let cfg = SolverConfig {
            restarts: 0,
            ..SolverConfig::default()
        };
        let err = solve_dual(&model, &data, 5.0, 0.01, &cfg).unwrap_err();
        assert!(matches!(err, Error::UnboundedDual { doublings: 3, .. }));
        let fixed = SolverConfig {
            boundary: BoundaryPolicy::Fixed,
            ..cfg
        };
        let sol = solve_dual(&model, &data, 5.0, 0.01, &fixed).unwrap();
        assert!(sol.boundary_hit);
        assert_eq!(sol.statistic, 20.0 * sol.value);
    }

    #[test]
    fn unknown_strategy_is_a_config_error() {
        let cfg = SolverConfig {
            inner: "simplex".into(),
            ..SolverConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::UnknownStrategy { .. })));
    }

    #[test]
    fn strategies_agree_on_a_small_instance() {
        let (model, data) = make_scenario(0.9, 15, 5).unwrap();
        let fixed = SolverConfig {
            boundary: BoundaryPolicy::Fixed,
            b_dual: 5.0,
            ..SolverConfig::default()
        };
        let a = solve_dual(&model, &data, 0.6, 0.01, &fixed).unwrap();
        let nested = SolverConfig {
            outer: "nested-golden".into(),
            ..fixed
        };
        let b = solve_dual(&model, &data, 0.6, 0.01, &nested).unwrap();
        assert!((a.value - b.value).abs() < 1e-6, "{} vs {}", a.value, b.value);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn objective_is_midpoint_concave(
            l1 in 0.0..4.0f64, a1 in 0.0..4.0f64, l2 in 0.0..4.0f64, a2 in 0.0..4.0f64, seed in 0u64..50
        ) {
            let (model, data) = make_scenario(0.75, 12, seed).unwrap();
            let cfg = SolverConfig::default();
            let f = |l: f64, a: f64| dual_objective(&model, &data, 1.2, 0.02, DualPoint::new(l, a), &cfg).unwrap();
            let mid = f((l1 + l2) / 2.0, (a1 + a2) / 2.0);
            prop_assert!(mid >= (f(l1, a1) + f(l2, a2)) / 2.0 - 1e-8);
        }

        #[test]
        fn inner_value_never_exceeds_anchor_objective(
            xi in 0.0..1.0f64, l in 0.0..10.0f64, a in 0.0..10.0f64
        ) {
            let model = logistic_benchmark();
            let p = DualPoint::new(l, a);
            let (v, x) = gamma_i(&model, &[xi], p, &SolverConfig::default()).unwrap();
            let at = model.value_at(&[xi]);
            prop_assert!(v <= a * at.diff.abs() - l * at.utility + 1e-15);
            prop_assert!(model.space().contains(&x));
        }

        #[test]
        fn value_monotone_in_thresholds(seed in 0u64..20) {
            let (model, data) = make_scenario(0.8, 10, seed).unwrap();
            let cfg = SolverConfig { boundary: BoundaryPolicy::Fixed, b_dual: 10.0, restarts: 1, ..SolverConfig::default() };
            let v = |r: f64, e: f64| solve_dual(&model, &data, r, e, &cfg).unwrap().value;
            let tol = 1e-6;
            prop_assert!(v(1.3, 0.01) + tol >= v(1.1, 0.01));
            prop_assert!(v(1.2, 0.0) + tol >= v(1.2, 0.05));
        }
    }
}
