//! Precondition checks and the end-to-end test report.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::asymptotics::{critical_value, BootstrapConfig};
use crate::dual::{solve_dual, DualPoint, SolverConfig};
use crate::error::{Error, Result};
use crate::model::gradcheck::{check_model, GradCheck, GRAD_TOL};
use crate::model::{empirical_summaries, CompositeModel, Dataset};

pub const SCHEMA_VERSION: &str = "utilfair.test-report.v1";

/// Largest gap accepted for a fairness witness.
pub const FAIR_TOL: f64 = 1e-6;

const LATTICE_DIM_LIMIT: usize = 3;
const LATTICE_PER_AXIS: usize = 33;
const SOBOL_POINTS: u32 = 4096;
const POLISH_STEPS: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub r: f64,
    pub eps: f64,
    pub alpha_level: f64,
    pub solver: SolverConfig,
    pub bootstrap: BootstrapConfig,
    /// Overrides both the solver and bootstrap seeds when set.
    pub seed: Option<u64>,
    /// Block the solve when a precondition fails.
    pub enforce_assumptions: bool,
    pub gradient_probes: usize,
    /// Record wall-clock timings in the report (breaks byte-identity).
    pub record_timings: bool,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self {
            r: 1.0,
            eps: 0.01,
            alpha_level: 0.05,
            solver: SolverConfig::default(),
            bootstrap: BootstrapConfig::default(),
            seed: None,
            enforce_assumptions: true,
            gradient_probes: 100,
            record_timings: false,
        }
    }
}

impl TestConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.r.is_finite() {
            return Err(Error::Config(format!("r must be finite, got {}", self.r)));
        }
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Config(format!("eps must be finite and nonnegative, got {}", self.eps)));
        }
        if !(self.alpha_level > 0.0 && self.alpha_level < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha_level)));
        }
        self.solver.validate()?;
        self.bootstrap.validate()
    }

    /// Solver and bootstrap configs with the shared seed applied.
    pub fn effective(&self) -> (SolverConfig, BootstrapConfig) {
        let mut solver = self.solver.clone();
        let mut bootstrap = self.bootstrap.clone();
        if let Some(seed) = self.seed {
            solver.seed = seed;
            bootstrap.seed = seed;
        }
        (solver, bootstrap)
    }
}

/// A point that is fair and reaches the utility threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub x: Vec<f64>,
    pub utility: f64,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    /// No fair point reaches `r`; `best_fair_utility` is the best found.
    UnattainableUtility { r: f64, best_fair_utility: Option<f64> },
    OutcomeOutOfBounds { row: usize, y: f64, bound: f64 },
    Gradient { max_error: f64, tolerance: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::UnattainableUtility { r, best_fair_utility: Some(u) } => write!(
                f,
                "no fair covariate value reaches utility {r}; best fair utility found is {u}"
            ),
            Self::UnattainableUtility { r, best_fair_utility: None } => {
                write!(f, "no fair covariate value found while searching for utility {r}")
            }
            Self::OutcomeOutOfBounds { row, y, bound } => {
                write!(f, "outcome {y} at row {row} lies outside [0, {bound}]")
            }
            Self::Gradient { max_error, tolerance } => write!(
                f,
                "analytic gradients disagree with finite differences ({max_error:e} > {tolerance:e})"
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub witness: Option<Witness>,
    pub violations: Vec<Violation>,
    /// Steps of the witness search.
    pub trace: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradients: Option<GradCheck>,
}

impl AssumptionCheck {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn search_points(model: &CompositeModel) -> Vec<Vec<f64>> {
    let space = model.space();
    let d = space.dim();
    if d <= LATTICE_DIM_LIMIT {
        let k = LATTICE_PER_AXIS;
        let total = k.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                let mut u = vec![0.0; d];
                for j in (0..d).rev() {
                    u[j] = (idx % k) as f64 / (k - 1) as f64;
                    idx /= k;
                }
                space.from_unit(&u)
            })
            .collect()
    } else {
        (0..SOBOL_POINTS)
            .map(|i| {
                let u: Vec<f64> = (0..d as u32)
                    .map(|j| sobol_burley::sample(i, j, 0x5eed) as f64)
                    .collect();
                space.from_unit(&u)
            })
            .collect()
    }
}

/// Bisect the gap along the segment `a -> b`, whose ends have opposite signs.
fn bisect_root(model: &CompositeModel, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut lo = 0.0;
    let mut hi = 1.0;
    let at = |t: f64| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + t * (q - p)).collect() };
    let sign_a = model.diff_at(a) > 0.0;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if (model.diff_at(&at(mid)) > 0.0) == sign_a {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Climb the utility along the zero set of the gap: a projected gradient
/// step on `M` followed by Newton corrections back onto `pi_1 = pi_0`.
fn polish(model: &CompositeModel, start: &[f64]) -> Vec<f64> {
    let space = model.space();
    let d = space.dim();
    let mut x = start.to_vec();
    let mut gm = vec![0.0; d];
    let mut gd = vec![0.0; d];
    let scale = (0..d).map(|j| space.width(j)).fold(0.0, f64::max);
    let mut step = 0.1 * scale;
    for _ in 0..POLISH_STEPS {
        model.utility_grad_at(&x, &mut gm);
        model.diff_grad_at(&x, &mut gd);
        let nd2: f64 = gd.iter().map(|v| v * v).sum();
        // Tangential part of the utility gradient.
        let along = if nd2 > 0.0 { gm.iter().zip(&gd).map(|(a, b)| a * b).sum::<f64>() / nd2 } else { 0.0 };
        let dir: Vec<f64> = gm.iter().zip(&gd).map(|(a, b)| a - along * b).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 || step < 1e-10 * scale {
            break;
        }
        let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b / norm).collect();
        space.project(&mut trial);
        for _ in 0..20 {
            let g = model.diff_at(&trial);
            if g.abs() <= 0.1 * FAIR_TOL {
                break;
            }
            model.diff_grad_at(&trial, &mut gd);
            let n2: f64 = gd.iter().map(|v| v * v).sum();
            if n2 == 0.0 {
                break;
            }
            for j in 0..d {
                trial[j] -= g * gd[j] / n2;
            }
            space.project(&mut trial);
        }
        if model.diff_at(&trial).abs() <= FAIR_TOL && model.utility_at(&trial) > model.utility_at(&x) {
            x = trial;
            step *= 1.5;
        } else {
            step *= 0.5;
        }
    }
    x
}

/// Search the box for a fair point with utility at least `r`, and check
/// the outcome bound. Gradients are checked separately by
/// [`check_gradients`].
pub fn check_assumptions(model: &CompositeModel, data: &Dataset, r: f64) -> AssumptionCheck {
    let mut trace = Vec::new();
    let mut violations = Vec::new();
    let bound = data.outcome_bound();
    for (i, s) in data.samples().iter().enumerate() {
        if !(s.y >= 0.0 && s.y <= bound) {
            violations.push(Violation::OutcomeOutOfBounds { row: i + 1, y: s.y, bound });
            break;
        }
    }

    let points = search_points(model);
    let gaps: Vec<f64> = points.iter().map(|x| model.diff_at(x)).collect();
    let mut fair: Vec<Vec<f64>> = points
        .iter()
        .zip(&gaps)
        .filter(|(_, g)| g.abs() <= FAIR_TOL)
        .map(|(x, _)| x.clone())
        .collect();
    trace.push(format!("lattice: {} points, {} fair", points.len(), fair.len()));

    // Sign changes between lattice neighbours along each axis.
    let d = model.dim();
    let mut roots = 0;
    if d <= LATTICE_DIM_LIMIT {
        let k = LATTICE_PER_AXIS;
        for idx in 0..points.len() {
            let mut stride = 1;
            for _ in 0..d {
                let coord = (idx / stride) % k;
                if coord + 1 < k {
                    let nb = idx + stride;
                    if gaps[idx] * gaps[nb] < 0.0 {
                        fair.push(bisect_root(model, &points[idx], &points[nb]));
                        roots += 1;
                    }
                }
                stride *= k;
            }
        }
    }
    trace.push(format!("bisection: {roots} sign changes refined"));

    let best = |cands: &[Vec<f64>]| -> Option<(Vec<f64>, f64)> {
        cands
            .iter()
            .filter(|x| model.diff_at(x).abs() <= FAIR_TOL)
            .map(|x| (x.clone(), model.utility_at(x)))
            .fold(None, |acc: Option<(Vec<f64>, f64)>, c| match acc {
                Some(a) if a.1 >= c.1 => Some(a),
                _ => Some(c),
            })
    };
    let mut found = best(&fair);
    if let Some((x, u)) = found.clone() {
        if u < r {
            let polished = polish(model, &x);
            let pu = model.utility_at(&polished);
            trace.push(format!("polish: fair utility {u} -> {pu}"));
            if pu > u && model.diff_at(&polished).abs() <= FAIR_TOL {
                found = Some((polished, pu));
            }
        }
    }
    let witness = match found {
        Some((x, u)) if u >= r => {
            trace.push(format!("witness at {x:?} with utility {u}"));
            let gap = model.diff_at(&x).abs();
            Some(Witness { x, utility: u, gap })
        }
        other => {
            violations.push(Violation::UnattainableUtility {
                r,
                best_fair_utility: other.map(|(_, u)| u),
            });
            None
        }
    };
    AssumptionCheck {
        witness,
        violations,
        trace,
        gradients: None,
    }
}

/// Finite-difference check of every model gradient.
pub fn check_gradients(model: &CompositeModel, probes: usize, seed: u64) -> (GradCheck, Option<Violation>) {
    let g = check_model(model, probes, seed);
    let v = (!g.passes(GRAD_TOL)).then(|| Violation::Gradient {
        max_error: g.max_error(),
        tolerance: GRAD_TOL,
    });
    (g, v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestStatus {
    Completed,
    AssumptionViolation,
    NumericFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub draws: usize,
    pub cap: f64,
    pub zero_mass: f64,
    pub enumerated: usize,
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub assumptions_ms: f64,
    pub solve_ms: f64,
    pub bootstrap_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub schema_version: String,
    pub status: TestStatus,
    pub n: usize,
    pub dim: usize,
    pub statistic: Option<f64>,
    pub critical_value: Option<f64>,
    pub reject: Option<bool>,
    pub dual_argmax: Option<DualPoint>,
    pub b_dual: Option<f64>,
    pub doublings: Option<usize>,
    /// Dual objective evaluations spent by the solve.
    pub dual_evaluations: Option<usize>,
    pub boundary_hit: Option<bool>,
    pub empirically_feasible: Option<bool>,
    pub mean_m: f64,
    pub var_m: f64,
    pub mean_gap: f64,
    pub var_gap: f64,
    pub feasibility_witness: Option<Vec<f64>>,
    pub assumptions: AssumptionCheck,
    pub bootstrap: Option<BootstrapSummary>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
    pub seed: u64,
    pub config: TestConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap_sample: Option<Vec<f64>>,
    /// The configuration file as given, echoed by the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_file: Option<serde_json::Value>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Check preconditions, compute the statistic and critical value, and
/// decide. Numerical failures and violated preconditions are recorded in the
/// report; only invalid configuration or data is an error.
pub fn run_test(model: &CompositeModel, data: &Dataset, config: &TestConfig) -> Result<TestReport> {
    config.validate()?;
    let (solver, bootstrap) = config.effective();
    let summ = empirical_summaries(model, data)?;

    let started = Instant::now();
    let mut assumptions = check_assumptions(model, data, config.r);
    if config.gradient_probes > 0 {
        let (g, v) = check_gradients(model, config.gradient_probes, solver.seed);
        assumptions.gradients = Some(g);
        assumptions.violations.extend(v);
    }
    let assumptions_ms = ms(started);
    let mut warnings = Vec::new();
    let mut report = TestReport {
        schema_version: SCHEMA_VERSION.into(),
        status: TestStatus::Completed,
        n: data.len(),
        dim: data.dim(),
        statistic: None,
        critical_value: None,
        reject: None,
        dual_argmax: None,
        b_dual: None,
        doublings: None,
        dual_evaluations: None,
        boundary_hit: None,
        empirically_feasible: None,
        mean_m: summ.mean_m,
        var_m: summ.var_m,
        mean_gap: summ.mean_gap,
        var_gap: summ.var_gap,
        feasibility_witness: assumptions.witness.as_ref().map(|w| w.x.clone()),
        assumptions,
        bootstrap: None,
        warnings: Vec::new(),
        error: None,
        seed: bootstrap.seed,
        config: config.clone(),
        timings: None,
        bootstrap_sample: None,
        config_file: None,
    };
    if !report.assumptions.passed() {
        let msgs: Vec<String> = report.assumptions.violations.iter().map(|v| v.to_string()).collect();
        if config.enforce_assumptions {
            report.status = TestStatus::AssumptionViolation;
            report.error = Some(format!("preconditions failed: {}", msgs.join("; ")));
            return Ok(report);
        }
        warnings.extend(msgs.into_iter().map(|m| format!("precondition not met: {m}")));
    }

    let started = Instant::now();
    let sol = match solve_dual(model, data, config.r, config.eps, &solver) {
        Ok(s) => s,
        Err(e) => {
            report.status = TestStatus::NumericFailure;
            report.error = Some(e.to_string());
            report.warnings = warnings;
            return Ok(report);
        }
    };
    let solve_ms = ms(started);
    if sol.doublings > 0 {
        warnings.push(format!("dual box bound doubled {} times to {}", sol.doublings, sol.b_dual));
    }
    if sol.boundary_hit {
        warnings.push(format!("dual maximizer on the boundary of [0, {}]^2", sol.b_dual));
    }
    report.statistic = Some(sol.statistic);
    report.dual_argmax = Some(sol.argmax);
    report.b_dual = Some(sol.b_dual);
    report.doublings = Some(sol.doublings);
    report.dual_evaluations = Some(sol.evaluations);
    report.boundary_hit = Some(sol.boundary_hit);
    report.empirically_feasible = Some(sol.empirically_feasible);

    let started = Instant::now();
    let boot = BootstrapConfig {
        zeta_cap: bootstrap.zeta_cap.or(Some(bootstrap.cap(data.len(), sol.b_dual))),
        ..bootstrap
    };
    let cv = match critical_value(model, data, config.alpha_level, &boot) {
        Ok(cv) => cv,
        Err(e) => {
            report.status = TestStatus::NumericFailure;
            report.error = Some(e.to_string());
            report.warnings = warnings;
            return Ok(report);
        }
    };
    let bootstrap_ms = ms(started);
    warnings.extend(cv.warnings.iter().cloned());
    report.critical_value = Some(cv.value);
    report.reject = Some(sol.statistic > cv.value);
    report.bootstrap = Some(BootstrapSummary {
        draws: cv.draws,
        cap: cv.cap,
        zero_mass: cv.zero_mass,
        enumerated: cv.enumerated,
        dropped: cv.dropped,
    });
    report.bootstrap_sample = cv.sample;
    report.warnings = warnings;
    if config.record_timings {
        report.timings = Some(Timings {
            assumptions_ms,
            solve_ms,
            bootstrap_ms,
        });
    }
    Ok(report)
}
