//! Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails. Every tolerance and budget is pinned below.

mod oracle;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use utilfair::asymptotics::{build_scores, compute_bound, BootstrapConfig, BoundEngine, Branch};
use utilfair::audit::check_assumptions;
use utilfair::dual::{solve_dual, SolverConfig};
use utilfair::estimation::{fit_models, EstimationConfig};
use utilfair::model::analytic::{logistic_benchmark, pricing_model};
use utilfair::model::gradcheck::check_model;
use utilfair::model::{empirical_summaries, threshold_discrepancy, CompositeModel, Dataset};
use utilfair::rng::stream_rng;
use utilfair::simulation::{
    classifier_audit, make_scenario, run_sweep, scenario_on, SweepConfig, SweepRow, FIG_EPSS, FIG_RS,
    FIG_THETAS,
};

const SEED: u64 = 42;
const LEVEL: f64 = 0.05;

const TREND_N: usize = 500;
const TREND_EPS: f64 = 0.01;
const TREND_R: f64 = 1.2;
const TREND_BUDGET: Duration = Duration::from_secs(300);
const INVERSION_TOL: f64 = 1e-6;
const MAX_INVERSIONS: usize = 1;

const ORACLE_INSTANCES: usize = 20;
const ORACLE_N: usize = 20;
const ORACLE_INNER_POINTS: usize = 100_000;
const ORACLE_OUTER_AXIS: usize = 400;
const ORACLE_CELL: f64 = 1e-6;
const ORACLE_TOL: f64 = 1e-4;
const ORACLE_BUDGET: Duration = Duration::from_secs(120);

const DUALITY_INSTANCES: usize = 50;
const DUALITY_SLACK: f64 = 1e-9;

const BOUND_DRAWS: usize = 1000;
const BOUND_N: usize = 200;
const BOUND_CAP: f64 = 20.0;
const BOUND_AXIS: usize = 500;
const BOUND_TOL: f64 = 1e-3;
const ROUTE_TOL: f64 = 1e-5;
const PLANAR_SLACK: f64 = 1e-9;

const NULL_REPLICATIONS: usize = 200;
const NULL_THETA: f64 = 0.5;
const NULL_R: f64 = 1.0;
const NULL_EPS: f64 = 0.01;
const NULL_MAX_RATE: f64 = 0.08;

const GRAD_PROBES: usize = 100;
const GRAD_TOL: f64 = 1e-4;

const INTEGRAL_MEASURES: usize = 20;
const INTEGRAL_STEPS: usize = 10_000;
const INTEGRAL_TOL: f64 = 2e-3;

const THREAD_COUNTS: [usize; 3] = [1, 4, 8];

const PIPELINE_N: usize = 150;
const PIPELINE_SEEDS: [u64; 3] = [11, 12, 13];
const PIPELINE_REGS: [f64; 5] = [0.001, 0.01, 0.1, 1.0, 10.0];

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("statistic rises and critical value falls with r", c1_utility_trend),
        ("smallest rejecting theta1 rises with eps", c2_tolerance_trend),
        ("dual value matches nested brute force", c3_dual_oracle),
        ("weak duality against point-mass witnesses", c4_weak_duality),
        ("limiting bound matches grid search", c5_bound_oracle),
        ("null rejection rate", c6_type_one),
        ("analytic gradients match finite differences", c7_gradients),
        ("threshold discrepancy equals mean gap", c8_threshold_integral),
        ("CLI outputs are byte-identical", c9_determinism),
        ("regularization lowers rejections", c10_pipeline),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = run();
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {:>2} {name}: {detail} [{secs:.1}s]", k + 1);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(started: Instant, budget: Duration) -> Result<(), String> {
    let t = started.elapsed();
    if t > budget {
        Err(format!("took {:.0}s, budget {}s", t.as_secs_f64(), budget.as_secs()))
    } else {
        Ok(())
    }
}

fn cell(rows: &[SweepRow], theta: f64, r: f64, eps: f64) -> Result<&SweepRow, String> {
    let row = rows
        .iter()
        .find(|c| c.theta1 == theta && c.r == r && c.eps == eps)
        .ok_or(format!("missing cell theta1={theta} r={r} eps={eps}"))?;
    match &row.error {
        Some(e) => Err(format!("cell theta1={theta} r={r} eps={eps} failed: {e}")),
        None => Ok(row),
    }
}

fn c1_utility_trend() -> Outcome {
    let started = Instant::now();
    let cfg = SweepConfig { seed: SEED, ..SweepConfig::default() };
    let rows = run_sweep(&FIG_THETAS, &FIG_RS, &[TREND_EPS], TREND_N, LEVEL, &cfg)
        .map_err(|e| e.to_string())?
        .rows;
    within(started, TREND_BUDGET)?;
    let mut inversions = 0;
    for theta in FIG_THETAS {
        let cells = FIG_RS
            .iter()
            .map(|r| cell(&rows, theta, *r, TREND_EPS))
            .collect::<Result<Vec<_>, _>>()?;
        for pair in cells.windows(2) {
            let (t0, t1) = (pair[0].statistic.unwrap(), pair[1].statistic.unwrap());
            if t1 < t0 {
                if t0 - t1 >= INVERSION_TOL {
                    return Err(format!("statistic drops by {:e} at theta1={theta}, r={}", t0 - t1, pair[1].r));
                }
                inversions += 1;
            }
            let (e0, e1) = (pair[0].critical_value.unwrap(), pair[1].critical_value.unwrap());
            if e1 > e0 {
                return Err(format!("critical value rises at theta1={theta}, r={}", pair[1].r));
            }
        }
    }
    let rejections = rows.iter().filter(|c| c.reject == Some(true)).count();
    ensure(
        inversions <= MAX_INVERSIONS,
        format!("{} cells, {inversions} tiny inversions, {rejections} rejections", rows.len()),
    )
}

fn c2_tolerance_trend() -> Outcome {
    let started = Instant::now();
    let cfg = SweepConfig { seed: SEED, ..SweepConfig::default() };
    let rows = run_sweep(&FIG_THETAS, &[TREND_R], &FIG_EPSS, TREND_N, LEVEL, &cfg)
        .map_err(|e| e.to_string())?
        .rows;
    within(started, TREND_BUDGET)?;
    let mut smallest = Vec::new();
    for eps in FIG_EPSS {
        let mut first = None;
        for theta in FIG_THETAS {
            if cell(&rows, theta, TREND_R, eps)?.reject == Some(true) {
                first = Some(theta);
                break;
            }
        }
        smallest.push(first);
    }
    let key = |t: &Option<f64>| t.unwrap_or(f64::INFINITY);
    let monotone = smallest.windows(2).all(|p| key(&p[0]) <= key(&p[1]));
    let shown: Vec<String> = smallest
        .iter()
        .map(|t| t.map_or("none".into(), |v| v.to_string()))
        .collect();
    ensure(monotone, format!("smallest rejecting theta1 by eps: [{}]", shown.join(", ")))
}

fn c3_dual_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = stream_rng(SEED, 3);
    let mut worst: f64 = 0.0;
    for k in 0..ORACLE_INSTANCES {
        let theta = rng.random_range(0.55..0.7);
        let eps = rng.random_range(0.03..0.08);
        let (model, data) = make_scenario(theta, ORACLE_N, 300 + k as u64).map_err(|e| e.to_string())?;
        // Keep the primal feasible: a point mass at the largest x whose gap
        // is at most eps reaches utility `reach`.
        let edge = (eps / (2.0 * theta - 1.0)).min(1.0);
        let (floor, reach) = (model.eval_m(&[0.0]).unwrap(), model.eval_m(&[edge]).unwrap());
        let r = floor + rng.random_range(0.3..0.9) * (reach - floor);
        let sol = solve_dual(&model, &data, r, eps, &SolverConfig::default()).map_err(|e| e.to_string())?;

        let grid = oracle::InnerGrid::new(&model, ORACLE_INNER_POINTS);
        // The bisection relies on convexity along the grid; spot-check it.
        for (s, (l, a)) in data.samples().iter().zip([(0.0, 0.0), (3.0, 1.0), (sol.b_dual, sol.b_dual)]) {
            let (fast, slow) = (grid.convex_min(s.x[0], l, a), grid.scan(s.x[0], l, a));
            if fast != slow {
                return Err(format!("inner bisection {fast} differs from scan {slow} on instance {k}"));
            }
        }
        let reference = oracle::grid_maximize(
            |l, a| oracle::dual_value(&grid, &data, r, eps, l, a),
            sol.b_dual,
            ORACLE_OUTER_AXIS,
            ORACLE_CELL,
        );
        let err = (sol.value - reference.0).abs();
        if err > ORACLE_TOL {
            return Err(format!(
                "instance {k} (theta1={theta:.3}, r={r:.3}, eps={eps:.3}): solver {} vs brute force {}",
                sol.value, reference.0
            ));
        }
        worst = worst.max(err);
    }
    within(started, ORACLE_BUDGET)?;
    Ok(format!("{ORACLE_INSTANCES} instances, max error {worst:.2e}"))
}

fn c4_weak_duality() -> Outcome {
    let mut rng = stream_rng(SEED, 4);
    let mut checked = 0;
    let mut tightest = f64::INFINITY;
    let mut attempt = 0u64;
    while checked < DUALITY_INSTANCES {
        attempt += 1;
        if attempt > 10 * DUALITY_INSTANCES as u64 {
            return Err(format!("only {checked} instances passed the precondition check"));
        }
        // Alternate unfair and fair policies so both constraints get exercised.
        let (theta, r) = if attempt.is_multiple_of(2) {
            (rng.random_range(0.55..0.9), rng.random_range(0.3..0.65))
        } else {
            (0.5, rng.random_range(0.8..1.6))
        };
        let eps = rng.random_range(0.0..0.05);
        let n = rng.random_range(20..=200);
        let (model, data) = make_scenario(theta, n, 400 + attempt).map_err(|e| e.to_string())?;
        let check = check_assumptions(&model, &data, r);
        let Some(witness) = check.witness.filter(|_| check.violations.is_empty()) else {
            continue;
        };
        let sol = solve_dual(&model, &data, r, eps, &SolverConfig::default()).map_err(|e| e.to_string())?;
        let cost = data
            .samples()
            .iter()
            .map(|s| s.x.iter().zip(&witness.x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>()
            / data.len() as f64;
        if sol.value > cost + DUALITY_SLACK {
            return Err(format!(
                "instance theta1={theta:.3}, r={r:.3}, eps={eps:.3}, n={n}: dual value {} exceeds cost {cost}",
                sol.value
            ));
        }
        tightest = tightest.min(cost - sol.value);
        checked += 1;
    }
    Ok(format!("{checked} instances, zero violations, smallest slack {tightest:.2e}"))
}

fn c5_bound_oracle() -> Outcome {
    let model = logistic_benchmark();
    let data = scenario_on(&model, BOUND_N, 7).map_err(|e| e.to_string())?;
    let scores = build_scores(&model, &data).map_err(|e| e.to_string())?;
    let cfg = BootstrapConfig {
        zeta_cap: Some(BOUND_CAP),
        ..BootstrapConfig::default()
    };
    let engine = BoundEngine::new(&scores, &cfg, BOUND_CAP);
    let grid = oracle::BoundGrid::new(&oracle::Gradients::new(&model, &data), BOUND_CAP, BOUND_AXIS);
    let mut rng = stream_rng(SEED, 5);
    let (mut worst, mut worst_branch, mut worst_route): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut converged = 0;
    for k in 0..BOUND_DRAWS {
        let w = [rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0)];
        let got = compute_bound(&scores, w, &cfg).value;
        let want = grid.bound(w);
        let err = (got - want).abs();
        if err > BOUND_TOL {
            return Err(format!("draw {k} w={w:?}: bound {got} vs grid {want}"));
        }
        worst = worst.max(err);
        for (index, branch) in Branch::BOTH.into_iter().enumerate() {
            // The larger branch can sit in a box corner, so check each one.
            let exact = engine.enumerate(w, branch);
            let coarse = grid.branch(w, index);
            if (exact - coarse).abs() > BOUND_TOL {
                return Err(format!("draw {k} w={w:?} {branch:?}: enumeration {exact} vs grid {coarse}"));
            }
            worst_branch = worst_branch.max((exact - coarse).abs());
            let fp = engine.fixed_point(w, branch);
            if !fp.converged {
                continue;
            }
            converged += 1;
            let a = engine.objective(w, fp.zeta, branch).max(0.0);
            let gap = (a - exact).abs();
            if gap > ROUTE_TOL {
                return Err(format!("draw {k} w={w:?} {branch:?}: fixed point {a} vs enumeration {exact}"));
            }
            worst_route = worst_route.max(gap);
        }
    }
    let planar = planar_enumeration_error()?;
    Ok(format!(
        "{BOUND_DRAWS} draws, max grid error {worst:.2e} (per branch {worst_branch:.2e}); {converged} converged branches, max route gap {worst_route:.2e}; 2-d fitted model grid shortfall {planar:.2e}"
    ))
}

/// Enumeration against the grid on a fitted two-covariate model, where both
/// branches have nonempty, direction-dependent active sets. The objective
/// jumps across sector edges there, so the grid can only approach the
/// supremum from below: no grid point may beat the enumeration, and the
/// bound must equal the larger enumerated branch.
fn planar_enumeration_error() -> Result<f64, String> {
    let (data, _) = classifier_audit(PIPELINE_N, 2, PIPELINE_SEEDS[0]).map_err(|e| e.to_string())?;
    let model = fit_models(&data, None, &EstimationConfig::default())
        .and_then(|f| f.composite())
        .map_err(|e| e.to_string())?;
    let scores = build_scores(&model, &data).map_err(|e| e.to_string())?;
    let cfg = BootstrapConfig {
        zeta_cap: Some(BOUND_CAP),
        ..BootstrapConfig::default()
    };
    let engine = BoundEngine::new(&scores, &cfg, BOUND_CAP);
    let grid = oracle::BoundGrid::new(&oracle::Gradients::new(&model, &data), BOUND_CAP, BOUND_AXIS);
    let mut rng = stream_rng(SEED, 55);
    let mut worst: f64 = 0.0;
    for k in 0..BOUND_DRAWS {
        let w = [rng.random_range(-1.0..2.0), rng.random_range(-1.0..2.0)];
        let mut top: f64 = 0.0;
        for (index, branch) in Branch::BOTH.into_iter().enumerate() {
            let (exact, coarse) = (engine.enumerate(w, branch), grid.branch(w, index));
            if coarse > exact + PLANAR_SLACK {
                return Err(format!("2-d draw {k} w={w:?} {branch:?}: grid {coarse} beats enumeration {exact}"));
            }
            worst = worst.max(exact - coarse);
            top = top.max(exact);
        }
        let got = engine.bound(w).value;
        if (got - top).abs() > PLANAR_SLACK {
            return Err(format!("2-d draw {k} w={w:?}: bound {got} below enumerated {top}"));
        }
    }
    Ok(worst)
}

fn c6_type_one() -> Outcome {
    let cfg = SweepConfig {
        seed: SEED,
        replications: NULL_REPLICATIONS,
        ..SweepConfig::default()
    };
    let res = run_sweep(&[NULL_THETA], &[NULL_R], &[NULL_EPS], TREND_N, LEVEL, &cfg).map_err(|e| e.to_string())?;
    if res.errors() > 0 {
        return Err(format!("{} replications failed", res.errors()));
    }
    let rate = res.rejections() as f64 / NULL_REPLICATIONS as f64;
    ensure(
        rate <= NULL_MAX_RATE,
        format!("{} of {NULL_REPLICATIONS} rejected, rate {rate:.3}", res.rejections()),
    )
}

fn c7_gradients() -> Outcome {
    let mut models: Vec<(String, CompositeModel)> = Vec::new();
    for theta in [0.5, 0.7, 0.9] {
        models.push((format!("pricing {theta}"), pricing_model(theta, 0.5).map_err(|e| e.to_string())?));
    }
    models.push(("logistic benchmark".into(), logistic_benchmark()));
    let est = EstimationConfig::default();
    for seed in [11, 12] {
        let (data, _) = classifier_audit(PIPELINE_N, 2, seed).map_err(|e| e.to_string())?;
        let fitted = fit_models(&data, None, &est).and_then(|f| f.composite()).map_err(|e| e.to_string())?;
        models.push((format!("fitted classifier seed {seed}"), fitted));
    }
    let (truth, data) = make_scenario(0.7, 200, 5).map_err(|e| e.to_string())?;
    let scores = true_scores(&truth, &data);
    for (label, s) in [("fitted pricing", None), ("fitted pricing with scores", Some(scores.as_slice()))] {
        let fitted = fit_models(&data, s, &est).and_then(|f| f.composite()).map_err(|e| e.to_string())?;
        models.push((label.into(), fitted));
    }
    let mut worst: f64 = 0.0;
    for (k, (label, model)) in models.iter().enumerate() {
        let check = check_model(model, GRAD_PROBES, 700 + k as u64);
        if !check.passes(GRAD_TOL) {
            return Err(format!("{label}: max relative error {:e}", check.max_error()));
        }
        worst = worst.max(check.max_error());
    }
    Ok(format!("{} models, max relative error {worst:.2e}", models.len()))
}

fn true_scores(model: &CompositeModel, data: &Dataset) -> Vec<[f64; 2]> {
    data.samples()
        .iter()
        .map(|s| [model.policy().propensity(&s.x, 0), model.policy().propensity(&s.x, 1)])
        .collect()
}

fn c8_threshold_integral() -> Outcome {
    let mut rng = stream_rng(SEED, 8);
    let mut worst: f64 = 0.0;
    for k in 0..INTEGRAL_MEASURES {
        let theta = rng.random_range(0.5..0.95);
        let n = rng.random_range(50..=500);
        let (model, data) = make_scenario(theta, n, 800 + k as u64).map_err(|e| e.to_string())?;
        let integral = threshold_discrepancy(&model, &data, INTEGRAL_STEPS);
        let mean_gap = empirical_summaries(&model, &data).map_err(|e| e.to_string())?.mean_gap;
        let err = (integral - mean_gap).abs();
        if err > INTEGRAL_TOL {
            return Err(format!("measure {k} (theta1={theta:.3}, n={n}): {integral} vs {mean_gap}"));
        }
        worst = worst.max(err);
    }
    Ok(format!("{INTEGRAL_MEASURES} measures, max difference {worst:.2e}"))
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_utilfair"));
    c.env_remove("AUDIT_THREADS");
    c
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn run(threads: usize, args: &[&str]) -> Result<(), String> {
    let out = bin()
        .arg("--threads")
        .arg(threads.to_string())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "utilfair {} exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

/// Every output of one seeded session, in a fixed order.
fn cli_session(dir: &Path, threads: usize) -> Result<Vec<(String, Vec<u8>)>, String> {
    let f = |name: &str| dir.join(name);
    let config = f("config.json");
    std::fs::write(&config, r#"{"bootstrap": {"draws": 500}, "r": 0.45, "eps": 0.01, "seed": 5}"#)
        .map_err(|e| e.to_string())?;
    let steps: Vec<Vec<String>> = vec![
        vec!["generate", "--kind", "pricing", "--n", "120", "--seed", "3", "--out", path(&f("pricing.csv"))],
        vec!["generate", "--kind", "classifier", "--n", "80", "--seed", "3", "--out", path(&f("classifier.csv"))],
        vec![
            "simulate", "--theta1", "0.6,0.9", "--r", "1.2,2.8", "--n", "100", "--config", path(&config), "--out",
            path(&f("sweep.csv")),
        ],
        vec!["plot-data", "--data", path(&f("sweep.csv")), "--out", path(&f("plot.csv"))],
        vec!["fit", "--data", path(&f("classifier.csv")), "--reg", "0.1", "--out", path(&f("fit.json"))],
        vec![
            "test", "--data", path(&f("classifier.csv")), "--model", path(&f("fit.json")), "--config",
            path(&config), "--out", path(&f("report.json")),
        ],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();
    for step in &steps {
        let args: Vec<&str> = step.iter().map(String::as_str).collect();
        run(threads, &args)?;
    }
    ["pricing.csv", "classifier.csv", "sweep.csv", "sweep.json", "plot.csv", "fit.json", "report.json"]
        .iter()
        .map(|name| {
            std::fs::read(f(name))
                .map(|b| (name.to_string(), b))
                .map_err(|e| format!("{name}: {e}"))
        })
        .collect()
}

fn c9_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut sessions = Vec::new();
    // The first thread count runs twice to cover reruns.
    for (k, threads) in std::iter::once(THREAD_COUNTS[0]).chain(THREAD_COUNTS).enumerate() {
        let dir = tmp.path().join(format!("run{k}"));
        std::fs::create_dir(&dir).map_err(|e| e.to_string())?;
        sessions.push((threads, cli_session(&dir, threads)?));
    }
    let (_, reference) = &sessions[0];
    for (threads, outputs) in &sessions[1..] {
        for ((name, a), (_, b)) in reference.iter().zip(outputs) {
            if a != b {
                return Err(format!("{name} differs with {threads} threads"));
            }
        }
    }
    Ok(format!(
        "{} outputs identical over {} runs (threads {:?} plus a rerun)",
        reference.len(),
        sessions.len(),
        THREAD_COUNTS
    ))
}

fn data_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn c10_pipeline() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let bundled = data_file("classifier_audit.csv");
    let config = data_file("classifier_audit.json");
    let mut datasets = vec![bundled.clone()];
    for seed in PIPELINE_SEEDS {
        let out = tmp.path().join(format!("classifier_{seed}.csv"));
        run(1, &[
            "generate", "--kind", "classifier", "--n", &PIPELINE_N.to_string(), "--seed", &seed.to_string(),
            "--out", path(&out),
        ])?;
        if seed == PIPELINE_SEEDS[0] {
            let same = std::fs::read(&out).ok() == std::fs::read(&bundled).ok();
            if !same {
                return Err(format!("bundled data differs from the generator at seed {seed}"));
            }
        } else {
            datasets.push(out);
        }
    }
    let mut counts = Vec::new();
    for reg in PIPELINE_REGS {
        let mut rejections = 0;
        for (k, data) in datasets.iter().enumerate() {
            let fit = tmp.path().join(format!("fit_{k}_{reg}.json"));
            let report = tmp.path().join(format!("report_{k}_{reg}.json"));
            run(1, &["fit", "--data", path(data), "--reg", &reg.to_string(), "--out", path(&fit)])?;
            run(1, &[
                "test", "--data", path(data), "--model", path(&fit), "--config", path(&config), "--out",
                path(&report),
            ])?;
            let text = std::fs::read_to_string(&report).map_err(|e| e.to_string())?;
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
            match value["reject"].as_bool() {
                Some(true) => rejections += 1,
                Some(false) => {}
                None => return Err(format!("no decision for dataset {k} at reg {reg}")),
            }
        }
        counts.push(rejections);
    }
    let nonincreasing = counts.windows(2).all(|p| p[1] <= p[0]);
    let detail = format!("rejections over regs {PIPELINE_REGS:?}: {counts:?} of {}", datasets.len());
    ensure(nonincreasing && counts[0] > counts[counts.len() - 1], detail)
}
