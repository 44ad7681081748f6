use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use utilfair::audit::{run_test, TestStatus};
use utilfair::config::ConfigFile;
use utilfair::dual::BoundaryPolicy;
use utilfair::estimation::kernel::nearest_neighbor_fallbacks;
use utilfair::estimation::{fit_models, EstimationConfig, FitDiagnostics, FittedModels};
use utilfair::io::{atomic_write, dataset_csv, json_bytes, read_dataset, read_rows, rows_csv, IngestOptions, Ingested};
use utilfair::model::analytic::pricing_model;
use utilfair::model::CovariateSpace;
use utilfair::simulation::{
    classifier_audit, generate as generate_pricing, plot_data as plot_rows, run_sweep, SweepConfig, SweepRow,
    DEFAULT_GROUP_SHARE, DEFAULT_NOISE,
};
use utilfair::{Error, Result};

use crate::{FitArgs, GenerateArgs, Kind, PlotDataArgs, SimulateArgs, TestArgs};
use crate::{EXIT_ASSUMPTION, EXIT_NUMERIC, EXIT_USAGE};

pub const FIT_SCHEMA: &str = "utilfair.fit.v1";
pub const SWEEP_SCHEMA: &str = "utilfair.sweep-summary.v1";

pub fn exit_code(e: &Error) -> u8 {
    match e {
        // Estimation problems come from the data, not from the numerics.
        e if e.is_usage() => EXIT_USAGE,
        Error::Separation { .. } | Error::EmptyCell { .. } | Error::Estimation(_) => EXIT_USAGE,
        _ => EXIT_NUMERIC,
    }
}

/// Config file plus its raw JSON, echoed into reports.
fn load_config(path: Option<&Path>) -> Result<(ConfigFile, Option<serde_json::Value>)> {
    match path {
        None => Ok((ConfigFile::default(), None)),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            let raw: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("config file: {e}")))?;
            Ok((ConfigFile::parse(&text)?, Some(raw)))
        }
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => atomic_write(p, bytes),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn ingest_options(cfg: &ConfigFile, space: Option<CovariateSpace>) -> Result<IngestOptions> {
    let space = match (space, &cfg.space) {
        (Some(s), _) => Some(s),
        (None, Some((lo, hi))) => Some(CovariateSpace::new(lo.clone(), hi.clone())?),
        (None, None) => None,
    };
    Ok(IngestOptions {
        space,
        pad: cfg.pad,
        outcome_bound: cfg.outcome_bound,
    })
}

fn estimation_config(cfg: &ConfigFile, reg: Option<f64>, bandwidth: Option<&str>) -> EstimationConfig {
    let mut est = cfg.estimation.clone();
    if let Some(r) = reg {
        est.reg = r;
    }
    if let Some(b) = bandwidth {
        est.bandwidth = b.to_string();
    }
    est
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema_version: String,
    pub n: usize,
    pub alpha: f64,
    pub theta1: Vec<f64>,
    pub r: Vec<f64>,
    pub eps: Vec<f64>,
    pub cells: usize,
    pub errors: usize,
    pub rejections: usize,
    pub assumption_failures: usize,
    pub boundary_hits: usize,
    pub config: SweepConfig,
}

pub fn simulate(a: SimulateArgs) -> Result<u8> {
    let (file, raw) = load_config(a.config.as_deref())?;
    let mut cfg = SweepConfig {
        solver: file.solver.clone(),
        bootstrap: file.bootstrap.clone(),
        timings: a.timings,
        ..SweepConfig::default()
    };
    // Sweeps record boundary hits instead of escalating unless asked to.
    let boundary_given = raw
        .as_ref()
        .and_then(|v| v.get("solver"))
        .and_then(|s| s.get("boundary"))
        .is_some();
    if !boundary_given {
        cfg.solver.boundary = BoundaryPolicy::Fixed;
    }
    if let Some(s) = a.seed.or(file.seed) {
        cfg.seed = s;
    }
    if let Some(r) = a.replications {
        cfg.replications = r;
    }
    let result = run_sweep(&a.theta1, &a.r, &a.eps, a.n, a.alpha, &cfg)?;
    let errors = result.errors();
    if errors > 0 {
        log::warn!("{errors} of {} sweep cells failed; see the error column", result.rows.len());
    }
    let summary = SweepSummary {
        schema_version: SWEEP_SCHEMA.into(),
        n: a.n,
        alpha: a.alpha,
        theta1: a.theta1.clone(),
        r: a.r.clone(),
        eps: a.eps.clone(),
        cells: result.rows.len(),
        errors,
        rejections: result.rejections(),
        assumption_failures: result.rows.iter().filter(|r| r.assumptions_ok == Some(false)).count(),
        boundary_hits: result.rows.iter().filter(|r| r.boundary_hit == Some(true)).count(),
        config: cfg,
    };
    emit(a.out.as_deref(), &rows_csv(&result.rows)?)?;
    match &a.out {
        Some(p) => atomic_write(&p.with_extension("json"), &json_bytes(&summary)?)?,
        None => eprintln!(
            "{} cells, {} rejections, {} errors",
            summary.cells, summary.rejections, summary.errors
        ),
    }
    Ok(0)
}

/// Output of `fit`, read back by `test --model`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitOutput {
    pub schema_version: String,
    pub n: usize,
    pub dim: usize,
    pub models: FittedModels,
    pub diagnostics: FitDiagnostics,
    /// Kernel evaluations that fell back to the nearest neighbour.
    pub nearest_neighbor_fallbacks: usize,
}

pub fn fit(a: FitArgs) -> Result<u8> {
    let (file, _) = load_config(a.config.as_deref())?;
    let est = estimation_config(&file, a.reg, a.bandwidth.as_deref());
    let ing: Ingested = read_dataset(&a.data, &ingest_options(&file, None)?)?;
    let models = fit_models(&ing.data, ing.scores.as_deref(), &est)?;
    let out = FitOutput {
        schema_version: FIT_SCHEMA.into(),
        n: ing.data.len(),
        dim: ing.data.dim(),
        diagnostics: models.diagnostics(),
        models,
        nearest_neighbor_fallbacks: nearest_neighbor_fallbacks(),
    };
    emit(a.out.as_deref(), &json_bytes(&out)?)?;
    Ok(0)
}

fn read_fit(path: &Path) -> Result<FitOutput> {
    let text = std::fs::read_to_string(path)?;
    let out: FitOutput =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    if out.schema_version != FIT_SCHEMA {
        return Err(Error::Schema(format!(
            "{}: expected schema {FIT_SCHEMA}, found {}",
            path.display(),
            out.schema_version
        )));
    }
    Ok(out)
}

pub fn test(a: TestArgs) -> Result<u8> {
    let (mut file, raw) = load_config(a.config.as_deref())?;
    file.r = a.r.or(file.r);
    file.eps = a.eps.or(file.eps);
    file.alpha = a.alpha.or(file.alpha);
    file.seed = a.seed.or(file.seed);
    let mut cfg = file.test_config()?;
    cfg.record_timings = a.timings;

    let fitted = a.model.as_deref().map(read_fit).transpose()?;
    let space = fitted.as_ref().map(|f| f.models.space.clone());
    let ing: Ingested = read_dataset(&a.data, &ingest_options(&file, space)?)?;
    let models = match fitted {
        Some(f) => {
            if a.reg.is_some() || a.bandwidth.is_some() {
                log::warn!("--reg and --bandwidth are ignored with --model");
            }
            f.models
        }
        None => {
            let est = estimation_config(&file, a.reg, a.bandwidth.as_deref());
            fit_models(&ing.data, ing.scores.as_deref(), &est)?
        }
    };
    let model = models.composite()?;
    let mut report = run_test(&model, &ing.data, &cfg)?;
    report.config_file = raw;
    emit(a.out.as_deref(), &json_bytes(&report)?)?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(match report.status {
        TestStatus::Completed => 0,
        TestStatus::AssumptionViolation => {
            eprintln!("error: {}", report.error.as_deref().unwrap_or("preconditions failed"));
            for line in &report.assumptions.trace {
                eprintln!("  {line}");
            }
            EXIT_ASSUMPTION
        }
        TestStatus::NumericFailure => {
            eprintln!("error: {}", report.error.as_deref().unwrap_or("numerical failure"));
            EXIT_NUMERIC
        }
    })
}

pub fn plot_data(a: PlotDataArgs) -> Result<u8> {
    let rows: Vec<SweepRow> = read_rows(&a.data)?;
    emit(a.out.as_deref(), &rows_csv(&plot_rows(&rows))?)?;
    Ok(0)
}

pub fn generate(a: GenerateArgs) -> Result<u8> {
    let bytes = match a.kind {
        Kind::Pricing => {
            let model = pricing_model(a.theta1, DEFAULT_GROUP_SHARE)?;
            let data = generate_pricing(&model, a.n, a.seed, DEFAULT_NOISE)?;
            dataset_csv(&data, None, None)?
        }
        Kind::Classifier => {
            let (data, labels) = classifier_audit(a.n, a.dim, a.seed)?;
            dataset_csv(&data, None, Some(&labels))?
        }
    };
    emit(a.out.as_deref(), &bytes)?;
    Ok(0)
}
