//! The `dfindex` command line: loads a domain and a run configuration, runs
//! one operation and writes a JSON or CSV report.
//!
//! Exit codes: 0 on success or PASS, 1 when a verdict is FAIL, 2 on usage,
//! configuration, I/O or numerical errors.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dfindex_core::cr::{invariant_rows, InvariantRow, ALPHA_CROSS_TOL, BETA_PSD_TOL};
use dfindex_core::distance::distance_jet;
use dfindex_core::estimator::{df_bounds, estimate_index, verify_psh};
use dfindex_core::psh::ball_pipeline;
use dfindex_core::report::{load_domain, write_report, Format, Record, RunConfig, RunReport, Status, Table};
use dfindex_core::sampling::{boundary_samples, collar_points};
use dfindex_core::{make_domain, DomainOracle, DomainSpec, Error, Result};

/// Levi eigenvalues below this count as a pseudoconvexity violation.
const LEVI_TOL: f64 = 1e-8;
/// Bound on `|Hess delta~ grad delta~|` at collar points.
const NORMAL_TOL: f64 = 1e-6;
const NORMAL_SAMPLES: usize = 100;

#[derive(Parser, Debug)]
#[command(name = "dfindex", version, about = "Diederich-Fornaess index experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Domain document (JSON); overrides the config's domain section.
    #[arg(long, global = true)]
    domain: Option<PathBuf>,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    eta: Option<f64>,
    #[arg(long, global = true)]
    s: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Report path; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Record wall-clock time per operation (makes reports non-reproducible).
    #[arg(long, global = true)]
    timings: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Levi form, alpha, beta and the constant A at boundary samples.
    Invariants,
    /// Sampled plurisubharmonicity of -(-e^{-t|z|^2-phi} b)^eta on the collar.
    VerifyPsh,
    /// Closed-form bounds and bisection brackets for the index.
    Estimate,
    /// Closed-form lower bounds from A (and B when a weight is configured).
    Bounds,
    /// Builds and checks the smooth defining function on a ball.
    Construct,
    /// Invariants, bounds, verify-psh and estimate in one report.
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Invariants => "invariants",
            Command::VerifyPsh => "verify-psh",
            Command::Estimate => "estimate",
            Command::Bounds => "bounds",
            Command::Construct => "construct",
            Command::Report => "report",
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum FormatArg {
    Json,
    Csv,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &cli.domain {
        cfg.domain = Some(load_domain(p)?);
    }
    if let Some(eta) = cli.eta {
        cfg.estimator.eta = eta;
        cfg.pipeline.eta = eta;
    }
    if let Some(s) = cli.s {
        cfg.estimator.s = s;
        cfg.pipeline.s = s;
    }
    if let Some(seed) = cli.seed {
        cfg.sampling.seed = seed;
        cfg.pipeline.seed = seed;
    }
    if let Some(n) = cli.samples {
        cfg.sampling.samples = n;
        cfg.pipeline.samples = n;
    }
    if cfg.domain.is_none() {
        return Err(Error::Config("no domain given (use --domain or a config with a domain section)".into()));
    }
    if cfg.sampling.samples == 0 {
        return Err(Error::Config("samples must be positive".into()));
    }
    cfg.effective_estimator().validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(cfg)
}

fn timed<T>(timings: bool, f: impl FnOnce() -> Result<T>) -> Result<(T, Option<f64>)> {
    let start = Instant::now();
    let v = f()?;
    Ok((v, timings.then(|| start.elapsed().as_secs_f64())))
}

fn opt_max(acc: Option<f64>, v: Option<f64>) -> Option<f64> {
    match (acc, v) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

fn opt_min(acc: Option<f64>, v: Option<f64>) -> Option<f64> {
    match (acc, v) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

fn invariants_table(rows: &[InvariantRow], dim: usize) -> Table {
    let mut columns = vec!["index".to_string(), "feature".to_string()];
    for j in 1..=dim {
        columns.push(format!("x{j}"));
        columns.push(format!("y{j}"));
    }
    for c in ["levi_min", "beta_min", "null_dim", "alpha_null", "alpha_discrepancy", "error"] {
        columns.push(c.to_string());
    }
    let rows = rows
        .iter()
        .map(|r| {
            let mut v = vec![json!(r.index), json!(r.feature)];
            v.extend(r.point.real().iter().map(|x| json!(x)));
            v.push(json!(r.levi_min));
            v.push(json!(r.beta_min));
            v.push(json!(r.null_dim));
            v.push(json!(r.alpha_null));
            v.push(json!(r.alpha_discrepancy));
            v.push(json!(r.error));
            v
        })
        .collect();
    Table { columns, rows }
}

fn run_invariants(o: &DomainOracle, cfg: &RunConfig, timings: bool, report: &mut RunReport) -> Result<()> {
    let n = cfg.sampling.samples;
    let ((rows, samples), secs) = timed(timings, || {
        let samples = boundary_samples(o, n, cfg.sampling.seed, true)?;
        Ok((invariant_rows(o, &samples, None), samples))
    })?;
    let mut a = 0.0f64;
    let mut witness = None;
    let mut null_points = 0;
    let mut errors = 0;
    let mut max_disc = 0.0f64;
    let mut min_beta = None;
    let mut min_levi = None;
    for r in &rows {
        if r.error.is_some() {
            errors += 1;
            continue;
        }
        max_disc = max_disc.max(r.alpha_discrepancy);
        min_beta = opt_min(min_beta, r.beta_min);
        min_levi = opt_min(min_levi, r.levi_min);
        if let Some(v) = r.alpha_null {
            null_points += 1;
            if witness.is_none() || v > a {
                a = v;
                witness = Some(r.point.clone());
            }
        }
    }
    let ok = max_disc <= ALPHA_CROSS_TOL
        && min_beta.is_none_or(|b| b >= -BETA_PSD_TOL)
        && min_levi.is_none_or(|l| l >= -LEVI_TOL)
        && errors < rows.len();
    let mut rec = Record::new(
        "invariants",
        if ok { Status::Pass } else { Status::Fail },
        rows.len(),
        Some(ALPHA_CROSS_TOL),
        json!({
            "a": a,
            "a_witness": witness,
            "null_points": null_points,
            "errors": errors,
            "max_alpha_discrepancy": max_disc,
            "min_beta": min_beta,
            "min_levi": min_levi,
            "bounding_radius": o.bounding_radius(),
            "beta_tolerance": BETA_PSD_TOL,
            "levi_tolerance": LEVI_TOL,
        }),
    )?;
    rec.timing_seconds = secs;
    report.push(rec);

    let ((max_defect, used), secs) = timed(timings, || {
        let pts: Vec<_> = samples.iter().take(NORMAL_SAMPLES).map(|s| s.point.clone()).collect();
        let level = cfg.sampling.collar_levels[0];
        let mut m: Option<f64> = None;
        let mut used = 0;
        for c in collar_points(o, &pts, &[level])? {
            let Ok(jet) = distance_jet(o, &c.point) else { continue };
            let v = (&jet.hessian * &jet.projection.normal).norm();
            m = opt_max(m, Some(v));
            used += 1;
        }
        Ok((m, used))
    })?;
    let mut rec = Record::new(
        "normal_vanishing",
        if max_defect.is_some_and(|m| m <= NORMAL_TOL) { Status::Pass } else { Status::Fail },
        used,
        Some(NORMAL_TOL),
        json!({ "max_hessian_normal": max_defect }),
    )?;
    rec.timing_seconds = secs;
    report.push(rec);
    report.table = Some(invariants_table(&rows, o.dim()));
    Ok(())
}

fn run_verify(o: &DomainOracle, cfg: &RunConfig, timings: bool, report: &mut RunReport) -> Result<()> {
    let est = cfg.effective_estimator();
    let (v, secs) = timed(timings, || verify_psh(o, &est))?;
    let mut rec = Record::new(
        "verify_psh",
        if v.passed { Status::Pass } else { Status::Fail },
        v.samples,
        Some(v.tolerance),
        &v,
    )?;
    rec.timing_seconds = secs;
    report.push(rec);
    Ok(())
}

fn run_bounds(o: &DomainOracle, cfg: &RunConfig, timings: bool, report: &mut RunReport) -> Result<()> {
    let est = cfg.effective_estimator();
    let (b, secs) = timed(timings, || df_bounds(o, &est, cfg.sampling.samples))?;
    let status = match &b.hypotheses {
        Some(h) if !h.passed => Status::Fail,
        _ => Status::Ok,
    };
    let mut rec = Record::new("bounds", status, b.a.samples, Some(est.margin), &b)?;
    rec.timing_seconds = secs;
    report.push(rec);
    Ok(())
}

fn run_estimate(o: &DomainOracle, cfg: &RunConfig, timings: bool, report: &mut RunReport) -> Result<()> {
    let est = cfg.effective_estimator();
    let ((bounds, e), secs) = timed(timings, || estimate_index(o, &est, cfg.sampling.samples))?;
    report.push(Record::new("bounds", Status::Ok, bounds.a.samples, Some(est.margin), &bounds)?);
    let status = if e.lower_bracket <= e.upper_bracket { Status::Ok } else { Status::Fail };
    let mut rec = Record::new("estimate", status, e.samples, Some(e.tolerance), &e)?;
    rec.timing_seconds = secs;
    report.push(rec);
    Ok(())
}

fn run_construct(cfg: &RunConfig, timings: bool, report: &mut RunReport) -> Result<()> {
    let Some(DomainSpec::Ball { radius, dim }) = cfg.domain else {
        return Err(Error::Config("construct needs a ball domain".into()));
    };
    let (r, secs) = timed(timings, || ball_pipeline(dim, radius, &cfg.pipeline))?;
    let out: Value = json!({
        "report": r,
        "sandwich_passed": r.sandwich_passed(),
        "hessian_passed": r.hessian_passed(),
        "seams_passed": r.seams_passed(),
        "lipschitz_stable": r.lipschitz_stable(),
    });
    let mut rec = Record::new(
        "construct",
        if r.passed() { Status::Pass } else { Status::Fail },
        r.samples,
        Some(r.tolerance),
        out,
    )?;
    rec.timing_seconds = secs;
    report.push(rec);
    Ok(())
}

fn execute(cli: &Cli) -> Result<RunReport> {
    let cfg = load_config(cli)?;
    let spec = cfg.domain.clone().expect("checked in load_config");
    let mut report = RunReport::new(cli.command.name(), &cfg)?;
    if let Command::Construct = cli.command {
        run_construct(&cfg, cli.timings, &mut report)?;
        return Ok(report);
    }
    let o = make_domain(&spec).map_err(|e| Error::Config(format!("domain rejected: {e}")))?;
    match cli.command {
        Command::Invariants => run_invariants(&o, &cfg, cli.timings, &mut report)?,
        Command::VerifyPsh => run_verify(&o, &cfg, cli.timings, &mut report)?,
        Command::Estimate => run_estimate(&o, &cfg, cli.timings, &mut report)?,
        Command::Bounds => run_bounds(&o, &cfg, cli.timings, &mut report)?,
        Command::Report => {
            run_invariants(&o, &cfg, cli.timings, &mut report)?;
            run_verify(&o, &cfg, cli.timings, &mut report)?;
            run_estimate(&o, &cfg, cli.timings, &mut report)?;
        }
        Command::Construct => unreachable!(),
    }
    Ok(report)
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let report = match execute(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("dfindex: {e}");
            return 2;
        }
    };
    let format = match cli.format {
        FormatArg::Json => Format::Json,
        FormatArg::Csv => Format::Csv,
    };
    if let Err(e) = write_report(&report, cli.out.as_deref(), format) {
        eprintln!("dfindex: {e}");
        return 2;
    }
    if report.passed() {
        0
    } else {
        1
    }
}
