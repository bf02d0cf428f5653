use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path as FsPath;

use anyhow::{Context, Result};
use serde::Serialize;
use supmin_core::aronsson::residual_profile;
use supmin_core::audit::{audit_absolute_minimality, AuditReport};
use supmin_core::lagrangian::{check_growth_bounds, check_level_convexity, GrowthReport, LevelConvexityReport};
use supmin_core::path::fmt_f64;
use supmin_core::solver::{m_sweep, m_sweep_multistart, SolveStats, SweepFailure, SweepResult};
use supmin_core::Path;

use crate::config::{ConfigError, RunConfig};
use crate::json;

pub const SWEEP_FILE: &str = "sweep.json";
pub const CANDIDATE_FILE: &str = "candidate.csv";
pub const ENERGIES_FILE: &str = "energies.csv";
pub const RESIDUALS_FILE: &str = "residuals.csv";
pub const AUDIT_FILE: &str = "audit.json";
pub const HYPOTHESES_FILE: &str = "hypotheses.json";

/// Outcome of a subcommand; maps onto the process exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    ConfigError,
    SolverFailure,
    Violations,
    Witness,
}

impl Status {
    pub fn code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::ConfigError => 1,
            Status::SolverFailure => 2,
            Status::Violations => 3,
            Status::Witness => 4,
        }
    }
}

/// Exit status for an error escaping a subcommand.
pub fn error_status(err: &anyhow::Error) -> Status {
    if err.downcast_ref::<ConfigError>().is_some() {
        Status::ConfigError
    } else {
        Status::SolverFailure
    }
}

fn create(dir: &FsPath, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(dir: &FsPath, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    w.write_all(json::to_string(value)?.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn write_path(dir: &FsPath, name: &str, path: &Path) -> Result<()> {
    let mut w = create(dir, name)?;
    path.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn path_file_name(m: u32) -> String {
    format!("path_m{m:04}.csv")
}

#[derive(Serialize)]
struct RecordOut<'a> {
    m: u32,
    normalized_root: f64,
    path_file: String,
    stats: &'a SolveStats,
}

#[derive(Serialize)]
struct MultiStartOut {
    starts: usize,
    best: usize,
    ties: Vec<usize>,
    sup_of_candidates: Vec<f64>,
}

#[derive(Serialize)]
struct ResidualsOut {
    file: Option<&'static str>,
    max_norm: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct SweepOut<'a> {
    seed: u64,
    records: Vec<RecordOut<'a>>,
    c_sequence: &'a [f64],
    sup_of_candidate: f64,
    candidate_file: &'static str,
    completed: bool,
    failure: Option<&'a SweepFailure>,
    multistart: MultiStartOut,
    residuals: ResidualsOut,
}

fn ensure_dir(cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(&cfg.output_dir)
        .with_context(|| format!("cannot create output directory {}", cfg.output_dir.display()))
}

/// Runs the `m` sweep (or multi-start sweeps) and writes `sweep.json`,
/// `candidate.csv`, one `path_mXXXX.csv` per power, `energies.csv` and
/// `residuals.csv`.
pub fn run_solve(cfg: &RunConfig, jobs: usize) -> Result<Status> {
    let problem = cfg.problem()?;
    let dir = cfg.output_dir.as_path();
    ensure_dir(cfg)?;
    let (sweep, multistart): (SweepResult, MultiStartOut) = if cfg.multistart.starts > 1 {
        let res = m_sweep_multistart(
            &problem.model,
            &problem.grid,
            &problem.boundary,
            &cfg.schedule,
            &cfg.solve,
            &cfg.multistart(),
            jobs,
        )?;
        let out = MultiStartOut {
            starts: res.runs.len(),
            best: res.best,
            ties: res.ties.clone(),
            sup_of_candidates: res.runs.iter().map(|r| r.sup_of_candidate).collect(),
        };
        (res.runs.into_iter().nth(res.best).expect("best run index"), out)
    } else {
        let res = m_sweep(&problem.model, &problem.grid, &problem.boundary, &cfg.schedule, &cfg.solve)?;
        let out = MultiStartOut { starts: 1, best: 0, ties: vec![0], sup_of_candidates: vec![res.sup_of_candidate] };
        (res, out)
    };

    for rec in &sweep.records {
        write_path(dir, &path_file_name(rec.m), &rec.path)?;
    }
    write_path(dir, CANDIDATE_FILE, &sweep.candidate)?;
    let mut energies = create(dir, ENERGIES_FILE)?;
    writeln!(energies, "m,normalized_root")?;
    for rec in &sweep.records {
        writeln!(energies, "{},{}", rec.m, fmt_f64(rec.normalized_root))?;
    }
    energies.flush()?;

    let residuals = match residual_profile(&problem.model, &sweep.candidate) {
        Ok(profile) => {
            let mut w = create(dir, RESIDUALS_FILE)?;
            profile.write_csv(&mut w)?;
            w.flush()?;
            ResidualsOut { file: Some(RESIDUALS_FILE), max_norm: Some(profile.max_norm), error: None }
        }
        Err(e) => {
            eprintln!("warning: no residual profile: {e}");
            ResidualsOut { file: None, max_norm: None, error: Some(e.to_string()) }
        }
    };

    let out = SweepOut {
        seed: cfg.seed,
        records: sweep
            .records
            .iter()
            .map(|r| RecordOut { m: r.m, normalized_root: r.normalized_root, path_file: path_file_name(r.m), stats: &r.stats })
            .collect(),
        c_sequence: &sweep.c_sequence,
        sup_of_candidate: sweep.sup_of_candidate,
        candidate_file: CANDIDATE_FILE,
        completed: sweep.completed(),
        failure: sweep.failure.as_ref(),
        multistart,
        residuals,
    };
    write_json(dir, SWEEP_FILE, &out)?;

    println!(
        "solved {} powers (last m = {}), sup of candidate = {}",
        sweep.records.len(),
        sweep.records.last().map_or(0, |r| r.m),
        fmt_f64(sweep.sup_of_candidate)
    );
    match &sweep.failure {
        Some(f) => {
            eprintln!("solver failure at m = {}: {}", f.m, f.message);
            Ok(Status::SolverFailure)
        }
        None => Ok(Status::Ok),
    }
}

pub fn load_candidate(cfg: &RunConfig) -> Result<Path> {
    let path = cfg.output_dir.join(CANDIDATE_FILE);
    let file = File::open(&path)
        .map_err(|e| ConfigError(format!("audit: cannot open candidate {}: {e}", path.display())))?;
    let candidate =
        Path::read_csv(BufReader::new(file)).map_err(|e| ConfigError(format!("audit: bad candidate file: {e}")))?;
    if candidate.dim() != cfg.n {
        return Err(ConfigError(format!("audit: candidate has dimension {}, config N = {}", candidate.dim(), cfg.n)).into());
    }
    Ok(candidate)
}

#[derive(Serialize)]
struct AuditOut<'a> {
    seed: u64,
    num_subintervals: usize,
    candidate_file: &'static str,
    report: &'a AuditReport,
}

fn print_audit(report: &AuditReport) {
    println!(
        "audited {} subintervals: {} violations, {} inconclusive, max_deficit = {}",
        report.entries.len() + report.inconclusive.len(),
        report.violations.len(),
        report.inconclusive.len(),
        fmt_f64(report.max_deficit)
    );
    if !report.violations.is_empty() {
        println!("{:>24} {:>24} {:>24} {:>24} {:>24}", "alpha", "beta", "sup_global", "sup_local", "deficit");
        for v in &report.violations {
            println!(
                "{:>24} {:>24} {:>24} {:>24} {:>24}",
                fmt_f64(v.alpha),
                fmt_f64(v.beta),
                fmt_f64(v.sup_global_restricted),
                fmt_f64(v.sup_local_solution),
                fmt_f64(v.deficit)
            );
        }
    }
    for i in &report.inconclusive {
        println!("inconclusive ({}, {}): {}", fmt_f64(i.alpha), fmt_f64(i.beta), i.reason);
    }
}

/// Audits `candidate.csv` from the output directory and writes `audit.json`.
/// With `solve_first`, runs [`run_solve`] beforehand and stops if it fails.
pub fn run_audit(cfg: &RunConfig, jobs: usize, solve_first: bool) -> Result<Status> {
    if solve_first {
        let status = run_solve(cfg, jobs)?;
        if status != Status::Ok {
            return Ok(status);
        }
    }
    let problem = cfg.problem()?;
    let candidate = load_candidate(cfg)?;
    let config = cfg.audit_config();
    let report = audit_absolute_minimality(&problem.model, &candidate, &config, jobs)?;
    ensure_dir(cfg)?;
    write_json(
        &cfg.output_dir,
        AUDIT_FILE,
        &AuditOut { seed: cfg.seed, num_subintervals: config.num_subintervals, candidate_file: CANDIDATE_FILE, report: &report },
    )?;
    print_audit(&report);
    Ok(if report.passed() { Status::Ok } else { Status::Violations })
}

#[derive(Serialize)]
struct HypothesesOut<'a> {
    seed: u64,
    level_convexity: &'a LevelConvexityReport,
    growth: Option<&'a GrowthReport>,
}

/// Samples the level-convexity and (when configured) growth hypotheses and
/// writes `hypotheses.json`.
pub fn run_check(cfg: &RunConfig) -> Result<Status> {
    let problem = cfg.problem()?;
    let plan = cfg.plan();
    let lc = check_level_convexity(&problem.model, &plan)?;
    let growth = match problem.model.growth() {
        Some(g) => Some(check_growth_bounds(&problem.model, g, &plan)?),
        None => None,
    };
    ensure_dir(cfg)?;
    write_json(
        &cfg.output_dir,
        HYPOTHESES_FILE,
        &HypothesesOut { seed: cfg.seed, level_convexity: &lc, growth: growth.as_ref() },
    )?;
    println!("level convexity: {} ({} of {} segments violate)", verdict(lc.pass), lc.violations, lc.samples);
    if let Some(w) = lc.witnesses.first() {
        println!(
            "  witness: x = {}, eta = {:?}, p1 = {:?}, p2 = {:?}, lambda = {}, excess = {}",
            w.x,
            w.eta,
            w.p1,
            w.p2,
            w.lambda,
            w.excess()
        );
    }
    if let Some(g) = &growth {
        println!(
            "growth bounds: {} ({} of {} samples violate, margins {} / {})",
            verdict(g.pass),
            g.violations,
            g.samples,
            fmt_f64(g.lower_margin),
            fmt_f64(g.upper_margin)
        );
    }
    let pass = lc.pass && growth.as_ref().is_none_or(|g| g.pass);
    Ok(if pass { Status::Ok } else { Status::Witness })
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "pass"
    } else {
        "FAIL"
    }
}
