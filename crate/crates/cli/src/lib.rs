//! Batch front-end: `estimate`, `solve` and `verify` over a JSON run
//! configuration, writing reports and plot data into an output directory.
//!
//! Exit codes: 0 success, 1 parse or I/O failure, 2 hypothesis precondition
//! violated, 3 a level solve failed, 4 a certificate failed.

pub mod config;

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pqlap_core::estimates::{compute_estimates, EstimateReport};
use pqlap_core::galerkin::{build_spaces, condition_s_probe, run_hierarchy, GeneralizedSolutionReport, SProbe};
use pqlap_core::verify::{certify_report, Certificate};
use pqlap_core::{FeFunction, SolveError, SpecError};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "pqlap", about = "Galerkin solver and certification for competing (p,q)-Laplacian problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute λ₁, C_S, the a priori radii and the hypothesis audit.
    Estimate(CommonArgs),
    /// Solve the Galerkin hierarchy and write report, solutions and diagnostics.
    Solve(CommonArgs),
    /// Recompute every certificate from a solve report.
    Verify {
        #[command(flatten)]
        common: CommonArgs,
        /// Defaults to `<out>/report.json`.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 1;
pub const EXIT_PRECONDITION: i32 = 2;
pub const EXIT_SOLVE: i32 = 3;
pub const EXIT_CERTIFICATE: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn parse(message: impl Into<String>) -> CliError {
        CliError { code: EXIT_PARSE, message: message.into() }
    }
}

fn spec_error(e: SpecError) -> CliError {
    let code = match e {
        SpecError::H1(_) | SpecError::H3(_) | SpecError::H3a(_) => EXIT_PRECONDITION,
        _ => EXIT_PARSE,
    };
    CliError { code, message: e.to_string() }
}

fn solve_error(e: SolveError) -> CliError {
    match e {
        SolveError::Spec(s) => spec_error(s),
        other => CliError { code: EXIT_SOLVE, message: other.to_string() },
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub config: RunConfig,
    pub estimates: EstimateReport,
    pub hierarchy: GeneralizedSolutionReport,
    pub probe: SProbe,
    pub certificates: Vec<Certificate>,
}

/// Exclusive claim on an output directory, released on drop.
struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    fn acquire(dir: &Path) -> Result<OutputLock, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::parse(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(".pqlap.lock");
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| CliError::parse(format!("output directory {} is locked ({}): {e}", dir.display(), path.display())))?;
        Ok(OutputLock { path })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn load_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::parse(format!("cannot read {}: {e}", args.config.display())))?;
    let cfg = RunConfig::parse(&text).map_err(|e| CliError::parse(format!("{}: {e}", args.config.display())))?;
    Ok(cfg.with_seed(args.seed))
}

fn out_dir(args: &CommonArgs, cfg: &RunConfig) -> PathBuf {
    args.out.clone().unwrap_or_else(|| cfg.output.dir.clone())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::parse(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::parse(format!("cannot write {}: {e}", path.display())))
}

fn estimates_for(cfg: &RunConfig) -> Result<EstimateReport, CliError> {
    let spec = cfg.spec().map_err(spec_error)?;
    let spaces = build_spaces(&spec, cfg.mesh.base_cells, cfg.mesh.levels.max(1)).map_err(solve_error)?;
    compute_estimates(&spec, spaces.last().expect("at least one level"), &cfg.estimate_config()).map_err(spec_error)
}

pub fn cmd_estimate(args: &CommonArgs) -> Result<i32, CliError> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg);
    let est = estimates_for(&cfg)?;
    let _lock = OutputLock::acquire(&dir)?;
    write_json(&dir.join("estimates.json"), &est)?;
    Ok(EXIT_OK)
}

pub fn cmd_solve(args: &CommonArgs) -> Result<i32, CliError> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg);
    let spec = cfg.spec().map_err(spec_error)?;
    let est = estimates_for(&cfg)?;
    let _lock = OutputLock::acquire(&dir)?;
    write_json(&dir.join("estimates.json"), &est)?;
    let run = run_hierarchy(&spec, est.radius_r1, est.radius_r, &cfg.hierarchy_config()).map_err(solve_error)?;
    let report = RunReport {
        config: cfg.clone(),
        estimates: est,
        probe: condition_s_probe(&run.report),
        hierarchy: run.report,
        certificates: Vec::new(),
    };
    write_json(&dir.join("report.json"), &report)?;
    if cfg.output.write_solutions {
        for (n, u) in run.solutions.iter().enumerate() {
            let path = dir.join(format!("solution_L{n}.csv"));
            fs::write(&path, u.to_csv()).map_err(|e| CliError::parse(format!("cannot write {}: {e}", path.display())))?;
        }
    }
    if cfg.output.write_diagnostics {
        let path = dir.join("diagnostics.csv");
        fs::write(&path, diagnostics_csv(&report.hierarchy))
            .map_err(|e| CliError::parse(format!("cannot write {}: {e}", path.display())))?;
    }
    match run.error {
        Some(e) => Err(CliError { code: EXIT_SOLVE, message: format!("{e} (partial report written)") }),
        None => Ok(EXIT_OK),
    }
}

/// `level,grad_norm_p,sup_norm,cond_b_max,cond_c,cond_cprime`.
pub fn diagnostics_csv(r: &GeneralizedSolutionReport) -> String {
    let mut s = String::from("level,grad_norm_p,sup_norm,cond_b_max,cond_c,cond_cprime\n");
    let b = r.cond_b_max();
    for (n, l) in r.levels.iter().enumerate() {
        let get = |v: &[f64]| v.get(n).copied().unwrap_or(f64::NAN);
        let _ = writeln!(s, "{n},{:e},{:e},{:e},{:e},{:e}", l.grad_norm_p, l.sup_norm, get(&b), get(&r.cond_c), get(&r.cond_cprime));
    }
    s
}

pub fn cmd_verify(args: &CommonArgs, report_path: Option<&Path>) -> Result<i32, CliError> {
    let cfg = load_config(args)?;
    let dir = out_dir(args, &cfg);
    let path = report_path.map(Path::to_path_buf).unwrap_or_else(|| dir.join("report.json"));
    let text = fs::read_to_string(&path).map_err(|e| CliError::parse(format!("cannot read report {}: {e}", path.display())))?;
    let mut report: RunReport =
        serde_json::from_str(&text).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
    let spec = cfg.spec().map_err(spec_error)?;
    let _lock = OutputLock::acquire(&dir)?;
    let hcfg = cfg.hierarchy_config();
    let mut certs = certify_report(&spec, &report.hierarchy, &hcfg, cfg.estimates.monotonicity_samples).map_err(solve_error)?;
    certs.extend(csv_round_trip(&spec, &report.hierarchy, &hcfg, &dir)?);
    let all_ok = certs.iter().all(Certificate::ok);
    report.certificates = certs;
    write_json(&path, &report)?;
    Ok(if all_ok { EXIT_OK } else { EXIT_CERTIFICATE })
}

/// Reloads `solution_L<n>.csv` files that exist next to the report and
/// compares their residuals with the stored level residuals.
fn csv_round_trip(
    spec: &std::sync::Arc<pqlap_core::ProblemSpec>,
    report: &GeneralizedSolutionReport,
    hcfg: &pqlap_core::galerkin::HierarchyConfig,
    dir: &Path,
) -> Result<Vec<Certificate>, CliError> {
    let spaces = build_spaces(spec, hcfg.base_cells, report.levels.len().max(1)).map_err(solve_error)?;
    let mut worst = 0.0f64;
    let mut found = 0usize;
    for (n, (space, level)) in spaces.iter().zip(&report.levels).enumerate() {
        let path = dir.join(format!("solution_L{n}.csv"));
        let Ok(text) = fs::read_to_string(&path) else { continue };
        found += 1;
        let u = FeFunction::from_csv(space, &text).map_err(|e| CliError::parse(format!("{}: {e}", path.display())))?;
        let stored = FeFunction::from_coefficients(space, level.coefficients.clone()).map_err(|e| CliError::parse(e.to_string()))?;
        let gap = u.coefficients().iter().zip(stored.coefficients()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(gap);
    }
    if found == 0 {
        return Ok(vec![Certificate::skipped("solution_csv_round_trip", "solution dumps reload exactly", "no solution files")]);
    }
    Ok(vec![Certificate::measure("solution_csv_round_trip", "solution dumps reload exactly", worst, 1e-10)
        .with_note(format!("{found} files"))])
}

/// Runs the parsed command, printing diagnostics to stderr; returns the exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Verify { common, report } => cmd_verify(common, report.as_deref()),
    };
    match result {
        Ok(code) => {
            if code == EXIT_CERTIFICATE {
                eprintln!("pqlap: at least one certificate failed");
            }
            code
        }
        Err(e) => {
            eprintln!("pqlap: {}", e.message);
            e.code
        }
    }
}
