//! Command-line front end: problem ingestion, the bound/sample/safety
//! commands and plot-data emission.
//!
//! Machine output (reports, summaries, CSV) goes to files or stdout;
//! diagnostics and progress go to stderr only. Exit codes are a stable
//! contract: 0 success, 2 unreadable/malformed input, 3 well-formed input
//! describing an invalid problem, 4 solver failure.

use crate::conic::{self, Backend, SolverOptions};
use crate::model::{Normalization, Objective, Problem};
use crate::problem::{poly_from_terms, ProblemFile};
use crate::recovery::recover;
use crate::relaxation::{extract_certificate, Relaxation};
use crate::report::{
    CertificateFile, LiouvilleCheck, RecoveredFile, ReportFile, SamplingSummary, SolveStats,
    SummaryFile,
};
use crate::simulate::{
    bounding_box, empirical_peak, empirical_scalars, sample_trajectories, write_csv, Block,
    SimOptions, Trajectory,
};
use clap::{Args, Parser, Subcommand};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Parser)]
#[command(
    name = "peakbound",
    version,
    about = "Certified peak bounds for uncertain dynamical systems"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the moment relaxation of a problem file and write a report.
    Bound(BoundArgs),
    /// Sample trajectories to CSV plus an empirical-peak summary.
    Sample(SampleArgs),
    /// Bound a maximin objective and report a safety verdict.
    Safety(BoundArgs),
    /// Turn bound reports into plot-ready CSV bundles.
    Plotdata(PlotArgs),
}

#[derive(Args)]
struct BoundArgs {
    /// Problem file (JSON, schema peakbound/1).
    problem: PathBuf,
    /// Relaxation order; defaults to the file's options.order.
    #[arg(long)]
    order: Option<u32>,
    /// Solver backend: embedded or clarabel.
    #[arg(long, default_value = "embedded")]
    backend: String,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-iteration solver trace on stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct SampleArgs {
    /// Problem file (JSON, schema peakbound/1).
    problem: PathBuf,
    /// Trajectory count; defaults to the file's options.samples, then 2000.
    #[arg(long)]
    samples: Option<usize>,
    /// RNG seed; defaults to the file's options.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output prefix: writes <prefix>.csv and <prefix>.summary.json.
    #[arg(long)]
    out: PathBuf,
    /// Existing bound report; fills the soundness gap in the summary.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Bound reports to render.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Output directory for the CSV bundles.
    #[arg(long, default_value = "plotdata")]
    out: PathBuf,
    /// Grid resolution per state axis for certificate level sets.
    #[arg(long, default_value_t = 61)]
    grid: usize,
    /// Trajectory overlays per report.
    #[arg(long, default_value_t = 50)]
    trajectories: usize,
}

/// Parses `std::env::args` and runs one command, returning the process exit
/// code. Never panics on user input.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // Clap reserves 2 for usage errors and 0 for --help/--version,
        // matching the exit contract.
        Err(e) => return e.exit_code_with_print(),
    };
    match cli.command {
        Command::Bound(args) => cmd_bound(&args, false),
        Command::Safety(args) => cmd_bound(&args, true),
        Command::Sample(args) => cmd_sample(&args),
        Command::Plotdata(args) => cmd_plotdata(&args),
    }
}

trait ExitPrint {
    fn exit_code_with_print(self) -> i32;
}

impl ExitPrint for clap::Error {
    fn exit_code_with_print(self) -> i32 {
        use clap::error::ErrorKind;
        let code = match self.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
            _ => EXIT_PARSE,
        };
        let _ = self.print();
        code
    }
}

fn fail(code: i32, err: impl Display) -> i32 {
    eprintln!("error: {err}");
    code
}

fn parse_backend(name: &str) -> Option<Backend> {
    match name {
        "embedded" => Some(Backend::Embedded),
        #[cfg(feature = "bridge-clarabel")]
        "clarabel" => Some(Backend::Clarabel),
        _ => None,
    }
}

/// Shared solve pipeline of the bound and safety commands; safety
/// additionally requires a maximin objective and emits a verdict.
fn cmd_bound(args: &BoundArgs, safety: bool) -> i32 {
    let file = match ProblemFile::from_path(&args.problem) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_PARSE, e),
    };
    let problem = match file.to_problem() {
        Ok(p) => p,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };
    if safety && !matches!(problem.objective, Objective::Maximin(_)) {
        return fail(
            EXIT_VALIDATION,
            "safety needs objective_mode \"maximin\" (a negative bound certifies avoidance)",
        );
    }
    let Some(order) = args.order.or(file.options.order) else {
        return fail(
            EXIT_VALIDATION,
            "no relaxation order: pass --order or set options.order",
        );
    };
    let Some(backend) = parse_backend(&args.backend) else {
        return fail(
            EXIT_VALIDATION,
            format!("unknown backend {:?}", args.backend),
        );
    };

    let ranges = file.options.scale.as_deref();
    let (scaled, norm) = match problem.normalize(ranges) {
        Ok(pair) => pair,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };
    let relax = match Relaxation::build(&scaled, order) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };
    let summary = relax.summary();
    eprintln!(
        "{}: order {order}, {} scalars, {} equalities, largest block {}",
        file.name,
        summary.num_scalars,
        summary.num_equalities,
        summary.blocks.iter().map(|b| b.1).max().unwrap_or(0)
    );

    let solver_options = SolverOptions {
        verbose: args.verbose,
        ..Default::default()
    };
    let started = Instant::now();
    let result = match conic::solve(&relax.program, backend, &solver_options) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_SOLVER, e),
    };
    let solve_seconds = started.elapsed().as_secs_f64();
    if !result.status.is_usable() {
        return fail(
            EXIT_SOLVER,
            format!("solver finished with status {}", result.status.as_str()),
        );
    }

    let certificate = extract_certificate(&relax, &result);
    let point = recover(&relax, &result);
    let liouville = liouville_check(&relax, &file, &norm);

    let bound = result.objective;
    let report = ReportFile {
        schema: crate::problem::SCHEMA.into(),
        name: file.name.clone(),
        problem: Some(args.problem.display().to_string()),
        order,
        backend: backend.as_str().into(),
        bound,
        sqrt_bound: (file.options.sqrt_report)
            .then(|| problem.value_transform.apply(bound)),
        status: result.status.as_str().into(),
        verdict: safety.then(|| verdict(bound).into()),
        solve_stats: SolveStats {
            iterations: result.iterations,
            primal_residual: result.primal_residual,
            dual_residual: result.dual_residual,
            relative_gap: result.relative_gap,
            solve_seconds,
        },
        certificate: Some(CertificateFile::new(&certificate, scaled.is_discrete(), &norm)),
        recovered: Some(RecoveredFile::new(&point, &norm)),
        sampling: None,
        liouville: Some(liouville),
        seed: file.options.seed,
        hold: file.options.hold,
    };

    let mut line = format!(
        "{}: bound {:.6} ({}, {} iterations, {:.2} s)",
        file.name,
        bound,
        result.status.as_str(),
        result.iterations,
        solve_seconds
    );
    if let Some(s) = report.sqrt_bound {
        line.push_str(&format!(", sqrt {s:.4}"));
    }
    if let Some(v) = &report.verdict {
        line.push_str(&format!(", verdict: {v}"));
    }
    eprintln!("{line}");

    match &args.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, report.to_json()) {
                return fail(EXIT_PARSE, format!("cannot write {}: {e}", path.display()));
            }
        }
        None => println!("{}", report.to_json()),
    }
    EXIT_OK
}

fn verdict(bound: f64) -> &'static str {
    if bound < 0.0 {
        "certified safe"
    } else {
        "not certified"
    }
}

/// Balance-row residual of one sampled trajectory in the relaxation's own
/// coordinates. Continuous residuals are quadrature-limited, so the check
/// reruns with halved steps and requires first-order decay; discrete sums
/// telescope and must sit at rounding level.
fn liouville_check(relax: &Relaxation, file: &ProblemFile, norm: &Normalization) -> LiouvilleCheck {
    let residual_at = |substeps: u32| -> Option<f64> {
        let opts = SimOptions {
            trajectories: 1,
            seed: file.options.seed,
            hold: file.options.hold.map(|h| h / norm.time_scale),
            substeps,
            sim_time: None,
        };
        let trajectories = sample_trajectories(&relax.problem, &opts).ok()?;
        let traj = trajectories.first()?;
        Some(relax.balance_residual(&empirical_scalars(relax, traj)))
    };
    let Some(residual) = residual_at(1) else {
        return LiouvilleCheck {
            residual: f64::NAN,
            halved_step_residual: None,
            ratio: None,
            pass: false,
        };
    };
    if relax.problem.is_discrete() || residual <= 1e-10 {
        return LiouvilleCheck {
            residual,
            halved_step_residual: None,
            ratio: None,
            pass: residual <= 1e-10,
        };
    }
    let halved = residual_at(2);
    let ratio = halved.map(|h| residual / h);
    LiouvilleCheck {
        residual,
        halved_step_residual: halved,
        ratio,
        pass: ratio.is_some_and(|r| r >= 1.8),
    }
}

fn cmd_sample(args: &SampleArgs) -> i32 {
    let file = match ProblemFile::from_path(&args.problem) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_PARSE, e),
    };
    let problem = match file.to_problem() {
        Ok(p) => p,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };
    let seed = args.seed.unwrap_or(file.options.seed);
    let opts = SimOptions {
        trajectories: args.samples.or(file.options.samples).unwrap_or(2000),
        seed,
        hold: file.options.hold,
        substeps: 1,
        sim_time: None,
    };
    let trajectories = match sample_trajectories(&problem, &opts) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };
    let empirical_max = empirical_peak(&problem, &trajectories);

    let bound = args.report.as_deref().map(ReportFile::from_path);
    let gap = match bound {
        Some(Ok(report)) => Some(report.bound - empirical_max),
        Some(Err(e)) => return fail(EXIT_PARSE, e),
        None => None,
    };

    let csv_path = args.out.with_extension("csv");
    let summary_path = args.out.with_extension("summary.json");
    let summary = SummaryFile {
        schema: crate::problem::SCHEMA.into(),
        name: file.name.clone(),
        seed,
        sampling: SamplingSummary {
            num: trajectories.len(),
            empirical_max,
            gap,
        },
    };
    let write = || -> std::io::Result<()> {
        let mut csv = Vec::new();
        write_csv(&problem, &trajectories, &mut csv).map_err(std::io::Error::other)?;
        std::fs::write(&csv_path, csv)?;
        std::fs::write(&summary_path, summary.to_json())?;
        Ok(())
    };
    if let Err(e) = write() {
        return fail(EXIT_PARSE, format!("cannot write outputs: {e}"));
    }
    eprintln!(
        "{}: {} trajectories, empirical max {:.6}{}",
        file.name,
        trajectories.len(),
        empirical_max,
        gap.map(|g| format!(", gap to bound {g:.2e}")).unwrap_or_default()
    );
    EXIT_OK
}

fn cmd_plotdata(args: &PlotArgs) -> i32 {
    if args.reports.is_empty() {
        return fail(EXIT_PARSE, "no reports given");
    }
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        return fail(EXIT_PARSE, format!("cannot create {}: {e}", args.out.display()));
    }
    for path in &args.reports {
        let code = plot_one(path, args);
        if code != EXIT_OK {
            return code;
        }
    }
    EXIT_OK
}

fn plot_one(report_path: &Path, args: &PlotArgs) -> i32 {
    let report = match ReportFile::from_path(report_path) {
        Ok(r) => r,
        Err(e) => return fail(EXIT_PARSE, e),
    };
    let Some(problem_ref) = &report.problem else {
        return fail(
            EXIT_VALIDATION,
            format!("report {} does not name its problem file", report_path.display()),
        );
    };
    let problem_path = resolve_relative(problem_ref, report_path);
    let file = match ProblemFile::from_path(&problem_path) {
        Ok(f) => f,
        Err(e) => return fail(EXIT_PARSE, e),
    };
    let problem = match file.to_problem() {
        Ok(p) => p,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };

    let opts = SimOptions {
        trajectories: args.trajectories,
        seed: report.seed,
        hold: report.hold,
        substeps: 1,
        sim_time: None,
    };
    let trajectories = match sample_trajectories(&problem, &opts) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };
    let traj_path = args.out.join(format!("{}.trajectories.csv", report.name));
    let write_traj = || -> std::io::Result<()> {
        let mut csv = Vec::new();
        write_csv(&problem, &trajectories, &mut csv).map_err(std::io::Error::other)?;
        std::fs::write(&traj_path, csv)
    };
    if let Err(e) = write_traj() {
        return fail(EXIT_PARSE, format!("cannot write {}: {e}", traj_path.display()));
    }

    let Some(cert) = &report.certificate else {
        eprintln!(
            "warning: report {} has no certificate; emitting trajectories only",
            report_path.display()
        );
        return EXIT_OK;
    };
    let grid_path = args.out.join(format!("{}.levelset.csv", report.name));
    match level_set_csv(&problem, &report, cert, &trajectories, args.grid) {
        Ok(csv) => {
            if let Err(e) = std::fs::write(&grid_path, csv) {
                return fail(EXIT_PARSE, format!("cannot write {}: {e}", grid_path.display()));
            }
        }
        Err(e) => return fail(EXIT_VALIDATION, e),
    }
    eprintln!(
        "{}: wrote {} and {}",
        report.name,
        traj_path.display(),
        grid_path.display()
    );
    EXIT_OK
}

/// Paths inside reports are resolved as given first, then relative to the
/// report's own directory, so bundles stay relocatable.
fn resolve_relative(target: &str, anchor: &Path) -> PathBuf {
    let direct = PathBuf::from(target);
    if direct.exists() {
        return direct;
    }
    match anchor.parent() {
        Some(dir) => dir.join(target),
        None => direct,
    }
}

/// Certificate level-set samples over the first two state axes: columns
/// `x1,x2,margin` with `margin = min_t v(t, x, theta) - gamma` in user
/// coordinates. Trajectories stay inside `margin <= 0`, so the zero contour
/// brackets them; remaining states and parameters are held at the recovered
/// point when one was accepted, else at their set centers.
fn level_set_csv(
    problem: &Problem,
    report: &ReportFile,
    cert: &CertificateFile,
    trajectories: &[Trajectory],
    grid: usize,
) -> Result<String, String> {
    let vars = problem.vars;
    let v = poly_from_terms(&cert.v, vars, "certificate").map_err(|e| e.to_string())?;
    let norm = match &cert.scaling {
        Some(s) => Normalization {
            time_scale: s.time_scale,
            x_center: s.x_center.clone(),
            x_half: s.x_half.clone(),
        },
        None => Normalization::identity(vars.nx),
    };

    let anchor = anchor_point(problem, report, trajectories);
    let (theta, mut x_base) = anchor;
    let ranges = grid_ranges(problem, trajectories);
    let axes = vars.nx.min(2);
    let grid = grid.max(2);

    // Minimum of v over a time grid; v is constant in t for discrete
    // problems, where the basis carries no time variable.
    let t_samples: Vec<f64> = if problem.is_discrete() {
        vec![0.0]
    } else {
        (0..=32).map(|i| i as f64 / 32.0).collect()
    };
    let w_zero = vec![0.0; vars.nw];
    let margin_at = |x_user: &[f64]| -> f64 {
        let xs = norm.x_to_scaled(x_user);
        t_samples
            .iter()
            .map(|&t| v.eval(t, &xs, &theta, &w_zero))
            .fold(f64::INFINITY, f64::min)
            - cert.gamma
    };

    let mut out = String::new();
    match axes {
        1 => {
            out.push_str("x1,margin\n");
            for i in 0..grid {
                x_base[0] = lerp(ranges[0], i, grid);
                out.push_str(&format!("{},{}\n", x_base[0], margin_at(&x_base)));
            }
        }
        _ => {
            out.push_str("x1,x2,margin\n");
            for i in 0..grid {
                for j in 0..grid {
                    x_base[0] = lerp(ranges[0], i, grid);
                    x_base[1] = lerp(ranges[1], j, grid);
                    out.push_str(&format!(
                        "{},{},{}\n",
                        x_base[0],
                        x_base[1],
                        margin_at(&x_base)
                    ));
                }
            }
        }
    }
    Ok(out)
}

fn lerp((lo, hi): (f64, f64), i: usize, n: usize) -> f64 {
    lo + (hi - lo) * i as f64 / (n - 1) as f64
}

/// Parameter vector and full state vector to hold fixed while gridding.
fn anchor_point(
    problem: &Problem,
    report: &ReportFile,
    trajectories: &[Trajectory],
) -> (Vec<f64>, Vec<f64>) {
    let vars = problem.vars;
    if let Some(rec) = report.recovered.as_ref().filter(|r| r.accepted) {
        return (rec.theta.clone(), rec.x.clone());
    }
    let theta = bounding_box(&problem.param_set, Block::Th, vars.nth)
        .map(|b| b.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect())
        .unwrap_or_else(|| vec![0.0; vars.nth]);
    let x = trajectories
        .first()
        .map(|tr| tr.samples[0].x.clone())
        .unwrap_or_else(|| vec![0.0; vars.nx]);
    (theta, x)
}

/// Grid ranges per axis: the state set's box when recognizable, else the
/// sampled trajectories' extent, padded a little either way.
fn grid_ranges(problem: &Problem, trajectories: &[Trajectory]) -> Vec<(f64, f64)> {
    let nx = problem.vars.nx;
    let pad = |(lo, hi): (f64, f64)| -> (f64, f64) {
        let w = (hi - lo).max(1e-6);
        (lo - 0.05 * w, hi + 0.05 * w)
    };
    if let Some(bounds) = bounding_box(&problem.state_set, Block::X, nx) {
        return bounds.into_iter().map(pad).collect();
    }
    let mut lo = vec![f64::INFINITY; nx];
    let mut hi = vec![f64::NEG_INFINITY; nx];
    for tr in trajectories {
        for s in &tr.samples {
            for i in 0..nx {
                lo[i] = lo[i].min(s.x[i]);
                hi[i] = hi[i].max(s.x[i]);
            }
        }
    }
    (0..nx)
        .map(|i| {
            if lo[i] <= hi[i] {
                pad((lo[i], hi[i]))
            } else {
                (-1.0, 1.0)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backend_names_parse() {
        assert_eq!(parse_backend("embedded"), Some(Backend::Embedded));
        assert_eq!(parse_backend("simplex"), None);
        #[cfg(feature = "bridge-clarabel")]
        assert_eq!(parse_backend("clarabel"), Some(Backend::Clarabel));
    }

    #[test]
    fn verdict_is_strictly_negative() {
        assert_eq!(verdict(-0.1), "certified safe");
        assert_eq!(verdict(0.0), "not certified");
        assert_eq!(verdict(0.3), "not certified");
    }

    #[test]
    fn relative_resolution_prefers_existing_then_anchor_dir() {
        let dir = std::env::temp_dir();
        let anchor = dir.join("report.json");
        let resolved = resolve_relative("missing.json", &anchor);
        assert_eq!(resolved, dir.join("missing.json"));
    }
}
