//! Command-line driver: solve (minimize + certify + export), threshold
//! (Lemma 7 diagnostic), and verify (re-certify a saved solution file).
//!
//! Exit codes: 0 success, 2 usage error, 3 solver did not converge,
//! 4 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use hsys::energy::evaluate;
use hsys::equivariance::{equivariance_defect, SymmetryOrder};
use hsys::grid::GridSpec;
use hsys::minimizer::{minimize, threshold_check, InitMode, MinimizeConfig};
use hsys::report::{
    load_solution, save_solution, write_json, ArtifactPaths, ConfigEcho, RunReport, Timings,
    TraceSummary, REPORT_SCHEMA_VERSION,
};
use hsys::surface::{double_surface, export_obj, export_ply};
use hsys::verification::{certify, certify_fields, CertificateTolerances};

#[derive(Parser)]
#[command(name = "hsys", version, about = "Equivariant H-system energy minimizer on the annulus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize E over the equivariant class, certify, and export artifacts.
    Solve(SolveArgs),
    /// Lemma 7 threshold diagnostic: compare sqrt(m) G_hat with E(x, y).
    Threshold(ThresholdArgs),
    /// Recompute phi and the certificate for a saved solution file.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct CommonGrid {
    /// Inner radius of the annulus, in (0, 1).
    #[arg(long)]
    r0: f64,
    /// Radial nodes.
    #[arg(long, default_value_t = 128)]
    nr: usize,
    /// Angular nodes (even, divisible by m).
    #[arg(long, default_value_t = 256)]
    ntheta: usize,
    /// Symmetry order of the equivariant class F_m.
    #[arg(long)]
    m: usize,
    /// Gradient-norm stopping tolerance.
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    /// Iteration budget.
    #[arg(long, default_value_t = 10_000)]
    max_iters: usize,
    /// RNG seed for the equivariant initial perturbation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    grid: CommonGrid,
    /// Initial pair: "random" (seeded equivariant) or "xy" (coordinates).
    #[arg(long, default_value = "random")]
    init: String,
    /// Run report path (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Solution file path (JSON with base64 payloads).
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Doubled-surface OBJ path.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Doubled-surface binary PLY path.
    #[arg(long)]
    ply: Option<PathBuf>,
    /// Split exported quads into triangles.
    #[arg(long, default_value_t = false)]
    triangulate: bool,
    /// Also run the Lemma 7 threshold diagnostic and embed it in the report.
    #[arg(long, default_value_t = false)]
    threshold: bool,
}

#[derive(Args)]
struct ThresholdArgs {
    #[command(flatten)]
    grid: CommonGrid,
    /// Report path (JSON); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Solution file written by `solve --solution`.
    #[arg(long)]
    input: PathBuf,
    /// Certificate path (JSON); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_USAGE: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_RUNTIME: u8 = 4;

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Solve(args) => cmd_solve(args),
        Command::Threshold(args) => cmd_threshold(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                hsys::Error::InvalidSpec(_)
                | hsys::Error::InvalidConfig(_)
                | hsys::Error::Divisibility { .. } => EXIT_USAGE,
                _ => EXIT_RUNTIME,
            };
            ExitCode::from(code)
        }
    }
}

/// HSYS_THREADS caps internal parallelism; unset means the rayon default.
fn init_threads() {
    #[cfg(feature = "parallel")]
    if let Ok(v) = std::env::var("HSYS_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn build_config(g: &CommonGrid, init: InitMode) -> hsys::Result<MinimizeConfig> {
    let spec = GridSpec::new(g.r0, g.nr, g.ntheta)?;
    let m = SymmetryOrder::new(g.m)?;
    let mut cfg = MinimizeConfig::new(spec, m);
    cfg.grad_tol = g.tol;
    cfg.max_iters = g.max_iters;
    cfg.seed = g.seed;
    cfg.init = init;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_solve(args: SolveArgs) -> hsys::Result<ExitCode> {
    let started = Instant::now();
    let init = match args.init.as_str() {
        "random" => InitMode::RandomEquivariant,
        "xy" => InitMode::PaperXy,
        other => {
            return Err(hsys::Error::InvalidConfig(format!(
                "unknown --init '{other}' (expected 'random' or 'xy')"
            )))
        }
    };
    let cfg = build_config(&args.grid, init)?;
    let sol = minimize(&cfg)?;
    let solve_ms = started.elapsed().as_secs_f64() * 1e3;

    let certify_started = Instant::now();
    let grad_norm = sol.trace.records.last().map_or(0.0, |r| r.grad_norm);
    let tol = CertificateTolerances::grid_aware(&sol.pair.a.grid).with_convergence(grad_norm);
    let certificate = certify(&sol, &tol);
    let defect = equivariance_defect(&sol.pair, sol.m)?;
    let threshold = if args.threshold {
        Some(threshold_check(cfg.spec, cfg.m, &cfg)?)
    } else {
        None
    };
    let certify_ms = certify_started.elapsed().as_secs_f64() * 1e3;

    let export_started = Instant::now();
    let mut artifacts = ArtifactPaths::default();
    if let Some(path) = &args.solution {
        save_solution(&sol, path)?;
        artifacts.solution = Some(path.display().to_string());
    }
    if args.mesh.is_some() || args.ply.is_some() {
        let mesh = double_surface(&sol)?;
        if let Some(path) = &args.mesh {
            export_obj(&mesh, path, args.triangulate)?;
            artifacts.mesh_obj = Some(path.display().to_string());
        }
        if let Some(path) = &args.ply {
            export_ply(&mesh, path, args.triangulate)?;
            artifacts.mesh_ply = Some(path.display().to_string());
        }
    }
    let export_ms = export_started.elapsed().as_secs_f64() * 1e3;

    let report = RunReport {
        schema_version: REPORT_SCHEMA_VERSION.to_string(),
        config: ConfigEcho::from_config(&cfg, &args.init),
        converged: sol.converged,
        energy: (&sol.eval).into(),
        trace: TraceSummary::from_trace(&sol.trace),
        certificate,
        threshold,
        equivariance_defect: defect,
        timings: Timings {
            solve_ms,
            certify_ms,
            export_ms,
            total_ms: started.elapsed().as_secs_f64() * 1e3,
        },
        artifacts,
    };
    write_json(&report, &args.out)?;
    println!(
        "E = {:.12}, converged = {}, certificate passed = {}",
        report.energy.value, report.converged, report.certificate.passed
    );
    if sol.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_NOT_CONVERGED))
    }
}

fn cmd_threshold(args: ThresholdArgs) -> hsys::Result<ExitCode> {
    let cfg = build_config(&args.grid, InitMode::RandomEquivariant)?;
    let report = threshold_check(cfg.spec, SymmetryOrder::new(args.grid.m)?, &cfg)?;
    match &args.out {
        Some(path) => write_json(&report, path)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> hsys::Result<ExitCode> {
    let loaded = load_solution(&args.input)?;
    // phi, lambda, E all recomputed; the stored values are never trusted
    let eval = evaluate(&loaded.pair)?;
    let tol = CertificateTolerances::grid_aware(&loaded.pair.a.grid);
    let report = certify_fields(&loaded.pair.a, &loaded.pair.b, &eval, &tol);
    match &args.out {
        Some(path) => write_json(&report, path)?,
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(ExitCode::SUCCESS)
}
