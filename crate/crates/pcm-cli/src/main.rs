use clap::{Parser, Subcommand};
use pcm_cli::config::load_config;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "pcm",
    about = "Convex-minorant objective approximation: benchmarks, wing-rock NMPC, gradient checks, property sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Plain-text config file ([section] headers, key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for CSV artifacts and the manifest.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Comma-separated model kinds (fnn,plse,dlse,eplse,linear-mpc).
    #[arg(long)]
    models: Option<String>,
    /// Root seed overriding the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Parameterized non-convex benchmark: train, score against brute force.
    Case1(CommonArgs),
    /// Wing-rock setpoint tracking: train, score, simulate closed loop.
    Case2(CommonArgs),
    /// Finite-difference validation of all analytic gradients.
    Gradcheck(CommonArgs),
    /// Structural property sweeps (minorant optimality, envelope lemmas).
    Props(CommonArgs),
}

fn resolve(args: &CommonArgs, case2: bool) -> Result<pcm_cli::RunConfig, Box<dyn std::error::Error>> {
    let mut cfg = load_config(args.config.as_deref(), case2)?;
    if let Some(models) = &args.models {
        cfg.set_models(models)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Case1(args) => run_case1_cmd(args),
        Command::Case2(args) => run_case2_cmd(args),
        Command::Gradcheck(args) => run_report_cmd(args, false),
        Command::Props(args) => run_report_cmd(args, true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run_case1_cmd(args: &CommonArgs) -> Result<bool, Box<dyn std::error::Error>> {
    let cfg = resolve(args, false)?;
    let summary = pcm_cli::run_case1(&cfg, &args.out)?;
    for (kind, m) in &summary.metrics {
        println!(
            "{}: minimizer_err={:.6} minvalue_err={:.6} solve_s={:.6}",
            kind.name(),
            m.mean_minimizer_err,
            m.mean_minvalue_err,
            m.mean_solve_seconds
        );
    }
    for (kind, err) in &summary.failures {
        eprintln!("{} FAILED: {err}", kind.name());
    }
    Ok(summary.failures.is_empty())
}

fn run_case2_cmd(args: &CommonArgs) -> Result<bool, Box<dyn std::error::Error>> {
    let cfg = resolve(args, true)?;
    let summary = pcm_cli::run_case2(&cfg, &args.out)?;
    for (name, m) in &summary.metrics {
        println!(
            "{name}: mean_J={:.6} solve_s={:.6} excluded={}",
            m.mean_objective, m.mean_solve_seconds, m.excluded_samples
        );
    }
    for row in &summary.closed_loop {
        println!(
            "{}: terminal |phi err|={:.4} deg, |rate err|={:.4} deg/s, max |input|={:.4}",
            row.name, row.terminal_phi_err_deg, row.terminal_phidot_err_degps, row.max_abs_input
        );
    }
    for (name, err) in &summary.failures {
        eprintln!("{name} FAILED: {err}");
    }
    Ok(summary.failures.is_empty())
}

fn run_report_cmd(args: &CommonArgs, props: bool) -> Result<bool, Box<dyn std::error::Error>> {
    let cfg = resolve(args, false)?;
    let reports = if props {
        pcm_cli::run_props(&cfg, &args.out)?
    } else {
        pcm_cli::run_gradcheck(&cfg, &args.out)?
    };
    let mut all_pass = true;
    for r in &reports {
        println!(
            "{}: {} cases, worst {:.3e} vs threshold {:.0e} -> {}",
            r.suite,
            r.cases,
            r.worst,
            r.threshold,
            if r.pass { "pass" } else { "FAIL" }
        );
        all_pass &= r.pass;
    }
    Ok(all_pass)
}
