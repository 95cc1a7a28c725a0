use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dsteer_cli::{emit_plot_data, load_config, run_realize, run_scenario, CliError, Overrides, Result};
use dsteer_core::planner::CostSpec;
use dsteer_core::realization::{RealizationOptions, ReferenceFamily};
use dsteer_core::MomentVector;

/// Moment-based steering of a scalar linear stochastic system.
#[derive(Debug, Parser)]
#[command(name = "dsteer", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Plan the moment trajectory and realize every control density.
    Plan(RunArgs),
    /// Plan, realize and steer an ensemble of agents.
    SteerEnsemble(RunArgs),
    /// Realize a single control moment vector as a density.
    Realize(RealizeArgs),
    /// Write plots for an existing bundle.
    Report {
        /// Bundle directory.
        bundle: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario file (TOML).
    config: PathBuf,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Seed for the system coefficients.
    #[arg(long)]
    system_seed: Option<u64>,
    /// Seed for the ensemble.
    #[arg(long)]
    ensemble_seed: Option<u64>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long, value_enum)]
    cost: Option<CostArg>,
    /// Optimizer tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Also write plots.
    #[arg(long)]
    report: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum CostArg {
    Smoothness,
    Energy,
}

#[derive(Debug, Args)]
struct RealizeArgs {
    /// Comma-separated moments m1,...,m2n.
    #[arg(long, allow_hyphen_values = true)]
    moments: String,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "gaussian")]
    family: FamilyArg,
    #[arg(long)]
    inflation: Option<f64>,
    #[arg(long)]
    half_width: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FamilyArg {
    Gaussian,
    Cauchy,
}

fn run_command(args: RunArgs, ensemble: bool) -> Result<()> {
    let cfg = load_config(&args.config)?;
    let overrides = Overrides {
        output: args.output,
        system_seed: args.system_seed,
        ensemble_seed: args.ensemble_seed,
        agents: args.agents,
        ensemble: Some(ensemble),
        cost: args.cost.map(|c| match c {
            CostArg::Smoothness => CostSpec::Smoothness,
            CostArg::Energy => CostSpec::Energy,
        }),
        tol: args.tol,
    };
    let cfg = overrides.apply(cfg)?;
    let bundle = run_scenario(&cfg)?;
    let m = &bundle.manifest;
    println!(
        "{}: k0 = {}, total energy = {}, cost = {}",
        bundle.dir.display(),
        m.k0,
        m.total_energy,
        m.cost_value
    );
    if args.report {
        emit_plot_data(&bundle.dir)?;
    }
    Ok(())
}

fn realize_command(args: RealizeArgs) -> Result<()> {
    let values = args
        .moments
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| CliError::Usage(format!("--moments: {e}")))?;
    let moments = MomentVector::new(values).map_err(|e| CliError::Usage(format!("--moments: {e}")))?;
    let defaults = RealizationOptions::default();
    let opts = RealizationOptions {
        family: match args.family {
            FamilyArg::Gaussian => ReferenceFamily::Gaussian,
            FamilyArg::Cauchy => ReferenceFamily::Cauchy,
        },
        inflation: args.inflation.unwrap_or(defaults.inflation),
        half_width: args.half_width.unwrap_or(defaults.half_width),
        tol: args.tol.unwrap_or(defaults.tol),
    };
    let record = run_realize(&moments, &opts, &args.output)?;
    println!(
        "{}: {} iterations, max residual {:e}",
        args.output.display(),
        record.step.iterations,
        record.step.max_residual
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let outcome = match cli.command {
        Command::Plan(a) => run_command(a, false),
        Command::SteerEnsemble(a) => run_command(a, true),
        Command::Realize(a) => realize_command(a),
        Command::Report { bundle } => emit_plot_data(&bundle).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
