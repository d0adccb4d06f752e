use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use regulab::cli::{
    cmd_certify, cmd_curve, cmd_matching_probe, cmd_probe, cmd_whiten, CliError, ScenarioConfig,
    ScenarioKind,
};

/// Simulation and verification runner for factored data-generating
/// processes.
#[derive(Parser)]
#[command(name = "regulab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration; omit to use a named scenario's defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Named scenario (frac_l1, frac_l2, matching, custom) when no config
    /// file is given.
    #[arg(long)]
    scenario: Option<String>,

    /// Root seed override.
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Reduced sample counts for fast runs.
    #[arg(long)]
    quick: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep the derived-task curve over the grid and emit a CSV.
    Curve(CommonArgs),
    /// Run the continuity certificate; exit 3 when it fails.
    Certify(CommonArgs),
    /// Fit a whitening chain and verify whiteness on held-out data.
    Whiten(CommonArgs),
    /// Emit TV-convergence and regularity tables as CSV.
    Probe(CommonArgs),
    /// Perturbation-stability table for the matching market.
    MatchingProbe(CommonArgs),
}

fn resolve_config(args: &CommonArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match (&args.config, &args.scenario) {
        (Some(path), _) => ScenarioConfig::load(path)?,
        (None, Some(name)) => ScenarioConfig::defaults(ScenarioKind::parse(name)?),
        (None, None) => {
            return Err(CliError::Config(
                "either --config PATH or --scenario NAME is required".into(),
            ))
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.quick {
        cfg.quick = true;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.display().to_string());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ScenarioConfig, command: &str) -> PathBuf {
    match &cfg.out_dir {
        Some(dir) => PathBuf::from(dir),
        None => PathBuf::from("runs").join(format!("{}-{}", cfg.scenario.name(), command)),
    }
}

fn init_thread_pool() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("REGULAB_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw.parse().map_err(|_| {
        CliError::Config(format!(
            "REGULAB_THREADS: expected a positive integer, got `{raw}`"
        ))
    })?;
    if threads == 0 {
        return Err(CliError::Config(
            "REGULAB_THREADS: expected a positive integer, got `0`".into(),
        ));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Config(format!("REGULAB_THREADS: {e}")))
}

fn run() -> Result<i32, CliError> {
    init_thread_pool()?;
    let cli = Cli::parse();
    let (args, name): (&CommonArgs, &str) = match &cli.command {
        Command::Curve(a) => (a, "curve"),
        Command::Certify(a) => (a, "certify"),
        Command::Whiten(a) => (a, "whiten"),
        Command::Probe(a) => (a, "probe"),
        Command::MatchingProbe(a) => (a, "matching-probe"),
    };
    let cfg = resolve_config(args)?;
    let dir = out_dir(&cfg, name);
    let status = match &cli.command {
        Command::Curve(_) => cmd_curve(&cfg, &dir)?,
        Command::Certify(_) => cmd_certify(&cfg, &dir)?,
        Command::Whiten(_) => cmd_whiten(&cfg, &dir)?,
        Command::Probe(_) => cmd_probe(&cfg, &dir)?,
        Command::MatchingProbe(_) => cmd_matching_probe(&cfg, &dir)?,
    };
    Ok(status.exit_code())
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err(err) => {
            eprintln!("regulab: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
