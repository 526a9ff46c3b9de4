use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use piezo::config::{parse_config, Analysis};
use piezo::run::run;

#[derive(Parser)]
#[command(version, about = "Adiabatic currents and polarization of slowly deformed crystals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// output directory (overrides `run.out`)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// log progress to stderr
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// the analyses listed in the config
    Run,
    /// band surfaces and gap certificate
    Bands,
    /// Θ and Ω on the mesh
    Curvature,
    /// polarization change from curvature and from the transported gauge
    Polarize,
    /// Chern numbers and the three ΔP routes
    Pump,
    /// Nenciu projectors, intertwiners and residual slopes
    Superadiabatic,
    /// propagated currents against the curvature prediction
    Dynamics,
    /// wavepacket against the corrected semiclassical flow
    Semiclassics,
    /// inversion and time-reversal checks
    Symmetry,
    /// every analysis
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: &Cli) -> Result<bool, Box<dyn std::error::Error>> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let text = match &cli.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => return Err("--config is required".into()),
    };
    let mut cfg = parse_config(&text)?;
    let only = match cli.command {
        Command::Run => None,
        Command::All => Some(Analysis::ALL.to_vec()),
        Command::Bands => Some(vec![Analysis::Bands]),
        Command::Curvature => Some(vec![Analysis::Curvature]),
        Command::Polarize => Some(vec![Analysis::Polarize]),
        Command::Pump => Some(vec![Analysis::Pump]),
        Command::Superadiabatic => Some(vec![Analysis::Superadiabatic]),
        Command::Dynamics => Some(vec![Analysis::Dynamics]),
        Command::Semiclassics => Some(vec![Analysis::Semiclassics]),
        Command::Symmetry => Some(vec![Analysis::Symmetry]),
    };
    if let Some(a) = only {
        cfg.analyses = a;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    let output = run(&cfg)?;
    output.write(&cfg.out)?;
    for f in &output.report.failures {
        eprintln!("failed: {f}");
    }
    println!(
        "{} analyses, {} -> {}",
        output.report.analyses.len(),
        if output.report.pass { "pass" } else { "FAIL" },
        cfg.out.display()
    );
    Ok(output.report.pass)
}
