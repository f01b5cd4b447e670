//! Command-line batch workbench: drives the library's pipelines from a
//! TOML run configuration and writes CSV artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use simcal::config::RunConfig;
use simcal::workflow::Workspace;

#[derive(Parser)]
#[command(
    name = "simcal",
    version,
    about = "Bayesian calibration of numerical simulators",
    arg_required_else_help = true
)]
struct Cli {
    /// Run configuration file.
    #[arg(short, long, global = true, default_value = "simcal.toml")]
    config: PathBuf,

    /// Override the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Suppress progress output.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic field data from the configured scenario.
    Generate,
    /// Rank code inputs by influence with an elementary-effects screen.
    Screen,
    /// Build the training design, run the code, and fit the emulator.
    Emulate,
    /// Sample the posterior of the configured model.
    Calibrate,
    /// Calibrate, then band-predict at the field inputs.
    Predict,
    /// Cross-validate predictions on held-out blocks of days.
    Validate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> simcal::Result<()> {
    let config = RunConfig::load(&cli.config)?;
    let ws = Workspace::new(config, cli.seed, cli.out.clone());
    match cli.command {
        Command::Generate => {
            let outcome = ws.generate()?;
            println!("wrote {} rows to {}", outcome.rows, outcome.path.display());
        }
        Command::Screen => {
            let outcome = ws.screen()?;
            println!("{:<8} {:>12} {:>12}", "input", "mu_star", "sigma");
            for ((name, mu), sigma) in outcome
                .names
                .iter()
                .zip(&outcome.mu_star)
                .zip(&outcome.sigma)
            {
                println!("{name:<8} {mu:>12.3} {sigma:>12.3}");
            }
            println!("wrote {}", outcome.path.display());
        }
        Command::Emulate => {
            let outcome = ws.emulate()?;
            println!(
                "fitted emulator on {} runs: Q^2 = {:.4}, variance = {:.4}, range = {:.4}",
                outcome.n_runs, outcome.q2, outcome.variance, outcome.range
            );
        }
        Command::Calibrate => {
            let run = ws.calibrate()?;
            print_summary(&run.summary);
        }
        Command::Predict => {
            let outcome = ws.predict()?;
            print_summary(&outcome.run.summary);
            println!(
                "predictive band at level {:.2}: coverage {:.3}, rmse {:.3}, mean width {:.3}",
                outcome.band.level(),
                outcome.coverage,
                outcome.rmse,
                outcome.band.mean_width()
            );
        }
        Command::Validate => {
            let report = ws.validate()?;
            println!(
                "{} replicates at level {:.2}: mean coverage {:.3}, mean rmse {:.3}",
                report.n_replicates(),
                report.level,
                report.coverage,
                report.rmse
            );
        }
    }
    Ok(())
}

fn print_summary(summary: &simcal::mcmc::PosteriorSummary) {
    let level = summary.level * 100.0;
    println!(
        "{:<14} {:>12} {:>12} {:>12} {:>24}",
        "parameter",
        "map",
        "mean",
        "sd",
        format!("{level:.0}% interval")
    );
    for (j, name) in summary.names.iter().enumerate() {
        println!(
            "{:<14} {:>12.5} {:>12.5} {:>12.5}   [{:>9.5}, {:>9.5}]",
            name, summary.map[j], summary.mean[j], summary.sd[j], summary.lo[j], summary.hi[j]
        );
    }
}
