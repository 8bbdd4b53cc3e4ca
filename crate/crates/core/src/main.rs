use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kausal::cli_io::{output_dir, run_experiment, ExperimentConfig, ShiftSpec, Stage};
use kausal::Error;

#[derive(Parser)]
#[command(name = "kausal", version, about = "Deep-Koopman causal discovery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the configured system (or ingest its CSV) and write the trajectory.
    Simulate(Common),
    /// Causal measure against time shift, in one or both directions.
    Causal(Common),
    /// Permutation test of the cause-to-effect measure.
    Test(Common),
    /// Marginal against joint conditional forecasts.
    Forecast(Common),
    /// Eigenvalue scan and critical coupling of the recharge oscillator.
    Stability(Common),
    /// Sliding-window magnitude scored against extreme-event labels.
    Auroc(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment TOML.
    #[arg(long)]
    config: PathBuf,
    /// Replaces the configured seeds; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Replaces the configured shifts: `1,2,5` or `start:end[:step]`.
    #[arg(long)]
    shifts: Option<String>,
    /// Output root; the experiment writes into `<out>/<name>`.
    #[arg(long, env = "KAUSAL_OUT", default_value = "runs")]
    out: PathBuf,
}

fn run(stage: Stage, args: Common) -> Result<(), Error> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if !args.seed.is_empty() {
        config.seeds = args.seed;
    }
    if let Some(text) = args.shifts {
        config.causal.shifts = ShiftSpec::parse(&text)?;
    }
    config.validate()?;
    let dir = output_dir(&config, &args.out);
    let manifest = run_experiment(&config, stage, &dir)?;
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    eprintln!(
        "{}: {} files in {} ({:.1} s)",
        stage.as_str(),
        manifest.outputs.len(),
        dir.display(),
        manifest.elapsed_seconds
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (stage, args) = match cli.command {
        Command::Simulate(a) => (Stage::Simulate, a),
        Command::Causal(a) => (Stage::Causal, a),
        Command::Test(a) => (Stage::Test, a),
        Command::Forecast(a) => (Stage::Forecast, a),
        Command::Stability(a) => (Stage::Stability, a),
        Command::Auroc(a) => (Stage::Auroc, a),
    };
    match run(stage, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut inner = &e;
            while let Error::Stage { source, .. } = inner {
                inner = source;
            }
            match inner {
                Error::Config(_) | Error::Csv { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
