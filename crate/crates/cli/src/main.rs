use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pkml_cli::commands::{resolve_out, Outcome, Runner};
use pkml_cli::config::{ExperimentConfig, OUT_DIR_ENV};
use pkml_cli::error::{CliError, CliResult, ExitKind};
use pkml_cli::selftest;

#[derive(Debug, Parser)]
#[command(name = "pkml", version, about = "Synthetic pharmacokinetic modelling experiments")]
struct Cli {
    /// TOML experiment config; defaults apply to omitted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Global seed, overriding `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding `PKML_OUT_DIR` and `run.out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Train the two ablation arms concurrently.
    #[arg(long, global = true)]
    parallel_ablation: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the three synthetic datasets.
    Generate,
    /// Train the concentration forecaster.
    TrainTransformer,
    /// Forecast the test split with the saved forecaster.
    Forecast,
    /// Train one diffusion model.
    TrainDiffusion {
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
    /// Draw virtual patients from a saved diffusion model.
    SamplePopulation {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
    /// Constraint-penalty ablation: train both arms and compare violation rates.
    Ablation,
    /// Leave-one-species-out training of the cross-species model.
    TrainAllometry {
        #[arg(long)]
        holdout: Option<String>,
    },
    /// Predict the held-out species with the saved cross-species model.
    PredictSpecies {
        #[arg(long)]
        holdout: Option<String>,
    },
    /// Emit all figure data files.
    ReproduceFigures {
        /// Generate data and train every model first.
        #[arg(long)]
        train: bool,
    },
    /// Run the fast numerical invariant suite.
    Selftest,
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if cli.parallel_ablation {
        cfg.run.parallel_ablation = true;
    }
    let env = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from);
    cfg.run.out_dir = resolve_out(cli.out.as_deref(), env.as_deref(), &cfg);
    Ok(cfg)
}

fn run(cli: Cli) -> CliResult<Option<String>> {
    if let Command::Selftest = cli.command {
        let checks = selftest::run_all();
        for c in &checks {
            println!("{}", c.line());
        }
        let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
        return Ok((!failed.is_empty()).then(|| failed.join(", ")));
    }
    let cfg = load_config(&cli)?;
    let out = cfg.run.out_dir.clone();
    let runner = Runner::new(cfg, out)?;
    let holdout = |h: &Option<String>| h.clone().unwrap_or_else(|| runner.config.run.holdout.clone());
    let outcome: Outcome = match &cli.command {
        Command::Generate => runner.generate()?,
        Command::TrainTransformer => runner.train_transformer()?,
        Command::Forecast => runner.forecast()?,
        Command::TrainDiffusion { lambda } => runner.train_diffusion(*lambda)?,
        Command::SamplePopulation { n, lambda } => runner.sample_population(*n, *lambda)?,
        Command::Ablation => runner.ablation()?,
        Command::TrainAllometry { holdout: h } => runner.train_allometry(&holdout(h))?,
        Command::PredictSpecies { holdout: h } => runner.predict_species(&holdout(h))?,
        Command::ReproduceFigures { train } => runner.reproduce_figures(*train)?,
        Command::Selftest => unreachable!(),
    };
    for line in &outcome.summary {
        println!("{line}");
    }
    println!("outputs in {}", runner.out.display());
    Ok(outcome.check_failure)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(None) => ExitCode::from(ExitKind::Ok as u8),
        Ok(Some(msg)) => {
            eprintln!("error: {}", CliError::Criteria(msg));
            ExitCode::from(ExitKind::Criteria as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_kind() as u8)
        }
    }
}
