use std::path::PathBuf;
use std::process::ExitCode;

use aethercast_cli::commands::{self, CliError};
use aethercast_cli::config::{parse_config, ExperimentConfig, Overrides};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "aethercast",
    version,
    about = "Hourly PM2.5 forecasting benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// sarimax | additive | arnet
    #[arg(long, global = true)]
    model: Option<String>,
    /// walkforward | frozen | frozen-corrected
    #[arg(long, global = true)]
    regime: Option<String>,
    /// Bias smoothing factor in (0, 1).
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    lat: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    lon: Option<f64>,
    /// Range start, RFC 3339 or YYYY-MM-DD.
    #[arg(long, global = true)]
    start: Option<String>,
    /// Range end (exclusive), RFC 3339 or YYYY-MM-DD.
    #[arg(long, global = true)]
    end: Option<String>,
    /// Hourly CSV input instead of fetching.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            model: self.model.clone(),
            regime: self.regime.clone(),
            alpha: self.alpha,
            seed: self.seed,
            out: self.out.clone(),
            lat: self.lat,
            lon: self.lon,
            start: self.start.clone(),
            end: self.end.clone(),
            csv: self.csv.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Download pollutant and weather data and write an hourly CSV.
    Fetch(#[command(flatten)] Common),
    /// Fit preprocessing on the training segment and write its state.
    Prepare(#[command(flatten)] Common),
    /// Relevance scores and mRMR ranking on the training segment.
    SelectFeatures(#[command(flatten)] Common),
    /// Run one model under one regime and write its report.
    Run(#[command(flatten)] Common),
    /// Re-score an existing run directory.
    Report {
        /// Directory written by `run`.
        run_dir: PathBuf,
        /// Where to write the regenerated files (defaults to run_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Every model under walk-forward and corrected frozen deployment.
    Bench {
        #[command(flatten)]
        common: Common,
        /// CSV of `model,regime,mae,rmse` reference numbers.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
}

fn config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let cfg = parse_config(common.config.as_deref(), &common.overrides())?;
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Fetch(c) => {
            let path = commands::fetch(&config(&c)?)?;
            println!("{}", path.display());
        }
        Command::Prepare(c) => {
            for p in commands::prepare(&config(&c)?)? {
                println!("{}", p.display());
            }
        }
        Command::SelectFeatures(c) => {
            for p in commands::select_features(&config(&c)?)? {
                println!("{}", p.display());
            }
        }
        Command::Run(c) => {
            let r = commands::run(&config(&c)?)?;
            println!(
                "{} {} windows={}/{} mae={:.4} rmse={:.4}{}",
                r.model,
                r.regime,
                r.windows.len(),
                r.planned_windows,
                r.aggregate.mae,
                r.aggregate.rmse,
                if r.partial { " partial" } else { "" }
            );
        }
        Command::Report { run_dir, out } => {
            let r = commands::report(&run_dir, out.as_deref())?;
            println!(
                "{} {} mae={:.4} rmse={:.4}",
                r.model, r.regime, r.aggregate.mae, r.aggregate.rmse
            );
        }
        Command::Bench { common, reference } => {
            let cfg = config(&common)?;
            for row in commands::bench(&cfg, reference.as_deref())? {
                let fmt = |v: Option<f64>| v.map_or_else(|| "-".into(), |v| format!("{v:.4}"));
                println!(
                    "{} {} mae={} rmse={}",
                    row.model,
                    row.regime,
                    fmt(row.mae),
                    fmt(row.rmse)
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
