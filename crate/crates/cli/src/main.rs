use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use portfolio_transport::pipeline::{self, selftest, PipelineConfig, Stage};
use portfolio_transport::trajectory::Inference;
use portfolio_transport::Error;

#[derive(Parser)]
#[command(
    name = "portfolio-transport",
    version,
    about = "Research-portfolio transport pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true, value_enum)]
    inference: Option<InferenceArg>,

    /// Comma-separated periods, e.g. `2000-2009,2015-2019`.
    #[arg(long, global = true, value_delimiter = ',')]
    periods: Option<Vec<String>>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    Ingest,
    Capital,
    Fit,
    Flows,
    Iot,
    Metrics,
    Regress,
    Synth,
    Report,
    /// Every stage from ingest through report.
    All,
    /// Run the built-in oracle checks.
    Selftest,
}

#[derive(ValueEnum, Clone, Copy)]
enum InferenceArg {
    Map,
    Hmc,
}

fn load(cli: &Cli) -> Result<PipelineConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(i) = cli.inference {
        cfg.trajectory.inference = match i {
            InferenceArg::Map => Inference::Map,
            InferenceArg::Hmc => Inference::Hmc,
        };
    }
    if let Some(p) = &cli.periods {
        cfg.periods = p.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 1,
        Error::MissingArtifact(_) => 2,
        _ => 3,
    }
}

fn report_error(e: &Error) {
    let mut body = serde_json::json!({
        "error": match e {
            Error::Config { .. } => "invalid_config",
            Error::MissingArtifact(_) => "missing_artifact",
            _ => "failed",
        },
        "message": e.to_string(),
    });
    match e {
        Error::Config { field, .. } => body["field"] = field.clone().into(),
        Error::MissingArtifact(p) => body["path"] = p.display().to_string().into(),
        _ => {}
    }
    eprintln!("{body}");
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let cfg = load(cli)?;
    let stage = match cli.command {
        Command::Ingest => Stage::Ingest,
        Command::Capital => Stage::Capital,
        Command::Fit => Stage::Fit,
        Command::Flows => Stage::Flows,
        Command::Iot => Stage::Iot,
        Command::Metrics => Stage::Metrics,
        Command::Regress => Stage::Regress,
        Command::Synth => Stage::Synth,
        Command::Report => Stage::Report,
        Command::All => {
            pipeline::run_all(&cfg)?;
            return Ok(ExitCode::SUCCESS);
        }
        Command::Selftest => {
            let checks = selftest::run(cfg.seed);
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let passed = checks.iter().filter(|c| c.passed).count();
            println!("{passed} passed, {} failed", checks.len() - passed);
            return Ok(if passed == checks.len() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            });
        }
    };
    pipeline::run(stage, &cfg)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            report_error(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
