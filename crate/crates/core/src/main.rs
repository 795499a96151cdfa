use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use newsignal::cli_reports::{cmd_synth, run_pipeline, run_stage, CliError, Context, RunConfig, Stage, StageSummary};
use tracing_subscriber::EnvFilter;

/// Headline sentiment signals: ingest, score, build panels, regress, backtest, report.
#[derive(Debug, Parser)]
#[command(name = "newsignal", version)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, default_value = "newsignal.toml")]
    config: PathBuf,
    /// Artifact directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed override for anything random (synthetic data).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse, filter and deduplicate headlines; restrict returns to the universe.
    Ingest,
    /// Score kept headlines with the configured backend.
    Score,
    /// Aggregate scores per firm-day and join them to returns.
    Signal,
    /// Estimate the configured fixed-effect regressions.
    Regress,
    /// Form long-short portfolios overall and by size.
    Backtest,
    /// Render tables and plot-ready series; verify artifact digests.
    Report,
    /// Run every stage in order.
    Run,
    /// Write a seeded synthetic corpus and a matching config.
    Synth {
        /// Destination directory.
        #[arg(long, default_value = "synthetic")]
        dir: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest => "ingest",
            Command::Score => "score",
            Command::Signal => "signal",
            Command::Regress => "regress",
            Command::Backtest => "backtest",
            Command::Report => "report",
            Command::Run => "run",
            Command::Synth { .. } => "synth",
        }
    }
}

fn execute(cli: &Cli) -> Result<Vec<StageSummary>, CliError> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }
    if let Command::Synth { dir } = &cli.command {
        let path = cmd_synth(dir, cli.seed.unwrap_or(newsignal::synthetic::SyntheticSpec::default().seed))?;
        eprintln!("wrote synthetic corpus; config at {}", path.display());
        return Ok(Vec::new());
    }
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let ctx = Context::new(config, cli.output_dir.clone())?;
    let stage = match cli.command {
        Command::Ingest => Stage::Ingest,
        Command::Score => Stage::Score,
        Command::Signal => Stage::Signal,
        Command::Regress => Stage::Regress,
        Command::Backtest => Stage::Backtest,
        Command::Report => Stage::Report,
        Command::Run => return run_pipeline(&ctx),
        Command::Synth { .. } => unreachable!(),
    };
    Ok(vec![run_stage(&ctx, stage)?])
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .with_ansi(std::io::IsTerminal::is_terminal(&std::io::stderr()))
        .init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(summaries) => {
            for s in summaries {
                println!("{}", serde_json::to_string(&s).expect("summary serializes"));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let error = serde_json::json!({
                "error": {
                    "command": cli.command.name(),
                    "kind": e.kind(),
                    "message": e.to_string(),
                }
            });
            eprintln!("{error}");
            ExitCode::FAILURE
        }
    }
}
