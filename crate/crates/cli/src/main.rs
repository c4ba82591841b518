//! `icdc`: run pipeline stages, print reports, serve the review API.
//!
//! Exit codes: 0 success, 1 validation error, 2 missing upstream artifact.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use icd_chapter::pipeline::{
    export_report, Pipeline, PipelineConfig, PipelineError, ProcessEnv, ReportKind, RunDir, Stage,
    StageOutcome, EXIT_VALIDATION,
};

#[derive(Debug, Parser)]
#[command(name = "icdc", version, about = "Chapter-first ICD-9 coding pipeline")]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true, default_value = "icdc.json")]
    config: PathBuf,
    /// Run id; defaults to one derived from the config hash.
    #[arg(long, global = true)]
    run: Option<String>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run one stage by name, or `all` for the full chain.
    #[arg(long)]
    stage: Option<String>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse notes and diagnoses and merge them per admission.
    Ingest,
    /// Extract the four sections and build short summaries.
    Sectionize,
    /// Rank and clean chapter entities.
    Entities,
    /// Raw, de-biased and influenced weight sets.
    Weights,
    /// Score summaries and sweep thresholds.
    Categorize,
    /// Band counts, impurity and faulty flags.
    Bands,
    /// Train per-code models on validated chapter summaries.
    Train,
    /// Evaluate trained models on their held-out splits.
    Eval,
    /// Print a report: thresholds, bands, metrics or interpretation.
    Report {
        kind: String,
        /// Document id, for interpretation reports.
        #[arg(long)]
        doc: Option<String>,
    },
    /// Serve the review API.
    Serve {
        /// Overrides the config port and ICDC_PORT.
        #[arg(long)]
        port: Option<u16>,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
}

impl Command {
    fn stage(&self) -> Option<Stage> {
        Some(match self {
            Command::Ingest => Stage::Ingest,
            Command::Sectionize => Stage::Sectionize,
            Command::Entities => Stage::Entities,
            Command::Weights => Stage::Weights,
            Command::Categorize => Stage::Categorize,
            Command::Bands => Stage::Bands,
            Command::Train => Stage::Train,
            Command::Eval => Stage::Eval,
            Command::Report { .. } | Command::Serve { .. } => return None,
        })
    }
}

fn print_outcome(o: &StageOutcome) {
    if o.skipped {
        println!("{}: unchanged, skipped", o.stage);
    } else {
        println!("{}: wrote {}", o.stage, o.outputs.join(", "));
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    PipelineConfig::load(&cli.config, &ProcessEnv)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if cli.stage.is_some() && cli.command.is_some() {
        return Err(PipelineError::Config("--stage cannot be combined with a command".into()));
    }
    if let Some(name) = &cli.stage {
        let pipeline = Pipeline::new(load_config(&cli)?, cli.run.as_deref(), cli.seed)?;
        println!("run {}", pipeline.run().id());
        if name == "all" {
            for stage in Stage::ALL {
                print_outcome(&pipeline.run_stage(stage)?);
            }
        } else {
            print_outcome(&pipeline.run_stage(name.parse()?)?);
        }
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(PipelineError::Config("no command given; see --help".into()));
    };
    if let Some(stage) = command.stage() {
        let pipeline = Pipeline::new(load_config(&cli)?, cli.run.as_deref(), cli.seed)?;
        println!("run {}", pipeline.run().id());
        print_outcome(&pipeline.run_stage(stage)?);
        return Ok(());
    }
    match command {
        Command::Report { kind, doc } => {
            let kind: ReportKind = kind.parse()?;
            let config = load_config(&cli)?;
            let run = match &cli.run {
                Some(id) => RunDir::open(&config.paths.runs_dir, id)?,
                None => {
                    let p = Pipeline::new(config, None, cli.seed)?;
                    RunDir::open(&p.config().paths.runs_dir, p.run().id())?
                }
            };
            print!("{}", export_report(&run, kind, doc.as_deref())?);
        }
        Command::Serve { port, host } => {
            let config = load_config(&cli)?;
            let addr = SocketAddr::new(*host, port.unwrap_or(config.port));
            let runtime = tokio::runtime::Runtime::new().map_err(|source| PipelineError::Io {
                path: PathBuf::from("<runtime>"),
                source,
            })?;
            runtime
                .block_on(icd_chapter_service::serve(config.paths.runs_dir.clone(), addr))
                .map_err(|source| PipelineError::Io {
                    path: PathBuf::from(addr.to_string()),
                    source,
                })?;
        }
        _ => unreachable!("stage commands handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
