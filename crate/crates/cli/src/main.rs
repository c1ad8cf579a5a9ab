use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use forensics_core::pipeline::{Run, RunConfig, Stage};
use forensics_core::simworld::{serve_sim, SimWorld};
use forensics_core::wire::conformance::{run_suite, CheckOutcome, ConformanceInputs};
use forensics_core::wire::{EndpointConfig, HttpTransport};
use forensics_core::Error;
use tracing_subscriber::EnvFilter;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BUDGET: u8 = 3;
const EXIT_TRANSPORT: u8 = 4;

#[derive(Parser)]
#[command(name = "forensics", version, about = "Recover what a text classifier's labels mean from hard-label queries")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config and the cache's recorded seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum number of backend dispatches, counted over the whole cache.
    #[arg(long, global = true)]
    budget: Option<u64>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build anchor pools from the lexical hierarchy and corpus.
    Probe,
    /// Estimate the sampling radius of every pool member.
    Radius,
    /// Score candidates and keep the top K prototypes per label.
    Select,
    /// Sample each label's distribution and evaluate it.
    Sample,
    /// Embedding-space separability per encoder and the 2D projection.
    Geometry,
    /// Propose and rank natural-language label descriptions.
    Interpret,
    /// Match this run's labels to reference runs.
    Align,
    /// Assemble report.json and the CSV tables from stage artifacts.
    Report,
    /// Every stage in order, resuming from cached artifacts.
    Run,
    /// Serve a synthetic world over HTTP until interrupted.
    ServeSim {
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8000)]
        port: u16,
    },
    /// Check a backend against the wire protocol.
    Conformance {
        /// Base URL of a served backend.
        #[arg(long, conflicts_with = "world", required_unless_present = "world")]
        endpoint: Option<String>,
        /// Check a synthetic world in process instead.
        #[arg(long)]
        world: Option<PathBuf>,
        #[arg(long, default_value = "The morning was bright and warm.")]
        text: String,
        #[arg(long, default_value = "good weather")]
        hypothesis: String,
        #[arg(long, default_value = "Write one natural sentence that uses the word 'sunny'.")]
        prompt: String,
        /// Also require seeded generate requests to repeat exactly.
        #[arg(long)]
        deterministic_generate: bool,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::BudgetExhausted { .. } => EXIT_BUDGET,
        Error::Transport { .. } => EXIT_TRANSPORT,
        _ => EXIT_FAILURE,
    }
}

fn open_run(cli: &Cli) -> Result<Run, Error> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required for pipeline commands".into()))?;
    let mut config = RunConfig::from_file(path)?;
    if cli.budget.is_some() {
        config.budget = cli.budget;
    }
    if let Some(dir) = &cli.cache_dir {
        config.cache_dir = dir.clone();
    }
    let run = Run::open(config, cli.seed)?;
    if run.seed_drawn {
        eprintln!("seed {} was drawn at random; pass --seed {} to reproduce", run.meta.seed, run.meta.seed);
    }
    Ok(run)
}

fn print_outcomes(outcomes: &[CheckOutcome]) -> bool {
    for o in outcomes {
        let mark = if o.passed { "PASS" } else { "FAIL" };
        if o.detail.is_empty() {
            println!("{mark}  {}", o.name);
        } else {
            println!("{mark}  {}: {}", o.name, o.detail);
        }
    }
    outcomes.iter().all(|o| o.passed)
}

fn execute(cli: &Cli) -> Result<u8, Error> {
    let stage = match &cli.command {
        Command::Probe => Stage::Probe,
        Command::Radius => Stage::Radius,
        Command::Select => Stage::Select,
        Command::Sample => Stage::Sample,
        Command::Geometry => Stage::Geometry,
        Command::Interpret => Stage::Interpret,
        Command::Align => Stage::Align,
        Command::Report => Stage::Report,
        Command::Run => {
            let run = open_run(cli)?;
            let report = run.run_all()?;
            for (label, r) in &report.labels {
                println!("{label}\tconsistency {:.3}\tprototypes {}", r.consistency, r.prototypes.len());
            }
            for (label, reason) in &report.degraded {
                println!("{label}\tdegraded: {reason}");
            }
            println!("report written to {}", run.path(Stage::Report.artifact()).display());
            return Ok(0);
        }
        Command::ServeSim { world, host, port } => {
            let server = serve_sim(SimWorld::from_file(world)?, host, *port)?;
            println!("serving {} at {}", world.display(), server.base_url());
            server.wait();
            return Ok(0);
        }
        Command::Conformance {
            endpoint,
            world,
            text,
            hypothesis,
            prompt,
            deterministic_generate,
        } => {
            let inputs = ConformanceInputs {
                text: text.clone(),
                hypothesis: hypothesis.clone(),
                prompt: prompt.clone(),
                deterministic_generate: *deterministic_generate,
            };
            let outcomes = match (endpoint, world) {
                (_, Some(w)) => run_suite(&SimWorld::from_file(w)?, &inputs),
                (Some(url), None) => run_suite(&HttpTransport::new(&EndpointConfig::new(url.clone())), &inputs),
                (None, None) => unreachable!("clap requires one of --endpoint and --world"),
            };
            return Ok(if print_outcomes(&outcomes) { 0 } else { EXIT_FAILURE });
        }
    };
    let run = open_run(cli)?;
    run.run_stage(stage)?;
    println!("{} done; artifact {}", stage.name(), run.path(stage.artifact()).display());
    Ok(0)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
