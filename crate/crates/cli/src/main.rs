mod export;

use clap::{Args, Parser, Subcommand};
use crossnego::experiment::{
    run_cell, run_experiment, BackendKind, BackendSetupError, BackendSpec, Cell, ExperimentError, ExperimentSpec,
};
use crossnego::llm::{LlmConfig, LlmError};
use crossnego::metrics::write_runs_csv;
use crossnego::sim::read_trace;
use crossnego::{MethodKind, ScenarioConfig};
use export::Artifact;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BACKEND: u8 = 3;

#[derive(Parser)]
#[command(name = "crossnego", version, about = "Grouped pass-order negotiation at unsignalized intersections")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trace and summary.
    Run(RunArgs),
    /// Sweep methods, vehicle counts and seeds.
    Experiment(ExperimentArgs),
    /// Extract intermediate artifacts from a trace.
    Export(ExportArgs),
}

#[derive(Args)]
struct BackendArgs {
    /// Negotiation backend.
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Replay file for the fixture backend.
    #[arg(long)]
    fixture: Option<PathBuf>,
    /// JSON chat-client settings for the llm backend.
    #[arg(long)]
    llm_config: Option<PathBuf>,
    /// Fall back to the rule backend when the llm backend cannot start.
    #[arg(long)]
    llm_fallback: bool,
}

impl BackendArgs {
    fn apply(&self, spec: &mut BackendSpec) -> Result<(), String> {
        if let Some(kind) = self.backend {
            spec.kind = kind;
        }
        if let Some(path) = &self.fixture {
            spec.fixture_path = Some(path.clone());
        }
        if let Some(path) = &self.llm_config {
            let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
            spec.llm = serde_json::from_str::<LlmConfig>(&text).map_err(|e| format!("malformed llm config: {e}"))?;
        }
        spec.fallback_to_rule |= self.llm_fallback;
        Ok(())
    }
}

#[derive(Args)]
struct RunArgs {
    /// JSON scenario configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "IIGN")]
    method: MethodKind,
    #[arg(long)]
    n_vehicles: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment specification; defaults to the full 3x3x10 grid.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodKind>>,
    #[arg(long, value_delimiter = ',')]
    vehicle_counts: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Skip writing per-run traces.
    #[arg(long)]
    no_traces: bool,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct ExportArgs {
    /// Trace JSONL written by `run` or `experiment`.
    #[arg(long)]
    trace: PathBuf,
    #[arg(long, value_enum)]
    what: Artifact,
    #[arg(long, default_value = "out")]
    output_dir: PathBuf,
}

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn backend_exit(e: &BackendSetupError) -> u8 {
    match e {
        BackendSetupError::Llm(LlmError::Fixture(_) | LlmError::FixtureMiss { .. }) => EXIT_CONFIG,
        BackendSetupError::Llm(_) => EXIT_BACKEND,
        BackendSetupError::MissingFixture | BackendSetupError::InvalidLlm(_) => EXIT_CONFIG,
    }
}

fn cmd_run(args: RunArgs) -> ExitCode {
    let mut config = match &args.config {
        Some(path) => match ScenarioConfig::from_path(path) {
            Ok(c) => c,
            Err(e) => return fail(EXIT_CONFIG, e),
        },
        None => ScenarioConfig::default(),
    };
    if let Some(n) = args.n_vehicles {
        config.n_vehicles = n;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Err(e) = config.validate() {
        return fail(EXIT_CONFIG, e);
    }
    let mut spec = BackendSpec::default();
    if let Err(e) = args.backend.apply(&mut spec) {
        return fail(EXIT_CONFIG, e);
    }
    let backend = match spec.build() {
        Ok(b) => b,
        Err(e) => return fail(backend_exit(&e), e),
    };
    if let Err(e) = std::fs::create_dir_all(&args.output_dir) {
        return fail(EXIT_FAILURE, e);
    }
    let cell = Cell {
        method: args.method,
        n_vehicles: config.n_vehicles,
        seed: config.seed,
    };
    let summary = match run_cell(cell, &config, backend.as_ref(), Some(&args.output_dir)) {
        Ok(s) => s,
        Err(e) => return fail(EXIT_FAILURE, e),
    };
    let trace_path = args.output_dir.join(cell.trace_name());
    let summary_path = trace_path.with_extension("csv");
    let written = File::create(&summary_path)
        .map_err(csv::Error::from)
        .and_then(|f| write_runs_csv(std::slice::from_ref(&summary), BufWriter::new(f)));
    if let Err(e) = written {
        return fail(EXIT_FAILURE, e);
    }
    println!(
        "{} n={} seed={} collided={} mean_delay={:.3}",
        cell.method,
        cell.n_vehicles,
        cell.seed,
        summary.collided,
        summary.mean_delay()
    );
    println!("{}", trace_path.display());
    println!("{}", summary_path.display());
    ExitCode::SUCCESS
}

fn cmd_experiment(args: ExperimentArgs) -> ExitCode {
    let mut spec = match &args.spec {
        Some(path) => match ExperimentSpec::from_path(path) {
            Ok(s) => s,
            Err(e) => return fail(EXIT_CONFIG, e),
        },
        None => ExperimentSpec::default(),
    };
    if let Some(m) = args.methods {
        spec.methods = m;
    }
    if let Some(c) = args.vehicle_counts {
        spec.vehicle_counts = c;
    }
    if let Some(s) = args.seeds {
        spec.seeds = s;
    }
    if let Some(dir) = args.output_dir {
        spec.output_dir = dir;
    }
    spec.write_traces &= !args.no_traces;
    if let Err(e) = args.backend.apply(&mut spec.backend) {
        return fail(EXIT_CONFIG, e);
    }
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    match run_experiment(&spec, jobs.max(1)) {
        Ok(report) => {
            println!("{} runs written to {}", report.summaries.len(), spec.output_dir.display());
            if report.complete() {
                ExitCode::SUCCESS
            } else {
                for (cell, error) in &report.failures {
                    eprintln!("{} n={} seed={}: {error}", cell.method, cell.n_vehicles, cell.seed);
                }
                ExitCode::from(EXIT_FAILURE)
            }
        }
        Err(ExperimentError::Config(e)) => fail(EXIT_CONFIG, e),
        Err(ExperimentError::Backend(e)) => fail(backend_exit(&e), e),
        Err(e) => fail(EXIT_FAILURE, e),
    }
}

fn cmd_export(args: ExportArgs) -> ExitCode {
    let trace = match read_trace(&args.trace) {
        Ok(t) => t,
        Err(e) => return fail(EXIT_CONFIG, e),
    };
    if let Err(e) = std::fs::create_dir_all(&args.output_dir) {
        return fail(EXIT_FAILURE, e);
    }
    match export::export(&trace, args.what, &args.output_dir) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(EXIT_FAILURE, e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Export(args) => cmd_export(args),
    }
}
