//! Grids of simulation runs over methods, vehicle counts and seeds.

use crate::config::{ConfigError, ScenarioConfig};
use crate::domain::MethodKind;
use crate::llm::{ChatClient, FixtureStore, LlmConfig, LlmError, PromptBackend};
use crate::metrics::{aggregate, rounds_by_group_size, summarize, write_aggregate_csv, write_runs_csv, RunSummary};
use crate::negotiation::{NegotiatorBackend, RuleBackend};
use crate::sim::{run_scenario, write_trace, SimError, TraceError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Rule,
    Llm,
    Fixture,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rule" => Ok(BackendKind::Rule),
            "llm" => Ok(BackendKind::Llm),
            "fixture" => Ok(BackendKind::Fixture),
            other => Err(format!("unknown backend {other:?} (expected rule, llm or fixture)")),
        }
    }
}

/// Which negotiator to build and how.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSpec {
    pub kind: BackendKind,
    /// JSONL replay file for the fixture backend.
    pub fixture_path: Option<PathBuf>,
    pub llm: LlmConfig,
    /// Use the rule backend when the chat backend cannot be set up.
    pub fallback_to_rule: bool,
}

#[derive(Debug, Error)]
pub enum BackendSetupError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("fixture backend needs fixture_path")]
    MissingFixture,
    #[error("invalid llm config: {0}")]
    InvalidLlm(String),
}

impl BackendSpec {
    pub fn build(&self) -> Result<Box<dyn NegotiatorBackend>, BackendSetupError> {
        match self.kind {
            BackendKind::Rule => Ok(Box::new(RuleBackend)),
            BackendKind::Fixture => {
                let path = self.fixture_path.as_ref().ok_or(BackendSetupError::MissingFixture)?;
                Ok(Box::new(PromptBackend::new("fixture", FixtureStore::load(path)?)))
            }
            BackendKind::Llm => {
                self.llm.validate().map_err(BackendSetupError::InvalidLlm)?;
                match ChatClient::from_env(self.llm.clone()) {
                    Ok(client) => Ok(Box::new(PromptBackend::new("llm", client))),
                    Err(_) if self.fallback_to_rule => Ok(Box::new(RuleBackend)),
                    Err(e) => Err(e.into()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub methods: Vec<MethodKind>,
    pub vehicle_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    pub backend: BackendSpec,
    pub output_dir: PathBuf,
    /// Base configuration; `n_vehicles` and `seed` are set per cell.
    pub scenario: ScenarioConfig,
    pub write_traces: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            methods: MethodKind::ALL.to_vec(),
            vehicle_counts: vec![2, 4, 8],
            seeds: (0..10).collect(),
            backend: BackendSpec::default(),
            output_dir: PathBuf::from("out"),
            scenario: ScenarioConfig::default(),
            write_traces: true,
        }
    }
}

impl ExperimentSpec {
    pub fn from_path(path: &Path) -> Result<ExperimentSpec, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let spec: ExperimentSpec = serde_json::from_str(&text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.methods.is_empty() || self.vehicle_counts.is_empty() || self.seeds.is_empty() {
            return Err(ConfigError::Invalid("methods, vehicle_counts and seeds must be nonempty".into()));
        }
        if self.vehicle_counts.contains(&0) {
            return Err(ConfigError::Invalid("vehicle counts must be at least 1".into()));
        }
        self.scenario.validate()
    }

    /// Cells in method, count, seed order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &method in &self.methods {
            for &n_vehicles in &self.vehicle_counts {
                for &seed in &self.seeds {
                    out.push(Cell { method, n_vehicles, seed });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub method: MethodKind,
    pub n_vehicles: usize,
    pub seed: u64,
}

impl Cell {
    pub fn trace_name(&self) -> String {
        format!("{}_n{}_s{}.jsonl", self.method, self.n_vehicles, self.seed)
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Backend(#[from] BackendSetupError),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Error)]
pub enum CellError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub summaries: Vec<RunSummary>,
    pub failures: Vec<(Cell, String)>,
}

impl ExperimentReport {
    pub fn complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs one cell and, if `trace_dir` is set, writes its trace there.
pub fn run_cell(
    cell: Cell,
    base: &ScenarioConfig,
    backend: &dyn NegotiatorBackend,
    trace_dir: Option<&Path>,
) -> Result<RunSummary, CellError> {
    let config = ScenarioConfig {
        n_vehicles: cell.n_vehicles,
        seed: cell.seed,
        ..base.clone()
    };
    let trace = run_scenario(cell.method, backend, &config)?;
    if let Some(dir) = trace_dir {
        write_trace(&trace, &dir.join(cell.trace_name()))?;
    }
    Ok(summarize(&trace))
}

/// Runs every cell on up to `jobs` threads and writes `runs.csv`,
/// `aggregate.csv`, `rounds_by_group_size.csv` and, when enabled, one trace
/// per cell under `traces/`.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<ExperimentReport, ExperimentError> {
    spec.validate()?;
    let backend = spec.backend.build()?;
    let backend: &dyn NegotiatorBackend = backend.as_ref();
    fs::create_dir_all(&spec.output_dir)?;
    let trace_dir = spec.output_dir.join("traces");
    if spec.write_traces {
        fs::create_dir_all(&trace_dir)?;
    }
    let trace_dir = spec.write_traces.then_some(trace_dir.as_path());
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?;
    let cells = spec.cells();
    let outcomes: Vec<(Cell, Result<RunSummary, CellError>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&cell| (cell, run_cell(cell, &spec.scenario, backend, trace_dir)))
            .collect()
    });
    let mut report = ExperimentReport {
        summaries: Vec::new(),
        failures: Vec::new(),
    };
    for (cell, outcome) in outcomes {
        match outcome {
            Ok(s) => report.summaries.push(s),
            Err(e) => report.failures.push((cell, e.to_string())),
        }
    }
    write_outputs(&spec.output_dir, &report)?;
    Ok(report)
}

fn write_outputs(dir: &Path, report: &ExperimentReport) -> Result<(), ExperimentError> {
    write_runs_csv(&report.summaries, BufWriter::new(File::create(dir.join("runs.csv"))?))?;
    let rows = aggregate(&report.summaries);
    write_aggregate_csv(&rows, BufWriter::new(File::create(dir.join("aggregate.csv"))?))?;
    let mut w = csv::Writer::from_path(dir.join("rounds_by_group_size.csv"))?;
    w.write_record(["group_size", "rounds_mean", "rounds_min", "rounds_max"])?;
    for (size, (mean, min, max)) in rounds_by_group_size(&report.summaries) {
        w.serialize((size, mean, min, max))?;
    }
    w.flush()?;
    let failures = dir.join("failures.csv");
    if report.failures.is_empty() {
        if failures.exists() {
            fs::remove_file(failures)?;
        }
    } else {
        let mut w = csv::Writer::from_path(failures)?;
        w.write_record(["method", "n_vehicles", "seed", "error"])?;
        for (cell, error) in &report.failures {
            w.serialize((cell.method, cell.n_vehicles, cell.seed, error))?;
        }
        w.flush()?;
    }
    Ok(())
}
