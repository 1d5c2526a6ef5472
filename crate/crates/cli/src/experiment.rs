//! Experiment files: model source, run configuration, seed sweep and oracle
//! comparison. See `docs/experiment-files.md`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use crmopo::cmdp::exact_objectives;
use crmopo::crmopo::{run, select_output, OutputRule, RunConfig, RunTrace};
use crmopo::oracle::{optimality_gap, safe_pareto_front, FrontierPoint, PolicyGrid};
use crmopo::{generate, load_cmdp, GeneratorSpec, TabularCmdp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Environment variable holding the default output directory.
pub const OUT_DIR_ENV: &str = "CRMOPO_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "crmopo-out";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SUMMARY_FILE: &str = "summary.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelSource {
    /// CMDP JSON file; relative paths are resolved against the experiment
    /// file's directory.
    File { path: PathBuf },
    Generator(GeneratorSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Grid points per probability axis.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Largest acceptable gap; defaults to `0.05 · r_max / (1 − γ)`.
    #[serde(default)]
    pub gap_budget: Option<f64>,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            resolution: default_resolution(),
            gap_budget: None,
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_resolution() -> usize {
    101
}
fn default_output_rule() -> OutputRule {
    OutputRule::Uniform
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_rule")]
    pub output_rule: OutputRule,
    pub model: ModelSource,
    pub run: RunConfig,
    #[serde(default)]
    pub oracle: OracleSpec,
}

impl ExperimentSpec {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut spec: ExperimentSpec =
            toml::from_str(&text).with_context(|| format!("parsing experiment file {}", path.display()))?;
        if let ModelSource::File { path: model_path } = &mut spec.model {
            if model_path.is_relative() {
                if let Some(dir) = path.parent() {
                    *model_path = dir.join(&*model_path);
                }
            }
        }
        Ok(spec)
    }

    pub fn load_model(&self) -> Result<TabularCmdp> {
        match &self.model {
            ModelSource::File { path } => load_cmdp(path).with_context(|| format!("loading model {}", path.display())),
            ModelSource::Generator(spec) => generate(spec).context("generating model"),
        }
    }

    /// Fills every default so the spec can serve as a self-contained manifest.
    pub fn resolve(mut self, model: &TabularCmdp) -> Result<Self> {
        if self.seeds.is_empty() {
            bail!("an experiment needs at least one seed");
        }
        let out = match self.output_dir.take() {
            Some(dir) => dir,
            None => std::env::var_os(OUT_DIR_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
        };
        self.output_dir = Some(absolute(&out)?);
        if let ModelSource::File { path } = &mut self.model {
            *path = fs::canonicalize(&*path).with_context(|| format!("resolving {}", path.display()))?;
        }
        self.run.ca_npg.preferences = self.run.preferences(model)?;
        if self.oracle.enabled && self.oracle.gap_budget.is_none() {
            self.oracle.gap_budget = Some(0.05 * model.value_bound());
        }
        Ok(self)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    if path.is_absolute() {
        Ok(path.to_path_buf())
    } else {
        Ok(std::env::current_dir()?.join(path))
    }
}

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_seed{seed}.csv")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: SummaryHeader,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryHeader {
    pub n_seeds: usize,
    pub horizon: usize,
    pub step_size: f64,
    pub tolerance: f64,
    pub output_rule: OutputRule,
    pub limits: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frontier_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_budget: Option<f64>,
    pub failed_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub trace: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub n0_size: usize,
    pub rectify_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_iteration: Option<usize>,
    /// Exact `f_i` of the selected policy, objectives then constraints.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objectives: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraints: Option<Vec<f64>>,
    /// Every constraint within its limit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub constraints_satisfied: Option<bool>,
    /// Every constraint within its limit plus the tolerance `β`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub within_tolerance: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_within_budget: Option<bool>,
}

impl RunSummary {
    fn new(seed: u64) -> Self {
        Self {
            seed,
            trace: trace_file_name(seed),
            error: None,
            n0_size: 0,
            rectify_steps: 0,
            selected_iteration: None,
            objectives: None,
            constraints: None,
            constraints_satisfied: None,
            within_tolerance: None,
            gap: None,
            gap_within_budget: None,
        }
    }

    fn failed(seed: u64, error: String) -> Self {
        Self {
            error: Some(error),
            ..Self::new(seed)
        }
    }
}

/// Outcome of [`run_experiment`].
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub summary: Summary,
}

impl ExperimentOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.summary.experiment.failed_runs == 0
    }
}

fn summarize(
    model: &TabularCmdp,
    spec: &ExperimentSpec,
    seed: u64,
    trace: &RunTrace,
    frontier: Option<&[FrontierPoint]>,
) -> Result<RunSummary> {
    let m = model.n_objectives();
    let mut summary = RunSummary::new(seed);
    summary.n0_size = trace.n0.len();
    summary.rectify_steps = trace.records.len() - trace.n0.len();
    if trace.n0.is_empty() {
        return Ok(summary);
    }
    let selected = select_output(trace, spec.output_rule, seed)?;
    let mut values = exact_objectives(model, &selected.policy()?)?;
    let constraints = values.split_off(m);
    let limits = model.limits();
    let beta = trace.hyperparams.tolerance;
    summary.selected_iteration = Some(selected.t);
    summary.constraints_satisfied = Some(constraints.iter().zip(limits).all(|(f, c)| f <= c));
    summary.within_tolerance = Some(constraints.iter().zip(limits).all(|(f, c)| *f <= c + beta));
    if let Some(frontier) = frontier {
        if !frontier.is_empty() {
            let gap = optimality_gap(frontier, &values)?;
            summary.gap = Some(gap);
            summary.gap_within_budget = spec.oracle.gap_budget.map(|b| gap <= b);
        }
    }
    summary.objectives = Some(values);
    summary.constraints = Some(constraints);
    Ok(summary)
}

fn write_toml<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(value).context("serializing TOML")?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Runs every seed of a resolved spec and writes traces, summary and
/// manifest into the output directory.
///
/// The manifest is written first, so an unwritable directory fails before
/// any run starts. Failed runs are recorded in the summary; the remaining
/// artifacts are kept.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let model = spec.load_model()?;
    let spec = spec.clone().resolve(&model)?;
    let dir = spec.output_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    write_toml(&spec, &dir.join(MANIFEST_FILE))?;
    let hyper = spec.run.hyperparams(&model)?;

    let frontier = if spec.oracle.enabled {
        let grid = PolicyGrid::for_model(&model, spec.oracle.resolution)?;
        Some(safe_pareto_front(&model, &grid)?)
    } else {
        None
    };

    let runs: Vec<RunSummary> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let outcome = (|| -> Result<RunSummary> {
                let config = RunConfig {
                    seed,
                    ..spec.run.clone()
                };
                let trace = run(&model, &config)?;
                let path = dir.join(trace_file_name(seed));
                let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                trace.write_csv(std::io::BufWriter::new(file))?;
                summarize(&model, &spec, seed, &trace, frontier.as_deref())
            })();
            outcome.unwrap_or_else(|e| RunSummary::failed(seed, format!("{e:#}")))
        })
        .collect();

    let summary = Summary {
        experiment: SummaryHeader {
            n_seeds: spec.seeds.len(),
            horizon: spec.run.horizon,
            step_size: hyper.step_size,
            tolerance: hyper.tolerance,
            output_rule: spec.output_rule,
            limits: model.limits().to_vec(),
            frontier_points: frontier.as_ref().map(Vec::len),
            gap_budget: if spec.oracle.enabled { spec.oracle.gap_budget } else { None },
            failed_runs: runs.iter().filter(|r| r.error.is_some()).count(),
        },
        runs,
    };
    write_toml(&summary, &dir.join(SUMMARY_FILE))?;
    Ok(ExperimentOutcome { output_dir: dir, summary })
}
