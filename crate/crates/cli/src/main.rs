use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use crmopo::crmopo::OutputRule;
use crmopo::io::to_json;
use crmopo::oracle::{evaluate_grid, safe_pareto_front, write_frontier_csv, PolicyGrid};
use crmopo::{generate, load_cmdp, GeneratorSpec};
use crmopo_cli::experiment::{run_experiment, ExperimentSpec};

#[derive(Parser)]
#[command(name = "crmopo", version, about = "Constrained multi-objective policy optimization on tabular CMDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a CMDP file against the format and the model invariants.
    Validate { file: PathBuf },
    /// Build a CMDP from a generator spec (TOML) and write it as JSON.
    Generate {
        spec: PathBuf,
        /// Output file; standard output when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Override the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an experiment file.
    Run(RunArgs),
    /// Enumerate a policy grid and export the safe Pareto frontier as CSV.
    Frontier {
        file: PathBuf,
        /// Grid points per probability axis.
        #[arg(long, default_value_t = 101)]
        resolution: usize,
        /// Output file; standard output when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Export every evaluated grid policy instead of the frontier.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    spec: PathBuf,
    /// Output directory (overrides the spec; the default comes from
    /// CRMOPO_OUT_DIR, then `crmopo-out`).
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Comma-separated seeds replacing the spec's sweep.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, value_parser = parse_rule)]
    output_rule: Option<OutputRule>,
    /// Skip the oracle comparison.
    #[arg(long)]
    no_oracle: bool,
    /// Oracle grid points per probability axis.
    #[arg(long)]
    resolution: Option<usize>,
}

fn parse_rule(text: &str) -> Result<OutputRule, String> {
    match text {
        "uniform" => Ok(OutputRule::Uniform),
        "last" => Ok(OutputRule::Last),
        "best-scalarized" => Ok(OutputRule::BestScalarized),
        other => Err(format!("unknown output rule {other:?} (uniform, last, best-scalarized)")),
    }
}

fn write_output(output: Option<&PathBuf>, bytes: &[u8]) -> Result<()> {
    match output {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => std::io::stdout().write_all(bytes).context("writing to standard output"),
    }
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Validate { file } => {
            let model = load_cmdp(&file).with_context(|| format!("{} is not a valid CMDP", file.display()))?;
            println!(
                "{}: ok ({} states, {} actions, {} objectives, {} constraints, gamma {})",
                file.display(),
                model.n_states(),
                model.n_actions(),
                model.n_objectives(),
                model.n_constraints(),
                model.gamma()
            );
            Ok(true)
        }
        Command::Generate { spec, output, seed } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let mut parsed: GeneratorSpec =
                toml::from_str(&text).with_context(|| format!("parsing generator spec {}", spec.display()))?;
            if let Some(seed) = seed {
                parsed.seed = seed;
            }
            let model = generate(&parsed)?;
            write_output(output.as_ref(), (to_json(&model) + "\n").as_bytes())?;
            Ok(true)
        }
        Command::Run(args) => {
            let mut spec = ExperimentSpec::from_file(&args.spec)?;
            if let Some(dir) = args.output_dir {
                spec.output_dir = Some(dir);
            }
            if let Some(seeds) = args.seeds {
                spec.seeds = seeds;
            }
            if let Some(horizon) = args.horizon {
                spec.run.horizon = horizon;
            }
            if let Some(rule) = args.output_rule {
                spec.output_rule = rule;
            }
            if args.no_oracle {
                spec.oracle.enabled = false;
            }
            if let Some(resolution) = args.resolution {
                spec.oracle.resolution = resolution;
            }
            let outcome = run_experiment(&spec)?;
            for run in &outcome.summary.runs {
                match &run.error {
                    Some(e) => eprintln!("seed {}: failed: {e}", run.seed),
                    None => eprintln!(
                        "seed {}: |N0| = {}, rectify steps = {}{}",
                        run.seed,
                        run.n0_size,
                        run.rectify_steps,
                        run.gap.map(|g| format!(", gap = {g:.3e}")).unwrap_or_default()
                    ),
                }
            }
            println!("{}", outcome.output_dir.display());
            Ok(outcome.all_succeeded())
        }
        Command::Frontier {
            file,
            resolution,
            output,
            all,
        } => {
            let model = load_cmdp(&file)?;
            let grid = PolicyGrid::for_model(&model, resolution)?;
            let points = if all {
                evaluate_grid(&model, &grid)?
            } else {
                safe_pareto_front(&model, &grid)?
            };
            let mut buf = Vec::new();
            write_frontier_csv(&points, &mut buf)?;
            write_output(output.as_ref(), &buf)?;
            eprintln!("{} points from {} grid policies", points.len(), grid.len());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }
}
