use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use tierplan::graph::{find_cut_points, parse_graph, PartitionSchema};
use tierplan::network::{parse_topology, Topology};
use tierplan::profile::{ingest_profile, ResourceProfile};
use tierplan::query::{parse_query_with_defaults, solve_with, QueryError};
use tierplan::report::PlanReport;
use tierplan::search::{EvalOptions, Objective, Planner};

const THREADS_VAR: &str = "SCISSION_THREADS";

/// Plans where to split DNN inference across device, edge and cloud.
#[derive(Parser)]
#[command(name = "tierplan", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank every configuration.
    Plan {
        #[command(flatten)]
        inputs: PlanInputs,
        /// Optional constraint query.
        #[arg(long)]
        query: Option<String>,
    },
    /// Rank the configurations that satisfy a constraint query.
    Query {
        #[command(flatten)]
        inputs: PlanInputs,
        #[arg(long)]
        query: String,
    },
    /// Print the execution units and cut points of a graph.
    Inspect {
        #[arg(long)]
        graph: PathBuf,
    },
}

#[derive(Args)]
struct PlanInputs {
    #[arg(long)]
    graph: PathBuf,
    /// Per-resource profile, one per resource.
    #[arg(long = "profile", required = true)]
    profiles: Vec<PathBuf>,
    #[arg(long)]
    topology: PathBuf,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Latency)]
    objective: ObjectiveArg,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    top: u64,
    /// Directory for configurations.csv, hops.csv and compute.csv.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Also charge sending the final output back to the source resource.
    #[arg(long)]
    charge_result_return: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Latency,
    Transfer,
}

impl From<ObjectiveArg> for Objective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::Latency => Objective::Latency,
            ObjectiveArg::Transfer => Objective::Transfer,
        }
    }
}

enum Failure {
    Data(anyhow::Error),
    Query(QueryError),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn read(path: &Path, what: &str) -> anyhow::Result<String> {
    std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {what} file '{}'", path.display()))
}

fn load_schema(path: &Path) -> anyhow::Result<PartitionSchema> {
    let graph = parse_graph(&read(path, "graph")?)
        .with_context(|| format!("invalid graph '{}'", path.display()))?;
    Ok(find_cut_points(&graph))
}

struct Instance {
    schema: PartitionSchema,
    profiles: Vec<ResourceProfile>,
    topo: Topology,
}

fn load(inputs: &PlanInputs) -> anyhow::Result<Instance> {
    let schema = load_schema(&inputs.graph)?;
    let profiles = inputs
        .profiles
        .iter()
        .map(|p| {
            ingest_profile(&read(p, "profile")?, Some(&schema))
                .with_context(|| format!("invalid profile '{}'", p.display()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let topo = parse_topology(&read(&inputs.topology, "topology")?)
        .with_context(|| format!("invalid topology '{}'", inputs.topology.display()))?;
    Ok(Instance {
        schema,
        profiles,
        topo,
    })
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .with_context(|| format!("{THREADS_VAR} must be a non-negative integer, got '{value}'"))?;
    // 0 leaves the pool at its automatic size.
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("cannot start thread pool")?;
    Ok(())
}

fn run_plan(inputs: &PlanInputs, query: Option<&str>) -> Result<(), Failure> {
    let instance = load(inputs)?;
    let options = EvalOptions {
        charge_result_return: inputs.charge_result_return,
    };
    let planner = Planner::new(
        &instance.schema,
        &instance.profiles,
        &instance.topo,
        options,
    )
    .context("inconsistent inputs")?;
    let n = usize::try_from(inputs.top).unwrap_or(usize::MAX);
    let parsed = parse_query_with_defaults(query.unwrap_or(""), inputs.objective.into(), n)
        .map_err(Failure::Query)?;
    let resolved = parsed
        .resolve(&instance.schema, &instance.topo)
        .map_err(Failure::Query)?;
    let solution = solve_with(&planner, &resolved, true);

    let mut report = PlanReport::new(
        &instance.schema,
        &instance.topo,
        parsed.objective,
        &solution.ranked,
        solution.evaluated,
        solution.matched,
    );
    if query.is_some() {
        report = report.with_query(parsed.to_string(), solution.notes);
    }
    print!("{report}");
    if let Some(dir) = &inputs.csv {
        report
            .write_csv(dir)
            .with_context(|| format!("cannot write CSV to '{}'", dir.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    configure_threads()?;
    match &cli.command {
        Command::Plan { inputs, query } => run_plan(inputs, query.as_deref()),
        Command::Query { inputs, query } => run_plan(inputs, Some(query)),
        Command::Inspect { graph } => {
            let schema = load_schema(graph)?;
            println!("model {}", schema.model_name);
            print!("{schema}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors exit 1; code 2 is reserved for query errors.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Query(e)) => {
            eprintln!("query error: {e}");
            ExitCode::from(2)
        }
    }
}
