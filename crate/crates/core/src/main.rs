use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use glsolve::bench::run::{build_case, field_table, run_case, BenchError, CaseKind, CaseSpec, SolverKind};
use glsolve::costmodel::{cost_coarse, cost_full_rank, cost_patch, cost_ts, optimal_coarse_level, sweep_csv, CostParams};
use glsolve::scheduler::{build_schedule, validate, Schedule, ScheduleReport, Variant};

#[derive(Parser)]
#[command(name = "glsolve", version, about = "Two-scale enrichment solver for linear elasticity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a benchmark case and print a JSON summary.
    Run(RunArgs),
    /// Evaluate the analytic flop model.
    Cost(CostArgs),
    /// Build the patch sequencing of a case.
    Schedule(ScheduleArgs),
}

#[derive(clap::Args)]
struct CaseArgs {
    #[arg(long, value_enum, default_value = "cubic-plate")]
    case: CaseKind,
    #[arg(long, default_value_t = 1)]
    ranks: usize,
    /// `Lc:L`: the coarse box is halved `Lc` times, the patchwork refined `L − Lc` times.
    #[arg(long, default_value = "0:2")]
    levels: String,
    /// Coarse cells per axis, `nx,ny,nz`; the case preset when omitted.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    cells: Option<Vec<usize>>,
    #[arg(long)]
    planes: Option<usize>,
    #[arg(long)]
    young_max: Option<f64>,
    #[arg(long)]
    cone_top: Option<f64>,
}

#[derive(clap::Args)]
struct RunArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long, value_enum, default_value = "ts")]
    solver: SolverKind,
    #[arg(long, default_value_t = 1e-7)]
    eps: f64,
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    #[arg(long)]
    warm_start: bool,
    /// Random change of every region modulus, percent (a trailing `%` is accepted).
    #[arg(long, default_value = "0")]
    perturb: String,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Write the JSON summary here instead of standard output.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Write the residual history as CSV.
    #[arg(long)]
    history: Option<PathBuf>,
    /// Write the nodal solution table.
    #[arg(long)]
    field: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CostArgs {
    #[arg(long = "L", default_value_t = 2)]
    level: u32,
    #[arg(long = "Lc", default_value_t = 1)]
    coarse_level: u32,
    #[arg(long, default_value_t = 0.017)]
    sr: f64,
    /// Sparse ratio of the patch problems; `--sr` when omitted.
    #[arg(long)]
    sr_patch: Option<f64>,
    #[arg(long, default_value_t = 30)]
    nl: u32,
    #[arg(long, default_value_t = 1)]
    full_rank_solves: u32,
    /// Print the CSV grid for every target level up to `L` instead.
    #[arg(long)]
    sweep: bool,
}

#[derive(clap::Args)]
struct ScheduleArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[arg(long, value_enum, default_value = "v2")]
    variant: Variant,
    /// Write the schedule as JSON here instead of standard output.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Cost(#[from] glsolve::costmodel::CostError),
    #[error(transparent)]
    Schedule(#[from] glsolve::scheduler::ScheduleError),
    #[error(transparent)]
    TwoScale(#[from] glsolve::twoscale::TsError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn case_spec(args: &CaseArgs) -> Result<CaseSpec, CliError> {
    let mut spec = CaseSpec::preset(args.case);
    let (lc, l) = match args.levels.split_once(':') {
        Some((a, b)) => (a.trim().parse::<u32>(), b.trim().parse::<u32>()),
        None => (Ok(0), args.levels.trim().parse::<u32>()),
    };
    let (lc, l) = match (lc, l) {
        (Ok(lc), Ok(l)) if l > lc => (lc, l),
        _ => return Err(CliError::Usage(format!("--levels expects Lc:L with L > Lc, got {}", args.levels))),
    };
    if let Some(c) = &args.cells {
        spec.cells = [c[0], c[1], c[2]];
    }
    spec.cells = spec.cells.map(|c| c << lc);
    spec.levels = l - lc;
    spec.ranks = args.ranks;
    if let Some(p) = args.planes {
        spec.planes = p;
    }
    if let Some(y) = args.young_max {
        spec.young_max = y;
    }
    if let Some(t) = args.cone_top {
        spec.cone_top = t;
    }
    Ok(spec)
}

fn write_or_print(path: Option<&PathBuf>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| CliError::Io { path: p.clone(), source }),
        None => emit(&format!("{text}\n")),
    }
}

/// Writes to stdout; a closed pipe (`| head`) is not an error.
fn emit(text: &str) -> Result<(), CliError> {
    use std::io::Write;
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io { path: "<stdout>".into(), source: e }),
        _ => Ok(()),
    }
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let mut spec = case_spec(&args.case)?;
    spec.solver = args.solver;
    spec.eps = args.eps;
    spec.max_iterations = args.max_iterations;
    spec.warm_start = args.warm_start;
    spec.seed = args.seed;
    spec.perturb_percent = args
        .perturb
        .trim_end_matches('%')
        .parse()
        .map_err(|_| CliError::Usage(format!("--perturb expects a percentage, got {}", args.perturb)))?;
    let result = run_case(&spec)?;
    if let Some(p) = &args.history {
        write_or_print(Some(p), &result.summary.history_csv())?;
    }
    if let Some(p) = &args.field {
        let full = result.reference.expand(&result.problem.mesh, &result.solution);
        write_or_print(Some(p), &field_table(&result.problem.mesh, &full))?;
    }
    write_or_print(args.json.as_ref(), &serde_json::to_string_pretty(&result.summary)?)
}

fn cost(args: CostArgs) -> Result<(), CliError> {
    let p = CostParams {
        level: args.level,
        coarse_level: args.coarse_level,
        iterations: args.nl,
        sr_coarse: args.sr,
        sr_patch: args.sr_patch.unwrap_or(args.sr),
        full_rank_solves: args.full_rank_solves,
    };
    if args.sweep {
        return emit(&sweep_csv(0..=args.level, &p)?);
    }
    #[derive(Serialize)]
    struct CostReport {
        params: CostParams,
        cost_patch: f64,
        cost_coarse: f64,
        cost_ts: f64,
        cost_full_rank: f64,
        ratio: f64,
        optimal: glsolve::costmodel::OptimalLevel,
    }
    let ts = cost_ts(&p)?;
    let fr = cost_full_rank(&p)?;
    let report = CostReport { params: p, cost_patch: cost_patch(&p), cost_coarse: cost_coarse(&p), cost_ts: ts, cost_full_rank: fr, ratio: fr / ts, optimal: optimal_coarse_level(&p)? };
    write_or_print(None, &serde_json::to_string_pretty(&report)?)
}

fn schedule(args: ScheduleArgs) -> Result<(), CliError> {
    let spec = case_spec(&args.case)?;
    let problem = build_case(&spec, false)?.problem;
    let owner = problem.partition(spec.ranks)?;
    let graph = problem.patch_graph(&owner, spec.ranks);
    let schedule = build_schedule(&graph, args.variant)?;
    #[derive(Serialize)]
    struct Dump {
        variant: Variant,
        ranks: usize,
        patches: usize,
        distributed_patches: usize,
        schedule: Schedule,
        report: ScheduleReport,
    }
    let report = validate(&schedule, &graph);
    let dump = Dump { variant: args.variant, ranks: spec.ranks, patches: problem.cls.patches.len(), distributed_patches: graph.participants.len(), schedule, report };
    write_or_print(args.dump.as_ref(), &serde_json::to_string_pretty(&dump)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Cost(a) => cost(a),
        Command::Schedule(a) => schedule(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
