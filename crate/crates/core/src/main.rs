use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sketchdfo::bench::{
    run_bench, scaling_csv, scaling_report, summary_line, BenchConfig, ProblemChoice, SketchSize, Variant,
    DEFAULT_SCALING_DIMS,
};
use sketchdfo::instrument::TaskTimes;
use sketchdfo::problems::Link;
use sketchdfo::sketch::SketchKind;
use sketchdfo::solver::Status;
use sketchdfo::trace::{mean_trace, mean_trace_to_string, trace_rows, write_timings_file, write_trace_file};
use sketchdfo::Error;

#[derive(Parser)]
#[command(name = "sketchdfo", version, about = "Derivative-free least squares with residual sketching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem and write trace and timing files.
    Bench(BenchArgs),
    /// Per-task timing breakdown on Rosenbrock across dimensions.
    Scaling(ScalingArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemKind {
    Rosenbrock,
    Random,
    Dataset,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    None,
    Gaussian,
    Sampling,
    Hashing,
}

impl From<KindArg> for SketchKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::None => SketchKind::None,
            KindArg::Gaussian => SketchKind::Gaussian,
            KindArg::Sampling => SketchKind::Sampling,
            KindArg::Hashing => SketchKind::Hashing,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LinkArg {
    Linear,
    Logistic,
}

#[derive(Args)]
struct SketchArgs {
    /// Sketch rows: an integer, "d" or "<k>d".
    #[arg(long, default_value = "d")]
    sketch_size: SketchSize,
    /// Nonzeros per column for hashing sketches.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    hash_nnz: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum, default_value = "rosenbrock")]
    problem: ProblemKind,
    #[arg(long, default_value_t = 10)]
    dim: usize,
    /// Residual count for the random problem; defaults to 10·dim.
    #[arg(long)]
    residuals: Option<usize>,
    /// Seed of the random problem instance.
    #[arg(long, default_value_t = 0)]
    problem_seed: u64,
    #[arg(long, required_if_eq("problem", "dataset"))]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "linear")]
    link: LinkArg,
    /// Append an intercept coordinate to dataset problems.
    #[arg(long)]
    intercept: bool,
    #[arg(long, value_enum, default_value = "none")]
    sketch: KindArg,
    #[command(flatten)]
    sketch_args: SketchArgs,
    /// Evaluation budget as a multiple of d+1.
    #[arg(long, default_value_t = 2)]
    budget: usize,
    /// Wall-clock limit in seconds.
    #[arg(long)]
    max_time: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value = "trace.csv")]
    out: PathBuf,
    #[arg(long, default_value = "timings.json")]
    timings_out: PathBuf,
}

#[derive(Args)]
struct ScalingArgs {
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SCALING_DIMS)]
    dims: Vec<usize>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "none")]
    sketch: Vec<KindArg>,
    #[command(flatten)]
    sketch_args: SketchArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Solver(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Evaluation { .. } | Error::Geometry { .. } => Failure::Solver(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn variant(kind: KindArg, args: &SketchArgs) -> Result<Variant, Failure> {
    let nnz = usize::try_from(args.hash_nnz).map_err(|_| Failure::Usage("--hash-nnz is too large".into()))?;
    Ok(Variant::new(kind.into(), args.sketch_size, nnz))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("trace");
    path.with_file_name(format!("{stem}.{suffix}.csv"))
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    let choice = match args.problem {
        ProblemKind::Rosenbrock => ProblemChoice::Rosenbrock { d: args.dim },
        ProblemKind::Random => ProblemChoice::Random {
            d: args.dim,
            n: args.residuals.unwrap_or(10 * args.dim),
            seed: args.problem_seed,
        },
        ProblemKind::Dataset => ProblemChoice::Dataset {
            path: args.dataset.clone().unwrap_or_default(),
            link: match args.link {
                LinkArg::Linear => Link::Linear,
                LinkArg::Logistic => Link::Logistic,
            },
            intercept: args.intercept,
        },
    };
    let max_time = match args.max_time {
        None => None,
        Some(t) if t.is_finite() && t > 0.0 => Some(Duration::from_secs_f64(t)),
        Some(t) => return Err(Failure::Usage(format!("--max-time must be positive, got {t}"))),
    };
    let variant = variant(args.sketch, &args.sketch_args)?;
    let problem = choice.build()?;
    let config = BenchConfig {
        variant,
        budget: args.budget,
        max_time,
        seed: args.seed,
        repeats: args.repeats,
    };
    // Surface sketch/budget validation as usage errors before any work.
    config.solver_config(&problem, args.seed)?;

    let runs = run_bench(&problem, &config)?;
    let traces: Vec<_> = runs.iter().map(|r| trace_rows(&r.result.trace)).collect();
    write_trace_file(&args.out, &traces[0])?;
    if runs.len() > 1 {
        for (run, rows) in runs.iter().zip(&traces) {
            write_trace_file(&sibling(&args.out, &format!("seed{}", run.seed)), rows)?;
        }
        fs::write(sibling(&args.out, "mean"), mean_trace_to_string(&mean_trace(&traces))).map_err(Error::from)?;
    }
    let timings: Vec<TaskTimes> = runs.iter().map(|r| r.result.timings).collect();
    write_timings_file(&args.timings_out, &TaskTimes::mean(&timings))?;

    let mut failed = false;
    for run in &runs {
        println!("{} seed={}", summary_line(&problem, &variant, &run.result), run.seed);
        failed |= run.result.status == Status::EvalFailure;
    }
    if failed {
        return Err(Failure::Solver("residual evaluation failed repeatedly".into()));
    }
    Ok(())
}

fn scaling(args: ScalingArgs) -> Result<(), Failure> {
    if args.dims.iter().any(|&d| d < 2) {
        return Err(Failure::Usage("--dims entries must be at least 2".into()));
    }
    let variants = args
        .sketch
        .iter()
        .map(|&k| variant(k, &args.sketch_args))
        .collect::<Result<Vec<_>, _>>()?;
    for v in &variants {
        v.config(args.dims.iter().copied().min().unwrap_or(2))?;
    }
    let rows = scaling_report(&args.dims, &variants, args.seed)?;
    let csv = scaling_csv(&rows);
    match &args.out {
        Some(path) => fs::write(path, csv).map_err(Error::from)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Bench(args) => bench(args),
        Command::Scaling(args) => scaling(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Solver(msg)) => {
            eprintln!("solver failure: {msg}");
            ExitCode::from(2)
        }
    }
}
