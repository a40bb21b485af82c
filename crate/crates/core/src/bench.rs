//! Benchmark harness: repeated solves, summary lines and the per-task
//! scaling report.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Duration;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instrument::{Task, TaskTimes};
use crate::problems::{dataset_problem, gen_rosenbrock, Link, Problem, RandomNlls};
use crate::sketch::{SketchConfig, SketchKind};
use crate::solver::{run, SolveResult, SolverConfig};

/// Sketch row count, either absolute or a multiple of the dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SketchSize {
    Fixed(usize),
    PerDim(usize),
}

impl SketchSize {
    pub fn resolve(self, d: usize) -> Result<usize> {
        match self {
            SketchSize::Fixed(m) => Ok(m),
            SketchSize::PerDim(k) => k
                .checked_mul(d)
                .ok_or_else(|| Error::InvalidConfig(format!("sketch size {k}d overflows for d = {d}"))),
        }
    }
}

impl FromStr for SketchSize {
    type Err = Error;

    /// Accepts `"<int>"`, `"d"` or `"<int>d"`; the value must be positive.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        let invalid = || Error::Parse(format!("invalid sketch size {s:?}: expected an integer, \"d\" or \"<k>d\""));
        let digits_only = |x: &str| !x.is_empty() && x.bytes().all(|b| b.is_ascii_digit());
        let size = if let Some(prefix) = t.strip_suffix('d') {
            if prefix.is_empty() {
                SketchSize::PerDim(1)
            } else if digits_only(prefix) {
                SketchSize::PerDim(prefix.parse().map_err(|_| invalid())?)
            } else {
                return Err(invalid());
            }
        } else if digits_only(t) {
            SketchSize::Fixed(t.parse().map_err(|_| invalid())?)
        } else {
            return Err(invalid());
        };
        match size {
            SketchSize::Fixed(0) | SketchSize::PerDim(0) => {
                Err(Error::Parse(format!("sketch size {s:?} must be positive")))
            }
            _ => Ok(size),
        }
    }
}

impl fmt::Display for SketchSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SketchSize::Fixed(m) => write!(f, "{m}"),
            SketchSize::PerDim(1) => f.write_str("d"),
            SketchSize::PerDim(k) => write!(f, "{k}d"),
        }
    }
}

/// A sketch choice before the problem dimension is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub kind: SketchKind,
    pub size: SketchSize,
    pub hash_nnz: usize,
}

impl Variant {
    pub fn none() -> Self {
        Variant {
            kind: SketchKind::None,
            size: SketchSize::PerDim(1),
            hash_nnz: 1,
        }
    }

    pub fn new(kind: SketchKind, size: SketchSize, hash_nnz: usize) -> Self {
        Variant { kind, size, hash_nnz }
    }

    pub fn config(&self, d: usize) -> Result<SketchConfig> {
        let m = self.size.resolve(d)?;
        let config = match self.kind {
            SketchKind::None => SketchConfig::none(),
            SketchKind::Gaussian => SketchConfig::gaussian(m),
            SketchKind::Sampling => SketchConfig::sampling(m),
            SketchKind::Hashing => SketchConfig::hashing(m, self.hash_nnz),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn label(&self) -> String {
        match self.kind {
            SketchKind::None => "none".into(),
            SketchKind::Hashing => format!("hashing(m={},s={})", self.size, self.hash_nnz),
            kind => format!("{kind}(m={})", self.size),
        }
    }
}

/// Which problem to build.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemChoice {
    Rosenbrock { d: usize },
    Random { d: usize, n: usize, seed: u64 },
    Dataset { path: PathBuf, link: Link, intercept: bool },
}

impl ProblemChoice {
    pub fn build(&self) -> Result<Problem> {
        match self {
            ProblemChoice::Rosenbrock { d } => gen_rosenbrock(*d),
            ProblemChoice::Random { d, n, seed } => RandomNlls::new(*d, *n, *seed).build(),
            ProblemChoice::Dataset { path, link, intercept } => dataset_problem(path, *link, *intercept),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub variant: Variant,
    /// Evaluation budget as a multiple of `d + 1`.
    pub budget: usize,
    pub max_time: Option<Duration>,
    pub seed: u64,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            variant: Variant::none(),
            budget: 2,
            max_time: None,
            seed: 0,
            repeats: 1,
        }
    }
}

impl BenchConfig {
    pub fn solver_config(&self, problem: &Problem, seed: u64) -> Result<SolverConfig> {
        let d = problem.dim();
        if self.budget == 0 {
            return Err(Error::InvalidConfig("budget multiplier must be positive".into()));
        }
        let max_evals = self
            .budget
            .checked_mul(d + 1)
            .ok_or_else(|| Error::InvalidConfig("budget overflows".into()))?;
        Ok(SolverConfig {
            max_evals,
            max_time: self.max_time,
            sketch: self.variant.config(d)?,
            seed,
            ..SolverConfig::default()
        })
    }
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub seed: u64,
    pub result: SolveResult,
}

/// Runs `repeats` independent solves in parallel, replicate `i` seeded
/// with `seed + i`. Results come back in replicate order.
pub fn run_bench(problem: &Problem, config: &BenchConfig) -> Result<Vec<BenchRun>> {
    if config.repeats == 0 {
        return Err(Error::InvalidConfig("repeats must be positive".into()));
    }
    let configs = (0..config.repeats as u64)
        .map(|i| {
            let seed = config.seed.wrapping_add(i);
            config.solver_config(problem, seed).map(|c| (seed, c))
        })
        .collect::<Result<Vec<_>>>()?;
    configs
        .into_par_iter()
        .map(|(seed, c)| run(problem, c).map(|result| BenchRun { seed, result }))
        .collect()
}

/// `problem variant m evals time f_final status` on one line.
pub fn summary_line(problem: &Problem, variant: &Variant, result: &SolveResult) -> String {
    let m = match variant.kind {
        SketchKind::None => problem.n_residuals(),
        _ => variant.size.resolve(problem.dim()).unwrap_or(0),
    };
    format!(
        "problem={} variant={} m={} evals={} time={:.6}s f_final={:.6e} status={}",
        problem.name(),
        variant.label(),
        m,
        result.n_evals,
        result.timings.total,
        result.f_final,
        result.status
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub d: usize,
    pub variant: String,
    pub times: TaskTimes,
}

impl ScalingRow {
    /// Share of the run spent in the interpolation solve and model assembly.
    pub fn model_fraction(&self) -> f64 {
        if self.times.total > 0.0 {
            (self.times.interp_solve + self.times.model_build) / self.times.total
        } else {
            0.0
        }
    }
}

pub const DEFAULT_SCALING_DIMS: [usize; 4] = [50, 100, 200, 400];

/// Rosenbrock solves with budget `3(d+1)` for every dimension and variant.
pub fn scaling_report(dims: &[usize], variants: &[Variant], seed: u64) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    for &d in dims {
        let problem = gen_rosenbrock(d)?;
        for variant in variants {
            let config = BenchConfig {
                variant: *variant,
                budget: 3,
                seed,
                ..BenchConfig::default()
            };
            let result = run(&problem, config.solver_config(&problem, seed)?)?;
            rows.push(ScalingRow {
                d,
                variant: variant.label(),
                times: result.timings,
            });
        }
    }
    Ok(rows)
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["d".to_string(), "variant".into(), "total_s".into()];
    header.extend(Task::ALL.iter().map(|t| t.key().to_string()));
    header.push("model_fraction".into());
    w.write_record(&header).expect("write to memory");
    for row in rows {
        let mut rec = vec![row.d.to_string(), row.variant.clone(), row.times.total.to_string()];
        rec.extend(Task::ALL.iter().map(|&t| row.times.get(t).to_string()));
        rec.push(row.model_fraction().to_string());
        w.write_record(&rec).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is UTF-8")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sketch_size_expressions() {
        assert_eq!("100".parse::<SketchSize>().unwrap(), SketchSize::Fixed(100));
        assert_eq!("d".parse::<SketchSize>().unwrap(), SketchSize::PerDim(1));
        assert_eq!("2d".parse::<SketchSize>().unwrap().resolve(50).unwrap(), 100);
        assert_eq!(" 5d ".parse::<SketchSize>().unwrap().resolve(100).unwrap(), 500);
        for bad in ["", "0", "0d", "d2", "-3", "2.5d", "dd", "x", "+4", "2 d"] {
            assert!(bad.parse::<SketchSize>().is_err(), "{bad:?}");
        }
        assert!("99999999999999999999999".parse::<SketchSize>().is_err());
        assert!(SketchSize::PerDim(usize::MAX).resolve(2).is_err());
        for s in ["7", "d", "3d"] {
            assert_eq!(s.parse::<SketchSize>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn variant_configs() {
        let v = Variant::new(SketchKind::Hashing, SketchSize::PerDim(2), 2);
        assert_eq!(v.config(50).unwrap(), SketchConfig::hashing(100, 2));
        assert!(Variant::new(SketchKind::Hashing, SketchSize::Fixed(4), 0).config(3).is_err());
        assert_eq!(Variant::none().config(9).unwrap().kind, SketchKind::None);
        assert_eq!(v.label(), "hashing(m=2d,s=2)");
    }

    #[test]
    fn repeats_use_consecutive_seeds() {
        let problem = gen_rosenbrock(4).unwrap();
        let config = BenchConfig {
            variant: Variant::new(SketchKind::Gaussian, SketchSize::PerDim(1), 1),
            budget: 5,
            seed: 10,
            repeats: 3,
            ..BenchConfig::default()
        };
        let runs = run_bench(&problem, &config).unwrap();
        assert_eq!(runs.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![10, 11, 12]);
        let solo = run(&problem, config.solver_config(&problem, 11).unwrap()).unwrap();
        let f = |r: &SolveResult| r.trace.iter().map(|x| x.f_best).collect::<Vec<_>>();
        assert_eq!(f(&runs[1].result), f(&solo));
        assert!(runs.iter().all(|r| r.result.n_evals <= 25));
    }

    #[test]
    fn summary_mentions_every_field() {
        let problem = gen_rosenbrock(3).unwrap();
        let v = Variant::new(SketchKind::Sampling, SketchSize::Fixed(2), 1);
        let result = run_bench(&problem, &BenchConfig { variant: v, ..BenchConfig::default() }).unwrap();
        let line = summary_line(&problem, &v, &result[0].result);
        for key in ["problem=rosenbrock", "variant=sampling(m=2)", "m=2", "evals=8", "time=", "f_final=", "status=budget_exhausted"] {
            assert!(line.contains(key), "{line}");
        }
    }

    #[test]
    fn scaling_rows_and_csv() {
        let rows = scaling_report(&[4, 6], &[Variant::none()], 0).unwrap();
        assert_eq!(rows.len(), 2);
        for row in &rows {
            assert!((0.0..=1.0).contains(&row.model_fraction()));
        }
        let csv = scaling_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "d,variant,total_s,sketch_build,sketch_apply,interp_solve,model_build,trs,eval,geometry,other,model_fraction"
        );
        assert_eq!(lines.count(), 2);
    }
}
