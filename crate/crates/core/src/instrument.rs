//! Per-task wall-clock timers and operation counters.
//!
//! Every run carries one [`Profile`]. Kernels charge their time to a fixed
//! set of [`Task`] keys and bump [`OpCounts`] so that the asymptotic cost
//! of each phase can be checked independently of the clock.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Code regions tracked by the per-task timers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Task {
    SketchBuild,
    SketchApply,
    InterpSolve,
    ModelBuild,
    Trs,
    Eval,
    Geometry,
    Other,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::SketchBuild,
        Task::SketchApply,
        Task::InterpSolve,
        Task::ModelBuild,
        Task::Trs,
        Task::Eval,
        Task::Geometry,
        Task::Other,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Task::SketchBuild => "sketch_build",
            Task::SketchApply => "sketch_apply",
            Task::InterpSolve => "interp_solve",
            Task::ModelBuild => "model_build",
            Task::Trs => "trs",
            Task::Eval => "eval",
            Task::Geometry => "geometry",
            Task::Other => "other",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// Cumulative seconds per task. Serializes to the timing JSON schema
/// (one field per task plus `total`).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskTimes {
    pub sketch_build: f64,
    pub sketch_apply: f64,
    pub interp_solve: f64,
    pub model_build: f64,
    pub trs: f64,
    pub eval: f64,
    pub geometry: f64,
    pub other: f64,
    pub total: f64,
}

impl TaskTimes {
    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::SketchBuild => self.sketch_build,
            Task::SketchApply => self.sketch_apply,
            Task::InterpSolve => self.interp_solve,
            Task::ModelBuild => self.model_build,
            Task::Trs => self.trs,
            Task::Eval => self.eval,
            Task::Geometry => self.geometry,
            Task::Other => self.other,
        }
    }

    fn slot(&mut self, task: Task) -> &mut f64 {
        match task {
            Task::SketchBuild => &mut self.sketch_build,
            Task::SketchApply => &mut self.sketch_apply,
            Task::InterpSolve => &mut self.interp_solve,
            Task::ModelBuild => &mut self.model_build,
            Task::Trs => &mut self.trs,
            Task::Eval => &mut self.eval,
            Task::Geometry => &mut self.geometry,
            Task::Other => &mut self.other,
        }
    }

    /// Time spent building the model: sketch generation and application,
    /// the interpolation solve and the quadratic model assembly.
    pub fn model_construction(&self) -> f64 {
        self.sketch_build + self.sketch_apply + self.interp_solve + self.model_build
    }

    /// Element-wise mean over several runs.
    pub fn mean(items: &[TaskTimes]) -> TaskTimes {
        let mut out = TaskTimes::default();
        if items.is_empty() {
            return out;
        }
        let scale = 1.0 / items.len() as f64;
        for t in items {
            for task in Task::ALL {
                *out.slot(task) += t.get(task) * scale;
            }
            out.total += t.total * scale;
        }
        out
    }
}

/// Counts of elementary operations performed by the instrumented kernels.
///
/// `multiplies` counts general multiplications only; uniform rescaling by a
/// single constant is counted separately in `scalings`, and pure data
/// movement in `gathers`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub multiplies: u64,
    pub additions: u64,
    pub gathers: u64,
    pub scalings: u64,
    pub sign_applications: u64,
    /// Nominal floating-point operation count of dense kernels (factorizations,
    /// triangular solves, products).
    pub flops: u64,
}

impl OpCounts {
    pub fn add(&mut self, other: &OpCounts) {
        self.multiplies += other.multiplies;
        self.additions += other.additions;
        self.gathers += other.gathers;
        self.scalings += other.scalings;
        self.sign_applications += other.sign_applications;
        self.flops += other.flops;
    }
}

/// Timers plus counters for one run.
#[derive(Debug, Clone)]
pub struct Profile {
    seconds: [f64; 8],
    pub counts: OpCounts,
    started: Instant,
}

impl Default for Profile {
    fn default() -> Self {
        Self::new()
    }
}

impl Profile {
    pub fn new() -> Self {
        Profile {
            seconds: [0.0; 8],
            counts: OpCounts::default(),
            started: Instant::now(),
        }
    }

    /// Runs `f`, charging its wall time to `task`.
    pub fn time<T>(&mut self, task: Task, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let out = f(self);
        self.seconds[task.index()] += start.elapsed().as_secs_f64();
        out
    }

    pub fn charge(&mut self, task: Task, seconds: f64) {
        self.seconds[task.index()] += seconds;
    }

    pub fn seconds(&self, task: Task) -> f64 {
        self.seconds[task.index()]
    }

    pub fn elapsed(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    /// Snapshot of the cumulative task times. `other` absorbs whatever part
    /// of the elapsed wall time is not covered by a named task.
    pub fn snapshot(&self) -> TaskTimes {
        self.snapshot_at(self.elapsed())
    }

    pub fn snapshot_at(&self, total: f64) -> TaskTimes {
        let mut out = TaskTimes::default();
        let mut covered = 0.0;
        for task in Task::ALL {
            let s = self.seconds[task.index()];
            *out.slot(task) = s;
            if task != Task::Other {
                covered += s;
            }
        }
        out.other += (total - covered - out.other).max(0.0);
        out.total = total.max(covered + out.other);
        out
    }
}
