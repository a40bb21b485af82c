//! Trust-region driver with optional residual sketching.
//!
//! Each iteration draws a fresh sketch, builds the (sketched) Gauss-Newton
//! model from the interpolation set, takes a truncated-CG step, and judges
//! it by the ratio of the true objective decrease to the model decrease.

use std::fmt;
use std::time::Duration;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Evaluator;
use crate::instrument::{OpCounts, Profile, Task, TaskTimes};
use crate::interp::{
    assemble_system, build_model, init_set, solve_full_jacobian, solve_sketched_jacobian,
    InterpolationSet, QuadraticModel, KAPPA_GEOM,
};
use crate::problems::{objective, Problem};
use crate::sketch::{make_sketch, stream, SketchConfig, SketchKind, SketchRng};
use crate::trs::{solve_trs_with, TrsOptions};

/// Consecutive non-finite trial evaluations tolerated before giving up.
const MAX_CONSECUTIVE_FAILURES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Initial radius; `None` means `0.1·max(‖x0‖∞, 1)`.
    pub delta0: Option<f64>,
    pub delta_max: f64,
    pub delta_min: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma_dec: f64,
    pub gamma_inc: f64,
    pub max_evals: usize,
    pub max_time: Option<Duration>,
    pub sketch: SketchConfig,
    /// Subproblem solver settings. The default runs CG to a tight residual
    /// so that interior Newton steps are exact.
    pub trs: TrsOptions,
    /// Seeds the stream from which every iteration's sketch is drawn.
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            delta0: None,
            delta_max: 1e10,
            delta_min: 1e-8,
            eta1: 0.1,
            eta2: 0.7,
            gamma_dec: 0.5,
            gamma_inc: 2.0,
            max_evals: 1000,
            max_time: None,
            sketch: SketchConfig::none(),
            trs: TrsOptions {
                rel_tol: Some(1e-12),
                max_iters: None,
            },
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_sketch(mut self, sketch: SketchConfig) -> Self {
        self.sketch = sketch;
        self
    }

    pub fn with_max_evals(mut self, max_evals: usize) -> Self {
        self.max_evals = max_evals;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_delta0(mut self, delta0: f64) -> Self {
        self.delta0 = Some(delta0);
        self
    }

    pub fn initial_radius(&self, x0: &DVector<f64>) -> f64 {
        self.delta0.unwrap_or_else(|| 0.1 * x0.amax().max(1.0))
    }

    pub fn validate(&self, x0: &DVector<f64>) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let delta0 = self.initial_radius(x0);
        if !(0.0 < self.eta1 && self.eta1 < self.eta2 && self.eta2 < 1.0) {
            return bad(format!("need 0 < eta1 < eta2 < 1 (eta1 = {}, eta2 = {})", self.eta1, self.eta2));
        }
        if !(0.0 < self.gamma_dec && self.gamma_dec < 1.0 && 1.0 < self.gamma_inc) {
            return bad(format!(
                "need 0 < gamma_dec < 1 < gamma_inc (gamma_dec = {}, gamma_inc = {})",
                self.gamma_dec, self.gamma_inc
            ));
        }
        if !(0.0 < self.delta_min && self.delta_min < delta0 && delta0 <= self.delta_max) {
            return bad(format!(
                "need 0 < delta_min < delta0 <= delta_max (delta_min = {}, delta0 = {delta0}, delta_max = {})",
                self.delta_min, self.delta_max
            ));
        }
        if self.max_evals == 0 {
            return bad("max_evals must be positive".into());
        }
        self.sketch.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    BudgetExhausted,
    TimeExhausted,
    RadiusConverged,
    Criticality,
    EvalFailure,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::BudgetExhausted => "budget_exhausted",
            Status::TimeExhausted => "time_exhausted",
            Status::RadiusConverged => "radius_converged",
            Status::Criticality => "criticality",
            Status::EvalFailure => "eval_failure",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Acceptance ratio of actual to predicted decrease. `None` flags a
/// vanishing predicted decrease.
pub fn compute_rho(f_old: f64, f_new: f64, predicted_decrease: f64) -> Option<f64> {
    if predicted_decrease <= 1e-15 * f_old.abs().max(1.0) {
        None
    } else {
        Some((f_old - f_new) / predicted_decrease)
    }
}

/// Whether the trial point replaces the iterate.
pub fn is_accepted(rho: Option<f64>, config: &SolverConfig) -> bool {
    rho.is_some_and(|r| r >= config.eta1)
}

/// Radius update: expand on `ρ ≥ η₂`, keep on `η₁ ≤ ρ < η₂`, shrink otherwise.
pub fn update_radius(delta: f64, rho: Option<f64>, config: &SolverConfig) -> f64 {
    match rho {
        Some(r) if r >= config.eta2 => (config.gamma_inc * delta).min(config.delta_max),
        Some(r) if r >= config.eta1 => delta,
        _ => config.gamma_dec * delta,
    }
}

/// One row of the run history.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub k: usize,
    pub n_evals: usize,
    pub wall_time: f64,
    pub f_best: f64,
    /// Radius after the update.
    pub delta: f64,
    pub rho: Option<f64>,
    pub step_norm: f64,
    pub accepted: bool,
    /// Whether the trial point was evaluated this iteration.
    pub evaluated: bool,
    pub geometry_evals: usize,
    pub task_times: TaskTimes,
}

/// Quantities behind the most recent acceptance test.
#[derive(Debug, Clone)]
pub struct StepInfo {
    pub step: DVector<f64>,
    pub f_old: f64,
    pub f_new: f64,
    pub predicted_decrease: f64,
    pub rho: Option<f64>,
    pub model: QuadraticModel,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub x_final: DVector<f64>,
    pub f_final: f64,
    pub status: Status,
    pub n_evals: usize,
    pub trace: Vec<IterationRecord>,
    pub timings: TaskTimes,
    pub counts: OpCounts,
}

/// Solver state between iterations.
#[derive(Debug)]
pub struct Solver {
    config: SolverConfig,
    evaluator: Evaluator,
    set: InterpolationSet,
    delta: f64,
    rng: SketchRng,
    profile: Profile,
    trace: Vec<IterationRecord>,
    failures: usize,
    status: Option<Status>,
    last_step: Option<StepInfo>,
}

impl Solver {
    /// Validates the configuration and evaluates the initial interpolation set.
    pub fn new(problem: &Problem, config: SolverConfig) -> Result<Self> {
        let x0 = problem.x0().clone();
        config.validate(&x0)?;
        let delta = config.initial_radius(&x0);
        let mut profile = Profile::new();
        let mut evaluator = Evaluator::with_budget(problem.clone(), config.max_evals);
        let set = profile.time(Task::Eval, |_| init_set(&x0, delta, &mut evaluator))?;
        let rng = stream(config.seed);
        let mut solver = Solver {
            config,
            evaluator,
            set,
            delta,
            rng,
            profile,
            trace: Vec::new(),
            failures: 0,
            status: None,
            last_step: None,
        };
        solver.record(0.0, None, false, false, 0);
        Ok(solver)
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn set(&self) -> &InterpolationSet {
        &self.set
    }

    pub fn iterate_point(&self) -> &DVector<f64> {
        self.set.base_point()
    }

    pub fn trace(&self) -> &[IterationRecord] {
        &self.trace
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn n_evals(&self) -> usize {
        self.evaluator.n_evals()
    }

    pub fn status(&self) -> Option<Status> {
        self.status
    }

    pub fn last_step(&self) -> Option<&StepInfo> {
        self.last_step.as_ref()
    }

    fn record(&mut self, step_norm: f64, rho: Option<f64>, accepted: bool, evaluated: bool, geometry_evals: usize) {
        let wall_time = self.profile.elapsed();
        let task_times = self.profile.snapshot_at(wall_time);
        let f_best = self.evaluator.best().map_or(f64::INFINITY, |(_, f)| f);
        self.trace.push(IterationRecord {
            k: self.trace.len(),
            n_evals: self.evaluator.n_evals(),
            wall_time,
            f_best,
            delta: self.delta,
            rho,
            step_norm,
            accepted,
            evaluated,
            geometry_evals,
            task_times,
        });
    }

    fn termination(&self) -> Option<Status> {
        if self.evaluator.n_evals() >= self.config.max_evals {
            return Some(Status::BudgetExhausted);
        }
        if let Some(limit) = self.config.max_time {
            if self.profile.elapsed() >= limit.as_secs_f64() {
                return Some(Status::TimeExhausted);
            }
        }
        if self.delta < self.config.delta_min {
            return Some(Status::RadiusConverged);
        }
        None
    }

    /// Draws the sketch and builds the model. The geometry gate runs on the
    /// factorization the model needs anyway: a poorly conditioned `W` gets
    /// one improvement step before the model is formed. Returns `None` when
    /// that step used the last evaluation.
    fn build_model(&mut self) -> Result<Option<QuadraticModel>> {
        let n = self.set.n_residuals();
        let sketch = if self.config.sketch.kind == SketchKind::None {
            None
        } else {
            let (config, rng) = (&self.config.sketch, &mut self.rng);
            Some(self.profile.time(Task::SketchBuild, |_| make_sketch(config, n, rng))?)
        };
        let mut system = assemble_system(&self.set, &mut self.profile)?;
        if system.condition() > KAPPA_GEOM && self.evaluator.has_budget() {
            let (delta, set, evaluator) = (self.delta, &mut self.set, &mut self.evaluator);
            let improved = self
                .profile
                .time(Task::Geometry, |_| set.improve_geometry_assembled(delta, &system, evaluator))?;
            if !self.evaluator.has_budget() {
                return Ok(None);
            }
            if improved.is_some() {
                system = assemble_system(&self.set, &mut self.profile)?;
            }
        }
        let model = match sketch {
            None => {
                let jac = solve_full_jacobian(&system, &self.set, &mut self.profile)?;
                build_model(jac, self.set.base_residual(), Some(self.set.base_f()), &mut self.profile)?
            }
            Some(sketch) => {
                let (sj, sr) = solve_sketched_jacobian(&system, &self.set, &sketch, &mut self.profile)?;
                build_model(sj, sr, None, &mut self.profile)?
            }
        };
        Ok(Some(model))
    }

    /// Performs one iteration. Returns the termination status once the run
    /// is over; further calls are no-ops.
    pub fn step(&mut self) -> Option<Status> {
        if self.status.is_some() {
            return self.status;
        }
        if let Some(status) = self.termination() {
            self.status = Some(status);
            return self.status;
        }
        let evals_before = self.evaluator.n_evals();

        let built = self.build_model();
        let geo = self.evaluator.n_evals() - evals_before;
        let model = match built {
            Ok(Some(model)) => model,
            Ok(None) => {
                self.record(0.0, None, false, false, geo);
                return None;
            }
            Err(Error::Geometry { .. }) => {
                // Unusable interpolation system: spend this iteration on geometry.
                let (delta, set, evaluator) = (self.delta, &mut self.set, &mut self.evaluator);
                let fixed = self
                    .profile
                    .time(Task::Geometry, |_| set.improve_geometry(delta, evaluator));
                match fixed {
                    Ok(Some(_)) => {}
                    Ok(None) => self.delta *= self.config.gamma_dec,
                    Err(_) => self.status = Some(Status::EvalFailure),
                }
                let geometry_evals = self.evaluator.n_evals() - evals_before;
                self.record(0.0, None, false, false, geometry_evals);
                return self.status;
            }
            Err(_) => {
                self.status = Some(Status::EvalFailure);
                self.record(0.0, None, false, false, geo);
                return self.status;
            }
        };

        let (delta, trs) = (self.delta, self.config.trs);
        let (step, predicted) = self.profile.time(Task::Trs, |_| solve_trs_with(&model, delta, trs));
        let step_norm = step.norm();

        if model.gradient().iter().all(|&g| g == 0.0) {
            if self.delta <= self.config.delta_min {
                self.status = Some(Status::Criticality);
            } else {
                self.delta *= self.config.gamma_dec;
            }
            self.record(0.0, None, false, false, geo);
            return self.status;
        }

        let trial = self.set.base_point() + &step;
        let f_old = self.set.base_f();
        if let Some(slot) = self.set.position(&trial) {
            // Already evaluated: judge the step with the stored value.
            let f_new = self.set.fval(slot);
            let rho = compute_rho(f_old, f_new, predicted);
            let accepted = is_accepted(rho, &self.config);
            self.delta = update_radius(self.delta, rho, &self.config);
            if accepted {
                self.set.move_base(slot);
            }
            self.last_step = Some(StepInfo {
                step,
                f_old,
                f_new,
                predicted_decrease: predicted,
                rho,
                model,
            });
            self.record(step_norm, rho, accepted, false, geo);
            return None;
        }
        let evaluation = self
            .profile
            .time(Task::Eval, |_| self.evaluator.evaluate(&trial, "trial point"));
        let evaluation = match evaluation {
            Ok(ev) => {
                self.failures = 0;
                ev
            }
            Err(_) => {
                self.failures += 1;
                let rho = Some(f64::NEG_INFINITY);
                self.delta = update_radius(self.delta, rho, &self.config);
                if self.failures >= MAX_CONSECUTIVE_FAILURES {
                    self.status = Some(Status::EvalFailure);
                }
                self.record(step_norm, rho, false, true, geo);
                return self.status;
            }
        };

        let f_new = evaluation.f;
        let rho = compute_rho(f_old, f_new, predicted);
        let accepted = is_accepted(rho, &self.config);
        self.delta = update_radius(self.delta, rho, &self.config);

        let set = &mut self.set;
        let updated = self
            .profile
            .time(Task::Geometry, |_| set.insert(trial, &evaluation.residual, accepted));
        if updated.is_err() {
            self.status = Some(Status::EvalFailure);
        }
        self.last_step = Some(StepInfo {
            step,
            f_old,
            f_new,
            predicted_decrease: predicted,
            rho,
            model,
        });
        self.record(step_norm, rho, accepted, true, geo);
        self.status
    }

    /// Iterates until a termination condition fires.
    pub fn run(mut self) -> SolveResult {
        let status = loop {
            if let Some(status) = self.step() {
                break status;
            }
        };
        self.finish(status)
    }

    fn finish(self, status: Status) -> SolveResult {
        let (x_final, f_final) = match self.evaluator.best() {
            Some((x, f)) => (x.clone(), f),
            None => (self.set.base_point().clone(), objective(&self.set.base_residual())),
        };
        SolveResult {
            x_final,
            f_final,
            status,
            n_evals: self.evaluator.n_evals(),
            timings: self.profile.snapshot(),
            counts: self.profile.counts,
            trace: self.trace,
        }
    }
}

/// Runs the solver from the problem's start point.
pub fn run(problem: &Problem, config: SolverConfig) -> Result<SolveResult> {
    Ok(Solver::new(problem, config)?.run())
}
