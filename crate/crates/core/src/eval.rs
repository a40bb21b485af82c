//! Counted residual evaluation with best-point tracking.

use nalgebra::DVector;

use crate::error::{describe_point, Error, Result};
use crate::problems::{objective, Problem};

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub residual: DVector<f64>,
    pub f: f64,
}

/// Evaluates residuals of a [`Problem`], charging each call against an
/// evaluation budget and remembering the best point seen.
#[derive(Debug, Clone)]
pub struct Evaluator {
    problem: Problem,
    n_evals: usize,
    budget: usize,
    best: Option<(DVector<f64>, f64)>,
}

impl Evaluator {
    pub fn new(problem: Problem) -> Self {
        Self::with_budget(problem, usize::MAX)
    }

    pub fn with_budget(problem: Problem, budget: usize) -> Self {
        Evaluator {
            problem,
            n_evals: 0,
            budget,
            best: None,
        }
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn n_evals(&self) -> usize {
        self.n_evals
    }

    pub fn has_budget(&self) -> bool {
        self.n_evals < self.budget
    }

    /// Evaluates `r(x)`. The call is counted even when the residual turns
    /// out non-finite, in which case an [`Error::Evaluation`] is returned.
    pub fn evaluate(&mut self, x: &DVector<f64>, context: &str) -> Result<Evaluation> {
        self.n_evals += 1;
        let residual = self.problem.residual(x);
        if residual.len() != self.problem.n_residuals() {
            return Err(Error::DimensionMismatch {
                context: "residual evaluation",
                expected: self.problem.n_residuals(),
                actual: residual.len(),
            });
        }
        let f = objective(&residual);
        if !f.is_finite() {
            return Err(Error::Evaluation {
                context: context.to_owned(),
                point: describe_point(x.as_slice()),
            });
        }
        if self.best.as_ref().map_or(true, |(_, best)| f < *best) {
            self.best = Some((x.clone(), f));
        }
        Ok(Evaluation { residual, f })
    }

    pub fn best(&self) -> Option<(&DVector<f64>, f64)> {
        self.best.as_ref().map(|(x, f)| (x, *f))
    }
}
