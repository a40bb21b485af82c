//! Nonlinear least-squares test problems `min ½‖r(x)‖²`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{describe_point, Error, Result};

mod dataset;

pub use dataset::{dataset_problem, parse_dataset, Dataset, Link};

/// Residual map `r: R^d → R^n`.
pub type ResidualFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;

/// `½‖r‖²`.
pub fn objective(residual: &DVector<f64>) -> f64 {
    0.5 * residual.norm_squared()
}

/// A least-squares problem: residual map, dimensions, start point and
/// optionally the known minimum value.
#[derive(Clone)]
pub struct Problem {
    name: String,
    d: usize,
    n: usize,
    x0: DVector<f64>,
    residual: Arc<ResidualFn>,
    f_min: Option<f64>,
}

impl fmt::Debug for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Problem")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("n", &self.n)
            .field("f_min", &self.f_min)
            .finish_non_exhaustive()
    }
}

impl Problem {
    /// Wraps a residual map. The input dimension is taken from `x0`; the
    /// residual is evaluated once at `x0` to check its length and finiteness.
    pub fn new<F>(name: impl Into<String>, n: usize, x0: DVector<f64>, residual: F) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        let d = x0.len();
        if d == 0 {
            return Err(Error::InvalidConfig("problem dimension d must be at least 1".into()));
        }
        if n < d {
            return Err(Error::InvalidConfig(format!(
                "problem needs at least as many residuals as unknowns (n = {n}, d = {d})"
            )));
        }
        let r0 = residual(&x0);
        if r0.len() != n {
            return Err(Error::DimensionMismatch {
                context: "residual at start point",
                expected: n,
                actual: r0.len(),
            });
        }
        if !r0.iter().all(|v| v.is_finite()) {
            return Err(Error::Evaluation {
                context: "start point".into(),
                point: describe_point(x0.as_slice()),
            });
        }
        Ok(Problem {
            name: name.into(),
            d,
            n,
            x0,
            residual: Arc::new(residual),
            f_min: None,
        })
    }

    pub fn with_f_min(mut self, f_min: f64) -> Self {
        self.f_min = Some(f_min);
        self
    }

    pub fn with_start(mut self, x0: DVector<f64>) -> Result<Self> {
        crate::error::check_dim("start point", self.d, x0.len())?;
        self.x0 = x0;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_residuals(&self) -> usize {
        self.n
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn f_min(&self) -> Option<f64> {
        self.f_min
    }

    pub fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.residual)(x)
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        objective(&self.residual(x))
    }
}

/// Chained Rosenbrock in `d ≥ 2` unknowns with `n = 2(d-1)` residuals
/// `10(x_{i+1} - x_i²)` and `x_i - 1`, started from `(-1.2, 1, -1.2, 1, …)`.
pub fn gen_rosenbrock(d: usize) -> Result<Problem> {
    if d < 2 {
        return Err(Error::InvalidConfig(format!("rosenbrock needs d ≥ 2, got {d}")));
    }
    let n = 2 * (d - 1);
    let x0 = DVector::from_fn(d, |i, _| if i % 2 == 0 { -1.2 } else { 1.0 });
    let residual = move |x: &DVector<f64>| {
        let mut r = DVector::zeros(n);
        for i in 0..d - 1 {
            r[2 * i] = 10.0 * (x[i + 1] - x[i] * x[i]);
            r[2 * i + 1] = x[i] - 1.0;
        }
        r
    };
    Ok(Problem::new(format!("rosenbrock{d}"), n, x0, residual)?.with_f_min(0.0))
}

/// Builder for the smooth synthetic problem
/// `r_i(x) = a_iᵀx + α·sin(b_iᵀx) - c_i`.
///
/// `a_i` and `b_i` have i.i.d. `N(0, 1/d)` entries. The targets are
/// `c_i = a_iᵀx̄ + α·sin(b_iᵀx̄) + σ·ξ_i` for a hidden `x̄ ~ N(0, I)` and
/// standard normal `ξ_i`, so the optimum has a nonzero residual whenever
/// `σ > 0`.
#[derive(Debug, Clone, Copy)]
pub struct RandomNlls {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub alpha: f64,
    pub noise: f64,
}

impl RandomNlls {
    pub fn new(d: usize, n: usize, seed: u64) -> Self {
        RandomNlls {
            d,
            n,
            seed,
            alpha: 0.1,
            noise: 0.5,
        }
    }

    pub fn alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn build(self) -> Result<Problem> {
        let RandomNlls {
            d,
            n,
            seed,
            alpha,
            noise,
        } = self;
        if d == 0 || n < d {
            return Err(Error::InvalidConfig(format!(
                "random problem needs n ≥ d ≥ 1 (n = {n}, d = {d})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sd = 1.0 / (d as f64).sqrt();
        let mut normal = move || -> f64 { rng.sample(StandardNormal) };
        let a = DMatrix::from_fn(n, d, |_, _| normal() * sd);
        let b = DMatrix::from_fn(n, d, |_, _| normal() * sd);
        let hidden = DVector::from_fn(d, |_, _| normal());
        let xi = DVector::from_fn(n, |_, _| normal());
        let signal = model_part(&a, &b, alpha, &hidden);
        let c = signal + xi * noise;
        let residual = move |x: &DVector<f64>| model_part(&a, &b, alpha, x) - &c;
        Problem::new(format!("random{d}x{n}"), n, DVector::zeros(d), residual)
    }
}

fn model_part(a: &DMatrix<f64>, b: &DMatrix<f64>, alpha: f64, x: &DVector<f64>) -> DVector<f64> {
    let mut out = a * x;
    if alpha != 0.0 {
        let bx = b * x;
        out.zip_apply(&bx, |o, t| *o += alpha * t.sin());
    }
    out
}

/// Synthetic smooth problem with `α = 0.1`, deterministic in `seed`.
pub fn random_nlls(d: usize, n: usize, seed: u64) -> Result<Problem> {
    RandomNlls::new(d, n, seed).build()
}
