//! Trust-region subproblem `min m(s)` subject to `‖s‖₂ ≤ Δ`, solved
//! approximately by Steihaug-Toint truncated conjugate gradients.

use nalgebra::{DMatrix, DVector};

use crate::interp::QuadraticModel;

/// Curvature `pᵀHp` at or below this multiple of `‖p‖²` is treated as zero.
const CURVATURE_EPS: f64 = 1e-15;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TrsOptions {
    /// Residual tolerance as a multiple of `‖g‖`; defaults to `min(0.1, √‖g‖)`.
    pub rel_tol: Option<f64>,
    /// Iteration cap; defaults to `d`.
    pub max_iters: Option<usize>,
}

/// Step and predicted decrease `m(0) - m(s)` for the model within radius `delta`.
pub fn solve_trs(model: &QuadraticModel, delta: f64) -> (DVector<f64>, f64) {
    truncated_cg(model.gradient(), model.hessian(), delta, TrsOptions::default())
}

pub fn solve_trs_with(model: &QuadraticModel, delta: f64, options: TrsOptions) -> (DVector<f64>, f64) {
    truncated_cg(model.gradient(), model.hessian(), delta, options)
}

/// Largest `τ ≥ 0` with `‖s + τp‖ = Δ`, for `‖s‖ ≤ Δ`.
fn boundary_step(s: &DVector<f64>, p: &DVector<f64>, delta: f64) -> f64 {
    let a = p.norm_squared();
    let b = 2.0 * s.dot(p);
    let c = (s.norm_squared() - delta * delta).min(0.0);
    let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
    if b <= 0.0 {
        (-b + disc) / (2.0 * a)
    } else {
        -2.0 * c / (b + disc)
    }
}

/// Steihaug-Toint CG on `H·s = -g` from `s = 0`. Stops at the boundary, on
/// non-positive curvature, when the CG residual drops below tolerance, or
/// after the iteration cap.
pub fn truncated_cg(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    delta: f64,
    options: TrsOptions,
) -> (DVector<f64>, f64) {
    let d = g.len();
    let g_norm = g.norm();
    let mut s = DVector::zeros(d);
    if g_norm == 0.0 || !g_norm.is_finite() {
        return (s, 0.0);
    }
    let tol = options.rel_tol.unwrap_or_else(|| 0.1f64.min(g_norm.sqrt())) * g_norm;
    let max_iters = options.max_iters.unwrap_or(d);

    let mut r = g.clone();
    let mut p = -g;
    let mut rr = r.norm_squared();
    for _ in 0..max_iters {
        let hp = h * &p;
        let curvature = p.dot(&hp);
        if curvature <= CURVATURE_EPS * p.norm_squared() {
            let tau = boundary_step(&s, &p, delta);
            s.axpy(tau, &p, 1.0);
            break;
        }
        let alpha = rr / curvature;
        let next = &s + &p * alpha;
        if next.norm() >= delta {
            let tau = boundary_step(&s, &p, delta);
            s.axpy(tau, &p, 1.0);
            break;
        }
        s = next;
        r.axpy(alpha, &hp, 1.0);
        let rr_next = r.norm_squared();
        if rr_next.sqrt() <= tol {
            break;
        }
        let beta = rr_next / rr;
        p *= beta;
        p -= &r;
        rr = rr_next;
    }
    let norm = s.norm();
    if norm > delta {
        s *= delta / norm;
    }
    let decrease = -(g.dot(&s) + 0.5 * s.dot(&(h * &s)));
    (s, decrease.max(0.0))
}
