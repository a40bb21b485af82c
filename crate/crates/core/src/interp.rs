//! Linear interpolation models of the residual and the quadratic models
//! they induce on the objective.
//!
//! With interpolation points `y_0 = x_k, y_1, …, y_d`, the model Jacobian
//! solves `W·Jᵀ = R` where row `t` of `W` is `(y_t - x_k)ᵀ` and row `t` of `R`
//! is `(r(y_t) - r(x_k))ᵀ`. The sketched variant solves `W·(SJ)ᵀ = R·Sᵀ`
//! directly and never forms `J`.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::dense::{lu_flops, solve_flops, DenseLu};
use crate::error::{check_dim, describe_point, Error, Result};
use crate::eval::Evaluator;
use crate::instrument::{Profile, Task};
use crate::problems::objective;
use crate::sketch::SketchOperator;

/// Condition estimate of `W` above which the interpolation solve is refused.
pub const KAPPA_SOLVE: f64 = 1e14;

/// Geometry score above which an update triggers an improvement step.
pub const KAPPA_GEOM: f64 = 1e8;

/// Cap on inverse-iteration sweeps for the smallest singular vector.
const INVERSE_ITERATIONS: usize = 30;

/// Number of replacement candidates scored exactly when the top-ranked one
/// does not improve the geometry.
const IMPROVE_CANDIDATES: usize = 8;

/// The `d+1` interpolation points with their cached residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolationSet {
    base: usize,
    points: Vec<DVector<f64>>,
    /// Row `t` holds `r(y_t)ᵀ`.
    residuals: DMatrix<f64>,
    fvals: Vec<f64>,
}

/// What [`InterpolationSet::update`] did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    /// Slot that received the new point.
    pub slot: usize,
    /// Slot refreshed by the geometry-improvement step, if one ran.
    pub improved: Option<usize>,
    /// Geometry score after the update (and improvement, if any).
    pub score: f64,
}

/// Evaluates `r` at `x0` and `x0 + δ·e_i` for `i = 1..d`.
pub fn init_set(x0: &DVector<f64>, delta0: f64, evaluator: &mut Evaluator) -> Result<InterpolationSet> {
    if !(delta0 > 0.0) || !delta0.is_finite() {
        return Err(Error::InvalidConfig(format!("initial radius must be positive, got {delta0}")));
    }
    let d = x0.len();
    check_dim("initial point", evaluator.problem().dim(), d)?;
    let n = evaluator.problem().n_residuals();
    let mut points = Vec::with_capacity(d + 1);
    let mut residuals = DMatrix::zeros(d + 1, n);
    let mut fvals = Vec::with_capacity(d + 1);
    for t in 0..=d {
        let mut y = x0.clone();
        if t > 0 {
            y[t - 1] += delta0;
        }
        let ev = evaluator.evaluate(&y, &format!("initial interpolation point {t}"))?;
        residuals.row_mut(t).tr_copy_from(&ev.residual);
        fvals.push(ev.f);
        points.push(y);
    }
    Ok(InterpolationSet {
        base: 0,
        points,
        residuals,
        fvals,
    })
}

impl InterpolationSet {
    /// Builds a set from explicit points and residuals.
    pub fn new(points: Vec<DVector<f64>>, residuals: Vec<DVector<f64>>, base: usize) -> Result<Self> {
        let count = points.len();
        if count < 2 {
            return Err(Error::InvalidConfig("interpolation set needs d+1 ≥ 2 points".into()));
        }
        let d = count - 1;
        check_dim("interpolation residual count", count, residuals.len())?;
        if base >= count {
            return Err(Error::InvalidConfig(format!("base index {base} out of range")));
        }
        let n = residuals[0].len();
        let mut table = DMatrix::zeros(count, n);
        let mut fvals = Vec::with_capacity(count);
        for (t, (y, r)) in points.iter().zip(&residuals).enumerate() {
            check_dim("interpolation point", d, y.len())?;
            check_dim("interpolation residual", n, r.len())?;
            table.row_mut(t).tr_copy_from(r);
            fvals.push(objective(r));
            if points[..t].iter().any(|p| p == y) {
                return Err(Error::DuplicatePoint(describe_point(y.as_slice())));
            }
        }
        Ok(InterpolationSet {
            base,
            points,
            residuals: table,
            fvals,
        })
    }

    pub fn dim(&self) -> usize {
        self.points.len() - 1
    }

    pub fn n_residuals(&self) -> usize {
        self.residuals.ncols()
    }

    pub fn base_index(&self) -> usize {
        self.base
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn point(&self, t: usize) -> &DVector<f64> {
        &self.points[t]
    }

    pub fn residual(&self, t: usize) -> DVector<f64> {
        self.residuals.row(t).transpose()
    }

    pub fn fval(&self, t: usize) -> f64 {
        self.fvals[t]
    }

    pub fn base_point(&self) -> &DVector<f64> {
        &self.points[self.base]
    }

    pub fn base_residual(&self) -> DVector<f64> {
        self.residual(self.base)
    }

    pub fn base_f(&self) -> f64 {
        self.fvals[self.base]
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        self.position(x).is_some()
    }

    pub fn position(&self, x: &DVector<f64>) -> Option<usize> {
        self.points.iter().position(|p| p == x)
    }

    /// Makes an existing point the base without changing the set.
    pub fn move_base(&mut self, slot: usize) {
        assert!(slot < self.points.len(), "slot {slot} out of range");
        self.base = slot;
    }

    /// Indices of the non-base points, in slot order. Row `i` of `W` and `R`
    /// corresponds to slot `non_base()[i]`.
    pub fn non_base(&self) -> Vec<usize> {
        (0..self.points.len()).filter(|&t| t != self.base).collect()
    }

    /// `W` with rows `(y_t - x_k)ᵀ / scale`.
    fn displacements(&self, scale: f64) -> DMatrix<f64> {
        let d = self.dim();
        let base = self.base_point();
        let mut w = DMatrix::zeros(d, d);
        for (row, t) in self.non_base().into_iter().enumerate() {
            let diff = (&self.points[t] - base) / scale;
            w.row_mut(row).tr_copy_from(&diff);
        }
        w
    }

    /// Condition estimate of the scaled displacement matrix `Ŵ = W/δ`;
    /// `1` is ideal and `+∞` means `Ŵ` is singular.
    pub fn geometry_score(&self, delta: f64) -> f64 {
        DenseLu::factor(self.displacements(delta)).condition_estimate()
    }

    fn set_slot(&mut self, slot: usize, point: DVector<f64>, residual: &DVector<f64>) {
        self.residuals.row_mut(slot).tr_copy_from(residual);
        self.fvals[slot] = objective(residual);
        self.points[slot] = point;
    }

    fn farthest_from(&self, center: &DVector<f64>, skip: Option<usize>) -> usize {
        let mut best = (f64::NEG_INFINITY, 0);
        for (t, y) in self.points.iter().enumerate() {
            if Some(t) == skip {
                continue;
            }
            let dist = (y - center).norm_squared();
            if dist > best.0 {
                best = (dist, t);
            }
        }
        best.1
    }

    /// Inserts a newly evaluated point without any geometry check.
    ///
    /// An accepted point becomes the base and evicts the point farthest from
    /// it; a rejected point evicts the non-base point farthest from the base.
    /// Returns the slot that now holds the point.
    pub fn insert(&mut self, new_point: DVector<f64>, new_residual: &DVector<f64>, accepted: bool) -> Result<usize> {
        check_dim("new interpolation point", self.dim(), new_point.len())?;
        check_dim("new interpolation residual", self.n_residuals(), new_residual.len())?;
        if self.contains(&new_point) {
            return Err(Error::DuplicatePoint(describe_point(new_point.as_slice())));
        }
        let slot = if accepted {
            let slot = self.farthest_from(&new_point, None);
            self.base = slot;
            slot
        } else {
            let base = self.base_point().clone();
            self.farthest_from(&base, Some(self.base))
        };
        self.set_slot(slot, new_point, new_residual);
        Ok(slot)
    }

    /// [`insert`](Self::insert) followed by the geometry gate: if the score
    /// exceeds [`KAPPA_GEOM`] and the evaluator still has budget, one
    /// improvement step follows.
    pub fn update(
        &mut self,
        new_point: DVector<f64>,
        new_residual: &DVector<f64>,
        accepted: bool,
        delta: f64,
        evaluator: &mut Evaluator,
    ) -> Result<UpdateOutcome> {
        let slot = self.insert(new_point, new_residual, accepted)?;
        let mut score = self.geometry_score(delta);
        let mut improved = None;
        if score > KAPPA_GEOM && evaluator.has_budget() {
            improved = self.improve_geometry(delta, evaluator)?;
            if improved.is_some() {
                score = self.geometry_score(delta);
            }
        }
        Ok(UpdateOutcome {
            slot,
            improved,
            score,
        })
    }

    /// Replaces one non-base point by `x_k ± δ·v`, where `v` is the right
    /// singular vector of `Ŵ` for its smallest singular value. Swapping row
    /// `i` of `Ŵ` for `v` scales `det Ŵ` by `(Ŵ⁻ᵀv)_i`, so rows are ranked by
    /// that weight. The top row is taken when it lowers the score; otherwise
    /// the best of the next few candidates by exact score.
    /// Costs one residual evaluation. Returns the refreshed slot.
    pub fn improve_geometry(&mut self, delta: f64, evaluator: &mut Evaluator) -> Result<Option<usize>> {
        let w = self.displacements(1.0);
        let lu = DenseLu::factor(w.clone());
        let current = lu.condition_estimate();
        self.improve_with(delta, &w, &lu, current, evaluator)
    }

    /// [`Self::improve_geometry`] reusing the factorization of an already
    /// assembled system for this set.
    pub fn improve_geometry_assembled(
        &mut self,
        delta: f64,
        sys: &InterpolationSystem,
        evaluator: &mut Evaluator,
    ) -> Result<Option<usize>> {
        sys.check_matches(self)?;
        self.improve_with(delta, &sys.w, &sys.lu, sys.condition, evaluator)
    }

    /// `Ŵ = W/δ` shares singular vectors, weight ranking and condition
    /// number with `W`, so the work is done on `W` with rows `δ·v`.
    fn improve_with(
        &mut self,
        delta: f64,
        w: &DMatrix<f64>,
        lu: &DenseLu,
        current: f64,
        evaluator: &mut Evaluator,
    ) -> Result<Option<usize>> {
        let d = self.dim();
        let Some((v, weight)) = smallest_singular_pair(lu).or_else(|| smallest_singular_pair_svd(w)) else {
            return Ok(None);
        };
        let mut ranked: Vec<usize> = (0..d).collect();
        ranked.sort_by(|&a, &b| weight[b].abs().total_cmp(&weight[a].abs()));

        let row = &v * delta;
        let score_with = |i: usize| lu.condition_with_row_replaced(w, i, &row);
        // The top-ranked row gives the largest determinant gain; score the
        // runners-up only if it fails to improve the conditioning.
        let first = score_with(ranked[0]);
        let mut choice = (first, ranked[0]);
        if !(first < current) {
            for &i in ranked.iter().take(IMPROVE_CANDIDATES.min(d)).skip(1) {
                let score = score_with(i);
                if score < choice.0 {
                    choice = (score, i);
                }
            }
        }
        let slot = self.non_base()[choice.1];

        let base = self.base_point().clone();
        let separation = |p: &DVector<f64>| {
            self.points
                .iter()
                .enumerate()
                .filter(|&(t, _)| t != slot)
                .map(|(_, y)| (y - p).norm())
                .fold(f64::INFINITY, f64::min)
        };
        let plus = &base + &v * delta;
        let minus = &base - &v * delta;
        let (sep_plus, sep_minus) = (separation(&plus), separation(&minus));
        let candidate = if sep_plus >= sep_minus { plus } else { minus };
        if sep_plus.max(sep_minus) <= 0.0 {
            return Ok(None);
        }
        let ev = evaluator.evaluate(&candidate, "geometry improvement point")?;
        self.set_slot(slot, candidate, &ev.residual);
        Ok(Some(slot))
    }
}

/// Smallest singular value's right vector `v` of the factored matrix `A`,
/// by inverse iteration on `AᵀA`, together with the weights `A⁻ᵀv`.
fn smallest_singular_pair(lu: &DenseLu) -> Option<(DVector<f64>, DVector<f64>)> {
    let d = lu.dim();
    if lu.is_singular() {
        return None;
    }
    let mut x = DVector::from_fn(d, |i, _| {
        let mag = 1.0 + i as f64 / d as f64;
        if i % 2 == 0 {
            mag
        } else {
            -mag
        }
    });
    x /= x.norm();
    for _ in 0..INVERSE_ITERATIONS {
        let mut z = lu.solve_vector(&lu.solve_transpose_vector(&x)?)?;
        let norm = z.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return None;
        }
        z /= norm;
        let converged = 1.0 - z.dot(&x).abs() <= 1e-14;
        x = z;
        if converged {
            break;
        }
    }
    let weight = lu.solve_transpose_vector(&x)?;
    weight.iter().all(|w| w.is_finite()).then_some((x, weight))
}

/// Same pair from a full SVD; handles exactly singular matrices.
fn smallest_singular_pair_svd(a: &DMatrix<f64>) -> Option<(DVector<f64>, DVector<f64>)> {
    let svd = a.clone().svd(true, true);
    let (u, v_t) = (svd.u.as_ref()?, svd.v_t.as_ref()?);
    let k = svd.singular_values.imin();
    let v = v_t.row(k).transpose();
    let weight = u.column(k).into_owned();
    (v.iter().chain(weight.iter()).all(|x| x.is_finite())).then_some((v, weight))
}

/// The interpolation linear system for the current set, with `W` factorized.
/// The right-hand sides are read from the set when solving.
#[derive(Debug, Clone)]
pub struct InterpolationSystem {
    w: DMatrix<f64>,
    lu: DenseLu,
    condition: f64,
    base: usize,
    n: usize,
}

impl InterpolationSystem {
    /// d×d displacement matrix.
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_residuals(&self) -> usize {
        self.n
    }

    fn check_matches(&self, set: &InterpolationSet) -> Result<()> {
        check_dim("interpolation set dimension", self.dim(), set.dim())?;
        check_dim("interpolation set residuals", self.n, set.n_residuals())?;
        check_dim("interpolation set base", self.base, set.base)
    }
}

/// The d×n residual-difference matrix `R` with rows `(r(y_t) - r(x_k))ᵀ`.
pub fn residual_differences(set: &InterpolationSet) -> DMatrix<f64> {
    let (d, n) = (set.dim(), set.n_residuals());
    let base = set.base;
    let src = set.residuals.as_slice();
    let mut r = DMatrix::zeros(d, n);
    for (j, out) in r.as_mut_slice().chunks_exact_mut(d).enumerate() {
        let col = &src[j * (d + 1)..(j + 1) * (d + 1)];
        let b = col[base];
        out[..base].iter_mut().zip(&col[..base]).for_each(|(o, &c)| *o = c - b);
        out[base..].iter_mut().zip(&col[base + 1..]).for_each(|(o, &c)| *o = c - b);
    }
    r
}

/// Forms and factorizes `W` once. Fails with [`Error::Geometry`] when the
/// condition estimate exceeds [`KAPPA_SOLVE`].
pub fn assemble_system(set: &InterpolationSet, profile: &mut Profile) -> Result<InterpolationSystem> {
    profile.time(Task::InterpSolve, |profile| {
        let d = set.dim();
        let w = set.displacements(1.0);
        let lu = DenseLu::factor(w.clone());
        profile.counts.flops += lu_flops(d);
        let condition = lu.condition_estimate();
        if !(condition <= KAPPA_SOLVE) {
            return Err(Error::Geometry { condition });
        }
        Ok(InterpolationSystem {
            w,
            lu,
            condition,
            base: set.base,
            n: set.n_residuals(),
        })
    })
}

fn solve_rhs(sys: &InterpolationSystem, rhs: &mut DMatrix<f64>, profile: &mut Profile) -> Result<()> {
    profile.counts.flops += solve_flops(sys.dim(), rhs.ncols());
    if sys.lu.solve_in_place(rhs) {
        Ok(())
    } else {
        Err(Error::Geometry {
            condition: f64::INFINITY,
        })
    }
}

/// Solves `W·Jᵀ = R` for the full n×d model Jacobian.
pub fn solve_full_jacobian(
    sys: &InterpolationSystem,
    set: &InterpolationSet,
    profile: &mut Profile,
) -> Result<DMatrix<f64>> {
    sys.check_matches(set)?;
    profile.time(Task::InterpSolve, |profile| {
        let mut jt = residual_differences(set);
        solve_rhs(sys, &mut jt, profile)?;
        Ok(jt.transpose())
    })
}

/// Solves `W·(SJ)ᵀ = R·Sᵀ`, returning the m×d sketched Jacobian `SJ` and
/// the sketched base residual `S·r(x_k)`. `R` is never formed; the sketch
/// is applied to the residual differences as they are read.
pub fn solve_sketched_jacobian(
    sys: &InterpolationSystem,
    set: &InterpolationSet,
    sketch: &SketchOperator,
    profile: &mut Profile,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    sys.check_matches(set)?;
    let (rs, sr) = profile.time(Task::SketchApply, |profile| {
        sketch.apply_to_differences(&set.residuals, set.base, &mut profile.counts)
    })?;
    profile.time(Task::InterpSolve, |profile| {
        let mut sjt = rs;
        solve_rhs(sys, &mut sjt, profile)?;
        Ok((sjt.transpose(), sr))
    })
}

/// Local quadratic model `c + gᵀs + ½sᵀHs` with `g = Jᵀr` and `H = JᵀJ`,
/// where `J` and `r` may be sketched.
#[derive(Debug, Clone)]
pub struct QuadraticModel {
    g: DVector<f64>,
    h: DMatrix<f64>,
    jac: DMatrix<f64>,
    residual: DVector<f64>,
    c: OnceLock<f64>,
}

/// Assembles the quadratic model from a (possibly sketched) Jacobian and
/// the matching residual vector. `f_base` supplies the constant term; when
/// absent it is computed only on demand.
pub fn build_model(
    jac: DMatrix<f64>,
    residual: DVector<f64>,
    f_base: Option<f64>,
    profile: &mut Profile,
) -> Result<QuadraticModel> {
    check_dim("model residual", jac.nrows(), residual.len())?;
    profile.time(Task::ModelBuild, |profile| {
        let (rows, d) = jac.shape();
        let jt = jac.transpose();
        let g = &jt * &residual;
        let mut h = &jt * &jac;
        for i in 0..d {
            for j in 0..i {
                let avg = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = avg;
                h[(j, i)] = avg;
            }
        }
        profile.counts.flops += (2 * rows * d * d + 2 * rows * d) as u64;
        let c = OnceLock::new();
        if let Some(f) = f_base {
            let _ = c.set(f);
        }
        Ok(QuadraticModel {
            g,
            h,
            jac,
            residual,
            c,
        })
    })
}

impl QuadraticModel {
    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn gradient(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// The model Jacobian (`J` or `SJ`).
    pub fn jacobian(&self) -> &DMatrix<f64> {
        &self.jac
    }

    /// Model constant; `½‖r‖²` of the stored residual unless supplied.
    pub fn constant(&self) -> f64 {
        *self.c.get_or_init(|| objective(&self.residual))
    }

    pub fn has_constant(&self) -> bool {
        self.c.get().is_some()
    }

    /// `c + gᵀs + ½sᵀHs`.
    pub fn value(&self, s: &DVector<f64>) -> f64 {
        self.constant() + self.decrease_free_part(s)
    }

    /// `gᵀs + ½sᵀHs`, the model change from `s = 0`.
    pub fn decrease_free_part(&self, s: &DVector<f64>) -> f64 {
        self.g.dot(s) + 0.5 * s.dot(&(&self.h * s))
    }
}

/// Model value at `s`.
pub fn model_value(model: &QuadraticModel, s: &DVector<f64>) -> Result<f64> {
    check_dim("model step", model.dim(), s.len())?;
    Ok(model.value(s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{gen_rosenbrock, Problem};
    use crate::sketch::{make_sketch, stream, SketchConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn set_from(points: &[&[f64]], r: impl Fn(&DVector<f64>) -> DVector<f64>) -> InterpolationSet {
        let pts: Vec<_> = points.iter().map(|p| v(p)).collect();
        let res: Vec<_> = pts.iter().map(&r).collect();
        InterpolationSet::new(pts, res, 0).unwrap()
    }

    fn linear_problem(a: DMatrix<f64>, b: DVector<f64>) -> Problem {
        let d = a.ncols();
        let n = a.nrows();
        Problem::new("affine", n, DVector::zeros(d), move |x: &DVector<f64>| &a * x + &b).unwrap()
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    /// Dense oracle: stack the d equations for each residual component and
    /// solve with a generic (QR-based) linear solver.
    fn oracle_jacobian(set: &InterpolationSet) -> DMatrix<f64> {
        let d = set.dim();
        let n = set.n_residuals();
        let base = set.base_index();
        let order = set.non_base();
        let mut w = DMatrix::zeros(d, d);
        for (row, &t) in order.iter().enumerate() {
            for c in 0..d {
                w[(row, c)] = set.point(t)[c] - set.point(base)[c];
            }
        }
        let qr = w.qr();
        let mut j = DMatrix::zeros(n, d);
        for i in 0..n {
            let rhs = DVector::from_iterator(
                d,
                order.iter().map(|&t| set.residual(t)[i] - set.residual(base)[i]),
            );
            let row = qr.solve(&rhs).unwrap();
            j.row_mut(i).tr_copy_from(&row);
        }
        j
    }

    #[test]
    fn init_coordinate_points() {
        let p = Problem::new("id2", 2, DVector::zeros(2), |x: &DVector<f64>| x.clone()).unwrap();
        let mut ev = Evaluator::new(p);
        let set = init_set(&v(&[0.0, 0.0]), 1.0, &mut ev).unwrap();
        assert_eq!(set.points(), &[v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])]);
        assert_eq!(ev.n_evals(), 3);
        assert_eq!(set.base_index(), 0);
    }

    #[test]
    fn init_one_dimensional_residuals() {
        let p = Problem::new("id1", 1, v(&[3.0]), |x: &DVector<f64>| x.clone()).unwrap();
        let mut ev = Evaluator::new(p);
        let set = init_set(&v(&[3.0]), 0.5, &mut ev).unwrap();
        assert_eq!(set.residual(0)[0], 3.0);
        assert_eq!(set.residual(1)[0], 3.5);
    }

    #[test]
    fn init_rosenbrock_base_value() {
        let p = gen_rosenbrock(2).unwrap();
        let mut ev = Evaluator::new(p);
        let set = init_set(&v(&[-1.2, 1.0]), 0.1, &mut ev).unwrap();
        assert!((set.base_f() - 12.1).abs() < 1e-12);
        for t in 0..3 {
            assert!((set.fval(t) - 0.5 * set.residual(t).norm_squared()).abs() < 1e-12);
        }
    }

    #[test]
    fn init_reports_failing_point() {
        let p = Problem::new("blowup", 1, v(&[0.0]), |x: &DVector<f64>| {
            x.map(|t| if t > 0.0 { f64::INFINITY } else { t })
        })
        .unwrap();
        let mut ev = Evaluator::new(p);
        let err = init_set(&v(&[0.0]), 1.0, &mut ev).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1]") && msg.contains("point 1"), "{msg}");
        assert!(init_set(&v(&[0.0]), 0.0, &mut ev).is_err());
    }

    #[test]
    fn assemble_one_dimensional() {
        let set = set_from(&[&[0.0], &[0.5]], |x| x.map(|t| t * t));
        let sys = assemble_system(&set, &mut Profile::new()).unwrap();
        assert_eq!(sys.w()[(0, 0)], 0.5);
        assert_eq!(residual_differences(&set)[(0, 0)], 0.25);
    }

    #[test]
    fn assemble_linear_coordinate_set() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let set = set_from(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]], |x| &a * x);
        let sys = assemble_system(&set, &mut Profile::new()).unwrap();
        assert_eq!(sys.w(), &DMatrix::identity(2, 2));
        assert_eq!(residual_differences(&set), a.transpose());
    }

    #[test]
    fn coincident_points_are_a_geometry_failure() {
        // Bypass the distinctness check to exercise the solver guard.
        let mut set = set_from(&[&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]], |x| x.clone());
        set.points[1] = set.points[0].clone();
        let err = assemble_system(&set, &mut Profile::new()).unwrap_err();
        assert!(matches!(err, Error::Geometry { .. }));
        assert!(InterpolationSet::new(vec![v(&[0.0]), v(&[0.0])], vec![v(&[0.0]), v(&[0.0])], 0).is_err());
    }

    #[test]
    fn full_jacobian_of_affine_map_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = DMatrix::from_fn(7, 4, |_, _| rng.gen_range(-2.0..2.0));
        let b = DVector::from_fn(7, |_, _| rng.gen_range(-2.0..2.0));
        let p = linear_problem(a.clone(), b);
        let pts: Vec<_> = (0..5).map(|_| DVector::from_fn(4, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let res = pts.iter().map(|x| p.residual(x)).collect();
        let set = InterpolationSet::new(pts, res, 2).unwrap();
        let sys = assemble_system(&set, &mut Profile::new()).unwrap();
        let j = solve_full_jacobian(&sys, &set, &mut Profile::new()).unwrap();
        assert!(rel_err(&j, &a) < 1e-10);
    }

    #[test]
    fn secant_slope_in_one_dimension() {
        let h = 0.3;
        let set = set_from(&[&[0.0], &[h]], |x| x.map(|t| t * t));
        let sys = assemble_system(&set, &mut Profile::new()).unwrap();
        let j = solve_full_jacobian(&sys, &set, &mut Profile::new()).unwrap();
        assert!((j[(0, 0)] - h).abs() < 1e-15);
    }

    #[test]
    fn full_jacobian_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));
        let set = set_from(&[&[0.1, -0.2], &[0.9, 0.3], &[-0.4, 1.1]], |x| {
            let lin = &q * x;
            lin.map(|t| t * t + t)
        });
        let sys = assemble_system(&set, &mut Profile::new()).unwrap();
        let j = solve_full_jacobian(&sys, &set, &mut Profile::new()).unwrap();
        assert!(rel_err(&j, &oracle_jacobian(&set)) < 1e-10);
    }

    #[test]
    fn identity_sketch_reproduces_full_solve() {
        let set = set_from(&[&[0.0, 0.0], &[1.0, 0.2], &[0.1, 0.7]], |x| {
            v(&[x[0] * x[1], x[0].sin(), x[1].exp()])
        });
        let sys = assemble_system(&set, &mut Profile::new()).unwrap();
        let j = solve_full_jacobian(&sys, &set, &mut Profile::new()).unwrap();
        let r0 = set.base_residual();
        let (sj, sr) = solve_sketched_jacobian(&sys, &set, &SketchOperator::identity(3), &mut Profile::new()).unwrap();
        assert_eq!(sj, j);
        assert_eq!(sr, r0);
    }

    #[test]
    fn sketched_jacobian_of_affine_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = DMatrix::from_fn(9, 3, |_, _| rng.gen_range(-2.0..2.0));
        let b = DVector::from_fn(9, |_, _| rng.gen_range(-2.0..2.0));
        let p = linear_problem(a.clone(), b);
        let mut ev = Evaluator::new(p);
        let set = init_set(&v(&[0.5, -0.5, 1.0]), 0.3, &mut ev).unwrap();
        let sys = assemble_system(&set, &mut Profile::new()).unwrap();
        for config in [SketchConfig::gaussian(4), SketchConfig::sampling(4), SketchConfig::hashing(4, 2)] {
            let s = make_sketch(&config, 9, &mut stream(3)).unwrap();
            let (sj, _) = solve_sketched_jacobian(&sys, &set, &s, &mut Profile::new()).unwrap();
            let want = s.densify() * &a;
            assert!(rel_err(&sj, &want) < 1e-10, "{:?}", config.kind);
        }
    }

    #[test]
    fn sketched_jacobian_commutes_with_full_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<_> = (0..3).map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let res: Vec<_> = (0..3).map(|_| DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0))).collect();
        let set = InterpolationSet::new(pts, res, 0).unwrap();
        let sys = assemble_system(&set, &mut Profile::new()).unwrap();
        let s = make_sketch(&SketchConfig::hashing(3, 1), 6, &mut stream(9)).unwrap();
        let (sj, sr) = solve_sketched_jacobian(&sys, &set, &s, &mut Profile::new()).unwrap();
        let j = solve_full_jacobian(&sys, &set, &mut Profile::new()).unwrap();
        let dense = s.densify();
        assert!(rel_err(&sj, &(&dense * j)) < 1e-12);
        assert!((sr - &dense * set.base_residual()).amax() < 1e-12);
    }

    #[test]
    fn model_with_identity_jacobian() {
        let m = build_model(DMatrix::identity(2, 2), v(&[1.0, 2.0]), None, &mut Profile::new()).unwrap();
        assert_eq!(m.gradient(), &v(&[1.0, 2.0]));
        assert_eq!(m.hessian(), &DMatrix::identity(2, 2));
        assert!(!m.has_constant());
        assert_eq!(m.constant(), 2.5);
        assert!(m.has_constant());
    }

    #[test]
    fn model_with_column_jacobian() {
        let jac = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let m = build_model(jac, v(&[1.0, 1.0]), None, &mut Profile::new()).unwrap();
        assert_eq!(m.gradient()[0], 3.0);
        assert_eq!(m.hessian()[(0, 0)], 5.0);
    }

    #[test]
    fn zero_residual_model_is_minimized_at_origin() {
        let jac = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -1.0, 2.0, 0.0, 1.0]);
        let m = build_model(jac.clone(), DVector::zeros(3), None, &mut Profile::new()).unwrap();
        assert_eq!(m.gradient(), &DVector::zeros(2));
        assert!((m.hessian() - jac.transpose() * &jac).amax() < 1e-15);
        let (s, dec) = crate::trs::solve_trs(&m, 1.0);
        assert_eq!(s, DVector::zeros(2));
        assert_eq!(dec, 0.0);
    }

    #[test]
    fn model_values() {
        let mut m = build_model(DMatrix::identity(2, 2), v(&[1.0, 0.0]), Some(0.0), &mut Profile::new()).unwrap();
        assert_eq!(model_value(&m, &DVector::zeros(2)).unwrap(), 0.0);
        assert_eq!(model_value(&m, &v(&[-1.0, 0.0])).unwrap(), -0.5);
        assert!(model_value(&m, &v(&[1.0])).is_err());
        m = build_model(DMatrix::identity(2, 2), v(&[3.0, 4.0]), Some(12.5), &mut Profile::new()).unwrap();
        assert_eq!(m.value(&DVector::zeros(2)), 12.5);
    }

    #[test]
    fn unsketched_model_interpolates() {
        let p = gen_rosenbrock(3).unwrap();
        let mut ev = Evaluator::new(p.clone());
        let set = init_set(&v(&[0.3, -0.4, 0.8]), 0.2, &mut ev).unwrap();
        let mut prof = Profile::new();
        let sys = assemble_system(&set, &mut prof).unwrap();
        let j = solve_full_jacobian(&sys, &set, &mut prof).unwrap();
        let r0 = set.base_residual();
        let model = build_model(j.clone(), r0.clone(), Some(set.base_f()), &mut prof).unwrap();
        assert!((model.value(&DVector::zeros(3)) - set.base_f()).abs() < 1e-12);
        for t in 0..4 {
            let step = set.point(t) - set.base_point();
            let lin = &r0 + &j * &step;
            let rt = set.residual(t);
            assert!((&lin - &rt).norm() <= 1e-10 * rt.norm().max(1.0));
            let mval = model.value(&step);
            assert!((mval - 0.5 * lin.norm_squared()).abs() <= 1e-10 * mval.abs().max(1.0));
        }
        assert!(prof.seconds(Task::InterpSolve) > 0.0);
        assert!(prof.counts.flops > 0);
    }

    #[test]
    fn geometry_score_examples() {
        let delta = 0.25;
        let coord = set_from(&[&[1.0, 1.0], &[1.25, 1.0], &[1.0, 1.25]], |x| x.clone());
        assert_eq!(coord.geometry_score(delta), 1.0);

        let mut repeated = coord.clone();
        repeated.points[2] = repeated.points[1].clone();
        assert_eq!(repeated.geometry_score(delta), f64::INFINITY);

        let skinny = set_from(&[&[0.0, 0.0], &[1.0, 0.0], &[1.0, 1e-6]], |x| x.clone());
        // Singular values of [[1,0],[1,1e-6]] are ≈ √2 and ≈ 1e-6/√2, so κ₂ ≈ 2e6.
        assert!(skinny.geometry_score(1.0) >= 1e5);
    }

    fn shift_problem(d: usize) -> Problem {
        Problem::new("shift", d + 1, DVector::zeros(d), move |x: &DVector<f64>| {
            let mut r = DVector::zeros(x.len() + 1);
            r.rows_mut(0, x.len()).copy_from(&x.map(|t| t - 1.0));
            r[x.len()] = x.sum();
            r
        })
        .unwrap()
    }

    #[test]
    fn accepted_update_moves_base() {
        let p = shift_problem(2);
        let mut ev = Evaluator::new(p.clone());
        let mut set = init_set(&v(&[0.0, 0.0]), 1.0, &mut ev).unwrap();
        let x_new = v(&[0.6, 0.1]);
        let r_new = p.residual(&x_new);
        let out = set.update(x_new.clone(), &r_new, true, 1.0, &mut ev).unwrap();
        assert_eq!(set.base_point(), &x_new);
        assert_eq!(set.points().len(), 3);
        assert_eq!(out.improved, None);
        // (0,1) is the point farthest from (0.6,0.1).
        assert!(!set.contains(&v(&[0.0, 1.0])));
        assert!(set.contains(&v(&[0.0, 0.0])));
    }

    #[test]
    fn rejected_update_keeps_base() {
        let p = shift_problem(2);
        let mut ev = Evaluator::new(p.clone());
        let pts = vec![v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 2.0])];
        let res = pts.iter().map(|x| p.residual(x)).collect();
        let mut set = InterpolationSet::new(pts, res, 0).unwrap();
        let x_new = v(&[0.1, 0.5]);
        set.update(x_new.clone(), &p.residual(&x_new), false, 1.0, &mut ev).unwrap();
        assert_eq!(set.base_point(), &v(&[0.0, 0.0]));
        assert!(set.contains(&x_new));
        assert!(!set.contains(&v(&[0.0, 2.0])));
        assert_eq!(ev.n_evals(), 0);
    }

    #[test]
    fn inverse_iteration_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let d = rng.gen_range(2..9);
            let mut a = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            // Make it ill-conditioned so the gap to the next singular value is wide.
            let row = a.row(0) * 0.5 + a.row(1) * 0.25;
            a.row_mut(d - 1).copy_from(&(row.clone() + row.map(|_| rng.gen_range(-1e-9..1e-9))));
            let (v, weight) = smallest_singular_pair(&DenseLu::factor(a.clone())).unwrap();
            let (v_ref, _) = smallest_singular_pair_svd(&a).unwrap();
            assert!(1.0 - v.dot(&v_ref).abs() < 1e-10);
            // Determinant ratio identity for replacing row i by v.
            let det = a.determinant();
            for i in 0..d {
                let mut b = a.clone();
                b.row_mut(i).tr_copy_from(&v);
                assert!((b.determinant() / det - weight[i]).abs() <= 1e-6 * weight[i].abs().max(1.0));
            }
        }
    }

    #[test]
    fn degenerate_update_triggers_one_improvement() {
        let p = shift_problem(2);
        let mut ev = Evaluator::new(p.clone());
        let pts = vec![v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 3.0])];
        let res = pts.iter().map(|x| p.residual(x)).collect();
        let mut set = InterpolationSet::new(pts, res, 0).unwrap();
        let x_new = v(&[0.5, 1e-10]);
        // Without improvement the set would be nearly collinear.
        let mut degenerate = set.clone();
        degenerate.set_slot(2, x_new.clone(), &p.residual(&x_new));
        let before = degenerate.geometry_score(1.0);
        assert!(before > KAPPA_GEOM, "{before}");

        let out = set.update(x_new.clone(), &p.residual(&x_new), false, 1.0, &mut ev).unwrap();
        assert_eq!(ev.n_evals(), 1);
        assert!(out.improved.is_some());
        assert!(out.score < before, "{} !< {before}", out.score);
        assert_eq!(out.score, set.geometry_score(1.0));
        assert!(out.score < KAPPA_GEOM);
        let slot = out.improved.unwrap();
        assert!((set.point(slot) - set.base_point()).norm() - 1.0 < 1e-12);
        assert_eq!(set.residual(slot), p.residual(set.point(slot)));
    }

    #[test]
    fn improvement_skipped_without_budget() {
        let p = shift_problem(2);
        let mut ev = Evaluator::with_budget(p.clone(), 0);
        let pts = vec![v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 3.0])];
        let res = pts.iter().map(|x| p.residual(x)).collect();
        let mut set = InterpolationSet::new(pts, res, 0).unwrap();
        let x_new = v(&[0.5, 1e-10]);
        let out = set.update(x_new.clone(), &p.residual(&x_new), false, 1.0, &mut ev).unwrap();
        assert_eq!(out.improved, None);
        assert_eq!(ev.n_evals(), 0);
    }

    #[test]
    fn improvement_failure_names_point() {
        let p = Problem::new("wall", 2, DVector::zeros(2), |x: &DVector<f64>| {
            if (0.9..1.1).contains(&x[1].abs()) {
                DVector::from_element(2, f64::NAN)
            } else {
                x.clone()
            }
        })
        .unwrap();
        let mut ev = Evaluator::new(p.clone());
        let pts = vec![v(&[0.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 3.0])];
        let res = pts.iter().map(|x| p.residual(x)).collect();
        let mut set = InterpolationSet::new(pts, res, 0).unwrap();
        let x_new = v(&[0.5, 1e-10]);
        let err = set.update(x_new.clone(), &p.residual(&x_new), false, 1.0, &mut ev).unwrap_err();
        assert!(err.to_string().contains("geometry improvement"), "{err}");
    }

    #[test]
    fn duplicate_insert_is_rejected() {
        let p = shift_problem(1);
        let mut ev = Evaluator::new(p.clone());
        let mut set = init_set(&v(&[0.0]), 1.0, &mut ev).unwrap();
        let err = set.update(v(&[1.0]), &p.residual(&v(&[1.0])), false, 1.0, &mut ev).unwrap_err();
        assert!(matches!(err, Error::DuplicatePoint(_)));
    }

    fn check_set(set: &InterpolationSet, d: usize) {
        assert_eq!(set.points().len(), d + 1);
        for a in 0..=d {
            for b in 0..a {
                assert_ne!(set.point(a), set.point(b));
            }
            assert!((set.fval(a) - 0.5 * set.residual(a).norm_squared()).abs() <= 1e-12 * set.fval(a).max(1.0));
        }
        assert!(set.base_index() <= d);
    }

    #[test]
    fn randomized_update_sequences_preserve_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..20 {
            let d = 1 + trial % 5;
            let p = shift_problem(d);
            let mut ev = Evaluator::new(p.clone());
            let mut delta = 1.0;
            let mut set = init_set(&DVector::zeros(d), delta, &mut ev).unwrap();
            for _ in 0..100 {
                let step = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0)) * delta;
                let x = set.base_point() + step;
                if set.contains(&x) {
                    continue;
                }
                let accepted = rng.gen_bool(0.5);
                let base_before = set.base_point().clone();
                set.update(x.clone(), &p.residual(&x), accepted, delta, &mut ev).unwrap();
                check_set(&set, d);
                if accepted {
                    assert_eq!(set.base_point(), &x);
                } else {
                    assert_eq!(set.base_point(), &base_before);
                }
                delta = (delta * rng.gen_range(0.5..1.5)).clamp(1e-3, 10.0);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn linear_maps_are_recovered(d in 1usize..=6, extra in 0usize..=4, seed in any::<u64>()) {
            let n = d + extra;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = DMatrix::from_fn(n, d, |_, _| rng.gen_range(-3.0..3.0));
            let b = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            let pts: Vec<_> = (0..=d).map(|_| DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0))).collect();
            let res = pts.iter().map(|x| &a * x + &b).collect();
            let set = InterpolationSet::new(pts, res, rng.gen_range(0..=d)).unwrap();
            prop_assume!(set.geometry_score(1.0) < 1e8);
            let sys = assemble_system(&set, &mut Profile::new()).unwrap();
            let j = solve_full_jacobian(&sys, &set, &mut Profile::new()).unwrap();
            prop_assert!(rel_err(&j, &a) < 1e-8);
            let s = make_sketch(&SketchConfig::hashing(3, 2), n, &mut stream(seed)).unwrap();
            let (sj, _) = solve_sketched_jacobian(&sys, &set, &s, &mut Profile::new()).unwrap();
            prop_assert!(rel_err(&sj, &(s.densify() * &a)) < 1e-8);
        }

        #[test]
        fn hessian_is_symmetric_psd(rows in 1usize..=8, d in 1usize..=6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let jac = DMatrix::from_fn(rows, d, |_, _| rng.gen_range(-5.0..5.0));
            let r = DVector::from_fn(rows, |_, _| rng.gen_range(-5.0..5.0));
            let m = build_model(jac, r, None, &mut Profile::new()).unwrap();
            let h = m.hessian();
            prop_assert_eq!(h, &h.transpose());
            let eig = h.clone().symmetric_eigenvalues();
            prop_assert!(eig.min() >= -1e-10 * h.norm().max(1e-300));
        }
    }
}
