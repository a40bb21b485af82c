//! Dense LU factorization reused across right-hand sides, with a cheap
//! 1-norm condition estimate.

use nalgebra::{DMatrix, DVector, Dyn, LU};

/// Row-block size of the blocked triangular solves.
const BLOCK: usize = 32;
/// Right-hand sides are processed in column panels of this width so a
/// panel stays in cache through both substitutions.
const PANEL: usize = 256;

/// `P·A = L·U` with partial pivoting.
#[derive(Debug, Clone)]
pub struct DenseLu {
    lu: LU<f64, Dyn, Dyn>,
    l: DMatrix<f64>,
    u: DMatrix<f64>,
    /// Inverses of the diagonal `BLOCK`-sized blocks of `L` and `U`.
    l_inv: Vec<DMatrix<f64>>,
    u_inv: Vec<DMatrix<f64>>,
    dim: usize,
    norm1: f64,
    singular: bool,
}

/// `(start, len)` of the diagonal blocks of a d×d triangular factor.
fn blocks(d: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..d).step_by(BLOCK).map(move |k0| (k0, BLOCK.min(d - k0)))
}

/// Maximum absolute column sum.
pub fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

impl DenseLu {
    pub fn factor(a: DMatrix<f64>) -> Self {
        assert!(a.is_square(), "LU of a non-square matrix");
        let dim = a.nrows();
        let norm1 = norm1(&a);
        let lu = LU::new(a);
        let u = lu.u();
        let singular = (0..dim).any(|i| {
            let p = u[(i, i)];
            p == 0.0 || !p.is_finite()
        });
        let l = lu.l();
        let (mut l_inv, mut u_inv) = (Vec::new(), Vec::new());
        if !singular {
            for (k0, kb) in blocks(dim) {
                let eye = DMatrix::identity(kb, kb);
                let mut li = eye.clone();
                l.view((k0, k0), (kb, kb)).solve_lower_triangular_with_diag_mut(&mut li, 1.0);
                let mut ui = eye;
                u.view((k0, k0), (kb, kb)).solve_upper_triangular_mut(&mut ui);
                l_inv.push(li);
                u_inv.push(ui);
            }
        }
        DenseLu {
            lu,
            l,
            u,
            l_inv,
            u_inv,
            dim,
            norm1,
            singular,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// Solves `A·X = B` in place for all columns of `B`. Wide right-hand
    /// sides use block substitution with pre-inverted diagonal blocks, so the
    /// work is matrix-matrix products over cache-sized column panels.
    pub fn solve_in_place(&self, b: &mut DMatrix<f64>) -> bool {
        if self.singular {
            return false;
        }
        let d = self.dim;
        if b.ncols() < BLOCK || d <= BLOCK {
            return self.lu.solve_mut(b);
        }
        self.lu.p().permute_rows(b);
        let blocks: Vec<_> = blocks(d).collect();
        let mut tmp = DMatrix::zeros(BLOCK, PANEL);
        let mut c0 = 0;
        while c0 < b.ncols() {
            let cw = PANEL.min(b.ncols() - c0);
            let mut panel = b.columns_mut(c0, cw);
            for (i, &(k0, kb)) in blocks.iter().enumerate() {
                let (mut top, mut rest) = panel.rows_range_pair_mut(k0..k0 + kb, k0 + kb..);
                let mut t = tmp.view_mut((0, 0), (kb, cw));
                t.gemm(1.0, &self.l_inv[i], &top, 0.0);
                top.copy_from(&t);
                if k0 + kb < d {
                    rest.gemm(-1.0, &self.l.view((k0 + kb, k0), (d - k0 - kb, kb)), &top, 1.0);
                }
            }
            for (i, &(k0, kb)) in blocks.iter().enumerate().rev() {
                let (mut head, mut cur) = panel.rows_range_pair_mut(0..k0, k0..k0 + kb);
                let mut t = tmp.view_mut((0, 0), (kb, cw));
                t.gemm(1.0, &self.u_inv[i], &cur, 0.0);
                cur.copy_from(&t);
                if k0 > 0 {
                    head.gemm(-1.0, &self.u.view((0, k0), (k0, kb)), &cur, 1.0);
                }
            }
            c0 += cw;
        }
        true
    }

    /// Solves `A·x = b`; `None` if `A` is singular.
    pub fn solve_vector(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        let mut x = b.clone();
        self.lu.solve_mut(&mut x).then_some(x)
    }

    /// Solves `Aᵀ·x = b`; `None` if `A` is singular.
    pub fn solve_transpose_vector(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        self.solve_transpose(b)
    }

    /// Solves `Aᵀ·x = b` using the stored factors.
    fn solve_transpose(&self, b: &DVector<f64>) -> Option<DVector<f64>> {
        // Aᵀ = Uᵀ·Lᵀ·P
        let y = self.u.tr_solve_upper_triangular(b)?;
        let mut z = self.l.tr_solve_lower_triangular(&y)?;
        self.lu.p().inv_permute_rows(&mut z);
        Some(z)
    }

    /// Estimate of `κ₁(A) = ‖A‖₁·‖A⁻¹‖₁` (Hager's method with Higham's
    /// alternating-sign safeguard). Returns `+∞` for singular matrices.
    pub fn condition_estimate(&self) -> f64 {
        if self.dim == 0 {
            return 1.0;
        }
        if self.is_singular() {
            return f64::INFINITY;
        }
        hager(
            self.dim,
            self.norm1,
            |x| self.solve_vector(x),
            |x| self.solve_transpose(x),
        )
    }

    /// Condition estimate of `a` (the factored matrix) with row `row`
    /// replaced by `new_row`, in `O(d²)` through Sherman–Morrison updates of
    /// the existing factors.
    pub fn condition_with_row_replaced(&self, a: &DMatrix<f64>, row: usize, new_row: &DVector<f64>) -> f64 {
        let n = self.dim;
        assert!(row < n && a.nrows() == n && new_row.len() == n, "row replacement shape");
        if self.is_singular() {
            // No factors to update from; fall back to a fresh factorization.
            let mut b = a.clone();
            b.row_mut(row).tr_copy_from(new_row);
            return DenseLu::factor(b).condition_estimate();
        }
        // A' = A + e_i·uᵀ with u = new_row - a_i.
        let u = new_row - a.row(row).transpose();
        let mut e = DVector::zeros(n);
        e[row] = 1.0;
        let (Some(z), Some(y)) = (self.solve_vector(&e), self.solve_transpose(&u)) else {
            return f64::INFINITY;
        };
        // 1 + uᵀA⁻¹e_i = det(A')/det(A).
        let denom = 1.0 + u.dot(&z);
        if !(denom.abs() > f64::EPSILON * (1.0 + u.norm() * z.norm())) {
            return f64::INFINITY;
        }
        let mut replaced = a.clone();
        replaced.row_mut(row).tr_copy_from(new_row);
        hager(
            n,
            norm1(&replaced),
            |x| {
                let w = self.solve_vector(x)?;
                let t = u.dot(&w) / denom;
                Some(w - &z * t)
            },
            |x| {
                let w = self.solve_transpose(x)?;
                let t = w[row] / denom;
                Some(w - &y * t)
            },
        )
    }
}

/// Hager's 1-norm estimate of `‖A⁻¹‖₁` times `norm1`, given solves with
/// `A` and `Aᵀ`.
fn hager(
    n: usize,
    norm1: f64,
    solve: impl Fn(&DVector<f64>) -> Option<DVector<f64>>,
    solve_transpose: impl Fn(&DVector<f64>) -> Option<DVector<f64>>,
) -> f64 {
    let one_norm = |v: &DVector<f64>| v.iter().map(|x| x.abs()).sum::<f64>();
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut est = 0.0f64;
    for iter in 0..5 {
        let Some(y) = solve(&x) else {
            return f64::INFINITY;
        };
        let new_est = one_norm(&y);
        if iter > 0 && new_est <= est {
            break;
        }
        est = new_est;
        let signs = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let Some(z) = solve_transpose(&signs) else {
            return f64::INFINITY;
        };
        let j = z.iamax();
        if iter > 0 && z[j].abs() <= z.dot(&x) {
            break;
        }
        x.fill(0.0);
        x[j] = 1.0;
    }
    let alt = DVector::from_fn(n, |i, _| {
        let mag = if n > 1 {
            1.0 + i as f64 / (n - 1) as f64
        } else {
            1.0
        };
        if i % 2 == 0 {
            mag
        } else {
            -mag
        }
    });
    if let Some(y) = solve(&alt) {
        est = est.max(2.0 * one_norm(&y) / (3.0 * n as f64));
    }
    let cond = norm1 * est;
    if cond.is_finite() {
        cond
    } else {
        f64::INFINITY
    }
}

/// Nominal flop count of an LU factorization of a d×d matrix.
pub fn lu_flops(d: usize) -> u64 {
    (2 * d * d * d / 3) as u64
}

/// Nominal flop count of forward+back substitution with `rhs` right-hand sides.
pub fn solve_flops(d: usize, rhs: usize) -> u64 {
    (2 * d * d * rhs) as u64
}
