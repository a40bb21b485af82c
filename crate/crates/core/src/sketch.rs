//! Random sketching operators `S ∈ R^{m×n}` acting on residual space.
//!
//! Three structured families are provided alongside the identity:
//!
//! * **Gaussian**: dense, i.i.d. `N(0, 1/m)` entries.
//! * **Sampling**: each row is a coordinate vector chosen uniformly with
//!   replacement, scaled by `√(n/m)`.
//! * **Hashing**: each column holds `s` distinct random rows with values
//!   `±1/√s` (CountSketch when `s = 1`).
//!
//! All three satisfy `E[SᵀS] = I`, so `E‖Sv‖² = ‖v‖²` for every fixed `v`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::instrument::OpCounts;

/// Seeded random stream used to draw sketches.
pub type SketchRng = ChaCha8Rng;

/// Creates the deterministic random stream for `seed`.
pub fn stream(seed: u64) -> SketchRng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SketchKind {
    None,
    Gaussian,
    Sampling,
    Hashing,
}

impl SketchKind {
    pub fn name(self) -> &'static str {
        match self {
            SketchKind::None => "none",
            SketchKind::Gaussian => "gaussian",
            SketchKind::Sampling => "sampling",
            SketchKind::Hashing => "hashing",
        }
    }
}

impl fmt::Display for SketchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SketchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(SketchKind::None),
            "gaussian" => Ok(SketchKind::Gaussian),
            "sampling" => Ok(SketchKind::Sampling),
            "hashing" => Ok(SketchKind::Hashing),
            other => Err(Error::Parse(format!(
                "unknown sketch kind '{other}' (expected none, gaussian, sampling or hashing)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SketchConfig {
    pub kind: SketchKind,
    /// Number of sketch rows. Ignored for [`SketchKind::None`].
    pub m: usize,
    /// Nonzeros per column for hashing sketches.
    pub hash_nnz: usize,
    pub seed: u64,
}

impl SketchConfig {
    pub fn none() -> Self {
        SketchConfig {
            kind: SketchKind::None,
            m: 1,
            hash_nnz: 1,
            seed: 0,
        }
    }

    pub fn gaussian(m: usize) -> Self {
        SketchConfig {
            kind: SketchKind::Gaussian,
            m,
            hash_nnz: 1,
            seed: 0,
        }
    }

    pub fn sampling(m: usize) -> Self {
        SketchConfig {
            kind: SketchKind::Sampling,
            m,
            hash_nnz: 1,
            seed: 0,
        }
    }

    pub fn hashing(m: usize, hash_nnz: usize) -> Self {
        SketchConfig {
            kind: SketchKind::Hashing,
            m,
            hash_nnz,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == SketchKind::None {
            return Ok(());
        }
        if self.m == 0 {
            return Err(Error::InvalidConfig("sketch size m must be at least 1".into()));
        }
        if self.kind == SketchKind::Hashing {
            if self.hash_nnz == 0 {
                return Err(Error::InvalidConfig(
                    "hash-nnz must be at least 1 for hashing sketches".into(),
                ));
            }
            if self.hash_nnz > self.m {
                return Err(Error::InvalidConfig(format!(
                    "hash-nnz ({}) exceeds sketch size m ({})",
                    self.hash_nnz, self.m
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Payload {
    Identity,
    /// The transpose `Sᵀ` (n×m), so that `R·Sᵀ` is a plain product.
    Dense { transposed: DMatrix<f64> },
    Rows { indices: Vec<usize>, scale: f64 },
    /// Column `j` owns entries `j*s .. (j+1)*s` of `rows`/`negative`.
    Hashed {
        nnz: usize,
        rows: Vec<usize>,
        negative: Vec<bool>,
        scale: f64,
    },
}

/// A realized sketch. Immutable once drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchOperator {
    kind: SketchKind,
    m: usize,
    n: usize,
    payload: Payload,
}

/// Draws a sketch of the configured kind acting on vectors of length `n`.
pub fn make_sketch(config: &SketchConfig, n: usize, rng: &mut SketchRng) -> Result<SketchOperator> {
    if n == 0 {
        return Err(Error::InvalidConfig("sketched dimension n must be at least 1".into()));
    }
    config.validate()?;
    let m = config.m;
    let (m, payload) = match config.kind {
        SketchKind::None => (n, Payload::Identity),
        SketchKind::Gaussian => {
            let sd = 1.0 / (m as f64).sqrt();
            let transposed = DMatrix::from_fn(n, m, |_, _| {
                let z: f64 = rng.sample(StandardNormal);
                z * sd
            });
            (m, Payload::Dense { transposed })
        }
        SketchKind::Sampling => {
            let indices = (0..m).map(|_| rng.gen_range(0..n)).collect();
            let scale = (n as f64 / m as f64).sqrt();
            (m, Payload::Rows { indices, scale })
        }
        SketchKind::Hashing => {
            let s = config.hash_nnz;
            let mut rows = Vec::with_capacity(s * n);
            let mut negative = Vec::with_capacity(s * n);
            for _ in 0..n {
                if s == 1 {
                    rows.push(rng.gen_range(0..m));
                } else {
                    rows.extend(index::sample(rng, m, s).into_iter());
                }
                for _ in 0..s {
                    negative.push(rng.gen::<bool>());
                }
            }
            let scale = 1.0 / (s as f64).sqrt();
            (
                m,
                Payload::Hashed {
                    nnz: s,
                    rows,
                    negative,
                    scale,
                },
            )
        }
    };
    Ok(SketchOperator {
        kind: config.kind,
        m,
        n,
        payload,
    })
}

impl SketchOperator {
    pub fn identity(n: usize) -> Self {
        SketchOperator {
            kind: SketchKind::None,
            m: n,
            n,
            payload: Payload::Identity,
        }
    }

    /// Builds a sampling sketch from explicit row indices with the
    /// unbiased scale `√(n/m)`.
    pub fn from_sample_indices(n: usize, indices: Vec<usize>) -> Result<Self> {
        let scale = (n as f64 / indices.len().max(1) as f64).sqrt();
        Self::from_sample_indices_scaled(n, indices, scale)
    }

    pub fn from_sample_indices_scaled(n: usize, indices: Vec<usize>, scale: f64) -> Result<Self> {
        if n == 0 || indices.is_empty() {
            return Err(Error::InvalidConfig("sampling sketch needs n ≥ 1 and m ≥ 1".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::InvalidConfig(format!("sample index {bad} out of range for n = {n}")));
        }
        let m = indices.len();
        Ok(SketchOperator {
            kind: SketchKind::Sampling,
            m,
            n,
            payload: Payload::Rows { indices, scale },
        })
    }

    /// Builds a hashing sketch from explicit per-column `(row, negative)` entries.
    pub fn from_hash_entries(m: usize, columns: &[Vec<(usize, bool)>]) -> Result<Self> {
        let n = columns.len();
        let s = columns.first().map_or(0, Vec::len);
        if n == 0 || s == 0 || s > m {
            return Err(Error::InvalidConfig("hashing sketch needs n ≥ 1 and 1 ≤ s ≤ m".into()));
        }
        let mut rows = Vec::with_capacity(n * s);
        let mut negative = Vec::with_capacity(n * s);
        for (j, col) in columns.iter().enumerate() {
            if col.len() != s {
                return Err(Error::InvalidConfig(format!("column {j} has {} entries, expected {s}", col.len())));
            }
            for (a, &(row, neg)) in col.iter().enumerate() {
                if row >= m || col[..a].iter().any(|&(r, _)| r == row) {
                    return Err(Error::InvalidConfig(format!("column {j} has an invalid or repeated row {row}")));
                }
                rows.push(row);
                negative.push(neg);
            }
        }
        Ok(SketchOperator {
            kind: SketchKind::Hashing,
            m,
            n,
            payload: Payload::Hashed {
                nnz: s,
                rows,
                negative,
                scale: 1.0 / (s as f64).sqrt(),
            },
        })
    }

    pub fn kind(&self) -> SketchKind {
        self.kind
    }

    /// Output dimension (rows of `S`).
    pub fn rows(&self) -> usize {
        self.m
    }

    /// Input dimension (columns of `S`).
    pub fn cols(&self) -> usize {
        self.n
    }

    /// Row indices of a sampling sketch.
    pub fn sample_indices(&self) -> Option<&[usize]> {
        match &self.payload {
            Payload::Rows { indices, .. } => Some(indices),
            _ => None,
        }
    }

    /// Scale applied by a sampling sketch.
    pub fn sample_scale(&self) -> Option<f64> {
        match &self.payload {
            Payload::Rows { scale, .. } => Some(*scale),
            _ => None,
        }
    }

    /// Nonzeros per column of a hashing sketch.
    pub fn hash_nnz(&self) -> Option<usize> {
        match &self.payload {
            Payload::Hashed { nnz, .. } => Some(*nnz),
            _ => None,
        }
    }

    /// Stored `(row, value)` entries of column `j` of a hashing sketch.
    pub fn hash_column(&self, j: usize) -> Option<Vec<(usize, f64)>> {
        match &self.payload {
            Payload::Hashed {
                nnz,
                rows,
                negative,
                scale,
            } if j < self.n => Some(
                (j * nnz..(j + 1) * nnz)
                    .map(|e| (rows[e], if negative[e] { -scale } else { *scale }))
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Entries of a Gaussian sketch, as the m×n matrix.
    pub fn gaussian_entries(&self) -> Option<DMatrix<f64>> {
        match &self.payload {
            Payload::Dense { transposed } => Some(transposed.transpose()),
            _ => None,
        }
    }

    /// Explicit m×n matrix of the operator.
    pub fn densify(&self) -> DMatrix<f64> {
        match &self.payload {
            Payload::Identity => DMatrix::identity(self.n, self.n),
            Payload::Dense { transposed } => transposed.transpose(),
            Payload::Rows { indices, scale } => {
                let mut s = DMatrix::zeros(self.m, self.n);
                for (i, &j) in indices.iter().enumerate() {
                    s[(i, j)] = *scale;
                }
                s
            }
            Payload::Hashed { .. } => {
                let mut s = DMatrix::zeros(self.m, self.n);
                for j in 0..self.n {
                    for (row, value) in self.hash_column(j).unwrap_or_default() {
                        s[(row, j)] += value;
                    }
                }
                s
            }
        }
    }

    /// Computes `S·v`.
    pub fn apply_to_vector(&self, v: &DVector<f64>, counts: &mut OpCounts) -> Result<DVector<f64>> {
        check_dim("sketch apply_to_vector", self.n, v.len())?;
        let m = self.m;
        let out = match &self.payload {
            Payload::Identity => v.clone(),
            Payload::Dense { transposed } => {
                let n = self.n as u64;
                counts.multiplies += m as u64 * n;
                counts.additions += m as u64 * n;
                transposed.tr_mul(v)
            }
            Payload::Rows { indices, scale } => {
                counts.gathers += m as u64;
                counts.scalings += m as u64;
                DVector::from_iterator(m, indices.iter().map(|&j| scale * v[j]))
            }
            Payload::Hashed {
                nnz,
                rows,
                negative,
                scale,
            } => {
                let mut out = DVector::zeros(m);
                for (j, &vj) in v.iter().enumerate() {
                    for e in j * nnz..(j + 1) * nnz {
                        if negative[e] {
                            out[rows[e]] -= vj;
                        } else {
                            out[rows[e]] += vj;
                        }
                    }
                }
                counts.additions += (nnz * self.n) as u64;
                counts.sign_applications += (nnz * self.n) as u64;
                if *nnz > 1 {
                    out *= *scale;
                    counts.scalings += m as u64;
                }
                out
            }
        };
        Ok(out)
    }

    /// Computes `D·Sᵀ` and `S·b` in one pass over the k×n `table`, where `b`
    /// is row `base` and `D` stacks the remaining rows minus `b`, in order.
    /// Same result as forming `D` and calling [`Self::apply_to_matrix_right`]
    /// and [`Self::apply_to_vector`], without materializing `D`.
    pub fn apply_to_differences(
        &self,
        table: &DMatrix<f64>,
        base: usize,
        counts: &mut OpCounts,
    ) -> Result<(DMatrix<f64>, DVector<f64>)> {
        check_dim("sketch apply_to_differences", self.n, table.ncols())?;
        if base >= table.nrows() {
            return Err(Error::DimensionMismatch {
                context: "sketch apply_to_differences base row",
                expected: table.nrows(),
                actual: base,
            });
        }
        let d = table.nrows() - 1;
        let (n, m) = (self.n, self.m);
        let src = table.as_slice();
        let column = |j: usize| &src[j * (d + 1)..(j + 1) * (d + 1)];
        let b = DVector::from_fn(n, |j, _| column(j)[base]);
        let diffs = (n * d) as u64;

        let out = match &self.payload {
            Payload::Identity => {
                let mut out = DMatrix::zeros(d, n);
                for (j, dst) in out.as_mut_slice().chunks_exact_mut(d.max(1)).take(n).enumerate() {
                    difference(column(j), base, dst);
                }
                counts.additions += diffs;
                (out, b)
            }
            Payload::Dense { transposed } => {
                const BLOCK: usize = 256;
                let mut out = DMatrix::zeros(d, m);
                let mut block = DMatrix::zeros(d, BLOCK);
                let mut j0 = 0;
                while j0 < n {
                    let len = BLOCK.min(n - j0);
                    if len < BLOCK {
                        block = DMatrix::zeros(d, len);
                    }
                    for (i, dst) in block.as_mut_slice().chunks_exact_mut(d.max(1)).take(len).enumerate() {
                        difference(column(j0 + i), base, dst);
                    }
                    out.gemm(1.0, &block, &transposed.rows(j0, len), 1.0);
                    j0 += len;
                }
                let work = (d * n * m) as u64;
                counts.multiplies += work + (m * n) as u64;
                counts.additions += work + (m * n) as u64 + diffs;
                counts.flops += 2 * work;
                (out, transposed.tr_mul(&b))
            }
            Payload::Rows { indices, scale } => {
                let mut out = DMatrix::zeros(d, m);
                for (k, dst) in out.as_mut_slice().chunks_exact_mut(d.max(1)).take(m).enumerate() {
                    difference(column(indices[k]), base, dst);
                }
                out *= *scale;
                let sb = DVector::from_iterator(m, indices.iter().map(|&j| scale * b[j]));
                counts.gathers += ((d + 1) * m) as u64;
                counts.scalings += ((d + 1) * m) as u64;
                counts.additions += (d * m) as u64;
                (out, sb)
            }
            Payload::Hashed {
                nnz,
                rows,
                negative,
                scale,
            } => {
                let mut out = DMatrix::zeros(d, m);
                let mut sb = DVector::zeros(m);
                let mut buf = vec![0.0; d];
                let dst = out.as_mut_slice();
                for j in 0..n {
                    difference(column(j), base, &mut buf);
                    for e in j * nnz..(j + 1) * nnz {
                        let target = &mut dst[rows[e] * d..(rows[e] + 1) * d];
                        if negative[e] {
                            target.iter_mut().zip(&buf).for_each(|(t, &v)| *t -= v);
                            sb[rows[e]] -= b[j];
                        } else {
                            target.iter_mut().zip(&buf).for_each(|(t, &v)| *t += v);
                            sb[rows[e]] += b[j];
                        }
                    }
                }
                let signed = (nnz * n * (d + 1)) as u64;
                counts.additions += signed + diffs;
                counts.sign_applications += signed;
                if *nnz > 1 {
                    out *= *scale;
                    sb *= *scale;
                    counts.scalings += ((d + 1) * m) as u64;
                }
                (out, sb)
            }
        };
        Ok(out)
    }

    /// Computes `R·Sᵀ` for a d×n matrix `R`.
    pub fn apply_to_matrix_right(&self, r: &DMatrix<f64>, counts: &mut OpCounts) -> Result<DMatrix<f64>> {
        check_dim("sketch apply_to_matrix_right", self.n, r.ncols())?;
        let d = r.nrows();
        let m = self.m;
        let out = match &self.payload {
            Payload::Identity => r.clone(),
            Payload::Dense { transposed } => {
                let work = (d * self.n * m) as u64;
                counts.multiplies += work;
                counts.additions += work;
                counts.flops += 2 * work;
                r * transposed
            }
            Payload::Rows { indices, scale } => {
                let mut out = DMatrix::zeros(d, m);
                for (k, &j) in indices.iter().enumerate() {
                    out.column_mut(k).copy_from(&r.column(j));
                }
                counts.gathers += (m * d) as u64;
                out *= *scale;
                counts.scalings += (m * d) as u64;
                out
            }
            Payload::Hashed {
                nnz,
                rows,
                negative,
                scale,
            } => {
                let mut out = DMatrix::zeros(d, m);
                for j in 0..self.n {
                    let src = r.column(j);
                    for e in j * nnz..(j + 1) * nnz {
                        let mut dst = out.column_mut(rows[e]);
                        if negative[e] {
                            dst -= &src;
                        } else {
                            dst += &src;
                        }
                    }
                }
                counts.additions += (nnz * self.n * d) as u64;
                counts.sign_applications += (nnz * self.n * d) as u64;
                if *nnz > 1 {
                    out *= *scale;
                    counts.scalings += (m * d) as u64;
                }
                out
            }
        };
        Ok(out)
    }
}

/// Writes `col[t] - col[base]` for every `t != base` into `dst`.
fn difference(col: &[f64], base: usize, dst: &mut [f64]) {
    let b = col[base];
    let (head, tail) = dst.split_at_mut(base);
    head.iter_mut().zip(&col[..base]).for_each(|(o, &c)| *o = c - b);
    tail.iter_mut().zip(&col[base + 1..]).for_each(|(o, &c)| *o = c - b);
}
