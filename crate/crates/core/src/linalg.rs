//! Deterministic dense linear algebra on 64-bit floats.
//!
//! Everything here is desk-scale and auditable: row-major storage, plain
//! triple-loop products with a fixed accumulation order, partial-pivot
//! inversion, and Haar-random orthogonal sampling via Householder QR with
//! the sign-correction step. No BLAS, no blocking, no parallelism.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Relative pivot threshold: a pivot below `SINGULARITY_RTOL * max|entry|`
/// of the input matrix is treated as singular.
pub const SINGULARITY_RTOL: f64 = 1e-12;

/// Orthogonality tolerance enforced at [`OrthogonalMatrix`] construction.
pub const ORTHOGONALITY_TOL: f64 = 1e-12;

/// Dense row-major matrix of `f64`.
///
/// All transform math runs in 64-bit floats regardless of checkpoint
/// storage precision; entries are finite after every public operation.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Build a matrix from row-major data. Rejects length mismatches and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Matrix::new data length",
                left_rows: rows,
                left_cols: cols,
                right_rows: data.len(),
                right_cols: 1,
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("{rows}x{cols} matrix data"),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Matrix::zeros(dim, dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// i.i.d. `N(0, sigma^2)` entries drawn in row-major order.
    pub fn gaussian(rows: usize, cols: usize, sigma: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Max-abs entrywise difference; the matrices must have equal shape.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "max_abs_diff shape mismatch"
        );
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "matrix add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "matrix sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| s * v).collect(),
        }
    }

    /// Frobenius inner product `<self, other> = sum_ij self_ij * other_ij`.
    pub fn frobenius_dot(&self, other: &Matrix) -> f64 {
        assert_eq!(
            (self.rows, self.cols),
            (other.rows, other.cols),
            "frobenius_dot shape mismatch"
        );
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    fn zip_with(
        &self,
        other: &Matrix,
        context: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Matrix> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::DimensionMismatch {
                context,
                left_rows: self.rows,
                left_cols: self.cols,
                right_rows: other.rows,
                right_cols: other.cols,
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        })
    }

    /// Right-multiply the `width`-column block starting at `col_start`
    /// by the square matrix `g`, in place.
    pub(crate) fn mul_col_block(&mut self, col_start: usize, width: usize, g: &Matrix) {
        debug_assert_eq!(g.rows, width);
        debug_assert_eq!(g.cols, width);
        debug_assert!(col_start + width <= self.cols);
        let mut buf = vec![0.0; width];
        for i in 0..self.rows {
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (j, b) in buf.iter_mut().enumerate() {
                let mut acc = 0.0;
                for k in 0..width {
                    acc += row[col_start + k] * g.data[k * width + j];
                }
                *b = acc;
            }
            row[col_start..col_start + width].copy_from_slice(&buf);
        }
    }

    /// Left-multiply the `height`-row block starting at `row_start`
    /// by the square matrix `g`, in place.
    pub(crate) fn mul_row_block(&mut self, row_start: usize, height: usize, g: &Matrix) {
        debug_assert_eq!(g.rows, height);
        debug_assert_eq!(g.cols, height);
        debug_assert!(row_start + height <= self.rows);
        let mut buf = vec![0.0; height * self.cols];
        for i in 0..height {
            for j in 0..self.cols {
                let mut acc = 0.0;
                for k in 0..height {
                    acc += g.data[i * height + k] * self.data[(row_start + k) * self.cols + j];
                }
                buf[i * self.cols + j] = acc;
            }
        }
        self.data[row_start * self.cols..(row_start + height) * self.cols].copy_from_slice(&buf);
    }
}

/// Standard product with deterministic summation order: each output entry
/// accumulates `a[i][k] * b[k][j]` for `k` ascending.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            context: "matmul inner dimension",
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for j in 0..b.cols {
                orow[j] += aik * brow[j];
            }
        }
    }
    Ok(out)
}

/// Invert a square matrix by Gauss-Jordan elimination with partial pivoting.
///
/// A pivot below `SINGULARITY_RTOL * max|entry|` of the input raises
/// [`Error::SingularMatrix`].
pub fn invert(a: &Matrix) -> Result<Matrix> {
    if a.rows != a.cols {
        return Err(Error::DimensionMismatch {
            context: "invert requires a square matrix",
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: a.rows,
            right_cols: a.cols,
        });
    }
    let n = a.rows;
    let threshold = SINGULARITY_RTOL * a.max_abs();
    let mut work = a.data.clone();
    let mut inv = Matrix::identity(n);

    for col in 0..n {
        // Partial pivot: largest |entry| on or below the diagonal.
        let mut pivot_row = col;
        let mut pivot_val = work[col * n + col].abs();
        for r in col + 1..n {
            let v = work[r * n + col].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val <= threshold {
            return Err(Error::SingularMatrix {
                pivot: pivot_val,
                threshold,
                col,
            });
        }
        if pivot_row != col {
            for j in 0..n {
                work.swap(col * n + j, pivot_row * n + j);
                inv.data.swap(col * n + j, pivot_row * n + j);
            }
        }
        let pivot = work[col * n + col];
        for j in 0..n {
            work[col * n + j] /= pivot;
            inv.data[col * n + j] /= pivot;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = work[r * n + col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                work[r * n + j] -= factor * work[col * n + j];
                inv.data[r * n + j] -= factor * inv.data[col * n + j];
            }
        }
    }
    if !inv.data.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite {
            context: "matrix inverse".to_string(),
        });
    }
    Ok(inv)
}

/// Square orthogonal matrix, validated to `max|G^T G - I| <= 1e-12` (and the
/// same for `G G^T`) at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalMatrix {
    inner: Matrix,
}

impl OrthogonalMatrix {
    pub fn new(inner: Matrix) -> Result<Self> {
        if inner.rows != inner.cols {
            return Err(Error::DimensionMismatch {
                context: "OrthogonalMatrix must be square",
                left_rows: inner.rows,
                left_cols: inner.cols,
                right_rows: inner.rows,
                right_cols: inner.cols,
            });
        }
        let id = Matrix::identity(inner.rows);
        let gt = inner.transpose();
        let left = matmul(&gt, &inner)?.max_abs_diff(&id);
        let right = matmul(&inner, &gt)?.max_abs_diff(&id);
        let residual = left.max(right);
        if residual > ORTHOGONALITY_TOL {
            return Err(Error::NotOrthogonal { residual });
        }
        Ok(OrthogonalMatrix { inner })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.inner.rows
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix {
        &self.inner
    }

    /// The transpose, which is also the inverse. No revalidation needed.
    pub fn transpose(&self) -> OrthogonalMatrix {
        OrthogonalMatrix {
            inner: self.inner.transpose(),
        }
    }

    pub fn identity(dim: usize) -> OrthogonalMatrix {
        OrthogonalMatrix {
            inner: Matrix::identity(dim),
        }
    }

    /// Product of two orthogonal matrices, revalidated against the
    /// construction tolerance.
    pub fn compose(&self, other: &OrthogonalMatrix) -> Result<OrthogonalMatrix> {
        OrthogonalMatrix::new(matmul(&self.inner, &other.inner)?)
    }
}

/// Permutation on `[0, dim)`, stored as the index array of its matrix form:
/// column `j` of the dense matrix has its 1 at row `perm[j]`, so
/// `(x P)[j] = x[perm[j]]` for a row vector `x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationMatrix {
    perm: Vec<usize>,
}

impl PermutationMatrix {
    /// Validates that `perm` is a bijection on `[0, dim)`.
    pub fn new(perm: Vec<usize>) -> Result<Self> {
        let dim = perm.len();
        let mut seen = vec![false; dim];
        for &p in &perm {
            if p >= dim || seen[p] {
                return Err(Error::InvalidConfig(format!(
                    "permutation array is not a bijection on [0, {dim})"
                )));
            }
            seen[p] = true;
        }
        Ok(PermutationMatrix { perm })
    }

    pub fn identity(dim: usize) -> Self {
        PermutationMatrix {
            perm: (0..dim).collect(),
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    #[inline]
    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(j, &p)| j == p)
    }

    pub fn inverse(&self) -> PermutationMatrix {
        let mut inv = vec![0; self.perm.len()];
        for (j, &p) in self.perm.iter().enumerate() {
            inv[p] = j;
        }
        PermutationMatrix { perm: inv }
    }

    /// Matrix product `self * other` as a permutation.
    pub fn compose(&self, other: &PermutationMatrix) -> PermutationMatrix {
        assert_eq!(self.dim(), other.dim(), "permutation compose dim mismatch");
        PermutationMatrix {
            perm: other.perm.iter().map(|&j| self.perm[j]).collect(),
        }
    }

    /// Dense form: exactly one 1 per row and per column.
    pub fn to_dense(&self) -> Matrix {
        let dim = self.dim();
        let mut m = Matrix::zeros(dim, dim);
        for (j, &p) in self.perm.iter().enumerate() {
            m.data[p * dim + j] = 1.0;
        }
        m
    }
}

fn check_perm_width(width: usize, p: &PermutationMatrix, context: &'static str) -> Result<()> {
    if width != p.dim() {
        return Err(Error::DimensionMismatch {
            context,
            left_rows: width,
            left_cols: width,
            right_rows: p.dim(),
            right_cols: p.dim(),
        });
    }
    Ok(())
}

/// `m * P`: column `j` of the result is column `perm[j]` of `m`.
/// Pure data movement, no floating-point operations.
pub fn permute_columns(m: &Matrix, p: &PermutationMatrix) -> Result<Matrix> {
    check_perm_width(m.cols, p, "permute_columns")?;
    Ok(Matrix::from_fn(m.rows, m.cols, |i, j| m.get(i, p.perm[j])))
}

/// `m * P^-1`.
pub fn permute_columns_inv(m: &Matrix, p: &PermutationMatrix) -> Result<Matrix> {
    permute_columns(m, &p.inverse())
}

/// `P^-1 * m`: row `j` of the result is row `perm[j]` of `m`.
pub fn permute_rows_inv(m: &Matrix, p: &PermutationMatrix) -> Result<Matrix> {
    check_perm_width(m.rows, p, "permute_rows_inv")?;
    let mut out = Matrix::zeros(m.rows, m.cols);
    for (j, &src) in p.perm.iter().enumerate() {
        out.data[j * m.cols..(j + 1) * m.cols]
            .copy_from_slice(&m.data[src * m.cols..(src + 1) * m.cols]);
    }
    Ok(out)
}

/// `P * m`.
pub fn permute_rows(m: &Matrix, p: &PermutationMatrix) -> Result<Matrix> {
    permute_rows_inv(m, &p.inverse())
}

/// Householder QR of a square matrix. Returns `(Q, diag(R))`; the caller
/// only needs R's diagonal for the sign-correction step.
#[allow(clippy::needless_range_loop)]
fn householder_qr(a: &Matrix) -> (Matrix, Vec<f64>) {
    let n = a.rows;
    let mut r = a.data.clone();
    let mut q = Matrix::identity(n);
    let mut v = vec![0.0; n];

    for j in 0..n.saturating_sub(1) {
        let mut norm2 = 0.0;
        for i in j..n {
            let x = r[i * n + j];
            norm2 += x * x;
        }
        let norm = norm2.sqrt();
        if norm == 0.0 {
            continue; // degenerate column; caller checks the diagonal
        }
        let x0 = r[j * n + j];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        v[j] = x0 - alpha;
        for i in j + 1..n {
            v[i] = r[i * n + j];
        }
        let vnorm2: f64 = (j..n).map(|i| v[i] * v[i]).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;

        // R <- H R
        for c in j..n {
            let s: f64 = (j..n).map(|i| v[i] * r[i * n + c]).sum();
            let s = beta * s;
            for i in j..n {
                r[i * n + c] -= s * v[i];
            }
        }
        // Q <- Q H
        for row in 0..n {
            let s: f64 = (j..n).map(|i| q.data[row * n + i] * v[i]).sum();
            let s = beta * s;
            for i in j..n {
                q.data[row * n + i] -= s * v[i];
            }
        }
    }
    let diag = (0..n).map(|i| r[i * n + i]).collect();
    (q, diag)
}

/// Sample a Haar-random orthogonal matrix: QR of an i.i.d. standard-Gaussian
/// matrix, with column `j` of Q multiplied by the sign of `R[j][j]` so the
/// distribution is exactly Haar. Deterministic given the generator state;
/// retries internally on the measure-zero degenerate QR case.
pub fn haar_orthogonal(dim: usize, rng: &mut impl Rng) -> OrthogonalMatrix {
    assert!(dim >= 1, "haar_orthogonal requires dim >= 1");
    loop {
        let a = Matrix::gaussian(dim, dim, 1.0, rng);
        let (mut q, diag) = householder_qr(&a);
        if diag.contains(&0.0) {
            continue;
        }
        for (j, &d) in diag.iter().enumerate() {
            if d < 0.0 {
                for i in 0..dim {
                    q.data[i * dim + j] = -q.data[i * dim + j];
                }
            }
        }
        match OrthogonalMatrix::new(q) {
            Ok(g) => return g,
            Err(_) => continue,
        }
    }
}

/// Uniform random permutation via Fisher-Yates shuffle of the identity.
/// Deterministic given the generator state.
pub fn random_permutation(dim: usize, rng: &mut impl Rng) -> PermutationMatrix {
    assert!(dim >= 1, "random_permutation requires dim >= 1");
    let mut perm: Vec<usize> = (0..dim).collect();
    perm.shuffle(rng);
    PermutationMatrix { perm }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for the RNG stream of `(master_seed, layer, site)`:
/// FNV-1a over the site tag, then SplitMix64 rounds absorbing the master
/// seed and the layer index. Distinct (layer, site) pairs get independent
/// streams, so per-layer work can run in parallel without seed coupling.
pub fn stream_seed(master_seed: u64, layer: u64, site: &str) -> u64 {
    let mut tag: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in site.as_bytes() {
        tag = (tag ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(splitmix64(master_seed) ^ layer) ^ tag)
}

/// The portable 64-bit generator used everywhere in this crate: ChaCha8
/// keyed by [`stream_seed`]. Same inputs give a bitwise-identical stream
/// on every platform.
pub fn stream_rng(master_seed: u64, layer: u64, site: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master_seed, layer, site))
}
