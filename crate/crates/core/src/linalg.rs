//! Dense numeric kernels: Cholesky solves, spectral norms by power
//! iteration, one-sided Jacobi SVD, and the Walsh-Hadamard transform.
//!
//! Everything here is plain `f64` row-major storage, sized for desk scale
//! (matrices up to 4096x4096). All operations are pure functions of their
//! inputs and safe to call concurrently.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Iteration cap for the power method.
const POWER_ITER_CAP: usize = 1000;
/// Relative Rayleigh-quotient change that counts as converged.
const POWER_ITER_RTOL: f64 = 1e-12;
/// Sweep cap for one-sided Jacobi.
const JACOBI_SWEEP_CAP: usize = 100;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinalgError {
    #[error("matrix is not symmetric positive-definite (non-positive pivot at {pivot})")]
    NotSpd { pivot: usize },
    #[error("matrix is not symmetric within tolerance")]
    NotSymmetric,
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("iteration failed to converge")]
    ConvergenceFailure,
    #[error("vector length {len} is not a power of two")]
    NotPowerOfTwo { len: usize },
    #[error("non-finite entry encountered")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Row-major dense matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data, validating shape and finiteness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimensionMismatch {
                context: format!("data length {} != {}x{}", data.len(), rows, cols),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
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
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * v`.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec width mismatch");
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, v))
            .collect()
    }

    /// `self^T * v`.
    pub fn matvec_t(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "matvec_t height mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, row) in self.data.chunks_exact(self.cols).enumerate() {
            let vi = v[i];
            if vi != 0.0 {
                for (o, &r) in out.iter_mut().zip(row) {
                    *o += vi * r;
                }
            }
        }
        out
    }

    /// `self * other`.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn scaled(&self, c: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Adds `lambda` to the diagonal (matrix must be square).
    pub fn add_diagonal(&self, lambda: f64) -> DenseMatrix {
        assert_eq!(self.rows, self.cols, "add_diagonal needs a square matrix");
        let mut out = self.clone();
        for i in 0..self.rows {
            out.data[i * self.cols + i] += lambda;
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    fn max_column_norm(&self) -> (usize, f64) {
        let mut best = (0, 0.0_f64);
        for j in 0..self.cols {
            let mut s = 0.0;
            for i in 0..self.rows {
                let x = self.data[i * self.cols + j];
                s += x * x;
            }
            if s > best.1 {
                best = (j, s);
            }
        }
        (best.0, best.1.sqrt())
    }
}

/// Dense vector of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        Ok(Self { data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { data: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.data)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Cholesky factorization `A = L L^T` of an SPD matrix, reusable for many
/// right-hand sides.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>, // row-major lower triangle, full n x n storage
}

impl Cholesky {
    /// Factors without pivoting; a non-positive pivot means the matrix is
    /// not SPD and the caller should increase its damping.
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(LinalgError::DimensionMismatch {
                context: format!("Cholesky of {}x{}", a.rows, a.cols),
            });
        }
        let n = a.rows;
        let mut l = vec![0.0_f64; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(LinalgError::NotSpd { pivot: i });
                    }
                    l[i * n + i] = s.sqrt();
                } else {
                    l[i * n + j] = s / l[j * n + j];
                }
            }
        }
        Ok(Self { n, l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "Cholesky solve rhs length mismatch");
        let n = self.n;
        let mut y = b.to_vec();
        // forward: L y = b
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        // backward: L^T x = y
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }

    /// Explicit inverse, column by column.
    pub fn inverse(&self) -> DenseMatrix {
        let n = self.n;
        let mut out = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0_f64; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve(&e);
            e[j] = 0.0;
            for i in 0..n {
                out.data[i * n + j] = col[i];
            }
        }
        out
    }
}

/// Solves `A x = b` for symmetric positive-definite `A`.
pub fn solve_spd(a: &DenseMatrix, b: &DenseVector) -> Result<DenseVector> {
    if a.rows != a.cols || b.dim() != a.rows {
        return Err(LinalgError::DimensionMismatch {
            context: format!("solve_spd A {}x{}, b {}", a.rows, a.cols, b.dim()),
        });
    }
    let scale = a.max_abs();
    let tol = 1e-10 * scale.max(1e-300);
    for i in 0..a.rows {
        for j in 0..i {
            if (a.get(i, j) - a.get(j, i)).abs() > tol {
                return Err(LinalgError::NotSymmetric);
            }
        }
    }
    let chol = Cholesky::factor(a)?;
    Ok(DenseVector { data: chol.solve(b.data()) })
}

/// Inverse of an SPD matrix via Cholesky.
pub fn inv_spd(a: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(Cholesky::factor(a)?.inverse())
}

/// Largest eigenvalue of a PSD operator `op` on R^dim by power iteration.
///
/// The primary start is the normalized all-ones vector; a second fixed
/// pseudo-random start guards against the ones vector landing orthogonal to
/// the top eigenspace. Both starts are deterministic, so the result is too.
pub fn psd_operator_norm(dim: usize, op: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    if dim == 0 {
        return 0.0;
    }
    let ones = vec![1.0 / (dim as f64).sqrt(); dim];
    let mut alt: Vec<f64> = (0..dim)
        .map(|i| {
            // xorshift on the index; any fixed full-support pattern works
            let mut x = (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
            x ^= x >> 33;
            x = x.wrapping_mul(0xff51_afd7_ed55_8ccd);
            x ^= x >> 33;
            (x as f64 / u64::MAX as f64) - 0.5
        })
        .collect();
    let n = norm2(&alt);
    if n > 0.0 {
        for x in &mut alt {
            *x /= n;
        }
    }
    let lam1 = power_iterate(&ones, &op);
    if dim == 1 {
        return lam1;
    }
    let lam2 = power_iterate(&alt, &op);
    lam1.max(lam2)
}

fn power_iterate(start: &[f64], op: &impl Fn(&[f64]) -> Vec<f64>) -> f64 {
    let mut v = start.to_vec();
    let mut rayleigh = 0.0_f64;
    for _ in 0..POWER_ITER_CAP {
        let w = op(&v);
        let rq = dot(&v, &w);
        let wn = norm2(&w);
        if wn == 0.0 {
            return 0.0;
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
        if (rq - rayleigh).abs() <= POWER_ITER_RTOL * rq.abs() {
            return rq.max(0.0);
        }
        rayleigh = rq;
    }
    rayleigh.max(0.0)
}

/// Largest singular value of `a`, via power iteration on `A^T A`.
pub fn spectral_norm(a: &DenseMatrix) -> f64 {
    if a.rows == 0 || a.cols == 0 {
        return 0.0;
    }
    let lam = psd_operator_norm(a.cols, |v| a.matvec_t(&a.matvec(v)));
    let mut sigma = lam.max(0.0).sqrt();
    // sigma_max(A) >= any column norm; a shortfall means the starts missed
    // the top eigenspace, so restart from the strongest basis vector.
    let (jmax, colnorm) = a.max_column_norm();
    if sigma < colnorm * (1.0 - 1e-10) {
        let mut e = vec![0.0; a.cols];
        e[jmax] = 1.0;
        let lam_r = power_iterate(&e, &|v: &[f64]| a.matvec_t(&a.matvec(v)));
        sigma = sigma.max(lam_r.max(0.0).sqrt());
    }
    sigma
}

/// Thin singular value decomposition `A = U diag(S) V^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub vt: DenseMatrix,
}

impl Svd {
    pub fn smin(&self) -> f64 {
        self.s.last().copied().unwrap_or(0.0)
    }

    pub fn smax(&self) -> f64 {
        self.s.first().copied().unwrap_or(0.0)
    }
}

/// One-sided Jacobi SVD. `S` comes back non-increasing; `U` has orthonormal
/// columns and `V^T` orthonormal rows, padded from the standard basis where
/// the matrix is rank-deficient.
pub fn svd_thin(a: &DenseMatrix) -> Result<Svd> {
    if a.rows == 0 || a.cols == 0 {
        return Err(LinalgError::DimensionMismatch {
            context: "svd_thin of empty matrix".into(),
        });
    }
    if a.rows >= a.cols {
        svd_tall(a)
    } else {
        let t = svd_tall(&a.transpose())?;
        Ok(Svd { u: t.vt.transpose(), s: t.s, vt: t.u.transpose() })
    }
}

fn svd_tall(a: &DenseMatrix) -> Result<Svd> {
    let m = a.rows;
    let n = a.cols;
    // column-major copies of A and V so rotations touch contiguous memory
    let mut w: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..m).map(|i| a.get(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut col = vec![0.0; n];
            col[j] = 1.0;
            col
        })
        .collect();

    let mut converged = false;
    for _sweep in 0..JACOBI_SWEEP_CAP {
        let mut max_off = 0.0_f64;
        for p in 0..n.saturating_sub(1) {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let rel = gamma.abs() / (alpha * beta).sqrt();
                max_off = max_off.max(rel);
                if rel <= 1e-15 {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (wp, wq) = pair_mut(&mut w, p, q);
                rotate(wp, wq, c, s);
                let (vp, vq) = pair_mut(&mut v, p, q);
                rotate(vp, vq, c, s);
            }
        }
        if max_off <= 1e-14 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::ConvergenceFailure);
    }

    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = w.iter().map(|c| norm2(c)).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap().then(i.cmp(&j)));

    let mut u = DenseMatrix::zeros(m, n);
    let mut vt = DenseMatrix::zeros(n, n);
    let mut s = Vec::with_capacity(n);
    let mut null_cols = Vec::new();
    for (slot, &j) in order.iter().enumerate() {
        let sv = norms[j];
        s.push(sv);
        if sv == 0.0 {
            null_cols.push(slot);
        } else {
            for i in 0..m {
                u.set(i, slot, w[j][i] / sv);
            }
        }
        for i in 0..n {
            vt.set(slot, i, v[j][i]);
        }
    }
    // fill exact-zero columns with an orthonormal complement
    for &slot in &null_cols {
        fill_orthonormal_column(&mut u, slot);
    }
    Ok(Svd { u, s, vt })
}

fn pair_mut(cols: &mut [Vec<f64>], p: usize, q: usize) -> (&mut Vec<f64>, &mut Vec<f64>) {
    debug_assert!(p < q);
    let (lo, hi) = cols.split_at_mut(q);
    (&mut lo[p], &mut hi[0])
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let a = c * *xi - s * *yi;
        let b = s * *xi + c * *yi;
        *xi = a;
        *yi = b;
    }
}

fn fill_orthonormal_column(u: &mut DenseMatrix, slot: usize) {
    let m = u.rows();
    let n = u.cols();
    'candidates: for cand in 0..m {
        let mut col = vec![0.0_f64; m];
        col[cand] = 1.0;
        // two rounds of Gram-Schmidt against the populated columns
        for _ in 0..2 {
            for j in 0..n {
                if j == slot {
                    continue;
                }
                let proj: f64 = (0..m).map(|i| u.get(i, j) * col[i]).sum();
                for (i, c) in col.iter_mut().enumerate() {
                    *c -= proj * u.get(i, j);
                }
            }
        }
        let nrm = norm2(&col);
        if nrm > 1e-6 {
            for (i, c) in col.iter().enumerate() {
                u.set(i, slot, c / nrm);
            }
            return;
        }
        continue 'candidates;
    }
}

/// In-place Walsh-Hadamard transform with 1/sqrt(dim) normalization, making
/// it orthogonal and self-inverse. Dim must be a power of two.
pub fn hadamard_transform(v: &DenseVector) -> Result<DenseVector> {
    let n = v.dim();
    if n == 0 || !n.is_power_of_two() {
        return Err(LinalgError::NotPowerOfTwo { len: n });
    }
    let mut data = v.data().to_vec();
    hadamard_in_place(&mut data);
    Ok(DenseVector { data })
}

/// Same transform on a raw slice; length must be a power of two.
pub fn hadamard_in_place(data: &mut [f64]) {
    let n = data.len();
    debug_assert!(n.is_power_of_two());
    let mut h = 1;
    while h < n {
        let mut i = 0;
        while i < n {
            for j in i..i + h {
                let x = data[j];
                let y = data[j + h];
                data[j] = x + y;
                data[j + h] = x - y;
            }
            i += 2 * h;
        }
        h *= 2;
    }
    let scale = 1.0 / (n as f64).sqrt();
    for x in data.iter_mut() {
        *x *= scale;
    }
}
