//! Dense symmetric eigendecomposition, SVD, nuclear norm and its subgradient.
//!
//! All decompositions are Jacobi-based: a cyclic two-sided Jacobi eigensolver
//! for symmetric matrices and a one-sided (Hestenes) Jacobi SVD for general
//! rectangular matrices. Matrices with aspect ratio above 4 are routed through
//! an eigendecomposition of the smaller Gram matrix, which is much cheaper for
//! the short-fat response matrices this crate produces.

use crate::error::{Error, Result};

/// Dense real matrix in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
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

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for c in 0..other.cols {
                    dst[c] += a * orow[c];
                }
            }
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| c * v).collect(),
        }
    }

    /// Column `c` as a vector.
    fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

/// Thin singular value decomposition `M = U * diag(S) * V^T`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `rows x min(rows, cols)`, orthonormal columns.
    pub left_vectors: Matrix,
    /// Non-negative, sorted in non-increasing order.
    pub singular_values: Vec<f64>,
    /// `cols x min(rows, cols)`, orthonormal columns.
    pub right_vectors: Matrix,
}

impl SvdResult {
    /// `U * diag(S) * V^T`.
    pub fn reconstruct(&self) -> Matrix {
        let m = self.left_vectors.rows();
        let n = self.right_vectors.rows();
        let k = self.singular_values.len();
        let mut out = Matrix::zeros(m, n);
        for j in 0..k {
            let s = self.singular_values[j];
            if s == 0.0 {
                continue;
            }
            for r in 0..m {
                let us = self.left_vectors.get(r, j) * s;
                for c in 0..n {
                    out.data[r * n + c] += us * self.right_vectors.get(c, j);
                }
            }
        }
        out
    }
}

/// Symmetric eigendecomposition `M = Q * diag(lambda) * Q^T`.
#[derive(Debug, Clone)]
pub struct EigResult {
    /// Sorted in non-increasing order.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal columns, one per eigenvalue.
    pub eigenvectors: Matrix,
}

impl EigResult {
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let q = &self.eigenvectors;
        let mut out = Matrix::zeros(n, n);
        for k in 0..n {
            let lam = self.eigenvalues[k];
            if lam == 0.0 {
                continue;
            }
            for r in 0..n {
                let ql = q.get(r, k) * lam;
                for c in 0..n {
                    out.data[r * n + c] += ql * q.get(c, k);
                }
            }
        }
        out
    }
}

/// Aspect ratio beyond which the SVD goes through the smaller Gram matrix.
const GRAM_ASPECT: usize = 4;
/// Sweep cap for Jacobi iterations; convergence is quadratic so this is generous.
const MAX_SWEEPS: usize = 60;

/// Thin SVD of a general matrix.
///
/// Short-fat and tall-thin matrices (aspect ratio above 4) are decomposed via
/// the eigendecomposition of the smaller Gram matrix; everything else uses
/// one-sided Jacobi rotations.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if !m.is_finite() {
        return Err(Error::invalid("svd: matrix has non-finite entries"));
    }
    if m.rows >= m.cols {
        svd_tall(m)
    } else {
        let r = svd_tall(&m.transpose())?;
        Ok(SvdResult {
            left_vectors: r.right_vectors,
            singular_values: r.singular_values,
            right_vectors: r.left_vectors,
        })
    }
}

/// Sum of singular values.
pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    Ok(svd(m)?.singular_values.iter().sum())
}

/// Subgradient `U_r * V_r^T` of the nuclear norm, truncating singular values
/// at `tol`. The result has operator norm at most 1.
pub fn nuclear_norm_subgradient(m: &Matrix, tol: f64) -> Result<Matrix> {
    if tol <= 0.0 {
        return Err(Error::invalid("nuclear_norm_subgradient: tol must be > 0"));
    }
    let dec = svd(m)?;
    Ok(subgradient_from_svd(&dec, tol))
}

/// Build the truncated subgradient from an existing decomposition.
pub fn subgradient_from_svd(dec: &SvdResult, tol: f64) -> Matrix {
    let m = dec.left_vectors.rows();
    let n = dec.right_vectors.rows();
    let mut out = Matrix::zeros(m, n);
    for (j, &s) in dec.singular_values.iter().enumerate() {
        if s <= tol {
            continue;
        }
        for r in 0..m {
            let u = dec.left_vectors.get(r, j);
            for c in 0..n {
                out.data[r * n + c] += u * dec.right_vectors.get(c, j);
            }
        }
    }
    out
}

/// Relative truncation used when callers do not pick their own cutoff.
pub const SUBGRADIENT_RELATIVE_TOL: f64 = 1e-8;

/// Subgradient with the default cutoff `1e-8 * sigma_max`.
pub fn nuclear_norm_subgradient_default(m: &Matrix) -> Result<Matrix> {
    let dec = svd(m)?;
    let smax = dec.singular_values.first().copied().unwrap_or(0.0);
    if smax == 0.0 {
        return Ok(Matrix::zeros(m.rows, m.cols));
    }
    Ok(subgradient_from_svd(&dec, SUBGRADIENT_RELATIVE_TOL * smax))
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Rejects matrices whose asymmetry exceeds `1e-10 * max(1, |M|_max)`.
pub fn eig_sym(m: &Matrix) -> Result<EigResult> {
    if m.rows != m.cols {
        return Err(Error::invalid(format!(
            "eig_sym: matrix must be square, got {}x{}",
            m.rows, m.cols
        )));
    }
    if !m.is_finite() {
        return Err(Error::invalid("eig_sym: matrix has non-finite entries"));
    }
    let scale = m.max_abs().max(1.0);
    for r in 0..m.rows {
        for c in (r + 1)..m.cols {
            if (m.get(r, c) - m.get(c, r)).abs() > 1e-10 * scale {
                return Err(Error::invalid(format!(
                    "eig_sym: matrix asymmetric at ({r},{c}): {} vs {}",
                    m.get(r, c),
                    m.get(c, r)
                )));
            }
        }
    }
    Ok(jacobi_eig(m))
}

/// Cyclic Jacobi on a symmetric matrix. No symmetry check; the upper triangle
/// is trusted.
fn jacobi_eig(m: &Matrix) -> EigResult {
    let n = m.rows;
    let mut a = m.clone();
    // Symmetrize so rotations act on exact data.
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (a.get(r, c) + a.get(c, r));
            a.set(r, c, v);
            a.set(c, r, v);
        }
    }
    let mut q = Matrix::identity(n);
    let fro = a.frobenius_norm().max(f64::MIN_POSITIVE);
    let thresh = 1e-15 * fro;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = a.get(p, r);
                if apr.abs() <= thresh {
                    continue;
                }
                rotated = true;
                let app = a.get(p, p);
                let arr = a.get(r, r);
                let tau = (arr - app) / (2.0 * apr);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Rows and columns p and r of A.
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akr = a.get(k, r);
                    a.set(k, p, c * akp - s * akr);
                    a.set(k, r, s * akp + c * akr);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let ark = a.get(r, k);
                    a.set(p, k, c * apk - s * ark);
                    a.set(r, k, s * apk + c * ark);
                }
                // Kill the rotated-away entries exactly.
                a.set(p, r, 0.0);
                a.set(r, p, 0.0);
                for k in 0..n {
                    let qkp = q.get(k, p);
                    let qkr = q.get(k, r);
                    q.set(k, p, c * qkp - s * qkr);
                    q.set(k, r, s * qkp + c * qkr);
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).partial_cmp(&a.get(i, i)).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, dst, q.get(r, src));
        }
    }
    EigResult {
        eigenvalues,
        eigenvectors: vectors,
    }
}

/// Thin SVD of a tall (or square) matrix, `rows >= cols`.
fn svd_tall(m: &Matrix) -> Result<SvdResult> {
    debug_assert!(m.rows >= m.cols);
    if m.rows > GRAM_ASPECT * m.cols {
        svd_gram(m)
    } else {
        Ok(svd_one_sided_jacobi(m))
    }
}

/// SVD via the eigendecomposition of `M^T M` (cols x cols).
fn svd_gram(m: &Matrix) -> Result<SvdResult> {
    let n = m.cols;
    let gram = m.transpose().matmul(m);
    let eig = jacobi_eig(&gram);
    let mut singular_values = Vec::with_capacity(n);
    let mut left = Matrix::zeros(m.rows, n);
    let right = eig.eigenvectors.clone();
    let smax_sq = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let tiny = (smax_sq.sqrt()) * 1e-13;

    for j in 0..n {
        let v = right.column(j);
        // w = M v, its norm is the singular value.
        let mut w = vec![0.0; m.rows];
        for r in 0..m.rows {
            let row = &m.data[r * n..(r + 1) * n];
            w[r] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let s = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        singular_values.push(s);
        if s > tiny && s > 0.0 {
            for r in 0..m.rows {
                left.set(r, j, w[r] / s);
            }
        }
        // Columns for negligible singular values are completed below.
    }
    complete_orthonormal_columns(&mut left, &singular_values, tiny);
    reorthonormalize_columns(&mut left);
    Ok(SvdResult {
        left_vectors: left,
        singular_values,
        right_vectors: right,
    })
}

/// One-sided (Hestenes) Jacobi SVD for `rows >= cols`.
fn svd_one_sided_jacobi(m: &Matrix) -> SvdResult {
    let rows = m.rows;
    let n = m.cols;
    let mut b = m.clone();
    let mut v = Matrix::identity(n);

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for r in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for k in 0..rows {
                    let bp = b.get(k, p);
                    let br = b.get(k, r);
                    alpha += bp * bp;
                    beta += br * br;
                    gamma += bp * br;
                }
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let tau = (beta - alpha) / (2.0 * gamma);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..rows {
                    let bp = b.get(k, p);
                    let br = b.get(k, r);
                    b.set(k, p, c * bp - s * br);
                    b.set(k, r, s * bp + c * br);
                }
                for k in 0..n {
                    let vp = v.get(k, p);
                    let vr = v.get(k, r);
                    v.set(k, p, c * vp - s * vr);
                    v.set(k, r, s * vp + c * vr);
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values; sort descending.
    let mut norms: Vec<f64> = (0..n)
        .map(|j| (0..rows).map(|k| b.get(k, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());
    let mut left = Matrix::zeros(rows, n);
    let mut right = Matrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    let smax = order.first().map(|&i| norms[i]).unwrap_or(0.0);
    let tiny = smax * 1e-13;
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        singular_values.push(s);
        if s > tiny && s > 0.0 {
            for k in 0..rows {
                left.set(k, dst, b.get(k, src) / s);
            }
        }
        for k in 0..n {
            right.set(k, dst, v.get(k, src));
        }
    }
    norms.sort_by(|a, b| b.partial_cmp(a).unwrap());
    complete_orthonormal_columns(&mut left, &singular_values, tiny);
    SvdResult {
        left_vectors: left,
        singular_values,
        right_vectors: right,
    }
}

/// Fill columns whose singular value is negligible with unit vectors
/// orthogonal to all other columns. Deterministic: picks the standard basis
/// vector with the largest residual each time.
fn complete_orthonormal_columns(u: &mut Matrix, singular_values: &[f64], tiny: f64) {
    let rows = u.rows;
    let cols = u.cols;
    for j in 0..cols {
        if singular_values[j] > tiny && singular_values[j] > 0.0 {
            continue;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..rows {
            let mut cand = vec![0.0; rows];
            cand[e] = 1.0;
            for k in 0..cols {
                if k == j {
                    continue;
                }
                let dot: f64 = (0..rows).map(|r| u.get(r, k) * cand[r]).sum();
                for r in 0..rows {
                    cand[r] -= dot * u.get(r, k);
                }
            }
            let norm = cand.iter().map(|x| x * x).sum::<f64>().sqrt();
            if best.as_ref().map_or(true, |(bn, _)| norm > *bn) {
                best = Some((norm, cand));
            }
            if norm > 0.9 {
                break;
            }
        }
        let (norm, cand) = best.expect("rows >= 1");
        for r in 0..rows {
            u.set(r, j, cand[r] / norm);
        }
    }
}

/// Modified Gram-Schmidt pass over the columns, in order.
fn reorthonormalize_columns(u: &mut Matrix) {
    let rows = u.rows;
    let cols = u.cols;
    for j in 0..cols {
        for k in 0..j {
            let dot: f64 = (0..rows).map(|r| u.get(r, k) * u.get(r, j)).sum();
            for r in 0..rows {
                let v = u.get(r, j) - dot * u.get(r, k);
                u.set(r, j, v);
            }
        }
        let norm: f64 = (0..rows)
            .map(|r| u.get(r, j).powi(2))
            .sum::<f64>()
            .sqrt();
        if norm > 0.0 {
            for r in 0..rows {
                u.set(r, j, u.get(r, j) / norm);
            }
        }
    }
}
