//! Small dense linear-algebra kernels: a row-major matrix, one-sided Jacobi
//! singular values, cyclic Jacobi and subspace-iteration eigen solvers, and a
//! Cholesky solve for normal equations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WarpError};
use crate::scalar::Real;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(WarpError::invalid(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(WarpError::invalid(format!(
                    "row {i} has length {} but expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
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
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Matrix<T>> {
        if self.cols != rhs.rows {
            return Err(WarpError::invalid(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = out.row_mut(i);
            for (k, &aik) in a.iter().enumerate() {
                if aik == T::zero() {
                    continue;
                }
                for (oj, &bkj) in o.iter_mut().zip(rhs.row(k)) {
                    *oj = *oj + aik * bkj;
                }
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn scale(&self, c: T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * c).collect(),
        }
    }

    /// Converts element-wise into another scalar type.
    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|v| U::lit(v.to_f64_lossy()))
                .collect(),
        }
    }
}

impl<T> std::ops::Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

const MAX_SWEEPS: usize = 100;

/// Singular values in decreasing order, computed by one-sided (Hestenes)
/// Jacobi rotations. Small singular values keep high relative accuracy, which
/// matters for entropy of nearly rank-deficient matrices.
pub fn singular_values<T: Real>(m: &Matrix<T>) -> Result<Vec<T>> {
    if !m.is_finite() {
        return Err(WarpError::numerical("non-finite matrix entry"));
    }
    // Orthogonalize whichever side has fewer vectors.
    let mut vecs: Vec<Vec<T>> = if m.rows() <= m.cols() {
        m.row_iter().map(|r| r.to_vec()).collect()
    } else {
        (0..m.cols()).map(|j| m.column(j)).collect()
    };
    let n = vecs.len();
    let eps = T::epsilon();
    // Vectors below this squared norm are numerically zero.
    let negligible = eps * eps * m.frobenius_norm().powi(2);
    let len = vecs.first().map_or(1, |v| v.len());
    let tol = eps * T::from_usize_lossy(len.max(1));
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let (a, b) = (&vecs[p], &vecs[q]);
                    (dot(a, a), dot(b, b), dot(a, b))
                };
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                if gamma.magnitude() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma + gamma);
                let t = zeta.signum() / (zeta.magnitude() + (T::one() + zeta * zeta).sqrt());
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = vecs.split_at_mut(q);
                let (vp, vq) = (&mut lo[p], &mut hi[0]);
                for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                    let (xp, yq) = (*x, *y);
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(WarpError::numerical("Jacobi SVD did not converge"));
    }
    let mut sv: Vec<T> = vecs.iter().map(|v| dot(v, v).sqrt()).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
    Ok(sv)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in decreasing order and the matching eigenvectors as
/// columns.
pub fn symmetric_eigen<T: Real>(a: &Matrix<T>) -> Result<(Vec<T>, Matrix<T>)> {
    let n = a.rows();
    if n != a.cols() {
        return Err(WarpError::invalid("eigen decomposition needs a square matrix"));
    }
    if !a.is_finite() {
        return Err(WarpError::numerical("non-finite matrix entry"));
    }
    let mut m = a.clone();
    let mut v = Matrix::identity(n);
    let eps = T::epsilon();
    let mut converged = n <= 1;
    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..n {
            diag = diag + m[(i, i)] * m[(i, i)];
            for j in (i + 1)..n {
                off = off + m[(i, j)] * m[(i, j)];
            }
        }
        if off <= eps * eps * (diag + off) || off == T::zero() {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (apq + apq);
                let t = if theta == T::zero() {
                    T::one()
                } else {
                    theta.signum() / (theta.magnitude() + (T::one() + theta * theta).sqrt())
                };
                let c = T::one() / (T::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        return Err(WarpError::numerical("Jacobi eigen solver did not converge"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(j, j)]
            .partial_cmp(&m[(i, i)])
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok((values, vectors))
}

/// Orthonormalizes the columns of `q` (stored as separate vectors) in place
/// with modified Gram-Schmidt. Returns false if a column collapsed.
fn orthonormalize<T: Real>(q: &mut [Vec<T>]) -> bool {
    for j in 0..q.len() {
        let (done, rest) = q.split_at_mut(j);
        let col = &mut rest[0];
        for prev in done.iter() {
            let proj = dot(prev, col);
            for (c, &p) in col.iter_mut().zip(prev) {
                *c = *c - proj * p;
            }
        }
        let norm = dot(col, col).sqrt();
        if !(norm > T::epsilon()) {
            return false;
        }
        for c in col.iter_mut() {
            *c = *c / norm;
        }
    }
    true
}

fn symmetric_matvec<T: Real>(a: &Matrix<T>, x: &[T], out: &mut [T]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(a.row(i), x);
    }
}

/// Leading `k` eigenpairs (largest algebraic eigenvalues) of a symmetric
/// matrix by shifted subspace iteration with a final Rayleigh-Ritz step.
///
/// The start block is drawn from a fixed-seed generator so the result is
/// deterministic.
pub fn top_symmetric_eigenpairs<T: Real>(
    a: &Matrix<T>,
    k: usize,
) -> Result<(Vec<T>, Vec<Vec<T>>)> {
    let n = a.rows();
    if n != a.cols() {
        return Err(WarpError::invalid("eigen decomposition needs a square matrix"));
    }
    if k == 0 || k > n {
        return Err(WarpError::invalid(format!("cannot take {k} eigenpairs of a {n}x{n} matrix")));
    }
    if n <= 64 {
        let (vals, vecs) = symmetric_eigen(a)?;
        return Ok((vals[..k].to_vec(), (0..k).map(|j| vecs.column(j)).collect()));
    }
    let shift = (0..n)
        .map(|i| a.row(i).iter().map(|v| v.magnitude()).sum::<T>())
        .fold(T::zero(), T::max);
    let block = (k + 4).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0f_e16e);
    let mut q: Vec<Vec<T>> = (0..block)
        .map(|_| (0..n).map(|_| T::lit(rng.random::<f64>() - 0.5)).collect())
        .collect();
    if !orthonormalize(&mut q) {
        return Err(WarpError::numerical("degenerate start block"));
    }
    let tol = T::epsilon().powf(T::lit(0.75)) * shift.max(T::min_positive_value());
    let mut tmp = vec![T::zero(); n];
    for _ in 0..20_000 {
        let mut z: Vec<Vec<T>> = Vec::with_capacity(block);
        for col in &q {
            symmetric_matvec(a, col, &mut tmp);
            z.push(tmp.iter().zip(col).map(|(&ax, &x)| ax + shift * x).collect());
        }
        if !orthonormalize(&mut z) {
            return Err(WarpError::numerical("subspace iteration lost rank"));
        }
        q = z;
        let (vals, vecs) = rayleigh_ritz(a, &q)?;
        let mut worst = T::zero();
        for j in 0..k {
            symmetric_matvec(a, &vecs[j], &mut tmp);
            let r = tmp
                .iter()
                .zip(&vecs[j])
                .map(|(&ax, &x)| {
                    let d = ax - vals[j] * x;
                    d * d
                })
                .sum::<T>()
                .sqrt();
            worst = worst.max(r);
        }
        if worst <= tol {
            return Ok((vals[..k].to_vec(), vecs.into_iter().take(k).collect()));
        }
    }
    Err(WarpError::numerical("subspace iteration did not converge"))
}

fn rayleigh_ritz<T: Real>(a: &Matrix<T>, q: &[Vec<T>]) -> Result<(Vec<T>, Vec<Vec<T>>)> {
    let b = q.len();
    let n = a.rows();
    let mut aq = vec![vec![T::zero(); n]; b];
    for (col, out) in q.iter().zip(aq.iter_mut()) {
        symmetric_matvec(a, col, out);
    }
    let mut h = Matrix::zeros(b, b);
    for i in 0..b {
        for j in i..b {
            let v = dot(&q[i], &aq[j]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    let (vals, w) = symmetric_eigen(&h)?;
    let vecs = (0..b)
        .map(|j| {
            let mut u = vec![T::zero(); n];
            for (i, qi) in q.iter().enumerate() {
                let wij = w[(i, j)];
                for (uk, &qk) in u.iter_mut().zip(qi) {
                    *uk = *uk + wij * qk;
                }
            }
            u
        })
        .collect();
    Ok((vals, vecs))
}

/// Solves `a x = b` for symmetric positive-definite `a`.
pub fn cholesky_solve<T: Real>(a: &Matrix<T>, b: &[T]) -> Result<Vec<T>> {
    let n = a.rows();
    if n != a.cols() || b.len() != n {
        return Err(WarpError::invalid("cholesky dimensions mismatch"));
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            for k in 0..j {
                s = s - l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if !(s > T::zero()) {
                    return Err(WarpError::numerical("matrix not positive definite"));
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s = s - l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s = s - l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag_test_matrix() -> Matrix<f64> {
        // U diag(3, 1) V^T with orthonormal U (3x2) and V (2x2).
        let u = [[0.6, 0.0], [0.8, 0.0], [0.0, 1.0]];
        let (c, s) = (0.3f64.cos(), 0.3f64.sin());
        let v = [[c, -s], [s, c]];
        let sig = [3.0, 1.0];
        let mut m = Matrix::zeros(3, 2);
        for i in 0..3 {
            for j in 0..2 {
                m[(i, j)] = (0..2).map(|k| u[i][k] * sig[k] * v[j][k]).sum();
            }
        }
        m
    }

    #[test]
    fn singular_values_of_constructed_matrix() {
        let sv = singular_values(&diag_test_matrix()).unwrap();
        assert!((sv[0] - 3.0).abs() < 1e-13);
        assert!((sv[1] - 1.0).abs() < 1e-13);
        let svt = singular_values(&diag_test_matrix().transpose()).unwrap();
        assert!((svt[0] - 3.0).abs() < 1e-13 && (svt[1] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn rank_one_has_tiny_trailing_singular_values() {
        let a = [1.0, -2.0, 0.5, 3.0];
        let b = [0.3, 1.1, -0.7];
        let rows: Vec<Vec<f64>> = b.iter().map(|&bi| a.iter().map(|&aj| aj * bi).collect()).collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let sv = singular_values(&m).unwrap();
        assert!(sv[1] < 1e-15 * sv[0]);
    }

    #[test]
    fn jacobi_eigen_reconstructs() {
        let m = Matrix::from_rows(&[[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 1.0]]).unwrap();
        let (vals, vecs) = symmetric_eigen(&m).unwrap();
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
        for j in 0..3 {
            let v = vecs.column(j);
            for i in 0..3 {
                let av: f64 = (0..3).map(|k| m[(i, k)] * v[k]).sum();
                assert!((av - vals[j] * v[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn subspace_iteration_matches_jacobi() {
        let n = 90;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut m = Matrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.random::<f64>() - 0.5;
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        // plant a dominant rank-2 part
        let u: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).sin()).collect();
        let w: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] += 0.5 * u[i] * u[j] + 0.3 * w[i] * w[j];
            }
        }
        let (vals, _) = symmetric_eigen(&m).unwrap();
        let (top, vecs) = top_symmetric_eigenpairs(&m, 2).unwrap();
        assert!((top[0] - vals[0]).abs() < 1e-9);
        assert!((top[1] - vals[1]).abs() < 1e-9);
        let nrm: f64 = dot(&vecs[0], &vecs[0]);
        assert!((nrm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let a = Matrix::<f64>::from_rows(&[[4.0, 2.0], [2.0, 3.0]]).unwrap();
        let x = cholesky_solve(&a, &[2.0, 1.0]).unwrap();
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-14);
    }
}
