//! Dense row-major `f64` matrices and the few decompositions the models
//! need.
//!
//! The workloads are small (hundreds of rows and columns), so the code
//! favors clarity and bitwise determinism over blocking tricks.  The only
//! hot paths are the three GEMM variants; each is arranged so the inner
//! loop is a contiguous multiply-add over one row slice, which the
//! compiler vectorizes on its own.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix> {
        if data.len() != rows * cols {
            return Err(Error::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Matrix {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, other: &Matrix, s: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(shape_err("add_scaled", self, other));
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
        Ok(())
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Largest entrywise |a - b|; shape mismatch is reported as infinity.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        if self.rows != other.rows || self.cols != other.cols {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| abs(a - b))
            .fold(0.0, f64::max)
    }
}

#[inline]
pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

fn shape_err(ctx: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::ShapeMismatch {
        ctx,
        a_rows: a.rows,
        a_cols: a.cols,
        b_rows: b.rows,
        b_cols: b.cols,
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += a * b`; ikj order so the inner loop is an axpy over rows of b.
pub fn matmul_acc(out: &mut Matrix, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols != b.rows {
        return Err(shape_err("matmul", a, b));
    }
    if out.rows != a.rows || out.cols != b.cols {
        return Err(shape_err("matmul output", out, b));
    }
    let n = b.cols;
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for (k, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = b.row(k);
            for j in 0..n {
                out_row[j] += aik * b_row[j];
            }
        }
    }
    Ok(())
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(a.rows, b.cols);
    matmul_acc(&mut out, a, b)?;
    Ok(out)
}

/// `out += a^T * b` where a is k x m and b is k x n.
pub fn mul_at_acc(out: &mut Matrix, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.rows != b.rows {
        return Err(shape_err("mul_at", a, b));
    }
    if out.rows != a.cols || out.cols != b.cols {
        return Err(shape_err("mul_at output", out, b));
    }
    let n = b.cols;
    for k in 0..a.rows {
        let a_row = a.row(k);
        let b_row = b.row(k);
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for j in 0..n {
                out_row[j] += aki * b_row[j];
            }
        }
    }
    Ok(())
}

pub fn mul_at(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(a.cols, b.cols);
    mul_at_acc(&mut out, a, b)?;
    Ok(out)
}

/// `out += a * b^T` where a is m x k and b is n x k; inner loop is a dot
/// of two row slices.
pub fn mul_bt_acc(out: &mut Matrix, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.cols != b.cols {
        return Err(shape_err("mul_bt", a, b));
    }
    if out.rows != a.rows || out.cols != b.rows {
        return Err(shape_err("mul_bt output", out, b));
    }
    let n = b.rows;
    for i in 0..a.rows {
        let a_row = a.row(i);
        let out_row = &mut out.data[i * n..(i + 1) * n];
        for j in 0..n {
            out_row[j] += dot(a_row, b.row(j));
        }
    }
    Ok(())
}

pub fn mul_bt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(a.rows, b.rows);
    mul_bt_acc(&mut out, a, b)?;
    Ok(out)
}

/// `a * x` for a column vector x.
pub fn matvec(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.cols != x.len() {
        return Err(Error::BadLength {
            rows: a.cols,
            cols: 1,
            len: x.len(),
        });
    }
    Ok((0..a.rows).map(|i| dot(a.row(i), x)).collect())
}

/// `a^T * x`; swept row-wise so the accesses stay contiguous.
pub fn matvec_t(a: &Matrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.rows != x.len() {
        return Err(Error::BadLength {
            rows: a.rows,
            cols: 1,
            len: x.len(),
        });
    }
    let mut out = vec![0.0; a.cols];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &aij) in out.iter_mut().zip(a.row(i)) {
            *o += xi * aij;
        }
    }
    Ok(out)
}

/// Euclidean norm of all entries of all matrices taken together.
pub fn global_norm(mats: &[&Matrix]) -> f64 {
    libm::sqrt(mats.iter().map(|m| m.frobenius_norm_sq()).sum())
}

/// A probability vector: finite, entries in [0, 1], summing to 1 within
/// 1e-9.  Construction is the validation point; the contents are immutable.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<ProbVector> {
        if values.is_empty() {
            return Err(Error::BadLength {
                rows: 1,
                cols: 1,
                len: 0,
            });
        }
        let mut sum = 0.0;
        for &v in &values {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::NonFinite("probability entry"));
            }
            sum += v;
        }
        if abs(sum - 1.0) > 1e-9 {
            return Err(Error::NotNormalized { sum });
        }
        Ok(ProbVector(values))
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.0.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// log(sum_i exp(z_i)), stabilized by the max.
pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = z.iter().map(|&v| libm::exp(v - m)).sum();
    m + libm::log(s)
}

/// softmax(z / tau).  tau = 1 is the plain softmax; larger tau flattens the
/// distribution.  Stabilized by subtracting the max, so any finite logits
/// are safe.
pub fn softmax_with_temperature(logits: &[f64], tau: f64) -> Result<ProbVector> {
    let (p, _) = softmax_with_lse(logits, tau)?;
    Ok(p)
}

/// Like [`softmax_with_temperature`], but also returns
/// log(sum exp(z/tau)) so callers can get log-probabilities without a
/// second pass: ln p_i = z_i/tau - lse.
pub fn softmax_with_lse(logits: &[f64], tau: f64) -> Result<(ProbVector, f64)> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::BadTemperature { tau });
    }
    if logits.is_empty() {
        return Err(Error::BadLength {
            rows: 1,
            cols: 1,
            len: 0,
        });
    }
    let mut m = f64::NEG_INFINITY;
    for &z in logits {
        if !z.is_finite() {
            return Err(Error::NonFinite("softmax input"));
        }
        m = m.max(z / tau);
    }
    let mut out = Vec::with_capacity(logits.len());
    let mut sum = 0.0;
    for &z in logits {
        let e = libm::exp(z / tau - m);
        sum += e;
        out.push(e);
    }
    let inv = 1.0 / sum;
    out.iter_mut().for_each(|p| *p *= inv);
    Ok((ProbVector(out), m + libm::log(sum)))
}

/// Thin orthonormal basis of the column space via Householder QR.
///
/// Requires rows >= cols >= 1 and full column rank; a column whose
/// remaining norm falls below 1e-10 times the largest original column norm
/// is reported as rank-deficient.  Deterministic: the reflector sign is
/// fixed by the pivot sign, so identical input gives bitwise identical
/// output.
pub fn qr_orthonormalize(x: &Matrix) -> Result<Matrix> {
    let (m, n) = (x.rows, x.cols);
    if m < n || n == 0 {
        return Err(Error::NotTall { rows: m, cols: n });
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("qr input"));
    }

    let max_col_norm = (0..n)
        .map(|j| libm::sqrt((0..m).map(|i| x.get(i, j) * x.get(i, j)).sum()))
        .fold(0.0, f64::max);
    let threshold = 1e-10 * max_col_norm;

    let mut a = x.clone();
    // Householder vectors, one per column, each of length m - k.
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);

    for k in 0..n {
        let mut v: Vec<f64> = (k..m).map(|i| a.get(i, k)).collect();
        let norm = libm::sqrt(dot(&v, &v));
        if norm <= threshold {
            return Err(Error::RankDeficient { col: k });
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = libm::sqrt(dot(&v, &v));
        // vnorm >= |norm| > 0 because v[0] moved away from zero.
        v.iter_mut().for_each(|t| *t /= vnorm);

        // Apply H = I - 2 v v^T to the remaining block a[k.., k..].
        for j in k..n {
            let mut proj = 0.0;
            for (r, &vr) in v.iter().enumerate() {
                proj += vr * a.get(k + r, j);
            }
            let proj2 = 2.0 * proj;
            for (r, &vr) in v.iter().enumerate() {
                let cur = a.get(k + r, j);
                a.set(k + r, j, cur - proj2 * vr);
            }
        }
        // Re-check the post-update pivot; a column that collapsed under the
        // reflections is dependent on its predecessors.
        if abs(a.get(k, k)) <= threshold {
            return Err(Error::RankDeficient { col: k });
        }
        reflectors.push(v);
    }

    // Thin Q: apply H_0 ... H_{n-1} to the first n columns of I_m,
    // reflectors in reverse order.
    let mut q = Matrix::from_fn(m, n, |i, j| if i == j { 1.0 } else { 0.0 });
    for k in (0..n).rev() {
        let v = &reflectors[k];
        for j in 0..n {
            let mut proj = 0.0;
            for (r, &vr) in v.iter().enumerate() {
                proj += vr * q.get(k + r, j);
            }
            let proj2 = 2.0 * proj;
            for (r, &vr) in v.iter().enumerate() {
                let cur = q.get(k + r, j);
                q.set(k + r, j, cur - proj2 * vr);
            }
        }
    }
    Ok(q)
}

/// Singular values (descending) via one-sided Jacobi rotations.
///
/// Chosen over bidiagonalization for its simplicity and high relative
/// accuracy on the small matrices this crate produces.
pub fn singular_values(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_finite() {
        return Err(Error::NonFinite("svd input"));
    }
    if a.rows == 0 || a.cols == 0 {
        return Ok(Vec::new());
    }
    // One-sided Jacobi works on columns; make sure there are at least as
    // many rows as columns (singular values are transpose-invariant).
    let mut w = if a.rows >= a.cols {
        a.clone()
    } else {
        a.transpose()
    };
    let n = w.cols;
    let tol = 1e-14;

    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                let mut alpha = 0.0;
                let mut beta = 0.0;
                let mut gamma = 0.0;
                for i in 0..w.rows {
                    let ap = w.get(i, p);
                    let aq = w.get(i, q);
                    alpha += ap * ap;
                    beta += aq * aq;
                    gamma += ap * aq;
                }
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let denom = libm::sqrt(alpha * beta);
                off = off.max(abs(gamma) / denom);
                if abs(gamma) <= tol * denom {
                    continue;
                }
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = {
                    let s = if zeta >= 0.0 { 1.0 } else { -1.0 };
                    s / (abs(zeta) + libm::sqrt(1.0 + zeta * zeta))
                };
                let c = 1.0 / libm::sqrt(1.0 + t * t);
                let s = c * t;
                for i in 0..w.rows {
                    let ap = w.get(i, p);
                    let aq = w.get(i, q);
                    w.set(i, p, c * ap - s * aq);
                    w.set(i, q, s * ap + c * aq);
                }
            }
        }
        if off <= tol {
            break;
        }
    }

    let mut sv: Vec<f64> = (0..n)
        .map(|j| libm::sqrt((0..w.rows).map(|i| w.get(i, j) * w.get(i, j)).sum()))
        .collect();
    sv.sort_by(|a, b| b.partial_cmp(a).expect("singular values are finite"));
    Ok(sv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::RngExt;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_from(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matmul_hand_example() {
        let a = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Matrix::from_vec(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_identity_is_noop() {
        let a = random_matrix(7, 4, 1);
        let c = matmul(&a, &Matrix::identity(4)).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn matmul_shape_mismatch_errors() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(4, 2);
        assert!(matches!(
            matmul(&a, &b),
            Err(Error::ShapeMismatch { ctx: "matmul", .. })
        ));
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let a = random_matrix(6, 3, 2);
        let b = random_matrix(6, 5, 3);
        let c = random_matrix(4, 6, 4);
        let at_b = mul_at(&a, &b).unwrap();
        assert!(at_b.max_abs_diff(&matmul(&a.transpose(), &b).unwrap()) < 1e-12);
        let c_at = mul_bt(&c, &a.transpose()).unwrap();
        assert!(c_at.max_abs_diff(&matmul(&c, &a).unwrap()) < 1e-12);
    }

    #[test]
    fn matvec_variants_match_matmul() {
        let a = random_matrix(5, 3, 9);
        let x = vec![0.5, -1.0, 2.0];
        let y = matvec(&a, &x).unwrap();
        for (i, &yi) in y.iter().enumerate() {
            assert!((yi - dot(a.row(i), &x)).abs() < 1e-15);
        }
        let z = vec![1.0, 0.0, -2.0, 0.25, 3.0];
        let t = matvec_t(&a, &z).unwrap();
        let explicit = matvec(&a.transpose(), &z).unwrap();
        for (u, v) in t.iter().zip(&explicit) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_hand_values() {
        let p = softmax_with_temperature(&[1.0, 2.0], 1.0).unwrap();
        assert!((p.values()[0] - 0.2689414213699951).abs() < 1e-12);
        assert!((p.values()[1] - 0.7310585786300049).abs() < 1e-12);
        // Doubling both logits and the temperature changes nothing.
        let q = softmax_with_temperature(&[2.0, 4.0], 2.0).unwrap();
        assert!((p.values()[0] - q.values()[0]).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_temperature() {
        for tau in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert!(matches!(
                softmax_with_temperature(&[1.0, 2.0], tau),
                Err(Error::BadTemperature { .. })
            ));
        }
        assert!(softmax_with_temperature(&[f64::NAN, 0.0], 1.0).is_err());
    }

    #[test]
    fn softmax_extreme_logits_stay_normalized() {
        let p = softmax_with_temperature(&[1000.0, -1000.0, 999.0], 1.0).unwrap();
        let sum: f64 = p.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(p.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn lse_matches_softmax_logprobs() {
        let z = [0.3, -2.0, 5.0, 1.1];
        let (p, lse) = softmax_with_lse(&z, 1.0).unwrap();
        for (i, &zi) in z.iter().enumerate() {
            assert!((libm::log(p.values()[i]) - (zi - lse)).abs() < 1e-12);
        }
    }

    #[test]
    fn prob_vector_validates() {
        assert!(ProbVector::new(vec![0.5, 0.5]).is_ok());
        assert!(ProbVector::new(vec![0.6, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![]).is_err());
    }

    #[test]
    fn qr_produces_orthonormal_basis_with_same_span() {
        let x = random_matrix(12, 5, 7);
        let q = qr_orthonormalize(&x).unwrap();
        assert_eq!((q.rows(), q.cols()), (12, 5));
        let qtq = mul_at(&q, &q).unwrap();
        assert!(qtq.max_abs_diff(&Matrix::identity(5)) < 1e-12);
        // Projection of the original columns onto span(Q) reproduces them.
        let proj = matmul(&q, &mul_at(&q, &x).unwrap()).unwrap();
        assert!(proj.max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn qr_is_deterministic_bitwise() {
        let x = random_matrix(9, 4, 11);
        let q1 = qr_orthonormalize(&x).unwrap();
        let q2 = qr_orthonormalize(&x).unwrap();
        assert_eq!(q1, q2);
    }

    #[test]
    fn qr_rejects_rank_deficiency_and_bad_shapes() {
        let mut x = random_matrix(8, 3, 13);
        for i in 0..8 {
            let v = x.get(i, 0) * 2.0;
            x.set(i, 2, v);
        }
        assert!(matches!(
            qr_orthonormalize(&x),
            Err(Error::RankDeficient { col: 2 })
        ));
        assert!(matches!(
            qr_orthonormalize(&Matrix::zeros(3, 5)),
            Err(Error::NotTall { .. })
        ));
        assert!(qr_orthonormalize(&Matrix::zeros(3, 0)).is_err());
    }

    #[test]
    fn qr_single_column_is_normalization() {
        let x = Matrix::from_vec(3, 1, vec![3.0, 0.0, 4.0]).unwrap();
        let q = qr_orthonormalize(&x).unwrap();
        let got: Vec<f64> = q.col(0);
        // Sign convention: first pivot positive => reflector flips to -e1,
        // thin Q column is +x/|x| up to the fixed convention.
        let norm: f64 = libm::sqrt(got.iter().map(|v| v * v).sum());
        assert!((norm - 1.0).abs() < 1e-12);
        let cosine = (got[0] * 3.0 + got[2] * 4.0) / 5.0;
        assert!((cosine.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_values_of_known_matrices() {
        // A = [[3,0],[4,5]]: A^T A has eigenvalues 45 and 5.
        let a = Matrix::from_vec(2, 2, vec![3.0, 0.0, 4.0, 5.0]).unwrap();
        let sv = singular_values(&a).unwrap();
        assert!((sv[0] - libm::sqrt(45.0)).abs() < 1e-10);
        assert!((sv[1] - libm::sqrt(5.0)).abs() < 1e-10);

        let sv_id = singular_values(&Matrix::identity(4)).unwrap();
        for v in sv_id {
            assert!((v - 1.0).abs() < 1e-12);
        }

        let d = Matrix::from_vec(3, 3, vec![2.0, 0.0, 0.0, 0.0, -7.0, 0.0, 0.0, 0.0, 0.5]).unwrap();
        let sv_d = singular_values(&d).unwrap();
        assert!((sv_d[0] - 7.0).abs() < 1e-12);
        assert!((sv_d[1] - 2.0).abs() < 1e-12);
        assert!((sv_d[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn singular_values_transpose_invariant() {
        let a = random_matrix(4, 7, 21);
        let s1 = singular_values(&a).unwrap();
        let s2 = singular_values(&a.transpose()).unwrap();
        assert_eq!(s1.len(), s2.len());
        for (u, v) in s1.iter().zip(&s2) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn orthonormal_columns_have_unit_singular_values() {
        let q = qr_orthonormalize(&random_matrix(10, 4, 17)).unwrap();
        for v in singular_values(&q).unwrap() {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn global_norm_matches_concatenation() {
        let a = random_matrix(3, 3, 5);
        let b = random_matrix(2, 4, 6);
        let n = global_norm(&[&a, &b]);
        let expect = libm::sqrt(a.frobenius_norm_sq() + b.frobenius_norm_sq());
        assert!((n - expect).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn softmax_is_shift_invariant(shift in -50.0f64..50.0, seed in 0u64..1000) {
            let mut rng = rng_from(seed);
            let z: Vec<f64> = (0..8).map(|_| rng.random_range(-5.0..5.0)).collect();
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let p = softmax_with_temperature(&z, 1.0).unwrap();
            let q = softmax_with_temperature(&shifted, 1.0).unwrap();
            for (a, b) in p.values().iter().zip(q.values()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn softmax_sums_to_one(seed in 0u64..1000, tau in 0.1f64..100.0) {
            let mut rng = rng_from(seed);
            let z: Vec<f64> = (0..12).map(|_| rng.random_range(-30.0..30.0)).collect();
            let p = softmax_with_temperature(&z, tau).unwrap();
            let sum: f64 = p.values().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }

        #[test]
        fn svd_preserves_frobenius_norm(seed in 0u64..300) {
            let a = random_matrix(6, 4, seed);
            let sv = singular_values(&a).unwrap();
            let sum_sq: f64 = sv.iter().map(|v| v * v).sum();
            prop_assert!((sum_sq - a.frobenius_norm_sq()).abs() < 1e-9 * (1.0 + a.frobenius_norm_sq()));
        }
    }
}
