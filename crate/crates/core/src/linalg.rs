//! Dense row-major matrices and the handful of numeric kernels the rest of
//! the crate needs: products, norms, top-k selection, a small ridge solver,
//! power iteration, softmax and entropy.
//!
//! Everything is `f64`. Matrix values are immutable once built; operations
//! return new matrices.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_err, Result, VpsError};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            for i in 0..self.rows {
                write!(f, "\n  {:?}", self.row(i))?;
            }
        }
        Ok(())
    }
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(
                "Matrix::new",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(VpsError::Argument(format!(
                "non-finite entry {} at flat index {pos}",
                data[pos]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(shape_err("Matrix::from_rows", "ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
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

    /// Entries i.i.d. standard normal times `scale`.
    pub fn random_normal(rows: usize, cols: usize, scale: f64, rng: &mut SeededRng) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.normal() * scale)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
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

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(shape_err(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(gemm(self, false, other, false))
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(shape_err(
                "matmul_t",
                format!("{:?} x {:?}ᵀ", self.shape(), other.shape()),
            ));
        }
        Ok(gemm(self, false, other, true))
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(shape_err(
                "t_matmul",
                format!("{:?}ᵀ x {:?}", self.shape(), other.shape()),
            ));
        }
        Ok(gemm(self, true, other, false))
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(&self, other: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Matrix::from_vec_unchecked(self.rows, self.cols, data))
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_vec_unchecked(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        frobenius_norm_sq(self)
    }

    pub fn col_norm(&self, j: usize) -> f64 {
        (0..self.rows).map(|i| self.get(i, j).powi(2)).sum::<f64>().sqrt()
    }

    /// Columns `indices` of `self`, in order.
    pub fn select_cols(&self, indices: &[usize]) -> Matrix {
        Matrix::from_fn(self.rows, indices.len(), |i, c| self.get(i, indices[c]))
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Mean of `|m_ij|` down each column.
    pub fn mean_abs_cols(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(i)) {
                *o += v.abs();
            }
        }
        let n = self.rows.max(1) as f64;
        out.iter_mut().for_each(|o| *o /= n);
        out
    }
}

/// Dot product with eight independent accumulators so the loop vectorises.
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let xc = x.chunks_exact(8);
    let yc = y.chunks_exact(8);
    let tail: f64 = xc.remainder().iter().zip(yc.remainder()).map(|(a, b)| a * b).sum();
    for (a, b) in xc.zip(yc) {
        for l in 0..8 {
            acc[l] += a[l] * b[l];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Widths at or below this use the streaming kernels instead of packed gemm.
const SKINNY: usize = 8;

/// `op(a) · b` for `b` with at most [`SKINNY`] columns; one pass over `a`.
fn skinny_cols(a: &Matrix, ta: bool, b: &Matrix, out: &mut Matrix) {
    let n = b.cols;
    if ta {
        let m = a.cols;
        let mut cols = vec![vec![0.0; m]; n];
        for kk in 0..a.rows {
            let arow = a.row(kk);
            for (c, col) in cols.iter_mut().enumerate() {
                let bkc = b.data[kk * n + c];
                if bkc != 0.0 {
                    col.iter_mut().zip(arow).for_each(|(o, &x)| *o += x * bkc);
                }
            }
        }
        for (c, col) in cols.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                out.data[i * n + c] = *v;
            }
        }
    } else {
        let bt = b.transpose();
        for i in 0..a.rows {
            let arow = a.row(i);
            for c in 0..n {
                out.data[i * n + c] = dot(arow, bt.row(c));
            }
        }
    }
}

/// `a · op(b)` for an inner dimension of at most [`SKINNY`]; one pass over
/// the output.
fn skinny_inner(a: &Matrix, b: &Matrix, tb: bool, out: &mut Matrix) {
    let rows = if tb { b.transpose() } else { b.clone() };
    let n = out.cols;
    for i in 0..a.rows {
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (c, &aic) in a.row(i).iter().enumerate() {
            orow.iter_mut().zip(rows.row(c)).for_each(|(o, &x)| *o += aic * x);
        }
    }
}

fn gemm(a: &Matrix, ta: bool, b: &Matrix, tb: bool) -> Matrix {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    let mut out = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    if !tb && n <= SKINNY {
        skinny_cols(a, ta, b, &mut out);
        return out;
    }
    if !ta && k <= SKINNY {
        skinny_inner(a, b, tb, &mut out);
        return out;
    }
    // Row-major strides; a transpose is just swapped strides.
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            0.0,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.matmul(b)
}

pub fn frobenius_norm_sq(m: &Matrix) -> f64 {
    m.data.iter().map(|v| v * v).sum()
}

/// Ordered list of distinct indices into a dimension of known size.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndexList(Vec<usize>);

impl IndexList {
    pub fn new(indices: Vec<usize>, dim: usize) -> Result<Self> {
        let mut seen = vec![false; dim];
        for &i in &indices {
            if i >= dim {
                return Err(VpsError::Argument(format!("index {i} out of range for dimension {dim}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(VpsError::Argument(format!("duplicate index {i}")));
            }
        }
        Ok(Self(indices))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for IndexList {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

/// Indices of the `k` largest scores, by descending score and then
/// ascending index.
pub fn top_k_indices(scores: &[f64], k: usize) -> Result<IndexList> {
    if k == 0 || k > scores.len() {
        return Err(VpsError::Argument(format!(
            "top-k with k={k} over {} scores",
            scores.len()
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = |&a: &usize, &b: &usize| scores[b].total_cmp(&scores[a]).then(a.cmp(&b));
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    Ok(IndexList(idx))
}

/// Solves `(G + αI) T = C` by Cholesky factorisation of `G + αI`.
pub fn ridge_solve(g: &Matrix, c: &Matrix, alpha: f64) -> Result<Matrix> {
    let r = g.rows();
    if g.cols() != r || c.rows() != r {
        return Err(shape_err(
            "ridge_solve",
            format!("G {:?}, C {:?}", g.shape(), c.shape()),
        ));
    }
    if !(alpha >= 0.0) {
        return Err(VpsError::Argument(format!("ridge alpha must be >= 0, got {alpha}")));
    }
    if alpha == f64::INFINITY {
        return Ok(Matrix::zeros(r, c.cols()));
    }
    let mut l = vec![0.0; r * r];
    let diag_scale = (0..r).map(|i| g.get(i, i).abs()).fold(0.0, f64::max) + alpha;
    let pivot_floor = 1e-12 * diag_scale.max(f64::MIN_POSITIVE);
    for i in 0..r {
        for j in 0..=i {
            let mut s = 0.5 * (g.get(i, j) + g.get(j, i));
            if i == j {
                s += alpha;
            }
            for p in 0..j {
                s -= l[i * r + p] * l[j * r + p];
            }
            if i == j {
                if s <= pivot_floor {
                    return Err(VpsError::Solve(format!(
                        "non-positive pivot {s:e} at row {i} (alpha = {alpha})"
                    )));
                }
                l[i * r + i] = s.sqrt();
            } else {
                l[i * r + j] = s / l[j * r + j];
            }
        }
    }
    let n = c.cols();
    let mut t = c.clone();
    for col in 0..n {
        // L y = c
        for i in 0..r {
            let mut s = t.get(i, col);
            for p in 0..i {
                s -= l[i * r + p] * t.get(p, col);
            }
            t.set(i, col, s / l[i * r + i]);
        }
        // Lᵀ x = y
        for i in (0..r).rev() {
            let mut s = t.get(i, col);
            for p in i + 1..r {
                s -= l[p * r + i] * t.get(p, col);
            }
            t.set(i, col, s / l[i * r + i]);
        }
    }
    Ok(t)
}

pub const POWER_ITERS: usize = 200;
pub const POWER_TOL: f64 = 1e-10;

/// Largest singular value by power iteration on `mᵀm`, started from the
/// normalised all-ones vector.
pub fn spectral_norm(m: &Matrix, max_iters: usize, tol: f64) -> f64 {
    let n = m.cols();
    if n == 0 || m.rows() == 0 {
        return 0.0;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut mv = vec![0.0; m.rows()];
    let mut lambda = 0.0_f64;
    for _ in 0..max_iters {
        for (i, o) in mv.iter_mut().enumerate() {
            *o = m.row(i).iter().zip(&v).map(|(a, b)| a * b).sum();
        }
        let mut w = vec![0.0; n];
        for (i, &s) in mv.iter().enumerate() {
            for (wj, a) in w.iter_mut().zip(m.row(i)) {
                *wj += a * s;
            }
        }
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next = norm;
        w.iter_mut().for_each(|x| *x /= norm);
        v = w;
        let done = (next - lambda).abs() <= tol * next.max(1e-300);
        lambda = next;
        if done {
            break;
        }
    }
    lambda.sqrt()
}

pub fn spectral_norm_default(m: &Matrix) -> f64 {
    spectral_norm(m, POWER_ITERS, POWER_TOL)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

/// Shannon entropy in nats; zero-probability terms contribute nothing.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

/// Seeded ChaCha8 stream. The same seed gives the same draws everywhere.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` under the same seed.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.inner.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int_in(&mut self, lo: i64, hi: i64) -> i64 {
        self.inner.gen_range(lo..=hi)
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for p in 0..a.cols() {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(Matrix::identity(2).matmul(&a).unwrap(), a);
        let r = a.matmul(&m(&[&[1.0], &[1.0]])).unwrap();
        assert_eq!(r.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = SeededRng::new(11);
        // Covers both the streaming kernels (a small dimension) and packed gemm.
        for (m_, k, n) in [(5, 4, 3), (20, 30, 2), (20, 2, 30), (17, 19, 23), (1, 40, 9), (40, 9, 1)] {
            let a = Matrix::random_normal(m_, k, 1.0, &mut rng);
            let b = Matrix::random_normal(k, n, 1.0, &mut rng);
            let want = naive_matmul(&a, &b);
            assert!(a.matmul(&b).unwrap().max_abs_diff(&want) < 1e-12);
            assert!(a.matmul_t(&b.transpose()).unwrap().max_abs_diff(&want) < 1e-12);
            assert!(a.transpose().t_matmul(&b).unwrap().max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn matmul_shape_error() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(a.matmul(&a), Err(VpsError::Shape { .. })));
    }

    #[test]
    fn new_rejects_bad_input() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Matrix::new(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn frobenius_cases() {
        assert_eq!(frobenius_norm_sq(&Matrix::zeros(3, 2)), 0.0);
        assert_eq!(frobenius_norm_sq(&m(&[&[1.0, 1.0], &[1.0, 1.0]])), 4.0);
        let mut rng = SeededRng::new(3);
        let x = Matrix::random_normal(3, 3, 1.0, &mut rng);
        let mut oracle = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                oracle += x.get(i, j) * x.get(i, j);
            }
        }
        assert!((frobenius_norm_sq(&x) - oracle).abs() < 1e-12);
    }

    #[test]
    fn top_k_examples() {
        assert_eq!(top_k_indices(&[1.0, 0.0, 3.0], 2).unwrap().as_slice(), &[2, 0]);
        assert_eq!(top_k_indices(&[1.0, 1.0, 0.0], 2).unwrap().as_slice(), &[0, 1]);
        assert_eq!(top_k_indices(&[5.0], 1).unwrap().as_slice(), &[0]);
        assert!(top_k_indices(&[1.0, 2.0], 0).is_err());
        assert!(top_k_indices(&[1.0, 2.0], 3).is_err());
    }

    #[test]
    fn top_k_matches_full_sort() {
        let mut rng = SeededRng::new(5);
        for _ in 0..50 {
            let n = 1 + rng.index(40);
            // Coarse values so ties are common.
            let scores: Vec<f64> = (0..n).map(|_| rng.int_in(0, 5) as f64).collect();
            let k = 1 + rng.index(n);
            let mut all: Vec<usize> = (0..n).collect();
            all.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            all.truncate(k);
            assert_eq!(top_k_indices(&scores, k).unwrap().as_slice(), &all[..]);
        }
    }

    #[test]
    fn index_list_validation() {
        assert!(IndexList::new(vec![0, 2], 3).is_ok());
        assert!(IndexList::new(vec![0, 0], 3).is_err());
        assert!(IndexList::new(vec![3], 3).is_err());
    }

    #[test]
    fn ridge_scalar_cases() {
        let g = m(&[&[2.0]]);
        let c = m(&[&[4.0]]);
        assert!((ridge_solve(&g, &c, 0.0).unwrap().get(0, 0) - 2.0).abs() < 1e-12);
        assert!((ridge_solve(&g, &c, 2.0).unwrap().get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ridge_residual_on_random_spd() {
        let mut rng = SeededRng::new(17);
        for r in 1..=8 {
            let x = Matrix::random_normal(r + 3, r, 1.0, &mut rng);
            let g = x.t_matmul(&x).unwrap();
            let c = Matrix::random_normal(r, r, 1.0, &mut rng);
            let alpha = rng.uniform() * 0.1;
            let t = ridge_solve(&g, &c, alpha).unwrap();
            let lhs = g.add(&Matrix::identity(r).scale(alpha)).unwrap().matmul(&t).unwrap();
            let res = lhs.sub(&c).unwrap().frobenius_norm_sq().sqrt();
            assert!(res / (c.frobenius_norm_sq().sqrt() + 1e-30) < 1e-8, "r={r} res={res}");
        }
    }

    #[test]
    fn ridge_singular_without_alpha() {
        let g = m(&[&[1.0, 1.0], &[1.0, 1.0]]);
        let err = ridge_solve(&g, &Matrix::identity(2), 0.0).unwrap_err();
        assert!(matches!(err, VpsError::Solve(_)));
        assert!(ridge_solve(&g, &Matrix::identity(2), 1e-3).is_ok());
    }

    #[test]
    fn spectral_norm_cases() {
        assert!((spectral_norm_default(&Matrix::identity(3)) - 1.0).abs() < 1e-12);
        let d = m(&[&[3.0, 0.0], &[0.0, 1.0]]);
        assert!((spectral_norm_default(&d) - 3.0).abs() < 1e-9);
        let u = [1.0, -2.0, 0.5];
        let v = [3.0, 1.0];
        let uv = Matrix::from_fn(3, 2, |i, j| u[i] * v[j]);
        let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((spectral_norm_default(&uv) - nu * nv).abs() < 1e-8);
        assert_eq!(spectral_norm_default(&Matrix::zeros(2, 2)), 0.0);
    }

    #[test]
    fn softmax_cases() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        let p = softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1] >= 0.0 && p[1] < 1e-300);
        let p = softmax(&[0.3, -1.2, 4.0, 2.2, -7.5]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_cases() {
        assert_eq!(entropy(&[0.0, 1.0, 0.0]), 0.0);
        let u = vec![1.0 / 64.0; 64];
        assert!((entropy(&u) - 64f64.ln()).abs() < 1e-12);
        assert!((64f64.ln() - 4.15888).abs() < 1e-5);
        for v in [2usize, 3, 7, 100, 1000] {
            let u = vec![1.0 / v as f64; v];
            assert!((entropy(&u) - (v as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn rng_is_reproducible() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_eq!(xs, ys);
        let mut c = SeededRng::with_stream(42, 1);
        assert_ne!(xs[0], c.next_u64());
    }
}
