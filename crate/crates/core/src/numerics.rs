//! Small dense linear algebra and statistics kernels.
//!
//! Everything is 64-bit and row-major. The matrices involved are tiny (at
//! most a few hundred entries per side), so plain loops are used throughout.
//!
//! Randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`), a
//! counter-based stream cipher generator whose output is fully specified and
//! identical on every platform. A `(seed, stream)` pair selects an
//! independent sequence, which the trainer uses to derive per-epoch shuffles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Deterministic generator used across the crate.
pub type Prng = ChaCha8Rng;

/// Seed of the fixed start vector for power iteration.
const POWER_ITERATION_SEED: u64 = 0x5eed_0f_9ca;
const POWER_ITERATION_TOL: f64 = 1e-10;
const POWER_ITERATION_MAX: usize = 10_000;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
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

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Matrix::zeros(n, n);
        for (i, d) in diag.iter().enumerate() {
            m.data[i * n + i] = *d;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting bad lengths and non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "matrix entry ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Matrix::from_vec(rows.len(), cols, data)
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    /// `self · v`
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| {
                (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol)
            })
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).collect()
    }
}

impl AsRef<Matrix> for Matrix {
    fn as_ref(&self) -> &Matrix {
        self
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Standard matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch(format!(
            "cannot multiply {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            for (o, bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Cholesky factor `L` with `L·Lᵀ = S + εI`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdFactorization {
    lower: Matrix,
    regularization: f64,
}

impl SpdFactorization {
    pub fn dimension(&self) -> usize {
        self.lower.rows
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    /// The ε that was finally added to the diagonal.
    pub fn regularization(&self) -> f64 {
        self.regularization
    }
}

fn cholesky(s: &Matrix, eps: f64) -> Option<Matrix> {
    let n = s.rows;
    let max_diag = s.diag().iter().fold(0.0f64, |a, d| a.max(d.abs())) + eps;
    let floor = max_diag * 1e-14;
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = s.get(j, j) + eps;
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > floor) || !d.is_finite() {
            return None;
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..n {
            let mut v = s.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, v / ljj);
        }
    }
    Some(l)
}

/// Factors a symmetric PSD matrix, growing the diagonal regularization
/// tenfold per attempt until Cholesky succeeds.
///
/// When `base_regularization` is zero and the unregularized attempt fails,
/// the ladder starts from `1e-12` times the diagonal scale. The diagonal scale
/// is `mean(diag(S))`, or 1 when that mean is zero.
pub fn factor_spd(s: &Matrix, base_regularization: f64) -> Result<SpdFactorization> {
    if s.rows != s.cols {
        return Err(Error::DimensionMismatch(format!(
            "factor_spd needs a square matrix, got {}x{}",
            s.rows, s.cols
        )));
    }
    if !s.is_symmetric(1e-9) {
        return Err(Error::DimensionMismatch(
            "factor_spd needs a symmetric matrix".into(),
        ));
    }
    if s.data.iter().any(|v| !v.is_finite()) || !base_regularization.is_finite() {
        return Err(Error::NonFinite("factor_spd input".into()));
    }
    let n = s.rows;
    let mean_diag = if n == 0 {
        0.0
    } else {
        s.diag().iter().sum::<f64>() / n as f64
    };
    let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
    let limit = 1e-1 * scale;

    let mut eps = base_regularization.max(0.0);
    loop {
        if eps > limit {
            return Err(Error::CovarianceDegenerate {
                epsilon: eps,
                limit,
            });
        }
        if let Some(lower) = cholesky(s, eps) {
            return Ok(SpdFactorization {
                lower,
                regularization: eps,
            });
        }
        eps = if eps == 0.0 { 1e-12 * scale } else { eps * 10.0 };
    }
}

/// Solves `(S + εI) u = v` by forward then backward substitution.
pub fn solve_spd(f: &SpdFactorization, v: &[f64]) -> Result<Vec<f64>> {
    let n = f.dimension();
    if v.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "solve_spd: vector of length {} for dimension {n}",
            v.len()
        )));
    }
    let l = &f.lower;
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = v[i];
        for k in 0..i {
            acc -= l.get(i, k) * y[k];
        }
        y[i] = acc / l.get(i, i);
    }
    let mut u = vec![0.0; n];
    for i in (0..n).rev() {
        let mut acc = y[i];
        for k in i + 1..n {
            acc -= l.get(k, i) * u[k];
        }
        u[i] = acc / l.get(i, i);
    }
    Ok(u)
}

/// Column means and MLE covariance (denominator N) of the rows of `data`.
pub fn mean_and_covariance(data: &Matrix) -> (Vec<f64>, Matrix) {
    let (n, m) = data.shape();
    let mut mean = vec![0.0; m];
    for r in data.row_iter() {
        for (acc, x) in mean.iter_mut().zip(r) {
            *acc += x;
        }
    }
    let denom = n.max(1) as f64;
    mean.iter_mut().for_each(|v| *v /= denom);

    let mut cov = Matrix::zeros(m, m);
    let mut centered = vec![0.0; m];
    for r in data.row_iter() {
        for j in 0..m {
            centered[j] = r[j] - mean[j];
        }
        for i in 0..m {
            for j in 0..=i {
                cov.data[i * m + j] += centered[i] * centered[j];
            }
        }
    }
    for i in 0..m {
        for j in 0..=i {
            let v = cov.data[i * m + j] / denom;
            cov.data[i * m + j] = v;
            cov.data[j * m + i] = v;
        }
    }
    (mean, cov)
}

/// Leading principal axis of a point cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalComponent {
    /// Unit eigenvector of the covariance with the largest eigenvalue.
    pub direction: Vec<f64>,
    /// Leading eigenvalue over the covariance trace.
    pub explained_variance_ratio: f64,
    /// Mean of the data the component was fit on; projections are centered on it.
    pub mean: Vec<f64>,
}

impl PrincipalComponent {
    pub fn project(&self, x: &[f64]) -> f64 {
        self.direction
            .iter()
            .zip(x.iter().zip(&self.mean))
            .map(|(d, (x, mu))| d * (x - mu))
            .sum()
    }
}

/// Leading principal component by power iteration on the MLE covariance.
///
/// The iteration starts from a fixed seeded vector, so the result is
/// deterministic even when the leading eigenvalue is repeated (in which case
/// the direction is one arbitrary member of the eigenspace).
pub fn leading_pc(data: &Matrix) -> Result<PrincipalComponent> {
    let (n, m) = data.shape();
    if n < 2 || m < 1 {
        return Err(Error::DimensionMismatch(format!(
            "leading_pc needs at least 2 points of dimension >= 1, got {n}x{m}"
        )));
    }
    let (mean, cov) = mean_and_covariance(data);
    let trace: f64 = cov.diag().iter().sum();
    if !(trace > 0.0) {
        return Err(Error::NoVariance("data has zero covariance".into()));
    }

    let mut v = seeded_gaussian(POWER_ITERATION_SEED, m, 1.0);
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);
    for _ in 0..POWER_ITERATION_MAX {
        let mut w = cov.matvec(&v)?;
        let nw = norm2(&w);
        if nw == 0.0 {
            // start vector lies in the null space; restart along the largest diagonal
            let k = (0..m)
                .max_by(|&a, &b| cov.get(a, a).total_cmp(&cov.get(b, b)))
                .unwrap_or(0);
            v = vec![0.0; m];
            v[k] = 1.0;
            continue;
        }
        w.iter_mut().for_each(|x| *x /= nw);
        let delta = v
            .iter()
            .zip(&w)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        v = w;
        if delta <= POWER_ITERATION_TOL {
            break;
        }
    }

    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let cv = cov.matvec(&v)?;
    let lambda = dot(&v, &cv);
    Ok(PrincipalComponent {
        direction: v,
        explained_variance_ratio: (lambda / trace).clamp(0.0, 1.0),
        mean,
    })
}

pub fn prng(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

/// Generator for an independent stream under the same seed.
pub fn prng_stream(seed: u64, stream: u64) -> Prng {
    let mut rng = Prng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn gaussian_from(rng: &mut Prng, n: usize, stddev: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * stddev
        })
        .collect()
}

/// `n` draws from N(0, stddev²), deterministic in `seed`.
pub fn seeded_gaussian(seed: u64, n: usize, stddev: f64) -> Vec<f64> {
    gaussian_from(&mut prng(seed), n, stddev)
}
