//! Small numerical helpers shared by the filters and UPMs.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `log(sum(exp(x)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// `log(sum_i exp(a_i + b_i))` without a temporary buffer.
pub fn log_sum_exp_sum(a: &[f64], b: &[f64]) -> f64 {
    let max = a
        .iter()
        .zip(b)
        .map(|(x, y)| x + y)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + a
        .iter()
        .zip(b)
        .map(|(x, y)| (x + y - max).exp())
        .sum::<f64>()
        .ln()
}

/// `log(exp(a) + exp(b))`.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Natural log that maps 0 to `-inf` without warnings.
#[inline]
pub fn ln_or_neg_inf(p: f64) -> f64 {
    if p > 0.0 {
        p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Shannon entropy (nats) of a probability vector.
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

pub fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect()
}

pub fn to_matrix(rows: &[Vec<f64>]) -> Option<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return None;
    }
    Some(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Cholesky factor of a symmetric positive definite matrix together with
/// its log-determinant.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Option<Self> {
        if !m.is_square() || m.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let sym = (m + m.transpose()) * 0.5;
        let chol = Cholesky::new(sym)?;
        let l = chol.l_dirty();
        let log_det = 2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        Some(Self { chol, log_det })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// `x^T M^{-1} x`.
    pub fn mahalanobis(&self, x: &DVector<f64>) -> f64 {
        let l = self.chol.l_dirty();
        let n = l.nrows();
        // forward substitution L z = x
        let mut z = vec![0.0; n];
        for i in 0..n {
            let mut s = x[i];
            for (j, zj) in z.iter().enumerate().take(i) {
                s -= l[(i, j)] * zj;
            }
            z[i] = s / l[(i, i)];
        }
        z.iter().map(|v| v * v).sum()
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }
}

/// Add `scale * trace(m) / n` to the diagonal of `m`, growing the scale
/// until a Cholesky factor exists. Returns the factor, the regularized
/// matrix and the jitter that was finally used.
pub fn regularized_factor(m: &DMatrix<f64>, scale: f64) -> Option<(SpdFactor, DMatrix<f64>, f64)> {
    let n = m.nrows().max(1) as f64;
    let base = (m.trace() / n).abs().max(1e-12);
    let mut s = scale;
    for _ in 0..40 {
        let jitter = s * base;
        let reg = m + DMatrix::identity(m.nrows(), m.ncols()) * jitter;
        if let Some(f) = SpdFactor::new(&reg) {
            return Some((f, reg, jitter));
        }
        s *= 10.0;
    }
    None
}
