//! Least-squares projection of a local volatility proxy onto a function basis,
//! the resulting empirical test process and its conditional-variance estimate.
//!
//! All three tests share this machinery. A proxy `y_k` (e.g. the corrected
//! spot variance) is available for `k = 1..=K` with `K = n - offset`; the basis
//! is evaluated at the same points. At grid time `t = i/n` partial sums run
//! over `k = 1..=i - offset` and are empty when `i <= offset`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest accepted condition estimate of a design matrix.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Nhat,
    Mhat,
    S2,
    R2,
    Standardized,
}

/// Values of a process on the grid `t = i/n`, `i = 0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessOnGrid {
    pub kind: ProcessKind,
    pub value: Vec<f64>,
}

impl ProcessOnGrid {
    pub fn n(&self) -> usize {
        self.value.len() - 1
    }

    pub fn at_time(&self, t: f64) -> f64 {
        let n = self.n();
        let i = ((n as f64 * t).floor() as usize).min(n);
        self.value[i]
    }

    pub fn sup_abs(&self) -> f64 {
        self.value.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    Ks,
    Cvm,
}

/// Symmetric positive definite solve with an eigenvalue-based condition estimate.
pub fn checked_inverse(matrix: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("design matrix is not finite".into()));
    }
    let eig = SymmetricEigen::new(matrix.clone());
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(cond <= MAX_CONDITION) {
        return Err(Error::NearSingular { cond });
    }
    let chol = matrix.clone().cholesky().ok_or(Error::NearSingular { cond })?;
    Ok((chol.inverse(), cond))
}

/// Basis evaluations and the quantities that depend only on them.
#[derive(Debug, Clone)]
pub struct Design {
    pub n: usize,
    pub offset: usize,
    pub dim: usize,
    /// Row `k - 1` holds `h(k/n, xhat_k)`.
    rows: Vec<f64>,
    pub gram: DMatrix<f64>,
    pub gram_inv: DMatrix<f64>,
    pub cond: f64,
    /// Prefix sums `(1/n) sum_{k <= j} h_k`, `j = 0..=K`.
    prefix: Vec<f64>,
}

impl Design {
    /// `rows` is `K x dim`, row-major.
    pub fn new(n: usize, offset: usize, dim: usize, rows: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSpec("basis must contain at least one function".into()));
        }
        if offset >= n || rows.len() != (n - offset) * dim {
            return Err(Error::InvalidSpec("design dimensions do not match the grid".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("basis is not finite on the observed range".into()));
        }
        let k_len = n - offset;
        let inv_n = 1.0 / n as f64;
        let mut gram = DMatrix::zeros(dim, dim);
        let mut prefix = vec![0.0; (k_len + 1) * dim];
        for k in 0..k_len {
            let h = &rows[k * dim..(k + 1) * dim];
            for a in 0..dim {
                prefix[(k + 1) * dim + a] = prefix[k * dim + a] + h[a] * inv_n;
                for b in a..dim {
                    gram[(a, b)] += h[a] * h[b];
                }
            }
        }
        for a in 0..dim {
            for b in a..dim {
                gram[(a, b)] *= inv_n;
                gram[(b, a)] = gram[(a, b)];
            }
        }
        let (gram_inv, cond) = checked_inverse(&gram)?;
        Ok(Design { n, offset, dim, rows, gram, gram_inv, cond, prefix })
    }

    pub fn len(&self) -> usize {
        self.n - self.offset
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[(k - 1) * self.dim..k * self.dim]
    }

    fn upper(&self, i: usize) -> usize {
        i.saturating_sub(self.offset).min(self.len())
    }

    /// `Bhat_t` at grid index `i`.
    pub fn b_at(&self, i: usize) -> DVector<f64> {
        let j = self.upper(i);
        DVector::from_column_slice(&self.prefix[j * self.dim..(j + 1) * self.dim])
    }

    /// `Chat = (1/n) sum_k h_k y_k` (or with `h_c` in place of `h`) and `theta = D^-1 C`.
    pub fn fit(&self, proxy: &[f64], h_c: Option<&[f64]>) -> (DVector<f64>, DVector<f64>) {
        let rows = h_c.unwrap_or(&self.rows);
        let mut c = DVector::zeros(self.dim);
        for (k, y) in proxy.iter().enumerate() {
            for a in 0..self.dim {
                c[a] += rows[k * self.dim + a] * y;
            }
        }
        c /= self.n as f64;
        let theta = &self.gram_inv * &c;
        (theta, c)
    }

    /// `h_k^T theta` for `k = 1..=K`.
    pub fn fitted(&self, theta: &DVector<f64>) -> Vec<f64> {
        (1..=self.len()).map(|k| self.row(k).iter().zip(theta.iter()).map(|(h, t)| h * t).sum()).collect()
    }

    /// `shat^2_t = g0(t) - 2 B^T D^-1 g(t) + B^T D^-1 G D^-1 B`, floored at zero.
    ///
    /// `weights[k-1] = Gamma_k`, `h_lag` holds the basis at `((k-1)/n, xhat_{k-1})`.
    pub fn variance(&self, weights: &[f64], h_lag: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let k_len = self.len();
        let mut g0 = vec![0.0; k_len + 1];
        let mut gv = vec![0.0; (k_len + 1) * d];
        let mut big = DMatrix::<f64>::zeros(d, d);
        for k in 0..k_len {
            let w = weights[k];
            let h = &h_lag[k * d..(k + 1) * d];
            g0[k + 1] = g0[k] + w;
            for a in 0..d {
                gv[(k + 1) * d + a] = gv[k * d + a] + w * h[a];
                for b in 0..d {
                    big[(a, b)] += w * h[a] * h[b];
                }
            }
        }
        (0..=self.n)
            .map(|i| {
                let j = self.upper(i);
                let a = &self.gram_inv * self.b_at(i);
                let g = DVector::from_column_slice(&gv[j * d..(j + 1) * d]);
                let quad = (a.transpose() * &big * &a)[(0, 0)];
                (g0[j] - 2.0 * a.dot(&g) + quad).max(0.0)
            })
            .collect()
    }
}

/// `(1/n) sum_{k=1}^{i - offset} (y_k - fitted_k)` on the grid.
pub fn residual_process(n: usize, offset: usize, proxy: &[f64], fitted: &[f64]) -> Vec<f64> {
    let inv_n = 1.0 / n as f64;
    let mut out = vec![0.0; n + 1];
    let mut acc = 0.0;
    for (k, (y, f)) in proxy.iter().zip(fitted).enumerate() {
        acc += (y - f) * inv_n;
        out[offset + k + 1] = acc;
    }
    out
}

/// Kolmogorov–Smirnov or Cramér–von Mises functional of `rate * process / s`
/// over grid indices `start..=n`, where `s = max sqrt(s2)` on that range.
/// CvM is the Riemann sum `(1/n) sum`.
///
/// The scale is a single number: `s_t` vanishes at both ends of a bridge-like
/// process, and a pointwise ratio is dominated by those few-term endpoints.
pub fn standardized_functional(
    process: &[f64],
    s2: &[f64],
    rate: f64,
    start: usize,
    functional: Functional,
) -> Result<f64> {
    if process.len() != s2.len() || process.is_empty() {
        return Err(Error::InvalidSpec("process and variance grids differ".into()));
    }
    let n = process.len() - 1;
    if start > n {
        return Err(Error::DegenerateVariance);
    }
    let smax = s2[start..].iter().fold(0.0f64, |a, v| a.max(v.max(0.0).sqrt()));
    if !(smax > 0.0) || !smax.is_finite() {
        return Err(Error::DegenerateVariance);
    }
    let values = process[start..].iter().map(|p| rate * p.abs() / smax);
    Ok(match functional {
        Functional::Ks => values.fold(0.0, f64::max),
        Functional::Cvm => values.map(|v| v * v).sum::<f64>() / n as f64,
    })
}
