//! Tests that ignore microstructure noise.
//!
//! `naive_t_n` is the realised-variance bridge statistic for homoscedasticity;
//! `analyze_noisefree` builds the linear test process from raw squared
//! increments. Both are correct without noise and break down with it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gof_linear::{basis_rows, HypothesisSpec, LinearFit};
use crate::kernel::kolmogorov_quantile;
use crate::projection::{residual_process, standardized_functional, Design, Functional, ProcessKind, ProcessOnGrid};
use crate::report::{Decision, Method, ReportMetadata, TestReport};
use crate::simulate::ObservationSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveStatistics {
    pub t_n: f64,
    pub realized_var: f64,
    /// `S_i - (i/n) S_n` with `S_i = sum_{k <= i} |Delta_k Z|^2`.
    pub partial_process: ProcessOnGrid,
}

/// `T_n = sqrt(n) sup_i |S_i - (i/n) S_n| / (sqrt(2) S_n)`.
pub fn naive_t_n(series: &ObservationSeries) -> Result<NaiveStatistics> {
    let n = series.n;
    let sq: Vec<f64> = series.increments().map(|d| d * d).collect();
    let total: f64 = sq.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateInput("realised variance is zero".into()));
    }
    let mut value = Vec::with_capacity(n + 1);
    value.push(0.0);
    let mut acc = 0.0;
    for (i, s) in sq.iter().enumerate() {
        acc += s;
        value.push(acc - (i + 1) as f64 / n as f64 * total);
    }
    value[n] = 0.0;
    let sup = value.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(NaiveStatistics {
        t_n: (n as f64).sqrt() * sup / (std::f64::consts::SQRT_2 * total),
        realized_var: total,
        partial_process: ProcessOnGrid { kind: ProcessKind::Nhat, value },
    })
}

/// Reject iff `T_n` exceeds the Kolmogorov `(1 - alpha)`-quantile.
pub fn naive_decision(stats: &NaiveStatistics, alpha: f64) -> Result<TestReport> {
    let crit = kolmogorov_quantile(alpha)?;
    Ok(TestReport {
        statistic: stats.t_n,
        functional: Functional::Ks,
        alpha,
        decision: Decision::from_reject(stats.t_n > crit),
        critical_value: crit,
        p_value: Some(1.0 - crate::kernel::kolmogorov_cdf(stats.t_n)),
        method: Method::Naive,
        metadata: ReportMetadata {
            pipeline: "naive".into(),
            hypothesis: "{one}".into(),
            n: stats.partial_process.n(),
            ..Default::default()
        },
        bootstrap_sample: None,
    })
}

/// Linear test built from `n |Delta_k Z|^2`, `k = 1..=n`.
#[derive(Debug, Clone)]
pub struct NoiseFreeAnalysis {
    pub n: usize,
    pub fit: LinearFit,
    pub n_tilde: ProcessOnGrid,
    pub s2: ProcessOnGrid,
}

impl NoiseFreeAnalysis {
    /// Rate `sqrt(n)`, range `t >= 1/n`.
    pub fn statistic(&self, functional: Functional) -> Result<f64> {
        standardized_functional(&self.n_tilde.value, &self.s2.value, (self.n as f64).sqrt(), 1, functional)
    }
}

pub fn analyze_noisefree(series: &ObservationSeries, hyp: &HypothesisSpec) -> Result<NoiseFreeAnalysis> {
    let n = series.n;
    let nf = n as f64;
    let z = &series.z;
    let proxy: Vec<f64> = series.increments().map(|d| nf * d * d).collect();
    let design = Design::new(n, 0, hyp.dim(), basis_rows(&hyp.basis, n, z, n, 0))?;
    let lagged = basis_rows(&hyp.basis, n, z, n, 1);
    let (theta, c) = design.fit(&proxy, Some(&lagged));
    let process = residual_process(n, 0, &proxy, &design.fitted(&theta));
    let gamma: Vec<f64> = proxy.iter().map(|y| 2.0 * y * y / (3.0 * nf)).collect();
    let s2 = design.variance(&gamma, &lagged);
    Ok(NoiseFreeAnalysis {
        n,
        fit: LinearFit {
            d_hat: design.gram.row_iter().map(|r| r.iter().cloned().collect()).collect(),
            c_hat: c.iter().cloned().collect(),
            theta_hat: theta.iter().cloned().collect(),
            cond_d: design.cond,
        },
        n_tilde: ProcessOnGrid { kind: ProcessKind::Nhat, value: process },
        s2: ProcessOnGrid { kind: ProcessKind::S2, value: s2 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::func::Func;

    #[test]
    fn constant_series_is_degenerate() {
        let s = ObservationSeries::new(vec![1.0; 10]).unwrap();
        assert!(matches!(naive_t_n(&s), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn decisions_against_quantiles() {
        let stats = |t| NaiveStatistics {
            t_n: t,
            realized_var: 1.0,
            partial_process: ProcessOnGrid { kind: ProcessKind::Nhat, value: vec![0.0; 3] },
        };
        assert_eq!(naive_decision(&stats(0.0), 0.5).unwrap().decision, Decision::Accept);
        assert_eq!(naive_decision(&stats(1.40), 0.05).unwrap().decision, Decision::Reject);
        assert_eq!(naive_decision(&stats(1.40), 0.025).unwrap().decision, Decision::Accept);
    }

    #[test]
    fn bridge_is_pinned_and_affine_invariant() {
        let z: Vec<f64> = (0..=64).map(|i| ((i * 37) % 11) as f64 * 0.1 + (i as f64 * 0.3).sin()).collect();
        let s = ObservationSeries::new(z.clone()).unwrap();
        let a = naive_t_n(&s).unwrap();
        assert_eq!(a.partial_process.value[0], 0.0);
        assert_eq!(a.partial_process.value[64], 0.0);
        let b = naive_t_n(&s.map(|v| -2.5 * v + 7.0)).unwrap();
        assert!((a.t_n - b.t_n).abs() < 1e-12);
        let peak = a.partial_process.sup_abs() * 8.0 / (std::f64::consts::SQRT_2 * a.realized_var);
        assert!((a.t_n - peak).abs() < 1e-15);
    }

    #[test]
    fn noisefree_unit_basis_matches_bridge() {
        // with basis {1}, theta is the realised variance and N is the naive bridge / n
        let z: Vec<f64> = (0..=50).map(|i| (i as f64 * 0.7).cos()).collect();
        let s = ObservationSeries::new(z).unwrap();
        let h = HypothesisSpec::new(vec![Func::constant(1.0)]).unwrap();
        let a = analyze_noisefree(&s, &h).unwrap();
        let naive = naive_t_n(&s).unwrap();
        assert!((a.fit.theta_hat[0] - naive.realized_var).abs() < 1e-12);
        for (u, v) in a.n_tilde.value.iter().zip(&naive.partial_process.value) {
            assert!((u - v).abs() < 1e-12);
        }
        assert_eq!(a.s2.value[0], 0.0);
    }
}
