//! Test of a linear hypothesis `sigma^2(t, x) = sum_i theta_i sigma_i^2(t, x)`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::Func;
use crate::kernel::{ActiveConstants, KernelSetup, TuningPlan};
use crate::preavg::{spot_estimates, PreaveragedSeries, SpotEstimates};
use crate::projection::{
    residual_process, standardized_functional as functional_of, Design, Functional, ProcessKind, ProcessOnGrid,
};
use crate::simulate::ObservationSeries;

/// Ordered list of basis functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    pub basis: Vec<Func>,
}

impl HypothesisSpec {
    pub fn new(basis: Vec<Func>) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::InvalidSpec("hypothesis needs at least one basis function".into()));
        }
        Ok(HypothesisSpec { basis })
    }

    pub fn parse(descriptors: &[&str]) -> Result<Self> {
        Self::new(descriptors.iter().map(|s| s.parse()).collect::<Result<_>>()?)
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `{f1, f2, ...}`.
    pub fn descriptor(&self) -> String {
        let parts: Vec<String> = self.basis.iter().map(|f| f.to_string()).collect();
        format!("{{{}}}", parts.join(", "))
    }

    /// `sum_i theta_i sigma_i^2` as a single function.
    pub fn combine(&self, theta: &[f64]) -> Func {
        self.basis.iter().zip(theta).fold(Func::zero(), |acc, (f, &c)| acc.add(&f.scale(c)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub d_hat: Vec<Vec<f64>>,
    pub c_hat: Vec<f64>,
    pub theta_hat: Vec<f64>,
    pub cond_d: f64,
}

/// Basis rows for `k = 1..=len`, evaluated at `((k - lag)/n, xhat[k - lag])`.
pub(crate) fn basis_rows(basis: &[Func], n: usize, xhat: &[f64], len: usize, lag: usize) -> Vec<f64> {
    let inv_n = 1.0 / n as f64;
    let mut rows = Vec::with_capacity(len * basis.len());
    for k in 1..=len {
        let j = k - lag;
        let (t, x) = (j as f64 * inv_n, xhat[j]);
        rows.extend(basis.iter().map(|f| f.eval(t, x)));
    }
    rows
}

/// Projection of a proxy indexed `k = 0..=n - offset` (entry 0 unused) onto a basis.
#[derive(Debug, Clone)]
pub struct Projection {
    pub design: Design,
    pub fit: LinearFit,
    pub process: Vec<f64>,
}

pub fn project_proxy(n: usize, offset: usize, basis: &[Func], proxy: &[f64], xhat: &[f64]) -> Result<Projection> {
    if offset >= n || proxy.len() != n - offset + 1 || xhat.len() != proxy.len() {
        return Err(Error::InvalidSpec("proxy length does not match the window".into()));
    }
    let len = n - offset;
    let design = Design::new(n, offset, basis.len(), basis_rows(basis, n, xhat, len, 0))?;
    let y = &proxy[1..];
    let (theta, c) = design.fit(y, None);
    let process = residual_process(n, offset, y, &design.fitted(&theta));
    let fit = LinearFit {
        d_hat: design.gram.row_iter().map(|r| r.iter().cloned().collect()).collect(),
        c_hat: c.iter().cloned().collect(),
        theta_hat: theta.iter().cloned().collect(),
        cond_d: design.cond,
    };
    Ok(Projection { design, fit, process })
}

impl Projection {
    /// Conditional variance on the grid with local weights `gamma[k]`, `k = 0..=n - offset`.
    pub fn variance(&self, basis: &[Func], xhat: &[f64], gamma: &[f64]) -> Vec<f64> {
        let len = self.design.len();
        let lagged = basis_rows(basis, self.design.n, xhat, len, 1);
        self.design.variance(&gamma[1..], &lagged)
    }

    pub fn theta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.fit.theta_hat)
    }
}

/// Local estimator of the asymptotic variance density; `sum_k Gamma_k` targets `int gamma^2`.
pub fn gamma_local(pre: &PreaveragedSeries, omega2_hat: f64, consts: &ActiveConstants) -> Vec<f64> {
    let nf = pre.n as f64;
    let kappa = pre.m_n as f64 / nf.sqrt();
    let ActiveConstants { psi1, psi2, phi11, phi12, phi22, .. } = *consts;
    let (p2, p3, p4) = (psi2 * psi2, psi2.powi(3), psi2.powi(4));
    let a = 4.0 * phi22 / (3.0 * kappa * p4);
    let b = 8.0 / (kappa * kappa * nf.sqrt()) * (phi12 / p3 - phi22 * psi1 / p4) * omega2_hat;
    let c = 4.0 / (kappa.powi(3) * nf)
        * (phi11 / p2 - 2.0 * phi12 * psi1 / p3 + phi22 * psi1 * psi1 / p4)
        * omega2_hat
        * omega2_hat;
    pre.zbar
        .iter()
        .map(|z| {
            let z2 = z * z;
            a * z2 * z2 + b * z2 + c
        })
        .collect()
}

/// Everything computed for one series under a linear hypothesis.
#[derive(Debug, Clone)]
pub struct LinearAnalysis {
    pub plan: TuningPlan,
    pub spot: SpotEstimates,
    pub gamma: Vec<f64>,
    pub projection: Projection,
    pub n_hat: ProcessOnGrid,
    pub s2: ProcessOnGrid,
}

impl LinearAnalysis {
    pub fn fit(&self) -> &LinearFit {
        &self.projection.fit
    }

    pub fn statistic(&self, functional: Functional) -> Result<f64> {
        standardized_functional(&self.n_hat, &self.s2, &self.plan, functional)
    }

    /// `n^{1/4} sup |N_t| / sqrt(sum_k Gamma_k)` over `t >= (m+1)/n`.
    ///
    /// Under the constant-volatility null the limit of `n^{1/4} N_t` is `c B_t`
    /// with `c^2 = int gamma^2`, so dividing by the scalar `c` rather than the
    /// pointwise `s_t` gives the sup of a standard Brownian bridge.
    pub fn bridge_statistic(&self) -> Result<f64> {
        let total: f64 = self.gamma.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateVariance);
        }
        let n = self.plan.n;
        let start = (self.plan.m_n + 1).min(n);
        let sup = self.n_hat.value[start..].iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Ok((n as f64).powf(0.25) * sup / total.sqrt())
    }
}

pub fn analyze_linear(series: &ObservationSeries, hyp: &HypothesisSpec, setup: &KernelSetup) -> Result<LinearAnalysis> {
    let (pre, spot) = spot_estimates(series, setup)?;
    let n = series.n;
    let projection = project_proxy(n, pre.m_n, &hyp.basis, &spot.sigma2_hat, &spot.xhat)?;
    let gamma = gamma_local(&pre, spot.omega2_hat, &setup.active_m());
    let s2 = projection.variance(&hyp.basis, &spot.xhat, &gamma);
    let n_hat = ProcessOnGrid { kind: ProcessKind::Nhat, value: projection.process.clone() };
    Ok(LinearAnalysis {
        plan: setup.plan,
        spot,
        gamma,
        projection,
        n_hat,
        s2: ProcessOnGrid { kind: ProcessKind::S2, value: s2 },
    })
}

pub fn fit_linear(series: &ObservationSeries, hyp: &HypothesisSpec, setup: &KernelSetup) -> Result<LinearFit> {
    let (pre, spot) = spot_estimates(series, setup)?;
    Ok(project_proxy(series.n, pre.m_n, &hyp.basis, &spot.sigma2_hat, &spot.xhat)?.fit)
}

pub fn test_process_n(series: &ObservationSeries, hyp: &HypothesisSpec, setup: &KernelSetup) -> Result<ProcessOnGrid> {
    Ok(analyze_linear(series, hyp, setup)?.n_hat)
}

pub fn variance_process_s2(
    series: &ObservationSeries,
    hyp: &HypothesisSpec,
    setup: &KernelSetup,
) -> Result<ProcessOnGrid> {
    Ok(analyze_linear(series, hyp, setup)?.s2)
}

/// KS or CvM functional of `n^(1/4) N / s` over `t >= (m_n + 1)/n`.
pub fn standardized_functional(
    n_hat: &ProcessOnGrid,
    s2: &ProcessOnGrid,
    plan: &TuningPlan,
    functional: Functional,
) -> Result<f64> {
    let rate = (plan.n as f64).powf(0.25);
    functional_of(&n_hat.value, &s2.value, rate, plan.m_n + 1, functional)
}
