//! Test of a linear hypothesis on the volatility level,
//! `sigma(t, x) = sum_i thetabar_i sigmabar_i(t, x)`, using the longer `l_n` window.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::gof_linear::{project_proxy, HypothesisSpec, LinearFit, Projection};
use crate::kernel::{KernelSetup, TuningPlan};
use crate::preavg::{check_plan, local_price_hat, preaverage, spot_sigma_bar, PreaveragedSeries};
use crate::projection::{standardized_functional as functional_of, Functional, ProcessKind, ProcessOnGrid};
use crate::simulate::ObservationSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsLinearFit {
    pub q_hat: Vec<Vec<f64>>,
    pub s_hat: Vec<f64>,
    pub thetabar_hat: Vec<f64>,
    pub cond_q: f64,
}

impl From<LinearFit> for AbsLinearFit {
    fn from(f: LinearFit) -> Self {
        AbsLinearFit { q_hat: f.d_hat, s_hat: f.c_hat, thetabar_hat: f.theta_hat, cond_q: f.cond_d }
    }
}

/// `Gammabar_k = n^-(1/2 + delta) 2 Xi / (psi2 mu1^2) |zbar_k|^2` on the `l_n` window.
pub fn gamma_bar_local(pre_l: &PreaveragedSeries, xi: f64, psi2: f64, mu1: f64, delta: f64) -> Vec<f64> {
    let nf = pre_l.n as f64;
    let c = nf.powf(-(0.5 + delta)) * 2.0 * xi / (psi2 * mu1 * mu1);
    pre_l.zbar.iter().map(|z| c * z * z).collect()
}

#[derive(Debug, Clone)]
pub struct AbsAnalysis {
    pub plan: TuningPlan,
    pub sigma_bar: Vec<f64>,
    pub xhat: Vec<f64>,
    pub gamma: Vec<f64>,
    pub projection: Projection,
    pub m_hat: ProcessOnGrid,
    pub r2: ProcessOnGrid,
}

impl AbsAnalysis {
    pub fn fit(&self) -> AbsLinearFit {
        self.projection.fit.clone().into()
    }

    pub fn statistic(&self, functional: Functional) -> Result<f64> {
        standardized_functional_abs(&self.m_hat, &self.r2, &self.plan, functional)
    }
}

pub fn analyze_abs(series: &ObservationSeries, hyp: &HypothesisSpec, setup: &KernelSetup) -> Result<AbsAnalysis> {
    check_plan(series, setup)?;
    let plan = setup.plan;
    let pre = preaverage(series, setup.table_l())?;
    let consts = setup.active_l();
    let sigma_bar = spot_sigma_bar(&pre, &consts, plan.delta);
    let xhat = local_price_hat(series, plan.l_n)?;
    let projection = project_proxy(series.n, plan.l_n, &hyp.basis, &sigma_bar, &xhat)?;
    let gamma = gamma_bar_local(&pre, consts.xi, consts.psi2, consts.mu1, plan.delta);
    let r2 = projection.variance(&hyp.basis, &xhat, &gamma);
    let m_hat = ProcessOnGrid { kind: ProcessKind::Mhat, value: projection.process.clone() };
    Ok(AbsAnalysis {
        plan,
        sigma_bar,
        xhat,
        gamma,
        projection,
        m_hat,
        r2: ProcessOnGrid { kind: ProcessKind::R2, value: r2 },
    })
}

pub fn fit_abs_linear(series: &ObservationSeries, hyp: &HypothesisSpec, setup: &KernelSetup) -> Result<AbsLinearFit> {
    Ok(analyze_abs(series, hyp, setup)?.fit())
}

pub fn test_process_m(series: &ObservationSeries, hyp: &HypothesisSpec, setup: &KernelSetup) -> Result<ProcessOnGrid> {
    Ok(analyze_abs(series, hyp, setup)?.m_hat)
}

pub fn variance_process_r2(
    series: &ObservationSeries,
    hyp: &HypothesisSpec,
    setup: &KernelSetup,
) -> Result<ProcessOnGrid> {
    Ok(analyze_abs(series, hyp, setup)?.r2)
}

/// Rate `n^(1/4 - delta/2)`, range `t >= (l_n + 1)/n`.
pub fn abs_rate(plan: &TuningPlan) -> f64 {
    (plan.n as f64).powf(0.25 - 0.5 * plan.delta)
}

pub fn standardized_functional_abs(
    m_hat: &ProcessOnGrid,
    r2: &ProcessOnGrid,
    plan: &TuningPlan,
    functional: Functional,
) -> Result<f64> {
    functional_of(&m_hat.value, &r2.value, abs_rate(plan), plan.l_n + 1, functional)
}
