//! Test of a nonlinear parametric family `sigma^2(t, x, theta)`.
//!
//! `theta` is fitted by least squares of the corrected spot variances against
//! the family, minimised over a box by multistart Nelder–Mead followed by a
//! projected BFGS refinement. The variance of the test process is the linear
//! one with the basis replaced by the gradient of the family at `theta_hat`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::Func;
use crate::gof_linear::gamma_local;
use crate::kernel::{KernelSetup, TuningPlan};
use crate::preavg::{spot_estimates, SpotEstimates};
use crate::projection::{residual_process, Design, Functional, ProcessKind, ProcessOnGrid};
use crate::simulate::ObservationSeries;

/// Relative step of central finite differences in `theta`.
const FD_STEP: f64 = 1e-5;
/// Hessian term above this fraction of the Gram term is flagged.
pub const HESSIAN_FLAG_RATIO: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilyKind {
    /// `sum_i theta_i f_i(t, x)`.
    Linear { basis: Vec<Func> },
    /// `theta_0 |x|^theta_1`.
    Power,
    /// `theta_0 exp(theta_1 x)`.
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearFamily {
    #[serde(flatten)]
    pub kind: FamilyKind,
    /// `[lower, upper]` per coordinate.
    pub theta_box: Vec<[f64; 2]>,
}

impl NonlinearFamily {
    pub fn linear(basis: Vec<Func>, theta_box: Vec<[f64; 2]>) -> Result<Self> {
        let f = NonlinearFamily { kind: FamilyKind::Linear { basis }, theta_box };
        f.validate()?;
        Ok(f)
    }

    pub fn power(theta_box: Vec<[f64; 2]>) -> Result<Self> {
        let f = NonlinearFamily { kind: FamilyKind::Power, theta_box };
        f.validate()?;
        Ok(f)
    }

    pub fn exponential(theta_box: Vec<[f64; 2]>) -> Result<Self> {
        let f = NonlinearFamily { kind: FamilyKind::Exponential, theta_box };
        f.validate()?;
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            FamilyKind::Linear { basis } => basis.len(),
            FamilyKind::Power | FamilyKind::Exponential => 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim() == 0 {
            return Err(Error::InvalidSpec("family has no parameters".into()));
        }
        if self.theta_box.len() != self.dim() {
            return Err(Error::InvalidSpec(format!(
                "parameter box has {} coordinates, family needs {}",
                self.theta_box.len(),
                self.dim()
            )));
        }
        for (i, [lo, hi]) in self.theta_box.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidSpec(format!("parameter box coordinate {i} is empty or unbounded")));
            }
        }
        Ok(())
    }

    pub fn descriptor(&self) -> String {
        match &self.kind {
            FamilyKind::Linear { basis } => {
                let parts: Vec<String> = basis.iter().map(|f| f.to_string()).collect();
                format!("linear{{{}}}", parts.join(", "))
            }
            FamilyKind::Power => "theta0*|x|^theta1".into(),
            FamilyKind::Exponential => "theta0*exp(theta1*x)".into(),
        }
    }

    #[inline]
    pub fn sigma2(&self, t: f64, x: f64, theta: &[f64]) -> f64 {
        match &self.kind {
            FamilyKind::Linear { basis } => basis.iter().zip(theta).map(|(f, c)| c * f.eval(t, x)).sum(),
            FamilyKind::Power => theta[0] * x.abs().powf(theta[1]),
            FamilyKind::Exponential => theta[0] * (theta[1] * x).exp(),
        }
    }

    /// Analytic gradient where the family provides one.
    pub fn grad_theta(&self, t: f64, x: f64, theta: &[f64]) -> Option<Vec<f64>> {
        Some(match &self.kind {
            FamilyKind::Linear { basis } => basis.iter().map(|f| f.eval(t, x)).collect(),
            FamilyKind::Power => {
                let ax = x.abs();
                let p = ax.powf(theta[1]);
                let log = if ax > 0.0 { ax.ln() } else { 0.0 };
                vec![p, theta[0] * p * log]
            }
            FamilyKind::Exponential => {
                let e = (theta[1] * x).exp();
                vec![e, theta[0] * x * e]
            }
        })
    }

    /// Analytic gradient, or central differences with relative step `1e-5`.
    pub fn gradient(&self, t: f64, x: f64, theta: &[f64]) -> Vec<f64> {
        self.grad_theta(t, x, theta).unwrap_or_else(|| self.fd_gradient(t, x, theta))
    }

    fn fd_gradient(&self, t: f64, x: f64, theta: &[f64]) -> Vec<f64> {
        let mut th = theta.to_vec();
        (0..theta.len())
            .map(|i| {
                let h = FD_STEP * theta[i].abs().max(1.0);
                th[i] = theta[i] + h;
                let up = self.sigma2(t, x, &th);
                th[i] = theta[i] - h;
                let down = self.sigma2(t, x, &th);
                th[i] = theta[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// Hessian in `theta` by central differences of the gradient.
    fn hessian(&self, t: f64, x: f64, theta: &[f64]) -> DMatrix<f64> {
        let d = theta.len();
        let mut hm = DMatrix::zeros(d, d);
        let mut th = theta.to_vec();
        for b in 0..d {
            let h = FD_STEP * theta[b].abs().max(1.0);
            th[b] = theta[b] + h;
            let up = self.gradient(t, x, &th);
            th[b] = theta[b] - h;
            let down = self.gradient(t, x, &th);
            th[b] = theta[b];
            for a in 0..d {
                hm[(a, b)] = (up[a] - down[a]) / (2.0 * h);
            }
        }
        (&hm + hm.transpose()) * 0.5
    }

    fn project(&self, theta: &mut [f64]) {
        for (v, [lo, hi]) in theta.iter_mut().zip(&self.theta_box) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub starts: usize,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { starts: 5, max_iter: 2000, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub starts: usize,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearFit {
    pub theta_hat: Vec<f64>,
    pub objective_value: f64,
    pub optimizer_trace: OptimizerTrace,
}

/// Least-squares criterion on precomputed spot estimates.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub family: &'a NonlinearFamily,
    pub n: usize,
    /// `sigma2_hat[k]` and `xhat[k]` for `k = 0..=n - m_n`; entry 0 is unused.
    pub sigma2_hat: &'a [f64],
    pub xhat: &'a [f64],
}

impl Objective<'_> {
    fn points(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let inv_n = 1.0 / self.n as f64;
        (1..self.sigma2_hat.len()).map(move |k| (k as f64 * inv_n, self.xhat[k], self.sigma2_hat[k]))
    }

    /// `f_n(theta) = (1/n) sum_{k=1}^{n-m} (sigma2_hat_k - sigma^2(k/n, xhat_k, theta))^2`.
    pub fn value(&self, theta: &[f64]) -> f64 {
        let s: f64 = self
            .points()
            .map(|(t, x, y)| {
                let r = y - self.family.sigma2(t, x, theta);
                r * r
            })
            .sum();
        s / self.n as f64
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; theta.len()];
        for (t, x, y) in self.points() {
            let r = y - self.family.sigma2(t, x, theta);
            for (gi, di) in g.iter_mut().zip(self.family.gradient(t, x, theta)) {
                *gi -= 2.0 * r * di;
            }
        }
        let inv_n = 1.0 / self.n as f64;
        g.iter_mut().for_each(|v| *v *= inv_n);
        g
    }
}

fn halton(index: usize, base: usize) -> f64 {
    let (mut f, mut r, mut i) = (1.0, 0.0, index);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [usize; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

fn starts(family: &NonlinearFamily, count: usize) -> Vec<Vec<f64>> {
    (1..=count)
        .map(|i| {
            family
                .theta_box
                .iter()
                .enumerate()
                .map(|(j, [lo, hi])| lo + (hi - lo) * halton(i, PRIMES[j % PRIMES.len()]))
                .collect()
        })
        .collect()
}

struct Counter<'a> {
    obj: &'a Objective<'a>,
    evals: usize,
}

impl Counter<'_> {
    fn f(&mut self, theta: &[f64]) -> f64 {
        self.evals += 1;
        let v = self.obj.value(theta);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    }
}

/// Box-projected Nelder–Mead. Returns (point, value, iterations, converged).
fn nelder_mead(
    c: &mut Counter,
    family: &NonlinearFamily,
    x0: &[f64],
    cfg: &OptimizerConfig,
) -> (Vec<f64>, f64, usize, bool) {
    let d = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..d {
        let [lo, hi] = family.theta_box[i];
        let mut p = x0.to_vec();
        let step = 0.1 * (hi - lo);
        p[i] = if p[i] + step <= hi { p[i] + step } else { p[i] - step };
        simplex.push(p);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|p| c.f(p)).collect();
    let mut iter = 0;
    let mut converged = false;
    while iter < cfg.max_iter {
        iter += 1;
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let (best, worst) = (vals[0], vals[d]);
        if worst.is_finite() && worst - best <= cfg.tolerance * best.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..d).map(|j| simplex[..d].iter().map(|p| p[j]).sum::<f64>() / d as f64).collect();
        let along = |coef: f64| -> Vec<f64> {
            let mut p: Vec<f64> = (0..d).map(|j| centroid[j] + coef * (simplex[d][j] - centroid[j])).collect();
            family.project(&mut p);
            p
        };
        let xr = along(-1.0);
        let fr = c.f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = c.f(&xe);
            if fe < fr {
                simplex[d] = xe;
                vals[d] = fe;
            } else {
                simplex[d] = xr;
                vals[d] = fr;
            }
            continue;
        }
        if fr < vals[d - 1] {
            simplex[d] = xr;
            vals[d] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[d] {
            let p = along(-0.5);
            let v = c.f(&p);
            (p, v)
        } else {
            let p = along(0.5);
            let v = c.f(&p);
            (p, v)
        };
        if fc < vals[d].min(fr) {
            simplex[d] = xc;
            vals[d] = fc;
            continue;
        }
        let (head, rest) = simplex.split_at_mut(1);
        for (vertex, val) in rest.iter_mut().zip(&mut vals[1..]) {
            for (v, b) in vertex.iter_mut().zip(&head[0]) {
                *v = b + 0.5 * (*v - b);
            }
            *val = c.f(vertex);
        }
    }
    let best = (0..=d).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    (simplex[best].clone(), vals[best], iter, converged)
}

/// Projected BFGS with backtracking. Returns (point, value, iterations, converged).
fn bfgs(
    c: &mut Counter,
    family: &NonlinearFamily,
    x0: Vec<f64>,
    f0: f64,
    cfg: &OptimizerConfig,
) -> (Vec<f64>, f64, usize, bool) {
    let d = x0.len();
    let mut x = DVector::from_vec(x0);
    let mut fx = f0;
    let mut g = DVector::from_vec(c.obj.gradient(x.as_slice()));
    let mut h = DMatrix::<f64>::identity(d, d);
    let mut iter = 0;
    let mut converged = false;
    while iter < cfg.max_iter {
        iter += 1;
        let mut dir = -(&h * &g);
        if dir.dot(&g) >= 0.0 {
            h = DMatrix::identity(d, d);
            dir = -g.clone();
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = (&x + &dir * step).iter().cloned().collect();
            family.project(&mut trial);
            let ft = c.f(&trial);
            let moved = DVector::from_vec(trial.clone()) - &x;
            if ft <= fx + 1e-4 * g.dot(&moved) && ft.is_finite() {
                accepted = Some((DVector::from_vec(trial), ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            converged = true;
            break;
        };
        let gn = DVector::from_vec(c.obj.gradient(xn.as_slice()));
        let s = &xn - &x;
        let y = &gn - &g;
        let decrease = fx - fnew;
        x = xn;
        fx = fnew;
        g = gn;
        if s.norm() == 0.0 || decrease <= cfg.tolerance * 1e-6 * fx.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(d, d);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            h = &left * &h * &right + &s * s.transpose() * rho;
        }
    }
    (x.iter().cloned().collect(), fx, iter, converged)
}

/// Multistart fit on precomputed spot estimates.
pub fn fit_objective(obj: &Objective, cfg: &OptimizerConfig) -> Result<NonlinearFit> {
    obj.family.validate()?;
    let mut counter = Counter { obj, evals: 0 };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut iterations = 0;
    let mut nm_converged = true;
    for x0 in starts(obj.family, cfg.starts.max(1)) {
        let (x, v, it, conv) = nelder_mead(&mut counter, obj.family, &x0, cfg);
        iterations += it;
        if v.is_finite() && best.as_ref().is_none_or(|(_, b)| v < *b) {
            best = Some((x, v));
            nm_converged = conv;
        }
    }
    let (x, v) = best.ok_or_else(|| Error::FitFailure("no start produced a finite objective".into()))?;
    let (theta, value, it, conv) = bfgs(&mut counter, obj.family, x, v, cfg);
    iterations += it;
    Ok(NonlinearFit {
        theta_hat: theta,
        objective_value: value,
        optimizer_trace: OptimizerTrace {
            starts: cfg.starts.max(1),
            iterations,
            evaluations: counter.evals,
            converged: conv || nm_converged,
        },
    })
}

pub fn objective_fn(
    series: &ObservationSeries,
    family: &NonlinearFamily,
    setup: &KernelSetup,
    theta: &[f64],
) -> Result<f64> {
    let (_, spot) = spot_estimates(series, setup)?;
    let obj = Objective { family, n: series.n, sigma2_hat: &spot.sigma2_hat, xhat: &spot.xhat };
    let v = obj.value(theta);
    if !v.is_finite() {
        return Err(Error::Numeric("family is not finite on the observed range".into()));
    }
    Ok(v)
}

/// Size of the residual-weighted Hessian term of `f_n''` relative to the Gram term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianDiagnostic {
    pub gram_norm: f64,
    pub hessian_norm: f64,
    pub ratio: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone)]
pub struct NonlinearAnalysis {
    pub plan: TuningPlan,
    pub spot: SpotEstimates,
    pub fit: NonlinearFit,
    pub gradient_design: Design,
    pub n_hat: ProcessOnGrid,
    pub s2: ProcessOnGrid,
    pub hessian: HessianDiagnostic,
}

impl NonlinearAnalysis {
    pub fn statistic(&self, functional: Functional) -> Result<f64> {
        crate::gof_linear::standardized_functional(&self.n_hat, &self.s2, &self.plan, functional)
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn analyze_nonlinear(
    series: &ObservationSeries,
    family: &NonlinearFamily,
    setup: &KernelSetup,
    cfg: &OptimizerConfig,
) -> Result<NonlinearAnalysis> {
    let (pre, spot) = spot_estimates(series, setup)?;
    let n = series.n;
    let m = pre.m_n;
    let obj = Objective { family, n, sigma2_hat: &spot.sigma2_hat, xhat: &spot.xhat };
    let fit = fit_objective(&obj, cfg)?;
    let theta = &fit.theta_hat;
    let inv_n = 1.0 / n as f64;
    let len = n - m;
    let d = family.dim();

    let mut fitted = Vec::with_capacity(len);
    let mut rows = Vec::with_capacity(len * d);
    let mut lagged = Vec::with_capacity(len * d);
    let mut hess = DMatrix::<f64>::zeros(d, d);
    for k in 1..=len {
        let (t, x) = (k as f64 * inv_n, spot.xhat[k]);
        let s = family.sigma2(t, x, theta);
        fitted.push(s);
        rows.extend(family.gradient(t, x, theta));
        lagged.extend(family.gradient((k - 1) as f64 * inv_n, spot.xhat[k - 1], theta));
        hess += family.hessian(t, x, theta) * ((spot.sigma2_hat[k] - s) * inv_n);
    }
    if fitted.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("family is not finite on the observed range".into()));
    }
    let process = residual_process(n, m, &spot.sigma2_hat[1..], &fitted);
    let design = Design::new(n, m, d, rows)?;
    let gamma = gamma_local(&pre, spot.omega2_hat, &setup.active_m());
    let s2 = design.variance(&gamma[1..], &lagged);

    let gram_norm = spectral_norm(&design.gram);
    let hessian_norm = spectral_norm(&hess);
    let ratio = hessian_norm / gram_norm;
    Ok(NonlinearAnalysis {
        plan: setup.plan,
        spot,
        fit,
        gradient_design: design,
        n_hat: ProcessOnGrid { kind: ProcessKind::Nhat, value: process },
        s2: ProcessOnGrid { kind: ProcessKind::S2, value: s2 },
        hessian: HessianDiagnostic { gram_norm, hessian_norm, ratio, flagged: ratio > HESSIAN_FLAG_RATIO },
    })
}

pub fn fit_nonlinear(
    series: &ObservationSeries,
    family: &NonlinearFamily,
    setup: &KernelSetup,
    cfg: &OptimizerConfig,
) -> Result<NonlinearFit> {
    let (_, spot) = spot_estimates(series, setup)?;
    let obj = Objective { family, n: series.n, sigma2_hat: &spot.sigma2_hat, xhat: &spot.xhat };
    fit_objective(&obj, cfg)
}

pub fn test_process_n_nonlinear(
    series: &ObservationSeries,
    family: &NonlinearFamily,
    setup: &KernelSetup,
    cfg: &OptimizerConfig,
) -> Result<ProcessOnGrid> {
    Ok(analyze_nonlinear(series, family, setup, cfg)?.n_hat)
}

pub fn variance_process_s2_nonlinear(
    series: &ObservationSeries,
    family: &NonlinearFamily,
    setup: &KernelSetup,
    cfg: &OptimizerConfig,
) -> Result<ProcessOnGrid> {
    Ok(analyze_nonlinear(series, family, setup, cfg)?.s2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_family() -> NonlinearFamily {
        NonlinearFamily::linear(vec![Func::constant(1.0)], vec![[-10.0, 10.0]]).unwrap()
    }

    #[test]
    fn constant_proxy_is_fitted_exactly() {
        let fam = constant_family();
        let y = vec![0.7; 101];
        let xhat = vec![0.0; 101];
        let obj = Objective { family: &fam, n: 110, sigma2_hat: &y, xhat: &xhat };
        let fit = fit_objective(&obj, &OptimizerConfig::default()).unwrap();
        assert!((fit.theta_hat[0] - 0.7).abs() < 1e-8, "{:?}", fit);
        assert!(fit.objective_value < 1e-15);
        assert!(obj.value(&[3.0]) >= 0.0);
    }

    #[test]
    fn recovers_power_family() {
        let fam = NonlinearFamily::power(vec![[0.0, 5.0], [0.0, 4.0]]).unwrap();
        let n = 400;
        let xhat: Vec<f64> = (0..=n).map(|k| 0.5 + k as f64 / n as f64).collect();
        let y: Vec<f64> = xhat.iter().map(|x| 1.3 * x.powf(2.5)).collect();
        let obj = Objective { family: &fam, n, sigma2_hat: &y, xhat: &xhat };
        let fit = fit_objective(&obj, &OptimizerConfig::default()).unwrap();
        assert!((fit.theta_hat[0] - 1.3).abs() < 1e-5 && (fit.theta_hat[1] - 2.5).abs() < 1e-5, "{:?}", fit);
    }

    #[test]
    fn gradients_agree_with_differences() {
        for fam in [
            NonlinearFamily::power(vec![[0.0, 5.0], [0.0, 4.0]]).unwrap(),
            NonlinearFamily::exponential(vec![[0.0, 5.0], [-2.0, 2.0]]).unwrap(),
        ] {
            let th = [1.2, 0.7];
            let a = fam.gradient(0.3, -1.4, &th);
            let b = fam.fd_gradient(0.3, -1.4, &th);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn empty_box_is_rejected() {
        assert!(NonlinearFamily::power(vec![[1.0, 1.0], [0.0, 1.0]]).is_err());
        assert!(NonlinearFamily::power(vec![[0.0, 1.0]]).is_err());
    }

    #[test]
    fn family_config_roundtrip() {
        let fam = NonlinearFamily::linear(vec!["x2".parse().unwrap()], vec![[0.0, 4.0]]).unwrap();
        let s = serde_json::to_string(&fam).unwrap();
        assert!(s.contains("\"family\":\"linear\""), "{s}");
        assert_eq!(serde_json::from_str::<NonlinearFamily>(&s).unwrap(), fam);
    }

    #[test]
    fn halton_points_lie_in_box() {
        let fam = NonlinearFamily::power(vec![[1.0, 2.0], [-3.0, 3.0]]).unwrap();
        let s = starts(&fam, 5);
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|p| (1.0..=2.0).contains(&p[0]) && (-3.0..=3.0).contains(&p[1])));
        assert_eq!(s[0], vec![1.5, -1.0]);
    }
}
