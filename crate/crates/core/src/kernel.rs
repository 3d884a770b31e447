//! Pre-averaging weight function and the deterministic constants derived from it.
//!
//! Everything here is computed once per study and shared read-only between
//! replications. Asymptotic constants come from trapezoid/midpoint quadrature on
//! a uniform grid; the lag self-convolutions are evaluated with an FFT so that
//! 10^5 quadrature points stay cheap.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of quadrature intervals on `[0, 1]`.
pub const DEFAULT_QUADRATURE_POINTS: usize = 100_000;

/// Weight function `g` used to pre-average increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[derive(Default)]
pub enum WeightFunction {
    /// `g(x) = min(x, 1 - x)` on `[0, 1]`.
    #[default]
    MinHat,
    /// Values of `g` at `i / (len - 1)`, linearly interpolated in between.
    UserTabulated { values: Vec<f64> },
}

impl WeightFunction {
    pub fn tabulated(values: Vec<f64>) -> Result<Self> {
        let g = WeightFunction::UserTabulated { values };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            WeightFunction::MinHat => Ok(()),
            WeightFunction::UserTabulated { values } => {
                if values.len() < 3 {
                    return Err(Error::InvalidSpec("tabulated weight function needs at least 3 samples".into()));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidSpec("tabulated weight function is not finite".into()));
                }
                if values[0] != 0.0 || values[values.len() - 1] != 0.0 {
                    return Err(Error::InvalidSpec("weight function must vanish at 0 and 1".into()));
                }
                if values.iter().all(|v| *v == 0.0) {
                    return Err(Error::InvalidSpec("weight function is identically zero".into()));
                }
                Ok(())
            }
        }
    }

    /// `g(x)`, zero outside `(0, 1)`.
    pub fn eval(&self, x: f64) -> f64 {
        if !(x > 0.0 && x < 1.0) {
            return 0.0;
        }
        match self {
            WeightFunction::MinHat => x.min(1.0 - x),
            WeightFunction::UserTabulated { values } => {
                let cells = (values.len() - 1) as f64;
                let pos = x * cells;
                let i = (pos.floor() as usize).min(values.len() - 2);
                let w = pos - i as f64;
                values[i] * (1.0 - w) + values[i + 1] * w
            }
        }
    }

    /// `g'(x)`; at kinks the right derivative is returned.
    pub fn derivative(&self, x: f64) -> f64 {
        if !(0.0..1.0).contains(&x) {
            return 0.0;
        }
        match self {
            WeightFunction::MinHat => {
                if x < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
            WeightFunction::UserTabulated { values } => {
                let cells = (values.len() - 1) as f64;
                let i = ((x * cells).floor() as usize).min(values.len() - 2);
                (values[i + 1] - values[i]) * cells
            }
        }
    }
}

/// `g` sampled at the pre-averaging window: `g_j = g(j/m)` and
/// `gprime_j = g_j - g_{j+1}` for `j = 1..=m`, with `g_{m+1} = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTable {
    pub m_n: usize,
    pub g: Vec<f64>,
    pub gprime: Vec<f64>,
}

pub fn build_kernel_table(g: &WeightFunction, m_n: usize) -> Result<KernelTable> {
    if m_n < 2 {
        return Err(Error::InvalidWindow { m: m_n, n: 0 });
    }
    g.validate()?;
    let m = m_n as f64;
    let values: Vec<f64> = (1..=m_n).map(|j| g.eval(j as f64 / m)).collect();
    let gprime = (0..m_n).map(|j| values[j] - values.get(j + 1).copied().unwrap_or(0.0)).collect();
    Ok(KernelTable { m_n, g: values, gprime })
}

impl KernelTable {
    /// Full set of differences `g_j - g_{j-1}`, `j = 1..=m`, with `g_0 = 0`.
    ///
    /// These are the weights the window puts on each noise variable, so they
    /// (and not `gprime` alone, which drops the `j = 0` boundary term) enter
    /// the finite-sample noise constants.
    pub fn noise_weights(&self) -> Vec<f64> {
        (0..self.m_n).map(|j| self.g[j] - if j == 0 { 0.0 } else { self.g[j - 1] }).collect()
    }
}

/// Asymptotic constants of `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub psi1: f64,
    pub psi2: f64,
    /// `phi_1(i / P)` for `i = 0..=P`.
    #[serde(skip)]
    pub phi1: Vec<f64>,
    /// `phi_2(i / P)` for `i = 0..=P`.
    #[serde(skip)]
    pub phi2: Vec<f64>,
    pub phi11: f64,
    pub phi12: f64,
    pub phi22: f64,
    pub xi: f64,
    pub mu1: f64,
    pub quadrature_points: usize,
}

impl KernelConstants {
    fn interp(table: &[f64], s: f64) -> f64 {
        if !(0.0..=1.0).contains(&s) {
            return 0.0;
        }
        let p = (table.len() - 1) as f64;
        let pos = s * p;
        let i = (pos.floor() as usize).min(table.len() - 2);
        let w = pos - i as f64;
        table[i] * (1.0 - w) + table[i + 1] * w
    }

    pub fn phi1_at(&self, s: f64) -> f64 {
        Self::interp(&self.phi1, s)
    }

    pub fn phi2_at(&self, s: f64) -> f64 {
        Self::interp(&self.phi2, s)
    }
}

/// Finite-sample counterparts for a window of length `m_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteSampleConstants {
    pub m_n: usize,
    pub psi1_n: f64,
    pub psi2_n: f64,
    pub phi11_n: f64,
    pub phi12_n: f64,
    pub phi22_n: f64,
    pub xi_n: f64,
}

/// The constants a statistic actually plugs in (asymptotic or finite-sample).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActiveConstants {
    pub psi1: f64,
    pub psi2: f64,
    pub phi11: f64,
    pub phi12: f64,
    pub phi22: f64,
    pub xi: f64,
    pub mu1: f64,
}

/// Lagged sums `sum_j a_j a_{j+r}` for `r = 0..len`, computed by FFT.
fn autocorrelation(a: &[f64]) -> Vec<f64> {
    let len = a.len();
    let size = (2 * len).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<f64>> =
        a.iter().map(|&v| Complex::new(v, 0.0)).chain(std::iter::repeat(Complex::new(0.0, 0.0))).take(size).collect();
    forward.process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    inverse.process(&mut buf);
    let scale = 1.0 / size as f64;
    buf[..len].iter().map(|c| c.re * scale).collect()
}

/// First absolute moment of the standard normal, by Simpson's rule on `[0, 12]`.
pub fn gaussian_abs_moment() -> f64 {
    let steps = 20_000usize;
    let upper = 12.0;
    let h = upper / steps as f64;
    let dens = |x: f64| x * (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    let mut acc = dens(0.0) + dens(upper);
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * dens(i as f64 * h);
    }
    2.0 * acc * h / 3.0
}

pub fn asymptotic_constants(g: &WeightFunction, quadrature_points: usize) -> Result<KernelConstants> {
    if quadrature_points < 1000 {
        return Err(Error::Domain(format!("need at least 1000 quadrature points, got {quadrature_points}")));
    }
    g.validate()?;
    let p = quadrature_points;
    let h = 1.0 / p as f64;
    let values: Vec<f64> = (0..=p).map(|i| g.eval(i as f64 * h)).collect();
    let slopes: Vec<f64> = (0..p).map(|c| g.derivative((c as f64 + 0.5) * h)).collect();

    // g vanishes at both ends, so the trapezoid rule reduces to a plain sum.
    let mut phi2: Vec<f64> = autocorrelation(&values).into_iter().map(|v| v * h).collect();
    phi2.truncate(p + 1);
    let mut phi1: Vec<f64> = autocorrelation(&slopes).into_iter().map(|v| v * h).collect();
    phi1.push(0.0);
    phi1.truncate(p + 1);
    phi2[p] = 0.0;

    let trapezoid = |f: &dyn Fn(usize) -> f64| -> f64 {
        let inner: f64 = (1..p).map(f).sum();
        h * (0.5 * f(0) + inner + 0.5 * f(p))
    };
    let psi1 = phi1[0];
    let psi2 = phi2[0];
    let phi11 = trapezoid(&|i| phi1[i] * phi1[i]);
    let phi12 = trapezoid(&|i| phi1[i] * phi2[i]);
    let phi22 = trapezoid(&|i| phi2[i] * phi2[i]);
    let xi = trapezoid(&|i| f_arcsine((phi2[i] / psi2).clamp(-1.0, 1.0)).unwrap_or(f64::NAN));
    let mu1 = gaussian_abs_moment();

    let consts = KernelConstants { psi1, psi2, phi1, phi2, phi11, phi12, phi22, xi, mu1, quadrature_points: p };
    for (name, v) in
        [("psi1", psi1), ("psi2", psi2), ("Phi11", phi11), ("Phi12", phi12), ("Phi22", phi22), ("Xi", xi), ("mu1", mu1)]
    {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("{name} is not finite")));
        }
    }
    Ok(consts)
}

/// Discrete analogues of the kernel constants for a window of `m_n` points.
///
/// `psi1_n = m * sum_j d_j^2` with `d_j = g_j - g_{j-1}` and
/// `psi2_n = (1/m) * sum_j g_j^2`, so that for i.i.d. noise and constant
/// volatility `E|Zbar|^2 = (m/n) psi2_n sigma^2 + (psi1_n/m) omega^2` holds
/// exactly. The lag functions are `phi1_n(r) = m sum_j d_j d_{j+r}` and
/// `phi2_n(r) = (1/m) sum_j g_j g_{j+r}`, and
/// `Phi_ij_n = (1/m) (phi_i(0) phi_j(0) / 2 + sum_{r>=1} phi_i(r) phi_j(r))`,
/// which is the lag sum that appears in the variance of `sum_k |Zbar_k|^2`.
pub fn finite_sample_constants(table: &KernelTable) -> FiniteSampleConstants {
    let m = table.m_n;
    let mf = m as f64;
    let d = table.noise_weights();
    let lag = |a: &[f64], r: usize| -> f64 { a.iter().zip(&a[r..]).map(|(x, y)| x * y).sum() };
    let phi1: Vec<f64> = (0..m).map(|r| mf * lag(&d, r)).collect();
    let phi2: Vec<f64> = (0..m).map(|r| lag(&table.g, r) / mf).collect();
    let pair = |a: &[f64], b: &[f64]| -> f64 {
        let tail: f64 = (1..m).map(|r| a[r] * b[r]).sum();
        (0.5 * a[0] * b[0] + tail) / mf
    };
    let psi2_n = phi2[0];
    let xi_tail: f64 = (1..m).map(|r| f_arcsine((phi2[r] / psi2_n).clamp(-1.0, 1.0)).unwrap_or(0.0)).sum();
    let xi_n = (0.5 * f_arcsine(1.0).unwrap_or(0.0) + xi_tail) / mf;
    FiniteSampleConstants {
        m_n: m,
        psi1_n: phi1[0],
        psi2_n,
        phi11_n: pair(&phi1, &phi1),
        phi12_n: pair(&phi1, &phi2),
        phi22_n: pair(&phi2, &phi2),
        xi_n,
    }
}

/// `f(u) = (2/pi) (u arcsin u + sqrt(1 - u^2) - 1)`: the covariance of `|X|`
/// and `|Y|` for standard normals with correlation `u`.
pub fn f_arcsine(u: f64) -> Result<f64> {
    if !(u.abs() <= 1.0) {
        return Err(Error::Domain(format!("f_arcsine needs |u| <= 1, got {u}")));
    }
    Ok(2.0 / PI * (u * u.asin() + (1.0 - u * u).sqrt() - 1.0))
}

/// `P(sup |B_t| <= x)` for a Brownian bridge `B`.
pub fn kolmogorov_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < 1.0 {
        // Jacobi theta form; the alternating series converges slowly here.
        let mut sum = 0.0;
        for k in 1..200 {
            let odd = (2 * k - 1) as f64;
            let term = (-(odd * odd) * PI * PI / (8.0 * x * x)).exp();
            sum += term;
            if term < 1e-300 {
                break;
            }
        }
        (2.0 * PI).sqrt() / x * sum
    } else {
        let mut sum = 0.0;
        for k in 1..200 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * x * x).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-300 {
                break;
            }
        }
        1.0 - 2.0 * sum
    }
}

/// The `(1 - alpha)`-quantile of `sup |B_t|`.
pub fn kolmogorov_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let target = 1.0 - alpha;
    let (mut lo, mut hi) = (0.0f64, 10.0f64);
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_cdf(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Window lengths and rate parameters for one sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningPlan {
    pub kappa: f64,
    pub rho: f64,
    pub delta: f64,
    pub n: usize,
    pub m_n: usize,
    pub l_n: usize,
}

impl TuningPlan {
    /// `m_n = round(kappa sqrt(n))`, `l_n = round(rho n^(1/2 + delta))`.
    pub fn new(n: usize, kappa: f64, rho: f64, delta: f64) -> Result<Self> {
        if !(kappa > 0.0) || !(rho > 0.0) {
            return Err(Error::InvalidSpec("kappa and rho must be positive".into()));
        }
        if !(delta > 1.0 / 6.0 && delta < 0.5) {
            return Err(Error::InvalidSpec(format!("delta must lie in (1/6, 1/2), got {delta}")));
        }
        let nf = n as f64;
        let m_n = (kappa * nf.sqrt()).round() as usize;
        let l_n = (rho * nf.powf(0.5 + delta)).round() as usize;
        for w in [m_n, l_n] {
            if w < 2 || w >= n {
                return Err(Error::InvalidWindow { m: w, n });
            }
        }
        Ok(TuningPlan { kappa, rho, delta, n, m_n, l_n })
    }

    /// Paper defaults: kappa = rho = 1/2, delta = 1/4.
    pub fn standard(n: usize) -> Result<Self> {
        Self::new(n, 0.5, 0.5, 0.25)
    }

    /// `m_n / sqrt(n)`, the realised kappa.
    pub fn kappa_eff(&self) -> f64 {
        self.m_n as f64 / (self.n as f64).sqrt()
    }

    /// `l_n / n^(1/2 + delta)`, the realised rho.
    pub fn rho_eff(&self) -> f64 {
        self.l_n as f64 / (self.n as f64).powf(0.5 + self.delta)
    }
}

/// Everything a statistic needs about `g` for one tuning plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSetup {
    pub weight: WeightFunction,
    pub plan: TuningPlan,
    pub asymptotic: KernelConstants,
    #[serde(skip)]
    pub table_m: Option<KernelTable>,
    #[serde(skip)]
    pub table_l: Option<KernelTable>,
    pub finite_m: FiniteSampleConstants,
    pub finite_l: FiniteSampleConstants,
    pub use_finite_sample: bool,
}

impl KernelSetup {
    pub fn new(
        weight: WeightFunction,
        plan: TuningPlan,
        asymptotic: KernelConstants,
        use_finite_sample: bool,
    ) -> Result<Self> {
        let table_m = build_kernel_table(&weight, plan.m_n)?;
        let table_l = build_kernel_table(&weight, plan.l_n)?;
        let finite_m = finite_sample_constants(&table_m);
        let finite_l = finite_sample_constants(&table_l);
        Ok(KernelSetup {
            weight,
            plan,
            asymptotic,
            table_m: Some(table_m),
            table_l: Some(table_l),
            finite_m,
            finite_l,
            use_finite_sample,
        })
    }

    /// Standard setup: MinHat, default quadrature, finite-sample constants on.
    pub fn standard(plan: TuningPlan) -> Result<Self> {
        let weight = WeightFunction::MinHat;
        let asymptotic = asymptotic_constants(&weight, DEFAULT_QUADRATURE_POINTS)?;
        Self::new(weight, plan, asymptotic, true)
    }

    /// Same kernel, new sample size (reuses the asymptotic constants).
    pub fn with_plan(&self, plan: TuningPlan) -> Result<Self> {
        Self::new(self.weight.clone(), plan, self.asymptotic.clone(), self.use_finite_sample)
    }

    pub fn table_m(&self) -> &KernelTable {
        self.table_m.as_ref().expect("kernel table for m_n")
    }

    pub fn table_l(&self) -> &KernelTable {
        self.table_l.as_ref().expect("kernel table for l_n")
    }

    fn active(&self, finite: &FiniteSampleConstants) -> ActiveConstants {
        let a = &self.asymptotic;
        if self.use_finite_sample {
            ActiveConstants {
                psi1: finite.psi1_n,
                psi2: finite.psi2_n,
                phi11: finite.phi11_n,
                phi12: finite.phi12_n,
                phi22: finite.phi22_n,
                xi: finite.xi_n,
                mu1: a.mu1,
            }
        } else {
            ActiveConstants {
                psi1: a.psi1,
                psi2: a.psi2,
                phi11: a.phi11,
                phi12: a.phi12,
                phi22: a.phi22,
                xi: a.xi,
                mu1: a.mu1,
            }
        }
    }

    /// Constants for the `m_n` window.
    pub fn active_m(&self) -> ActiveConstants {
        self.active(&self.finite_m)
    }

    /// Constants for the `l_n` window.
    pub fn active_l(&self) -> ActiveConstants {
        self.active(&self.finite_l)
    }
}
