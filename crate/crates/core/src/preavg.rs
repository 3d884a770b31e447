//! Pre-averaged increments and the local estimators built on them.
//!
//! Index convention: `zbar[k]`, `xhat[k]` and `sigma2_hat[k]` are defined for
//! `k = 0..=n - m` and only use observations up to `(k + m)/n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ActiveConstants, KernelSetup, KernelTable};
use crate::simulate::ObservationSeries;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreaveragedSeries {
    pub n: usize,
    pub m_n: usize,
    pub zbar: Vec<f64>,
}

/// `zbar[k] = sum_{j=1}^{m} g_j (z[k+j] - z[k+j-1])`.
pub fn preaverage(series: &ObservationSeries, table: &KernelTable) -> Result<PreaveragedSeries> {
    let (n, m) = (series.n, table.m_n);
    if n <= m {
        return Err(Error::InsufficientData { n, window: m });
    }
    let dz: Vec<f64> = series.increments().collect();
    let zbar = (0..=n - m).map(|k| table.g.iter().zip(&dz[k..k + m]).map(|(g, d)| g * d).sum()).collect();
    Ok(PreaveragedSeries { n, m_n: m, zbar })
}

/// `omega2_hat = (1 / 2n) sum_i |Delta_i Z|^2`.
pub fn noise_variance_hat(series: &ObservationSeries) -> f64 {
    let rv: f64 = series.increments().map(|d| d * d).sum();
    rv / (2.0 * series.n as f64)
}

/// Bias-corrected spot variance
/// `sqrt(n)/(kappa psi2) (|zbar_k|^2 - psi1/(kappa sqrt(n)) omega2_hat)`,
/// with the realised `kappa = m/sqrt(n)`. Entries may be negative.
pub fn spot_vol_hat(pre: &PreaveragedSeries, omega2_hat: f64, consts: &ActiveConstants) -> Vec<f64> {
    let nf = pre.n as f64;
    let kappa = pre.m_n as f64 / nf.sqrt();
    let scale = nf.sqrt() / (kappa * consts.psi2);
    let bias = consts.psi1 / (kappa * nf.sqrt()) * omega2_hat;
    pre.zbar.iter().map(|z| scale * (z * z - bias)).collect()
}

/// `xhat[k] = (1/m) sum_{j=1}^{m} z[k+j]`.
pub fn local_price_hat(series: &ObservationSeries, m_n: usize) -> Result<Vec<f64>> {
    let n = series.n;
    if m_n == 0 || n <= m_n {
        return Err(Error::InsufficientData { n, window: m_n });
    }
    let inv = 1.0 / m_n as f64;
    let mut window: f64 = series.z[1..=m_n].iter().sum();
    let mut out = Vec::with_capacity(n - m_n + 1);
    out.push(window * inv);
    for k in 1..=n - m_n {
        window += series.z[k + m_n] - series.z[k];
        out.push(window * inv);
    }
    Ok(out)
}

/// Spot volatility (not variance) from an `l_n`-window pre-average:
/// `n^(1/4 - delta/2) |zbar_k| / (sqrt(rho psi2) mu1)`, realised `rho = l/n^(1/2+delta)`.
pub fn spot_sigma_bar(pre_l: &PreaveragedSeries, consts_l: &ActiveConstants, delta: f64) -> Vec<f64> {
    let nf = pre_l.n as f64;
    let rho = pre_l.m_n as f64 / nf.powf(0.5 + delta);
    let scale = nf.powf(0.25 - 0.5 * delta) / ((rho * consts_l.psi2).sqrt() * consts_l.mu1);
    pre_l.zbar.iter().map(|z| scale * z.abs()).collect()
}

/// Local estimates on the `m_n` window, indexed `k = 0..=n - m_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotEstimates {
    pub sigma2_hat: Vec<f64>,
    pub xhat: Vec<f64>,
    pub omega2_hat: f64,
}

pub(crate) fn check_plan(series: &ObservationSeries, setup: &KernelSetup) -> Result<()> {
    if setup.plan.n != series.n {
        return Err(Error::InvalidSpec(format!(
            "tuning plan is for n = {} but the series has n = {}",
            setup.plan.n, series.n
        )));
    }
    Ok(())
}

/// Pre-averages on the `m_n` window and derives the corrected spot variances.
pub fn spot_estimates(series: &ObservationSeries, setup: &KernelSetup) -> Result<(PreaveragedSeries, SpotEstimates)> {
    check_plan(series, setup)?;
    let pre = preaverage(series, setup.table_m())?;
    let omega2_hat = noise_variance_hat(series);
    let sigma2_hat = spot_vol_hat(&pre, omega2_hat, &setup.active_m());
    let xhat = local_price_hat(series, pre.m_n)?;
    Ok((pre, SpotEstimates { sigma2_hat, xhat, omega2_hat }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_kernel_table, WeightFunction};

    fn series(z: Vec<f64>) -> ObservationSeries {
        ObservationSeries::new(z).unwrap()
    }

    fn consts() -> ActiveConstants {
        ActiveConstants { psi1: 1.0, psi2: 1.0 / 12.0, phi11: 1.0 / 6.0, phi12: 0.0, phi22: 0.0, xi: 0.3, mu1: 0.8 }
    }

    #[test]
    fn constant_series_preaverages_to_zero() {
        let t = build_kernel_table(&WeightFunction::MinHat, 4).unwrap();
        let p = preaverage(&series(vec![2.5; 20]), &t).unwrap();
        assert_eq!(p.zbar.len(), 20 - 4);
        assert!(p.zbar.iter().all(|&v| v == 0.0));
        assert_eq!(noise_variance_hat(&series(vec![2.5; 20])), 0.0);
    }

    #[test]
    fn linear_series_gives_weight_sum() {
        let n = 50;
        let t = build_kernel_table(&WeightFunction::MinHat, 5).unwrap();
        let z: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let p = preaverage(&series(z), &t).unwrap();
        let want: f64 = t.g.iter().sum::<f64>() / n as f64;
        assert!(p.zbar.iter().all(|v| (v - want).abs() < 1e-15));
    }

    #[test]
    fn alternating_series_by_hand() {
        let t = build_kernel_table(&WeightFunction::MinHat, 2).unwrap();
        let s = series(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let p = preaverage(&s, &t).unwrap();
        assert_eq!(p.zbar, vec![0.5, -0.5, 0.5, -0.5, 0.5]);
        // alternating +-a: omega2_hat = (1/2n) n (2a)^2 = 2a^2
        let a = 0.3;
        let alt = series((0..=10).map(|i| if i % 2 == 0 { a } else { -a }).collect());
        assert!((noise_variance_hat(&alt) - 2.0 * a * a).abs() < 1e-15);
    }

    #[test]
    fn window_too_large() {
        let t = build_kernel_table(&WeightFunction::MinHat, 6).unwrap();
        assert!(matches!(preaverage(&series(vec![0.0; 7]), &t), Err(Error::InsufficientData { .. })));
        assert!(local_price_hat(&series(vec![0.0; 7]), 6).is_err());
    }

    #[test]
    fn zero_input_gives_zero_spot_estimates() {
        let pre = PreaveragedSeries { n: 100, m_n: 5, zbar: vec![0.0; 96] };
        assert!(spot_vol_hat(&pre, 0.0, &consts()).iter().all(|&v| v == 0.0));
        assert!(spot_sigma_bar(&pre, &consts(), 0.25).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn local_price_of_linear_path() {
        let n = 40;
        let z: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let xh = local_price_hat(&series(z), 2).unwrap();
        for (k, v) in xh.iter().enumerate() {
            assert!((v - (k as f64 + 1.5) / n as f64).abs() < 1e-15);
        }
        let c = local_price_hat(&series(vec![4.0; 30]), 7).unwrap();
        assert!(c.iter().all(|&v| (v - 4.0).abs() < 1e-15));
    }
}
