//! Closed-form and hand-computed values, each checked against an independent
//! calculation rather than the crate's own helpers.

use std::f64::consts::PI;

use volcheck::kernel::{
    asymptotic_constants, build_kernel_table, f_arcsine, finite_sample_constants, kolmogorov_quantile, TuningPlan,
    WeightFunction,
};
use volcheck::preavg::{local_price_hat, noise_variance_hat, preaverage};
use volcheck::simulate::{NoiseSpec, ObservationSeries};

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let h = (b - a) / intervals as f64;
    let mut acc = f(a) + f(b);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

fn minhat(x: f64) -> f64 {
    if (0.0..=1.0).contains(&x) {
        x.min(1.0 - x)
    } else {
        0.0
    }
}

// phi_1 for min(x, 1 - x), integrated by hand: 1 - 3s on [0, 1/2], s - 1 on [1/2, 1].
fn phi1_closed(s: f64) -> f64 {
    if s <= 0.5 {
        1.0 - 3.0 * s
    } else {
        s - 1.0
    }
}

#[test]
fn minhat_asymptotic_constants() {
    let c = asymptotic_constants(&WeightFunction::MinHat, 100_000).unwrap();
    assert!((c.psi1 - 1.0).abs() < 1e-6);
    assert!((c.psi2 - 1.0 / 12.0).abs() < 1e-6);
    assert!((c.phi11 - 1.0 / 6.0).abs() < 1e-4);
    assert!((c.mu1 - (2.0 / PI).sqrt()).abs() < 1e-6);

    let phi11 =
        simpson(|s| phi1_closed(s).powi(2), 0.0, 0.5, 2000) + simpson(|s| phi1_closed(s).powi(2), 0.5, 1.0, 2000);
    assert!((phi11 - 1.0 / 6.0).abs() < 1e-12);
    for s in [0.0, 0.1, 0.3, 0.5, 0.7, 0.95] {
        assert!((c.phi1_at(s) - phi1_closed(s)).abs() < 1e-4, "phi1({s})");
        let phi2 = simpson(|u| minhat(u) * minhat(u - s), s, 1.0, 4000);
        assert!((c.phi2_at(s) - phi2).abs() < 1e-6, "phi2({s})");
    }

    // Phi_12 and Phi_22 by brute force on the closed-form phi's
    let phi2 = |s: f64| simpson(|u| minhat(u) * minhat(u - s), s, 1.0, 400);
    let phi12 =
        simpson(|s| phi1_closed(s) * phi2(s), 0.0, 0.5, 400) + simpson(|s| phi1_closed(s) * phi2(s), 0.5, 1.0, 400);
    let phi22 = simpson(|s| phi2(s).powi(2), 0.0, 1.0, 800);
    assert!((c.phi12 - phi12).abs() < 1e-5);
    assert!((c.phi22 - phi22).abs() < 1e-6);
    assert!((phi22 - 151.0 / 80640.0).abs() < 1e-6);
}

#[test]
fn arcsine_covariance_values() {
    assert_eq!(f_arcsine(0.0).unwrap(), 0.0);
    assert!((f_arcsine(1.0).unwrap() - (1.0 - 2.0 / PI)).abs() < 1e-10);
    let direct = (2.0 / PI) * (0.5 * PI / 6.0 + 0.75f64.sqrt() - 1.0);
    assert!((f_arcsine(0.5).unwrap() - direct).abs() < 1e-12);
    assert!((direct - 0.081_375_79).abs() < 1e-8);
}

#[test]
fn kolmogorov_quantiles() {
    for (alpha, q) in [(0.025, 1.4802), (0.05, 1.3581), (0.1, 1.2238)] {
        assert!((kolmogorov_quantile(alpha).unwrap() - q).abs() < 1e-3, "alpha {alpha}");
    }
}

#[test]
fn finite_sample_psi2_converges() {
    let t = build_kernel_table(&WeightFunction::MinHat, 1000).unwrap();
    let f = finite_sample_constants(&t);
    assert!((f.psi2_n - 1.0 / 12.0).abs() / (1.0 / 12.0) < 0.02);
}

#[test]
fn psi1_n_for_two_point_window() {
    // g = [0.5, 0]; each noise variable enters with weight +-0.5
    let t = build_kernel_table(&WeightFunction::MinHat, 2).unwrap();
    assert_eq!(t.g, vec![0.5, 0.0]);
    assert_eq!(finite_sample_constants(&t).psi1_n, 2.0 * (0.25 + 0.25));
}

#[test]
fn psi1_n_makes_noise_moment_exact() {
    // zbar is linear in z, so pre-averaging a unit impulse at position i gives
    // the weight of U_i; psi1_n / m must equal the sum of squared weights
    for m in [2, 3, 8, 17, 64] {
        let t = build_kernel_table(&WeightFunction::MinHat, m).unwrap();
        let n = m + 1;
        let mut sq = 0.0;
        for i in 0..=n {
            let mut z = vec![0.0; n + 1];
            z[i] = 1.0;
            let pre = preaverage(&ObservationSeries::new(z).unwrap(), &t).unwrap();
            sq += pre.zbar[0] * pre.zbar[0];
        }
        let f = finite_sample_constants(&t);
        assert!((f.psi1_n / m as f64 - sq).abs() < 1e-12, "m = {m}");
        let signal: f64 = t.g.iter().map(|g| g * g).sum();
        assert!((f.psi2_n * m as f64 - signal).abs() < 1e-12);
    }
}

#[test]
fn hand_computed_preaverage() {
    let t = build_kernel_table(&WeightFunction::MinHat, 2).unwrap();
    let s = ObservationSeries::new(vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
    let pre = preaverage(&s, &t).unwrap();
    assert_eq!(pre.zbar, vec![0.5, -0.5, 0.5, -0.5, 0.5]);
}

#[test]
fn alternating_series_noise_variance() {
    let a = 0.3;
    let z: Vec<f64> = (0..=100).map(|i| if i % 2 == 0 { a } else { -a }).collect();
    let w = noise_variance_hat(&ObservationSeries::new(z).unwrap());
    assert!((w - 2.0 * a * a).abs() < 1e-15);
}

#[test]
fn local_price_of_linear_path() {
    let n = 40;
    let z: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    let xhat = local_price_hat(&ObservationSeries::new(z).unwrap(), 2).unwrap();
    for (k, v) in xhat.iter().enumerate() {
        assert!((v - (k as f64 + 1.5) / n as f64).abs() < 1e-15);
    }
}

#[test]
fn window_rounding_and_noise_convention() {
    let p = TuningPlan::standard(1024).unwrap();
    assert_eq!((p.m_n, p.l_n), (16, (0.5 * 1024f64.powf(0.75)).round() as usize));
    assert!((NoiseSpec::gaussian_scaled(0.1024, 1024).omega2 - 1e-4).abs() < 1e-18);
}
