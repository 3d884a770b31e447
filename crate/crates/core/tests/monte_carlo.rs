//! Monte Carlo oracles: each test simulates from a model whose answer is known
//! in closed form and checks the estimator against it.

use volcheck::baseline::naive_t_n;
use volcheck::bootstrap::{bootstrap_sample, BootstrapConfig, NullModel, NullVolatility, Pipeline};
use volcheck::func::Func;
use volcheck::gof_abs::analyze_abs;
use volcheck::gof_linear::{analyze_linear, fit_linear, HypothesisSpec};
use volcheck::gof_nonlinear::{fit_nonlinear, NonlinearFamily, OptimizerConfig};
use volcheck::kernel::{kolmogorov_quantile, KernelSetup, TuningPlan};
use volcheck::preavg::{local_price_hat, noise_variance_hat, preaverage, spot_estimates};
use volcheck::projection::Functional;
use volcheck::rng::child_seed;
use volcheck::simulate::{add_noise, simulate, HestonParams, LatentPath, ModelSpec, NoiseSpec, ObservationSeries};

const SUBSTEPS: usize = 10;

fn setup(n: usize) -> KernelSetup {
    KernelSetup::standard(TuningPlan::standard(n).unwrap()).unwrap()
}

fn path(drift: &str, sigma2: &str, x0: f64, n: usize, seed: u64) -> LatentPath {
    simulate(&ModelSpec::local_vol(drift, sigma2, x0).unwrap(), n, SUBSTEPS, seed).unwrap()
}

fn observe(p: &LatentPath, omega2: f64, seed: u64) -> ObservationSeries {
    add_noise(p, &NoiseSpec::gaussian(omega2), seed).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x * x, c + 1));
    (s / c as f64).sqrt()
}

#[test]
fn brownian_increments_have_unit_variance() {
    let n = 10_000;
    let p = path("0", "one", 0.0, n, 1);
    let scaled: Vec<f64> = p.x.windows(2).map(|w| (w[1] - w[0]) * (n as f64).sqrt()).collect();
    assert!((sd(&scaled).powi(2) - 1.0).abs() < 0.05);

    let c = 2.0;
    let p = path("0", "2*one", 0.0, n, 2);
    let qv: f64 = p.x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    assert!((qv - c).abs() < 3.0 * (2.0 * c * c / n as f64).sqrt());
}

#[test]
fn geometric_paths_stay_positive() {
    for seed in 0..50 {
        let p = path("0.1*x", "x2", 1.0, 4096, seed);
        assert!(p.x.iter().all(|&x| x > 0.0), "seed {seed}");
    }
}

#[test]
fn gaussian_noise_has_requested_variance() {
    let p = path("0", "one", 0.0, 10_000, 3);
    let z = observe(&p, 1e-4, 4);
    let u: Vec<f64> = z.z.iter().zip(&p.x).map(|(a, b)| a - b).collect();
    assert!((sd(&u).powi(2) / 1e-4 - 1.0).abs() < 0.1);
}

#[test]
fn heston_streams_are_independent_without_correlation() {
    let model =
        ModelSpec::Heston(HestonParams { mu: 0.0, delta: 1.0, alpha: 0.04, gamma: 0.5, eta: 0.0, nu0: 0.04, x0: 0.0 });
    let p = simulate(&model, 10_000, 1, 5).unwrap();
    let dx: Vec<f64> = p.x.windows(2).map(|w| w[1] - w[0]).collect();
    let dv: Vec<f64> = p.sigma2_spot.windows(2).map(|w| w[1] - w[0]).collect();
    let (mx, mv) = (mean(&dx), mean(&dv));
    let cov: f64 = dx.iter().zip(&dv).map(|(a, b)| (a - mx) * (b - mv)).sum::<f64>() / (dx.len() - 1) as f64;
    assert!((cov / (sd(&dx) * sd(&dv))).abs() < 0.05);
}

#[test]
fn noise_variance_estimate_under_pure_noise() {
    let n = 16_384;
    let flat = path("0", "0*one", 1.0, n, 0);
    let est: Vec<f64> = (0..100).map(|s| noise_variance_hat(&observe(&flat, 1e-4, child_seed(6, s)))).collect();
    assert!((mean(&est) / 1e-4 - 1.0).abs() < 0.1);
}

#[test]
fn spot_variance_is_unbiased() {
    let n = 16_384;
    let su = setup(n);
    let omega2 = 0.1024 / n as f64;
    let (mut signal, mut noise) = (Vec::new(), Vec::new());
    let flat = path("0", "0*one", 1.0, n, 0);
    for s in 0..100 {
        let p = path("0", "one", 1.0, n, child_seed(7, s));
        let (_, spot) = spot_estimates(&observe(&p, omega2, child_seed(8, s)), &su).unwrap();
        signal.push(mean(&spot.sigma2_hat));
        let (_, spot) = spot_estimates(&observe(&flat, omega2, child_seed(9, s)), &su).unwrap();
        noise.push(mean(&spot.sigma2_hat));
    }
    assert!((mean(&signal) - 1.0).abs() < 0.1);
    // bias correction is exact for pure noise
    assert!(mean(&noise).abs() < 3.0 * sd(&noise) / 10.0);
}

#[test]
fn preaveraged_components_have_the_stated_orders() {
    let omega2 = 1e-4;
    let stats = |n: usize| {
        let su = setup(n);
        let (mut xbar, mut ubar, mut xhat_err) = (Vec::new(), Vec::new(), Vec::new());
        for s in 0..40 {
            let p = path("0", "one", 1.0, n, child_seed(10, s));
            let latent = ObservationSeries::new(p.x.clone()).unwrap();
            let z = observe(&p, omega2, child_seed(11, s));
            let noise = ObservationSeries::new(z.z.iter().zip(&p.x).map(|(a, b)| a - b).collect()).unwrap();
            xbar.push(rms(preaverage(&latent, su.table_m()).unwrap().zbar.into_iter()));
            ubar.push(rms(preaverage(&noise, su.table_m()).unwrap().zbar.into_iter()));
            let xhat = local_price_hat(&z, su.plan.m_n).unwrap();
            xhat_err.push(rms(xhat.iter().zip(&p.x).map(|(a, b)| a - b)));
        }
        (mean(&xbar), mean(&ubar), mean(&xhat_err), su.plan.m_n as f64)
    };
    let (a, b) = (stats(1024), stats(16_384));
    let within = |ratio: f64, target: f64| (ratio / target - 1.0).abs() < 0.3;
    // X-bar ~ sqrt(m/n), U-bar ~ sqrt(1/m), xhat error ~ n^(-1/4)
    assert!(within(b.0 / a.0, ((b.3 / 16_384.0) / (a.3 / 1024.0)).sqrt()));
    assert!(within(b.1 / a.1, (a.3 / b.3).sqrt()));
    assert!(within(b.2 / a.2, 0.5));
}

#[test]
fn homoscedastic_fit_and_variance_density() {
    let n = 16_384;
    let su = setup(n);
    let omega2 = 0.01;
    let one = HypothesisSpec::parse(&["one"]).unwrap();
    let (mut theta, mut gsum) = (Vec::new(), Vec::new());
    for s in 0..100 {
        let p = path("0", "one", 1.0, n, child_seed(12, s));
        let a = analyze_linear(&observe(&p, omega2, child_seed(13, s)), &one, &su).unwrap();
        theta.push(a.fit().theta_hat[0]);
        gsum.push(a.gamma.iter().sum::<f64>());
    }
    assert!((mean(&theta) - 1.0).abs() < 0.1);

    let c = &su.asymptotic;
    let kappa = su.plan.kappa_eff();
    let target = 4.0 / (c.psi2 * c.psi2)
        * (c.phi22 * kappa + 2.0 * c.phi12 * omega2 / kappa + c.phi11 * omega2 * omega2 / kappa.powi(3));
    assert!((mean(&gsum) / target - 1.0).abs() < 0.15, "{} vs {target}", mean(&gsum));
}

#[test]
fn variance_at_one_is_positive_for_a_varying_basis() {
    let n = 4096;
    let p = path("0.1*x", "x2", 1.0, n, 14);
    let a = analyze_linear(&observe(&p, 0.1024 / n as f64, 15), &HypothesisSpec::parse(&["x2"]).unwrap(), &setup(n))
        .unwrap();
    assert!(a.s2.value[n] > 0.0);
}

#[test]
fn multiplicative_fit_recovers_theta() {
    let n = 4096;
    let su = setup(n);
    let x2 = HypothesisSpec::parse(&["x2"]).unwrap();
    let est: Vec<f64> = (0..100)
        .map(|s| {
            let p = path("0.1*x", "x2", 1.0, n, child_seed(16, s));
            fit_linear(&observe(&p, 0.1024 / n as f64, child_seed(17, s)), &x2, &su).unwrap().theta_hat[0]
        })
        .collect();
    assert!((mean(&est) - 1.0).abs() < 0.15);
}

#[test]
fn bridge_statistic_follows_kolmogorov_law() {
    let n = 16_384;
    let su = setup(n);
    let one = HypothesisSpec::parse(&["one"]).unwrap();
    let mut y: Vec<f64> = (0..1000)
        .map(|s| {
            let p = path("0.1*x", "one", 1.0, n, child_seed(18, s));
            analyze_linear(&observe(&p, 0.1024 / n as f64, child_seed(19, s)), &one, &su)
                .unwrap()
                .bridge_statistic()
                .unwrap()
        })
        .collect();
    y.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q95 = y[949];
    assert!((q95 / kolmogorov_quantile(0.05).unwrap() - 1.0).abs() < 0.1, "q95 {q95}");
}

#[test]
fn level_estimators_on_the_long_window() {
    let n = 16_384;
    let su = setup(n);
    let one = HypothesisSpec::parse(&["one"]).unwrap();
    let (mut sbar, mut theta, mut h0) = (Vec::new(), Vec::new(), Vec::new());
    for s in 0..100 {
        let p = path("0", "one", 1.0, n, child_seed(20, s));
        let a = analyze_abs(&observe(&p, 0.1024 / n as f64, child_seed(21, s)), &one, &su).unwrap();
        sbar.push(mean(&a.sigma_bar));
        theta.push(a.fit().thetabar_hat[0]);
        h0.push(a.gamma.iter().sum::<f64>());
    }
    assert!((mean(&sbar) - 1.0).abs() < 0.15);
    assert!((mean(&theta) - 1.0).abs() < 0.15);
    let c = &su.asymptotic;
    let target = 2.0 * su.plan.rho_eff() * c.xi / (c.mu1 * c.mu1);
    assert!((mean(&h0) / target - 1.0).abs() < 0.2, "{} vs {target}", mean(&h0));
}

fn abs_sup(drift: &str, sigma2: &str, n: usize, runs: u64, salt: u64) -> Vec<f64> {
    let su = setup(n);
    let absx = HypothesisSpec::parse(&["absx"]).unwrap();
    (0..runs)
        .map(|s| {
            let p = path(drift, sigma2, 1.0, n, child_seed(salt, s));
            let a = analyze_abs(&observe(&p, 0.1024 / n as f64, child_seed(salt + 1, s)), &absx, &su).unwrap();
            a.m_hat.sup_abs()
        })
        .collect()
}

#[test]
fn level_process_rate_under_null_and_alternative() {
    let scale = |n: usize| (n as f64).powf(0.25 - 0.125);
    let mut small: Vec<f64> = abs_sup("0.1*x", "x2", 1024, 100, 22).iter().map(|v| v * scale(1024)).collect();
    let mut large: Vec<f64> = abs_sup("0.1*x", "x2", 4096, 100, 24).iter().map(|v| v * scale(4096)).collect();
    let ratio = median(&mut large) / median(&mut small);
    assert!((ratio - 1.0).abs() < 0.35, "null ratio {ratio}");

    // under sigma = 1 the unscaled sup settles instead of shrinking like n^(-1/8)
    let mut alt_small = abs_sup("0.1*x", "one", 1024, 100, 26);
    let mut alt_large = abs_sup("0.1*x", "one", 16_384, 100, 28);
    let alt_ratio = median(&mut alt_large) / median(&mut alt_small);
    assert!(alt_ratio > 0.85, "alternative ratio {alt_ratio}");
}

#[test]
fn null_fit_under_pure_noise_and_without_noise() {
    let n = 4096;
    let su = setup(n);
    let one = HypothesisSpec::parse(&["one"]).unwrap();
    let flat = path("0", "0*one", 1.0, n, 0);
    let (mut theta, mut omega) = (Vec::new(), Vec::new());
    for s in 0..100 {
        let z = observe(&flat, 1e-4, child_seed(30, s));
        theta.push(fit_linear(&z, &one, &su).unwrap().theta_hat[0]);
        omega.push(noise_variance_hat(&z));
    }
    assert!(mean(&theta).abs() < 3.0 * sd(&theta) / 10.0);
    assert!((mean(&omega) / 1e-4 - 1.0).abs() < 0.1);

    // no noise: the estimator reports the signal's share, sigma^2 / 2n
    let p = path("0", "one", 1.0, n, 31);
    let clean = ObservationSeries::new(p.x.clone()).unwrap();
    let rv: f64 = p.x.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    assert_eq!(noise_variance_hat(&clean), rv / (2.0 * n as f64));
    assert!((noise_variance_hat(&clean) * 2.0 * n as f64 - 1.0).abs() < 0.1);
}

#[test]
fn two_parameter_family_recovers_truth() {
    let n = 16_384;
    let su = setup(n);
    let fam = NonlinearFamily::linear(vec![Func::constant(1.0), "x2".parse().unwrap()], vec![[0.0, 5.0], [0.0, 5.0]])
        .unwrap();
    let cfg = OptimizerConfig::default();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for s in 0..100 {
        let p = path("0.1*x", "0.5*one+0.5*x2", 1.0, n, child_seed(32, s));
        let fit = fit_nonlinear(&observe(&p, 0.1024 / n as f64, child_seed(33, s)), &fam, &su, &cfg).unwrap();
        a.push(fit.theta_hat[0]);
        b.push(fit.theta_hat[1]);
    }
    assert!((mean(&a) / 0.5 - 1.0).abs() < 0.2, "{}", mean(&a));
    assert!((mean(&b) / 0.5 - 1.0).abs() < 0.2, "{}", mean(&b));
}

#[test]
fn nonlinear_estimate_spread_shrinks_at_quarter_rate() {
    let fam = NonlinearFamily::power(vec![[0.01, 10.0], [0.0, 4.0]]).unwrap();
    let cfg = OptimizerConfig::default();
    let spread = |n: usize| {
        let su = setup(n);
        let est: Vec<f64> = (0..100)
            .map(|s| {
                let p = path("0.1*x", "x2", 1.0, n, child_seed(34 + n as u64, s));
                fit_nonlinear(&observe(&p, 0.1024 / n as f64, child_seed(35 + n as u64, s)), &fam, &su, &cfg)
                    .unwrap()
                    .theta_hat[0]
            })
            .collect();
        sd(&est)
    };
    let ratio = spread(16_384) / spread(1024);
    assert!((0.35..=0.72).contains(&ratio), "ratio {ratio}");
}

#[test]
fn realised_variance_test_keeps_level_without_noise() {
    let n = 16_384;
    let crit = kolmogorov_quantile(0.05).unwrap();
    let rejections = (0..1000)
        .filter(|&s| {
            let p = path("0", "one", 0.0, n, child_seed(36, s));
            naive_t_n(&ObservationSeries::new(p.x).unwrap()).unwrap().t_n > crit
        })
        .count();
    assert!((rejections as f64 / 1000.0 - 0.05).abs() < 0.02, "{rejections}");
}

#[test]
fn noisefree_bootstrap_keeps_level_without_noise() {
    let n = 256;
    let su = setup(n);
    let pipe = Pipeline::Noisefree { hypothesis: HypothesisSpec::parse(&["x2"]).unwrap(), functional: Functional::Ks };
    let mut rejections = 0;
    for s in 0..500 {
        let p = path("0.1*x", "x2", 1.0, n, child_seed(38, s));
        let cfg = BootstrapConfig {
            replications: 200,
            master_seed: child_seed(39, s),
            alpha: 0.05,
            substeps: SUBSTEPS,
            verbose: false,
        };
        if bootstrap_sample(&ObservationSeries::new(p.x).unwrap(), &pipe, &su, &cfg).unwrap().rejects(0.05) {
            rejections += 1;
        }
    }
    assert!((rejections as f64 / 500.0 - 0.05).abs() < 0.03, "{rejections}");
}

#[test]
fn bootstrap_p_values_are_uniform_under_the_null_model() {
    let n = 1024;
    let su = setup(n);
    let pipe = Pipeline::Linear { hypothesis: HypothesisSpec::parse(&["one"]).unwrap(), functional: Functional::Ks };
    let null = NullModel {
        volatility: NullVolatility::Variance { sigma2: Func::constant(1.0) },
        theta: vec![1.0],
        omega2_hat: 1e-4,
        x0_star: 1.0,
        noisy: true,
    };
    let runs = 500;
    let mut p: Vec<f64> = (0..runs)
        .map(|s| {
            let (z, _) = null.resample(n, SUBSTEPS, child_seed(40, s)).unwrap();
            let cfg = BootstrapConfig {
                replications: 200,
                master_seed: child_seed(41, s),
                alpha: 0.05,
                substeps: SUBSTEPS,
                verbose: false,
            };
            bootstrap_sample(&z, &pipe, &su, &cfg).unwrap().p_value()
        })
        .collect();
    p.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let dist = p
        .iter()
        .enumerate()
        .map(|(i, v)| ((i + 1) as f64 / runs as f64 - v).abs().max((v - i as f64 / runs as f64).abs()))
        .fold(0.0, f64::max);
    assert!(dist < 0.08, "Kolmogorov distance {dist}");
}
