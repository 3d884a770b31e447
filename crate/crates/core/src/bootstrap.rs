//! Parametric bootstrap: fit the null model, resimulate under it, and compare
//! the observed statistic with the resampled ones.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::analyze_noisefree;
use crate::error::{Error, Result};
use crate::func::Func;
use crate::gof_abs::analyze_abs;
use crate::gof_linear::{analyze_linear, HypothesisSpec};
use crate::gof_nonlinear::{analyze_nonlinear, NonlinearFamily, OptimizerConfig};
use crate::kernel::{kolmogorov_cdf, kolmogorov_quantile, KernelSetup};
use crate::preavg::noise_variance_hat;
use crate::projection::Functional;
use crate::report::{Decision, Method, ReportMetadata, TestReport};
use crate::rng::{self, child_seed, Domain};
use crate::simulate::{draw_noise, euler_local_vol, NoiseSpec, ObservationSeries, DEFAULT_SUBSTEPS};

/// Replications below this count give no decision.
pub const MIN_REPLICATIONS: usize = 50;
/// Largest tolerated fraction of failed replications.
pub const MAX_FAILURE_FRACTION: f64 = 0.2;

/// Which statistic is computed on observed and resampled data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pipeline {
    Linear {
        hypothesis: HypothesisSpec,
        functional: Functional,
    },
    Abs {
        hypothesis: HypothesisSpec,
        functional: Functional,
    },
    Nonlinear {
        family: NonlinearFamily,
        functional: Functional,
        #[serde(default)]
        optimizer: OptimizerConfig,
    },
    Noisefree {
        hypothesis: HypothesisSpec,
        functional: Functional,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NullVolatility {
    /// `sigma^2 = f`.
    Variance {
        sigma2: Func,
    },
    /// `sigma^2 = f^2`.
    Level {
        sigma: Func,
    },
    Family {
        family: NonlinearFamily,
        theta: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullModel {
    pub volatility: NullVolatility,
    pub theta: Vec<f64>,
    pub omega2_hat: f64,
    pub x0_star: f64,
    /// Whether resampled data carry Gaussian noise with variance `omega2_hat`.
    pub noisy: bool,
}

impl NullModel {
    #[inline]
    pub fn sigma2(&self, t: f64, x: f64) -> f64 {
        match &self.volatility {
            NullVolatility::Variance { sigma2 } => sigma2.eval(t, x),
            NullVolatility::Level { sigma } => {
                let s = sigma.eval(t, x);
                s * s
            }
            NullVolatility::Family { family, theta } => family.sigma2(t, x, theta),
        }
    }

    /// One resampled series; also returns the number of variance clamps.
    pub fn resample(&self, n: usize, substeps: usize, seed: u64) -> Result<(ObservationSeries, usize)> {
        let mut rng = rng::stream(seed, Domain::Path);
        let (path, clamps) =
            euler_local_vol(|_, _| 0.0, |t, x| self.sigma2(t, x), self.x0_star, n, substeps, &mut rng, true)?;
        let mut z = path.x;
        if self.noisy {
            let mut u = vec![0.0; z.len()];
            draw_noise(&mut u, &NoiseSpec::gaussian(self.omega2_hat), &mut rng::stream(seed, Domain::Noise))?;
            z.iter_mut().zip(&u).for_each(|(a, b)| *a += b);
        }
        Ok((ObservationSeries::new(z)?, clamps))
    }
}

/// Observed statistic together with the null fitted to the same data.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub statistic: f64,
    pub null: NullModel,
    pub notes: Vec<String>,
}

impl Pipeline {
    pub fn functional(&self) -> Functional {
        match self {
            Pipeline::Linear { functional, .. }
            | Pipeline::Abs { functional, .. }
            | Pipeline::Nonlinear { functional, .. }
            | Pipeline::Noisefree { functional, .. } => *functional,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Linear { .. } => "linear",
            Pipeline::Abs { .. } => "abs",
            Pipeline::Nonlinear { .. } => "nonlinear",
            Pipeline::Noisefree { .. } => "noisefree",
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            Pipeline::Linear { hypothesis, .. }
            | Pipeline::Abs { hypothesis, .. }
            | Pipeline::Noisefree { hypothesis, .. } => hypothesis.descriptor(),
            Pipeline::Nonlinear { family, .. } => family.descriptor(),
        }
    }

    pub fn method(&self) -> Method {
        match self {
            Pipeline::Noisefree { .. } => Method::NoisefreeBootstrap,
            _ => Method::Bootstrap,
        }
    }

    /// Statistic on `series` and the null model fitted to it.
    pub fn evaluate(&self, series: &ObservationSeries, setup: &KernelSetup) -> Result<Evaluation> {
        let x0_star = series.z[0];
        match self {
            Pipeline::Linear { hypothesis, functional } => {
                let a = analyze_linear(series, hypothesis, setup)?;
                let theta = a.fit().theta_hat.clone();
                Ok(Evaluation {
                    statistic: a.statistic(*functional)?,
                    null: NullModel {
                        volatility: NullVolatility::Variance { sigma2: hypothesis.combine(&theta) },
                        theta,
                        omega2_hat: a.spot.omega2_hat,
                        x0_star,
                        noisy: true,
                    },
                    notes: Vec::new(),
                })
            }
            Pipeline::Abs { hypothesis, functional } => {
                let a = analyze_abs(series, hypothesis, setup)?;
                let theta = a.fit().thetabar_hat;
                Ok(Evaluation {
                    statistic: a.statistic(*functional)?,
                    null: NullModel {
                        volatility: NullVolatility::Level { sigma: hypothesis.combine(&theta) },
                        theta,
                        omega2_hat: noise_variance_hat(series),
                        x0_star,
                        noisy: true,
                    },
                    notes: Vec::new(),
                })
            }
            Pipeline::Nonlinear { family, functional, optimizer } => {
                let a = analyze_nonlinear(series, family, setup, optimizer)?;
                let theta = a.fit.theta_hat.clone();
                let mut notes = Vec::new();
                if a.hessian.flagged {
                    notes.push(format!("residual Hessian term is {:.1}% of the Gram term", 100.0 * a.hessian.ratio));
                }
                if !a.fit.optimizer_trace.converged {
                    notes.push("optimizer did not meet its tolerance".into());
                }
                Ok(Evaluation {
                    statistic: a.statistic(*functional)?,
                    null: NullModel {
                        volatility: NullVolatility::Family { family: family.clone(), theta: theta.clone() },
                        theta,
                        omega2_hat: a.spot.omega2_hat,
                        x0_star,
                        noisy: true,
                    },
                    notes,
                })
            }
            Pipeline::Noisefree { hypothesis, functional } => {
                let a = analyze_noisefree(series, hypothesis)?;
                let theta = a.fit.theta_hat.clone();
                Ok(Evaluation {
                    statistic: a.statistic(*functional)?,
                    null: NullModel {
                        volatility: NullVolatility::Variance { sigma2: hypothesis.combine(&theta) },
                        theta,
                        omega2_hat: noise_variance_hat(series),
                        x0_star,
                        noisy: false,
                    },
                    notes: Vec::new(),
                })
            }
        }
    }
}

pub fn fit_null(series: &ObservationSeries, pipeline: &Pipeline, setup: &KernelSetup) -> Result<NullModel> {
    Ok(pipeline.evaluate(series, setup)?.null)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replications: usize,
    pub master_seed: u64,
    pub alpha: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub verbose: bool,
}

fn default_substeps() -> usize {
    DEFAULT_SUBSTEPS
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { replications: 500, master_seed: 0, alpha: 0.05, substeps: DEFAULT_SUBSTEPS, verbose: false }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < MIN_REPLICATIONS {
            return Err(Error::Config(format!(
                "at least {MIN_REPLICATIONS} bootstrap replications are needed, got {}",
                self.replications
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be positive".into()));
        }
        Ok(())
    }
}

/// Observed statistic and the sorted bootstrap sample.
#[derive(Debug, Clone)]
pub struct BootstrapOutcome {
    pub statistic: f64,
    pub null: NullModel,
    /// Ascending.
    pub sample: Vec<f64>,
    pub failed: usize,
    pub clamp_events: usize,
    pub notes: Vec<String>,
}

impl BootstrapOutcome {
    /// Order statistic of rank `ceil((1 - alpha)(J + 1))`; infinite if that exceeds `J`.
    pub fn critical_value(&self, alpha: f64) -> f64 {
        let j = self.sample.len();
        let rank = ((1.0 - alpha) * (j + 1) as f64 - 1e-9).ceil() as usize;
        if rank == 0 {
            f64::NEG_INFINITY
        } else if rank > j {
            f64::INFINITY
        } else {
            self.sample[rank - 1]
        }
    }

    /// `(1 + #{Y* >= Y}) / (J + 1)`.
    pub fn p_value(&self) -> f64 {
        let above = self.sample.len() - self.sample.partition_point(|&v| v < self.statistic);
        (1 + above) as f64 / (self.sample.len() + 1) as f64
    }

    pub fn rejects(&self, alpha: f64) -> bool {
        self.statistic > self.critical_value(alpha)
    }
}

/// Observed statistic plus `replications` resampled statistics.
pub fn bootstrap_sample(
    series: &ObservationSeries,
    pipeline: &Pipeline,
    setup: &KernelSetup,
    config: &BootstrapConfig,
) -> Result<BootstrapOutcome> {
    config.validate()?;
    let observed = pipeline.evaluate(series, setup)?;
    let n = series.n;
    let results: Vec<Result<(f64, usize)>> = (0..config.replications as u64)
        .into_par_iter()
        .map(|j| {
            let (z, clamps) = observed.null.resample(n, config.substeps, child_seed(config.master_seed, j))?;
            Ok((pipeline.evaluate(&z, setup)?.statistic, clamps))
        })
        .collect();
    let mut sample = Vec::with_capacity(results.len());
    let mut failed = 0;
    let mut clamp_events = 0;
    for r in results {
        match r {
            Ok((y, c)) if y.is_finite() => {
                sample.push(y);
                clamp_events += c;
            }
            _ => failed += 1,
        }
    }
    if failed as f64 > MAX_FAILURE_FRACTION * config.replications as f64 {
        return Err(Error::BootstrapUnstable { failed, total: config.replications });
    }
    sample.sort_by(f64::total_cmp);
    Ok(BootstrapOutcome {
        statistic: observed.statistic,
        null: observed.null,
        sample,
        failed,
        clamp_events,
        notes: observed.notes,
    })
}

pub(crate) fn metadata(pipeline: &Pipeline, setup: &KernelSetup, n: usize) -> ReportMetadata {
    let plan = setup.plan;
    let (constants, offset) = match pipeline {
        Pipeline::Abs { .. } => (setup.active_l(), plan.l_n),
        Pipeline::Noisefree { .. } => (setup.active_m(), 0),
        _ => (setup.active_m(), plan.m_n),
    };
    let noisefree = matches!(pipeline, Pipeline::Noisefree { .. });
    ReportMetadata {
        pipeline: pipeline.name().into(),
        hypothesis: pipeline.descriptor(),
        n,
        plan: (!noisefree).then_some(plan),
        constants: (!noisefree).then_some(constants),
        kappa_eff: (!noisefree).then(|| plan.kappa_eff()),
        rho_eff: matches!(pipeline, Pipeline::Abs { .. }).then(|| plan.rho_eff()),
        index_convention: Some(format!(
            "local statistics k = 0..=n-{offset}; sums over k = 1..=n-{offset}; process at i/n sums k <= i-{offset}"
        )),
        floor: Some(format!("standardise by the scalar max_t s_t over i >= {}; s_t^2 floored at 0", offset + 1)),
        ..Default::default()
    }
}

pub fn bootstrap_test(
    series: &ObservationSeries,
    pipeline: &Pipeline,
    setup: &KernelSetup,
    config: &BootstrapConfig,
) -> Result<TestReport> {
    let out = bootstrap_sample(series, pipeline, setup, config)?;
    let mut metadata = metadata(pipeline, setup, series.n);
    metadata.master_seed = Some(config.master_seed);
    metadata.replications = Some(config.replications);
    metadata.failed_replications = Some(out.failed);
    metadata.clamp_events = Some(out.clamp_events);
    metadata.theta_hat = out.null.theta.clone();
    metadata.omega2_hat = Some(out.null.omega2_hat);
    metadata.notes = out.notes.clone();
    Ok(TestReport {
        statistic: out.statistic,
        functional: pipeline.functional(),
        alpha: config.alpha,
        decision: Decision::from_reject(out.rejects(config.alpha)),
        critical_value: out.critical_value(config.alpha),
        p_value: Some(out.p_value()),
        method: pipeline.method(),
        metadata,
        bootstrap_sample: config.verbose.then(|| out.sample.clone()),
    })
}

/// Kolmogorov critical value for the homoscedasticity hypothesis (basis `{1}`, KS).
pub fn asymptotic_test(
    series: &ObservationSeries,
    pipeline: &Pipeline,
    setup: &KernelSetup,
    alpha: f64,
) -> Result<TestReport> {
    let Pipeline::Linear { hypothesis, functional: Functional::Ks } = pipeline else {
        return Err(Error::InvalidSpec("asymptotic critical values exist only for the linear KS test".into()));
    };
    let canon: Vec<_> = hypothesis.basis.iter().map(|f| f.canonical()).collect();
    let constant = canon.len() == 1 && canon[0].len() == 1 && canon[0][0].0 == crate::func::Atom::One;
    if !constant {
        return Err(Error::InvalidSpec("asymptotic critical values need the constant basis {one}".into()));
    }
    let analysis = crate::gof_linear::analyze_linear(series, hypothesis, setup)?;
    let statistic = analysis.bridge_statistic()?;
    let crit = kolmogorov_quantile(alpha)?;
    let mut metadata = metadata(pipeline, setup, series.n);
    metadata.theta_hat = analysis.fit().theta_hat.clone();
    metadata.omega2_hat = Some(analysis.spot.omega2_hat);
    metadata.notes.push("standardised by the bridge scale sqrt(sum Gamma_k)".into());
    Ok(TestReport {
        statistic,
        functional: Functional::Ks,
        alpha,
        decision: Decision::from_reject(statistic > crit),
        critical_value: crit,
        p_value: Some(1.0 - kolmogorov_cdf(statistic)),
        method: Method::Asymptotic,
        metadata,
        bootstrap_sample: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(statistic: f64, sample: Vec<f64>) -> BootstrapOutcome {
        BootstrapOutcome {
            statistic,
            null: NullModel {
                volatility: NullVolatility::Variance { sigma2: Func::constant(1.0) },
                theta: vec![1.0],
                omega2_hat: 0.0,
                x0_star: 0.0,
                noisy: false,
            },
            sample,
            failed: 0,
            clamp_events: 0,
            notes: Vec::new(),
        }
    }

    #[test]
    fn order_statistic_and_p_value() {
        // J = 99: rank ceil(0.95 * 100) = 95
        let sample: Vec<f64> = (1..=99).map(|i| i as f64).collect();
        let o = outcome(96.5, sample);
        assert_eq!(o.critical_value(0.05), 95.0);
        assert_eq!(o.critical_value(0.1), 90.0);
        assert!(o.rejects(0.05));
        assert!((o.p_value() - 4.0 / 100.0).abs() < 1e-15);
        assert!(o.critical_value(0.025) >= o.critical_value(0.05));
    }

    #[test]
    fn constant_zero_statistic_never_rejects() {
        let o = outcome(0.0, vec![0.0; 200]);
        for a in [0.01, 0.05, 0.5] {
            assert!(!o.rejects(a));
        }
        assert_eq!(o.p_value(), 1.0);
    }

    #[test]
    fn config_needs_enough_replications() {
        let c = BootstrapConfig { replications: 49, ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(BootstrapConfig::default().validate().is_ok());
    }

    #[test]
    fn resample_is_deterministic() {
        let o = outcome(0.0, vec![]);
        let mut null = o.null;
        null.noisy = true;
        null.omega2_hat = 1e-4;
        let (a, _) = null.resample(64, 10, 9).unwrap();
        let (b, _) = null.resample(64, 10, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.z.len(), 65);
    }

    #[test]
    fn negative_null_variance_is_clamped() {
        let null = NullModel {
            volatility: NullVolatility::Variance { sigma2: Func::constant(-1.0) },
            theta: vec![-1.0],
            omega2_hat: 0.0,
            x0_star: 2.0,
            noisy: false,
        };
        let (z, clamps) = null.resample(16, 2, 1).unwrap();
        assert!(clamps > 0);
        assert!(z.z.iter().all(|&v| v == 2.0));
    }
}
