//! Monte Carlo studies and single-test runs driven by a declarative config.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{naive_decision, naive_t_n};
use crate::bootstrap::{asymptotic_test, bootstrap_sample, bootstrap_test, BootstrapConfig, Pipeline};
use crate::error::{Error, Result};
use crate::func::Func;
use crate::gof_linear::HypothesisSpec;
use crate::kernel::{
    asymptotic_constants, KernelConstants, KernelSetup, TuningPlan, WeightFunction, DEFAULT_QUADRATURE_POINTS,
};
use crate::projection::Functional;
use crate::report::{Cell, OutputFormat, ReportTable, TableRow, TestReport};
use crate::rng::child_seed;
use crate::simulate::{
    add_noise, load_observations, simulate, HestonParams, ModelSpec, NoiseKind, NoiseSpec, ObservationSeries,
    DEFAULT_SUBSTEPS,
};

/// Largest tolerated fraction of failed Monte Carlo runs.
pub const MAX_STUDY_FAILURES: f64 = 0.05;

/// `n omega^2` used by the noisy-data tables.
pub const N_OMEGA2: f64 = 0.1024;

/// Starting value of the local-volatility models.
pub const LOCAL_VOL_X0: f64 = 1.0;

/// `sigma^2 = theta x^2` in the noise-free bootstrap table. With drift `0.1 x`
/// the model is scale free in `x`, so `theta` sets how much `x^2` moves and
/// `theta x0^2` sets the signal against the noise.
pub const TABLE2_THETA: f64 = 1.0;

/// Starting value of the noise-free bootstrap table.
pub const TABLE2_X0: f64 = 0.11;

/// Starting value of the constant and `1 + |x|` alternatives in the power table.
pub const TABLE6_ALT_X0: f64 = 4.0;

/// Starting log-price of the Heston alternative.
pub const HESTON_X0: f64 = 0.0;

/// Initial Heston variance. The daily-scale long-run mean would be buried
/// under `n omega^2 = 0.1024` noise, so the path starts at unit variance like
/// the local-volatility designs; slow mean reversion keeps it near there.
pub const HESTON_NU0: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Table1,
    Table2,
    Table3,
    Table4,
    Table5,
    Table6,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Naive,
    Asymptotic,
    Bootstrap,
}

/// Noise given directly or through `n omega^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default = "gaussian")]
    pub kind: NoiseKind,
    pub omega2: Option<f64>,
    pub omega: Option<f64>,
    pub n_omega2: Option<f64>,
}

fn gaussian() -> NoiseKind {
    NoiseKind::Gaussian
}

impl NoiseConfig {
    pub fn resolve(&self, n: usize) -> Result<NoiseSpec> {
        let given = [self.omega2.is_some(), self.omega.is_some(), self.n_omega2.is_some()];
        let count = given.iter().filter(|&&b| b).count();
        if self.kind == NoiseKind::None {
            if count > 0 {
                return Err(Error::Config("noise kind \"none\" takes no variance".into()));
            }
            return Ok(NoiseSpec::none());
        }
        if count != 1 {
            return Err(Error::Config("noise needs exactly one of omega2, omega, n_omega2".into()));
        }
        let omega2 = self.omega2.or(self.omega.map(|w| w * w)).or(self.n_omega2.map(|s| s / n as f64)).unwrap_or(0.0);
        if !(omega2 >= 0.0 && omega2.is_finite()) {
            return Err(Error::Config(format!("noise variance must be finite and >= 0, got {omega2}")));
        }
        Ok(NoiseSpec { kind: self.kind, omega2 })
    }
}

/// One row of a study: a data-generating process at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub key: String,
    pub n: usize,
    pub model: ModelSpec,
    pub noise: NoiseSpec,
}

/// Window and kernel-constant choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    #[serde(default = "half")]
    pub kappa: f64,
    #[serde(default = "half")]
    pub rho: f64,
    #[serde(default = "quarter")]
    pub delta: f64,
    #[serde(default = "yes")]
    pub finite_sample: bool,
    #[serde(default = "quadrature")]
    pub quadrature_points: usize,
}

fn half() -> f64 {
    0.5
}
fn quarter() -> f64 {
    0.25
}
fn yes() -> bool {
    true
}
fn quadrature() -> usize {
    DEFAULT_QUADRATURE_POINTS
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            kappa: 0.5,
            rho: 0.5,
            delta: 0.25,
            finite_sample: true,
            quadrature_points: DEFAULT_QUADRATURE_POINTS,
        }
    }
}

impl PlanConfig {
    pub fn constants(&self) -> Result<KernelConstants> {
        asymptotic_constants(&WeightFunction::MinHat, self.quadrature_points)
    }

    pub fn setup(&self, n: usize, asymptotic: &KernelConstants) -> Result<KernelSetup> {
        let plan = TuningPlan::new(n, self.kappa, self.rho, self.delta)?;
        KernelSetup::new(WeightFunction::MinHat, plan, asymptotic.clone(), self.finite_sample)
    }
}

/// A fully resolved Monte Carlo study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyDefinition {
    pub title: String,
    pub row_label: String,
    pub scenarios: Vec<Scenario>,
    pub method: TestMethod,
    pub pipeline: Option<Pipeline>,
    pub plan: PlanConfig,
    pub mc_runs: usize,
    pub replications: usize,
    pub alphas: Vec<f64>,
    pub master_seed: u64,
    pub substeps: usize,
}

/// Scale of the preset studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scale {
    pub mc_runs: usize,
    pub replications: usize,
    pub max_n: usize,
}

impl Scale {
    pub const DESK: Scale = Scale { mc_runs: 500, replications: 200, max_n: 4096 };
    pub const PAPER: Scale = Scale { mc_runs: 1000, replications: 500, max_n: 16384 };
}

pub const PAPER_ALPHAS: [f64; 3] = [0.025, 0.05, 0.1];

fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn hyp(basis: &[&str]) -> HypothesisSpec {
    HypothesisSpec::parse(basis).expect("catalog basis")
}

fn local(drift: &str, sigma2: Func, x0: f64) -> ModelSpec {
    ModelSpec::LocalVol { drift: drift.parse().expect("catalog drift"), sigma2, x0 }
}

fn sizes(all: &[usize], scale: Scale) -> Vec<usize> {
    all.iter().cloned().filter(|&n| n <= scale.max_n).collect()
}

/// Parameters of each table as printed, at the requested scale.
pub fn preset_study(preset: Preset, scale: Scale) -> Result<StudyDefinition> {
    let base = |title: &str, row_label: &str, scenarios, method, pipeline| StudyDefinition {
        title: title.into(),
        row_label: row_label.into(),
        scenarios,
        method,
        pipeline,
        plan: PlanConfig::default(),
        mc_runs: scale.mc_runs,
        replications: scale.replications,
        alphas: PAPER_ALPHAS.to_vec(),
        master_seed: 20240601,
        substeps: DEFAULT_SUBSTEPS,
    };
    let ks = Functional::Ks;
    Ok(match preset {
        Preset::Table1 => {
            let n = 16384;
            let mut sc = Vec::new();
            for omega in [0.01, 0.0025, 0.000625] {
                for theta in [1.0, 0.75, 0.5, 0.25, 0.0] {
                    let sigma2 =
                        Func::from_terms(vec![(theta, crate::func::Atom::One), (1.0 - theta, crate::func::Atom::X2)]);
                    sc.push(Scenario {
                        key: format!("omega={},theta={}", fmt_num(omega), fmt_num(theta)),
                        n,
                        model: local("0", sigma2, LOCAL_VOL_X0),
                        noise: NoiseSpec::gaussian(omega * omega),
                    });
                }
            }
            base("Level of the realised-variance test under noise", "omega,theta", sc, TestMethod::Naive, None)
        }
        Preset::Table2 => {
            let mut sc = Vec::new();
            for n in sizes(&[256, 1024], scale) {
                for omega in [0.001, 0.002, 0.004, 0.005, 0.01] {
                    sc.push(Scenario {
                        key: format!("n={n},omega={}", fmt_num(omega)),
                        n,
                        model: local("0.1*x", Func::scaled(TABLE2_THETA, crate::func::Atom::X2), TABLE2_X0),
                        noise: NoiseSpec::gaussian(omega * omega),
                    });
                }
            }
            let p = Pipeline::Noisefree { hypothesis: hyp(&["x2"]), functional: ks };
            base("Level of the noise-free bootstrap test under noise", "n,omega", sc, TestMethod::Bootstrap, Some(p))
        }
        Preset::Table3 => {
            let sc = sizes(&[256, 1024, 4096, 16384], scale)
                .into_iter()
                .map(|n| Scenario {
                    key: format!("{n}"),
                    n,
                    model: local("0.1*x", Func::constant(1.0), LOCAL_VOL_X0),
                    noise: NoiseSpec::gaussian_scaled(N_OMEGA2, n),
                })
                .collect();
            let p = Pipeline::Linear { hypothesis: hyp(&["one"]), functional: ks };
            base("Level of the asymptotic homoscedasticity test", "n", sc, TestMethod::Asymptotic, Some(p))
        }
        Preset::Table4 => {
            // rows for both hypotheses; the pipeline is chosen per row
            let mut sc = Vec::new();
            for (name, sigma2) in [("one", "one"), ("x2", "x2")] {
                for n in sizes(&[256, 1024, 4096], scale) {
                    sc.push(Scenario {
                        key: format!("basis={name},n={n}"),
                        n,
                        model: local("0.1*x", sigma2.parse()?, LOCAL_VOL_X0),
                        noise: NoiseSpec::gaussian_scaled(N_OMEGA2, n),
                    });
                }
            }
            base("Bootstrap level of the linear test", "basis,n", sc, TestMethod::Bootstrap, None)
        }
        Preset::Table5 => {
            let sc = sizes(&[256, 1024], scale)
                .into_iter()
                .map(|n| Scenario {
                    key: format!("{n}"),
                    n,
                    model: local("0.1*x", "x2".parse().expect("catalog"), LOCAL_VOL_X0),
                    noise: NoiseSpec::gaussian_scaled(N_OMEGA2, n),
                })
                .collect();
            let p = Pipeline::Abs { hypothesis: hyp(&["absx"]), functional: ks };
            base("Bootstrap level of the volatility-level test", "n", sc, TestMethod::Bootstrap, Some(p))
        }
        Preset::Table6 => {
            let mut sc = Vec::new();
            for (name, model) in [
                ("one", local("0.1*x", Func::constant(1.0), TABLE6_ALT_X0)),
                ("one_plus_absx", local("0.1*x", "one_plus_absx".parse()?, TABLE6_ALT_X0)),
                ("heston", ModelSpec::Heston(HestonParams { nu0: HESTON_NU0, ..HestonParams::paper(HESTON_X0) })),
            ] {
                for n in sizes(&[256, 1024], scale) {
                    sc.push(Scenario {
                        key: format!("alt={name},n={n}"),
                        n,
                        model: model.clone(),
                        noise: NoiseSpec::gaussian_scaled(N_OMEGA2, n),
                    });
                }
            }
            let p = Pipeline::Linear { hypothesis: hyp(&["x2"]), functional: ks };
            base("Bootstrap power against the null theta x^2", "alt,n", sc, TestMethod::Bootstrap, Some(p))
        }
        Preset::Custom => return Err(Error::Config("the custom preset has no defaults".into())),
    })
}

/// Pipeline for a row of the table-4 preset, which tests two hypotheses.
fn row_pipeline(def: &StudyDefinition, scenario: &Scenario) -> Result<Pipeline> {
    if let Some(p) = &def.pipeline {
        return Ok(p.clone());
    }
    let basis = scenario
        .key
        .strip_prefix("basis=")
        .and_then(|s| s.split(',').next())
        .ok_or_else(|| Error::Config(format!("no pipeline for row {:?}", scenario.key)))?;
    Ok(Pipeline::Linear { hypothesis: HypothesisSpec::parse(&[basis])?, functional: Functional::Ks })
}

fn bootstrap_config(def: &StudyDefinition, seed: u64, alpha: f64) -> BootstrapConfig {
    BootstrapConfig { replications: def.replications, master_seed: seed, alpha, substeps: def.substeps, verbose: false }
}

/// Data of run `run` of scenario `row`.
pub fn study_series(def: &StudyDefinition, row: usize, run: usize) -> Result<ObservationSeries> {
    let sc = &def.scenarios[row];
    let seed = child_seed(child_seed(def.master_seed, row as u64), run as u64);
    let path = simulate(&sc.model, sc.n, def.substeps, child_seed(seed, 0))?;
    add_noise(&path, &sc.noise, child_seed(seed, 0))
}

/// Rejection decisions of one run, one per level.
fn run_once(
    def: &StudyDefinition,
    row: usize,
    run: usize,
    setup: Option<&KernelSetup>,
    pipeline: Option<&Pipeline>,
) -> Result<Vec<bool>> {
    let series = study_series(def, row, run)?;
    let boot_seed = child_seed(child_seed(child_seed(def.master_seed, row as u64), run as u64), 1);
    match def.method {
        TestMethod::Naive => {
            let stats = naive_t_n(&series)?;
            def.alphas.iter().map(|&a| Ok(naive_decision(&stats, a)?.decision.is_reject())).collect()
        }
        TestMethod::Asymptotic => {
            let (p, setup) =
                pipeline.zip(setup).ok_or_else(|| Error::Config("asymptotic study needs a pipeline".into()))?;
            def.alphas.iter().map(|&a| Ok(asymptotic_test(&series, p, setup, a)?.decision.is_reject())).collect()
        }
        TestMethod::Bootstrap => {
            let (p, setup) =
                pipeline.zip(setup).ok_or_else(|| Error::Config("bootstrap study needs a pipeline".into()))?;
            let out = bootstrap_sample(&series, p, setup, &bootstrap_config(def, boot_seed, def.alphas[0]))?;
            Ok(def.alphas.iter().map(|&a| out.rejects(a)).collect())
        }
    }
}

pub fn validate_study(def: &StudyDefinition) -> Result<()> {
    if def.mc_runs == 0 {
        return Err(Error::Config("mc_runs must be at least 1".into()));
    }
    if def.alphas.is_empty() || def.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::Config("alphas must be a nonempty list of levels in (0, 1)".into()));
    }
    if def.method == TestMethod::Bootstrap {
        bootstrap_config(def, 0, def.alphas[0]).validate()?;
    }
    Ok(())
}

/// Progress callback: `(row key, finished rows, total rows)`.
pub type Progress<'a> = &'a (dyn Fn(&str, usize, usize) + Sync);

/// Runs the study row by row; stops at the first row whose failure rate exceeds
/// the limit and returns the rows completed so far with the error.
pub fn run_mc_study_partial(def: &StudyDefinition, progress: Option<Progress>) -> (ReportTable, Option<Error>) {
    let mut table = ReportTable::new(def.title.clone(), def.row_label.clone(), def.alphas.clone(), def.mc_runs);
    if let Err(e) = validate_study(def) {
        return (table, Some(e));
    }
    let asymptotic = match def.plan.constants() {
        Ok(c) => c,
        Err(e) => return (table, Some(e)),
    };
    let total = def.scenarios.len();
    for (row, sc) in def.scenarios.iter().enumerate() {
        let prepared = (|| -> Result<(Option<KernelSetup>, Option<Pipeline>)> {
            let setup = match def.method {
                TestMethod::Naive => None,
                _ => Some(def.plan.setup(sc.n, &asymptotic)?),
            };
            let pipeline = match def.method {
                TestMethod::Naive => None,
                _ => Some(row_pipeline(def, sc)?),
            };
            Ok((setup, pipeline))
        })();
        let (setup, pipeline) = match prepared {
            Ok(v) => v,
            Err(e) => return (table, Some(e)),
        };
        let results: Vec<Result<Vec<bool>>> = (0..def.mc_runs)
            .into_par_iter()
            .map(|run| run_once(def, row, run, setup.as_ref(), pipeline.as_ref()))
            .collect();
        let mut rejections = vec![0usize; def.alphas.len()];
        let mut ok = 0;
        let mut failures = 0;
        for r in &results {
            match r {
                Ok(d) => {
                    ok += 1;
                    for (c, &rej) in rejections.iter_mut().zip(d) {
                        *c += rej as usize;
                    }
                }
                Err(_) => failures += 1,
            }
        }
        table.rows.push(TableRow {
            key: sc.key.clone(),
            cells: def.alphas.iter().zip(&rejections).map(|(&a, &r)| Cell::new(a, r, ok)).collect(),
            failures,
        });
        if let Some(p) = progress {
            p(&sc.key, row + 1, total);
        }
        if failures as f64 > MAX_STUDY_FAILURES * def.mc_runs as f64 {
            return (table, Some(Error::StudyAborted { failed: failures, total: def.mc_runs }));
        }
    }
    (table, None)
}

pub fn run_mc_study(def: &StudyDefinition, progress: Option<Progress>) -> Result<ReportTable> {
    match run_mc_study_partial(def, progress) {
        (table, None) => Ok(table),
        (_, Some(e)) => Err(e),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSection {
    pub replications: Option<usize>,
    pub substeps: Option<usize>,
    pub verbose: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub path: Option<PathBuf>,
    pub format: Option<OutputFormat>,
}

/// Kernel choices that may accompany a preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    pub kappa: Option<f64>,
    pub rho: Option<f64>,
    pub delta: Option<f64>,
    pub finite_sample: Option<bool>,
    pub quadrature_points: Option<usize>,
}

/// The declarative experiment file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Option<Preset>,
    #[serde(default)]
    pub paper_scale: bool,
    pub title: Option<String>,
    pub mc_runs: Option<usize>,
    pub master_seed: Option<u64>,
    pub alphas: Option<Vec<f64>>,
    /// Keep only these row keys.
    pub rows: Option<Vec<String>>,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub plan: PlanSection,
    #[serde(default)]
    pub output: OutputSection,
    pub model: Option<ModelSpec>,
    pub noise: Option<NoiseConfig>,
    pub sizes: Option<Vec<usize>>,
    pub method: Option<TestMethod>,
    pub pipeline: Option<Pipeline>,
    /// Observations for a single test.
    pub data: Option<PathBuf>,
    /// Level of a single test.
    pub alpha: Option<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    fn is_preset(&self) -> bool {
        matches!(self.preset, Some(p) if p != Preset::Custom)
    }

    fn check_preset_conflicts(&self) -> Result<()> {
        if !self.is_preset() {
            return Ok(());
        }
        let conflicts = [
            ("model", self.model.is_some()),
            ("noise", self.noise.is_some()),
            ("sizes", self.sizes.is_some()),
            ("method", self.method.is_some()),
            ("pipeline", self.pipeline.is_some()),
            ("plan.kappa", self.plan.kappa.is_some()),
            ("plan.rho", self.plan.rho.is_some()),
            ("plan.delta", self.plan.delta.is_some()),
        ];
        let set: Vec<&str> = conflicts.iter().filter(|c| c.1).map(|c| c.0).collect();
        if !set.is_empty() {
            return Err(Error::Config(format!(
                "preset {:?} fixes {}; use preset = \"custom\" to set them",
                self.preset.unwrap_or(Preset::Custom),
                set.join(", ")
            )));
        }
        Ok(())
    }

    fn plan_config(&self) -> PlanConfig {
        let d = PlanConfig::default();
        PlanConfig {
            kappa: self.plan.kappa.unwrap_or(d.kappa),
            rho: self.plan.rho.unwrap_or(d.rho),
            delta: self.plan.delta.unwrap_or(d.delta),
            finite_sample: self.plan.finite_sample.unwrap_or(d.finite_sample),
            quadrature_points: self.plan.quadrature_points.unwrap_or(d.quadrature_points),
        }
    }

    pub fn scale(&self) -> Scale {
        if self.paper_scale {
            Scale::PAPER
        } else {
            Scale::DESK
        }
    }

    /// Resolve to a study; presets supply every data-generating field.
    pub fn study(&self) -> Result<StudyDefinition> {
        self.check_preset_conflicts()?;
        let scale = self.scale();
        let mut def = if self.is_preset() {
            preset_study(self.preset.unwrap_or(Preset::Custom), scale)?
        } else {
            let missing: Vec<&str> = [
                ("model", self.model.is_none()),
                ("noise", self.noise.is_none()),
                ("sizes", self.sizes.is_none()),
                ("method", self.method.is_none()),
            ]
            .iter()
            .filter(|c| c.1)
            .map(|c| c.0)
            .collect();
            if !missing.is_empty() {
                return Err(Error::Config(format!("custom study is missing {}", missing.join(", "))));
            }
            let method = self.method.unwrap_or(TestMethod::Bootstrap);
            if method != TestMethod::Naive && self.pipeline.is_none() {
                return Err(Error::Config("custom study is missing pipeline".into()));
            }
            let model = self.model.clone().unwrap_or(ModelSpec::Heston(HestonParams::paper(0.0)));
            let noise =
                self.noise.unwrap_or(NoiseConfig { kind: NoiseKind::None, omega2: None, omega: None, n_omega2: None });
            let scenarios = self
                .sizes
                .clone()
                .unwrap_or_default()
                .into_iter()
                .map(|n| Ok(Scenario { key: format!("{n}"), n, model: model.clone(), noise: noise.resolve(n)? }))
                .collect::<Result<Vec<_>>>()?;
            StudyDefinition {
                title: self.title.clone().unwrap_or_else(|| "Custom study".into()),
                row_label: "n".into(),
                scenarios,
                method,
                pipeline: self.pipeline.clone(),
                plan: PlanConfig::default(),
                mc_runs: scale.mc_runs,
                replications: scale.replications,
                alphas: PAPER_ALPHAS.to_vec(),
                master_seed: 1,
                substeps: DEFAULT_SUBSTEPS,
            }
        };
        def.plan = self.plan_config();
        if let Some(t) = &self.title {
            def.title = t.clone();
        }
        if let Some(r) = self.mc_runs {
            def.mc_runs = r;
        }
        if let Some(s) = self.master_seed {
            def.master_seed = s;
        }
        if let Some(a) = &self.alphas {
            def.alphas = a.clone();
        }
        if let Some(r) = self.bootstrap.replications {
            def.replications = r;
        }
        if let Some(s) = self.bootstrap.substeps {
            def.substeps = s;
        }
        if let Some(keep) = &self.rows {
            if let Some(bad) = keep.iter().find(|k| !def.scenarios.iter().any(|s| &s.key == *k)) {
                return Err(Error::Config(format!("unknown row {bad:?}")));
            }
            def.scenarios.retain(|s| keep.contains(&s.key));
        }
        validate_study(&def)?;
        Ok(def)
    }

    pub fn output_format(&self) -> OutputFormat {
        self.output.format.unwrap_or(OutputFormat::Text)
    }
}

/// Observations for a single test: the configured file, or one simulated draw
/// of the first row of the study.
pub fn single_series(cfg: &ExperimentConfig, def: &StudyDefinition) -> Result<ObservationSeries> {
    match &cfg.data {
        Some(path) => load_observations(path),
        None => {
            if def.scenarios.is_empty() {
                return Err(Error::Config("no data file and no scenario to simulate".into()));
            }
            study_series(def, 0, 0)
        }
    }
}

/// One test on one series, as configured.
pub fn run_single_test(cfg: &ExperimentConfig, series: &ObservationSeries) -> Result<TestReport> {
    cfg.check_preset_conflicts()?;
    let def = if cfg.is_preset() || cfg.model.is_some() { Some(cfg.study()?) } else { None };
    let method = def.as_ref().map(|d| d.method).or(cfg.method).unwrap_or(TestMethod::Bootstrap);
    let alpha = cfg.alpha.unwrap_or(0.05);
    let master_seed = cfg.master_seed.unwrap_or(1);
    let plan = cfg.plan_config();
    let pipeline = match (&cfg.pipeline, &def) {
        (Some(p), _) => Some(p.clone()),
        (None, Some(d)) if d.method != TestMethod::Naive => {
            let row = d.scenarios.first().ok_or_else(|| Error::Config("study has no rows".into()))?;
            Some(row_pipeline(d, row)?)
        }
        _ => None,
    };
    match method {
        TestMethod::Naive => naive_decision(&naive_t_n(series)?, alpha),
        TestMethod::Asymptotic | TestMethod::Bootstrap => {
            let p = pipeline.ok_or_else(|| Error::Config("test needs a pipeline".into()))?;
            let setup = plan.setup(series.n, &plan.constants()?)?;
            if method == TestMethod::Asymptotic {
                asymptotic_test(series, &p, &setup, alpha)
            } else {
                let replications = cfg
                    .bootstrap
                    .replications
                    .or(def.as_ref().map(|d| d.replications))
                    .unwrap_or(BootstrapConfig::default().replications);
                let bc = BootstrapConfig {
                    replications,
                    master_seed,
                    alpha,
                    substeps: cfg.bootstrap.substeps.unwrap_or(DEFAULT_SUBSTEPS),
                    verbose: cfg.bootstrap.verbose.unwrap_or(false),
                };
                bootstrap_test(series, &p, &setup, &bc)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_noise_is_per_n() {
        let c = NoiseConfig { kind: NoiseKind::Gaussian, omega2: None, omega: None, n_omega2: Some(0.1024) };
        assert!((c.resolve(1024).unwrap().omega2 - 1e-4).abs() < 1e-18);
        assert!((c.resolve(4096).unwrap().omega2 - 2.5e-5).abs() < 1e-18);
        let both = NoiseConfig { omega: Some(0.1), ..c };
        assert!(both.resolve(10).is_err());
    }

    #[test]
    fn preset_with_custom_model_is_rejected() {
        let cfg = ExperimentConfig::from_toml(
            "preset = \"table3\"\n[model]\nkind = \"local_vol\"\ndrift = \"0\"\nsigma2 = \"one\"\nx0 = 1.0\n",
        )
        .unwrap();
        assert!(matches!(cfg.study(), Err(Error::Config(_))));
    }

    #[test]
    fn presets_respect_scale() {
        let d = preset_study(Preset::Table3, Scale::DESK).unwrap();
        assert_eq!(d.scenarios.iter().map(|s| s.n).collect::<Vec<_>>(), vec![256, 1024, 4096]);
        let p = preset_study(Preset::Table3, Scale::PAPER).unwrap();
        assert_eq!(p.scenarios.len(), 4);
        assert_eq!((p.mc_runs, p.replications), (1000, 500));
        assert!((p.scenarios[3].noise.omega2 * 16384.0 - N_OMEGA2).abs() < 1e-12);
        assert_eq!(preset_study(Preset::Table1, Scale::DESK).unwrap().scenarios.len(), 15);
    }

    #[test]
    fn custom_study_from_toml() {
        let text = r#"
preset = "custom"
mc_runs = 3
sizes = [64]
method = "naive"
alphas = [0.05]
[model]
kind = "local_vol"
drift = "0"
sigma2 = "one"
x0 = 0.0
[noise]
kind = "none"
"#;
        let def = ExperimentConfig::from_toml(text).unwrap().study().unwrap();
        let t = run_mc_study(&def, None).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].cells[0].runs, 3);
    }

    #[test]
    fn unknown_rows_are_config_errors() {
        let cfg = ExperimentConfig::from_toml("preset = \"table3\"\nrows = [\"12\"]\n").unwrap();
        assert!(matches!(cfg.study(), Err(Error::Config(_))));
        let cfg = ExperimentConfig::from_toml("preset = \"table3\"\nrows = [\"256\"]\n").unwrap();
        assert_eq!(cfg.study().unwrap().scenarios.len(), 1);
    }
}
