use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use volcheck::bootstrap::Pipeline;
use volcheck::experiment::{
    run_mc_study_partial, run_single_test, single_series, ExperimentConfig, Preset, TestMethod,
};
use volcheck::gof_linear::HypothesisSpec;
use volcheck::kernel::{
    asymptotic_constants, build_kernel_table, finite_sample_constants, kolmogorov_quantile, WeightFunction,
};
use volcheck::projection::Functional;
use volcheck::report::OutputFormat;

#[derive(Parser)]
#[command(name = "volcheck", version, about = "Goodness-of-fit tests for volatility under microstructure noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test one series, read from a file or simulated from the configured model.
    Test(TestArgs),
    /// Run a Monte Carlo study and print its rejection table.
    Study(StudyArgs),
    /// Print the kernel constants for the hat weight function.
    Constants(ConstantsArgs),
    /// Print Kolmogorov quantiles (sup of the Brownian bridge).
    Quantile(QuantileArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment file (TOML); flags override its fields.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Restore the published scale (1000 runs, 500 replications, n up to 16384).
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Write the output here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    common: Common,
    /// Observations, one per line or a time,value CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Basis function of the null hypothesis, e.g. `one` or `0.5*x2`; repeat for more.
    #[arg(long = "basis")]
    basis: Vec<String>,
    #[arg(long, value_enum, default_value = "linear")]
    pipeline: PipelineArg,
    #[arg(long, value_enum, default_value = "ks")]
    functional: FunctionalArg,
    /// Include the bootstrap sample in the report.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    mc_runs: Option<usize>,
    /// Keep only this row (key as printed in the table); repeat for more.
    #[arg(long = "row")]
    rows: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    /// Suppress progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args)]
struct ConstantsArgs {
    /// Also print the finite-sample constants for this window length.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    quadrature_points: usize,
}

#[derive(Args)]
struct QuantileArgs {
    #[arg(default_values_t = [0.025, 0.05, 0.1])]
    alpha: Vec<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Table1,
    Table2,
    Table3,
    Table4,
    Table5,
    Table6,
    Custom,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Table1 => Preset::Table1,
            PresetArg::Table2 => Preset::Table2,
            PresetArg::Table3 => Preset::Table3,
            PresetArg::Table4 => Preset::Table4,
            PresetArg::Table5 => Preset::Table5,
            PresetArg::Table6 => Preset::Table6,
            PresetArg::Custom => Preset::Custom,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
    Text,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Text => OutputFormat::Text,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Naive,
    Asymptotic,
    Bootstrap,
}

impl From<MethodArg> for TestMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Naive => TestMethod::Naive,
            MethodArg::Asymptotic => TestMethod::Asymptotic,
            MethodArg::Bootstrap => TestMethod::Bootstrap,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PipelineArg {
    Linear,
    Abs,
    Noisefree,
}

#[derive(Clone, Copy, ValueEnum)]
enum FunctionalArg {
    Ks,
    Cvm,
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::from_toml(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(p) = common.preset {
        cfg.preset = Some(p.into());
    }
    cfg.paper_scale |= common.paper_scale;
    cfg.master_seed = common.seed.or(cfg.master_seed);
    cfg.bootstrap.replications = common.replications.or(cfg.bootstrap.replications);
    if let Some(f) = common.format {
        cfg.output.format = Some(f.into());
    }
    if let Some(o) = &common.output {
        cfg.output.path = Some(o.clone());
    }
    Ok(cfg)
}

fn write_output(cfg: &ExperimentConfig, text: &str) -> Result<()> {
    match &cfg.output.path {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn run_test(args: TestArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    if let Some(d) = args.data {
        cfg.data = Some(d);
    }
    cfg.alpha = args.alpha.or(cfg.alpha);
    if let Some(m) = args.method {
        cfg.method = Some(m.into());
    }
    if args.verbose {
        cfg.bootstrap.verbose = Some(true);
    }
    if !args.basis.is_empty() {
        let names: Vec<&str> = args.basis.iter().map(String::as_str).collect();
        let hypothesis = HypothesisSpec::parse(&names)?;
        let functional = match args.functional {
            FunctionalArg::Ks => Functional::Ks,
            FunctionalArg::Cvm => Functional::Cvm,
        };
        cfg.pipeline = Some(match args.pipeline {
            PipelineArg::Linear => Pipeline::Linear { hypothesis, functional },
            PipelineArg::Abs => Pipeline::Abs { hypothesis, functional },
            PipelineArg::Noisefree => Pipeline::Noisefree { hypothesis, functional },
        });
    }
    if cfg.data.is_none() && cfg.preset.is_none() && cfg.model.is_none() {
        bail!("nothing to test: give --data, a --preset or a model in the config file");
    }
    let series = match &cfg.data {
        Some(path) => volcheck::simulate::load_observations(path)
            .with_context(|| format!("reading observations from {}", path.display()))?,
        None => single_series(&cfg, &cfg.study()?)?,
    };
    let report = run_single_test(&cfg, &series)?;
    write_output(&cfg, &report.to_json()?)
}

fn run_study(args: StudyArgs) -> Result<()> {
    let mut cfg = load_config(&args.common)?;
    cfg.mc_runs = args.mc_runs.or(cfg.mc_runs);
    if !args.rows.is_empty() {
        cfg.rows = Some(args.rows);
    }
    if !args.alphas.is_empty() {
        cfg.alphas = Some(args.alphas);
    }
    if cfg.preset.is_none() && cfg.model.is_none() {
        bail!("nothing to run: give a --preset or a config file");
    }
    let def = cfg.study()?;
    let start = Instant::now();
    let quiet = args.quiet;
    let progress = move |key: &str, done: usize, total: usize| {
        if !quiet {
            eprintln!("[{:>7.1}s] {done}/{total} rows, finished {key}", start.elapsed().as_secs_f64());
        }
    };
    let (table, err) = run_mc_study_partial(&def, Some(&progress));
    // the partial table is still written when a row aborts the study
    write_output(&cfg, &table.render(cfg.output_format())?)?;
    match err {
        Some(e) => Err(anyhow::Error::new(e).context(format!("study stopped after {} rows", table.rows.len()))),
        None => Ok(()),
    }
}

fn run_constants(args: ConstantsArgs) -> Result<()> {
    let c = asymptotic_constants(&WeightFunction::MinHat, args.quadrature_points)?;
    let mut out = serde_json::json!({ "weight": "min_hat", "asymptotic": c });
    if let Some(m) = args.m {
        out["finite_sample"] =
            serde_json::to_value(finite_sample_constants(&build_kernel_table(&WeightFunction::MinHat, m)?))?;
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn run_quantile(args: QuantileArgs) -> Result<()> {
    for a in args.alpha {
        println!("{a}\t{:.6}", kolmogorov_quantile(a)?);
    }
    Ok(())
}

fn init_workers() -> Result<()> {
    let Ok(raw) = std::env::var("VOLCHECK_WORKERS") else { return Ok(()) };
    let workers: usize = raw.trim().parse().with_context(|| format!("VOLCHECK_WORKERS={raw:?} is not a count"))?;
    if workers == 0 {
        bail!("VOLCHECK_WORKERS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(workers).build_global()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_workers().and_then(|()| match cli.command {
        Command::Test(a) => run_test(a),
        Command::Study(a) => run_study(a),
        Command::Constants(a) => run_constants(a),
        Command::Quantile(a) => run_quantile(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
