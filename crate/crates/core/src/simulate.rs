//! Latent diffusion paths, microstructure noise, and observation input.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::Func;
use crate::rng::{self, Domain};

/// Default Euler sub-steps per observation interval.
pub const DEFAULT_SUBSTEPS: usize = 10;

/// Heston parameters: `dX = (mu - nu/2) dt + sqrt(nu) dW`,
/// `d nu = delta (alpha - nu) dt + gamma sqrt(nu) dB`, `corr(W, B) = eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HestonParams {
    pub mu: f64,
    pub delta: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub eta: f64,
    pub nu0: f64,
    pub x0: f64,
}

impl HestonParams {
    /// Daily-scale parameters of the power study; `nu0` starts at the long-run mean.
    pub fn paper(x0: f64) -> Self {
        HestonParams {
            mu: 0.05 / 252.0,
            delta: 5.0 / 252.0,
            alpha: 0.04 / 252.0,
            gamma: 0.05 / 252.0,
            eta: -0.5,
            nu0: 0.04 / 252.0,
            x0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    /// `dX = b(t, X) dt + sqrt(sigma2(t, X)) dW`.
    LocalVol {
        drift: Func,
        sigma2: Func,
        x0: f64,
    },
    Heston(HestonParams),
}

impl ModelSpec {
    pub fn local_vol(drift: &str, sigma2: &str, x0: f64) -> Result<Self> {
        Ok(ModelSpec::LocalVol { drift: drift.parse()?, sigma2: sigma2.parse()?, x0 })
    }

    pub fn x0(&self) -> f64 {
        match self {
            ModelSpec::LocalVol { x0, .. } => *x0,
            ModelSpec::Heston(p) => p.x0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    UniformSymmetric,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub omega2: f64,
}

impl NoiseSpec {
    pub fn gaussian(omega2: f64) -> Self {
        NoiseSpec { kind: NoiseKind::Gaussian, omega2 }
    }

    pub fn none() -> Self {
        NoiseSpec { kind: NoiseKind::None, omega2: 0.0 }
    }

    /// `omega^2 = scaled / n`, e.g. `n omega^2 = 0.1024`.
    pub fn gaussian_scaled(scaled: f64, n: usize) -> Self {
        NoiseSpec::gaussian(scaled / n as f64)
    }
}

/// The latent process at the observation times `i/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentPath {
    pub n: usize,
    pub x: Vec<f64>,
    /// True spot variance at `i/n`.
    pub sigma2_spot: Vec<f64>,
}

/// Noisy observations `Z_{i/n}`, `i = 0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub n: usize,
    pub z: Vec<f64>,
}

impl ObservationSeries {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::InsufficientData { n: z.len().saturating_sub(1), window: 1 });
        }
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("observation {i} is not finite")));
        }
        Ok(ObservationSeries { n: z.len() - 1, z })
    }

    /// Increments `Z_{i/n} - Z_{(i-1)/n}`, `i = 1..=n`.
    pub fn increments(&self) -> impl Iterator<Item = f64> + '_ {
        self.z.windows(2).map(|w| w[1] - w[0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ObservationSeries { n: self.n, z: self.z.iter().map(|&v| f(v)).collect() }
    }
}

/// Euler–Maruyama for a local-volatility diffusion with arbitrary coefficient
/// closures. With `clamp` set, negative variances are replaced by zero and
/// counted; otherwise they are an error.
pub fn euler_local_vol(
    drift: impl Fn(f64, f64) -> f64,
    sigma2: impl Fn(f64, f64) -> f64,
    x0: f64,
    n: usize,
    substeps: usize,
    rng: &mut ChaCha8Rng,
    clamp: bool,
) -> Result<(LatentPath, usize)> {
    if n == 0 || substeps == 0 {
        return Err(Error::InvalidSpec("n and substeps must be positive".into()));
    }
    let dt = 1.0 / (n * substeps) as f64;
    let sdt = dt.sqrt();
    let mut x = Vec::with_capacity(n + 1);
    let mut spot = Vec::with_capacity(n + 1);
    let mut clamps = 0usize;
    let check = |t: f64, xv: f64, clamps: &mut usize| -> Result<f64> {
        let v = sigma2(t, xv);
        if v >= 0.0 {
            Ok(v)
        } else if clamp {
            *clamps += 1;
            Ok(0.0)
        } else {
            Err(Error::ModelViolation { t, x: xv, value: v })
        }
    };
    let mut cur = x0;
    x.push(cur);
    spot.push(check(0.0, cur, &mut clamps)?);
    for i in 0..n {
        for s in 0..substeps {
            let t = (i * substeps + s) as f64 * dt;
            let v = check(t, cur, &mut clamps)?;
            let dw: f64 = rng.sample(StandardNormal);
            cur += drift(t, cur) * dt + v.sqrt() * sdt * dw;
        }
        if !cur.is_finite() {
            return Err(Error::Numeric(format!("path diverged at step {}", i + 1)));
        }
        let t = (i + 1) as f64 / n as f64;
        x.push(cur);
        spot.push(check(t, cur, &mut clamps)?);
    }
    Ok((LatentPath { n, x, sigma2_spot: spot }, clamps))
}

pub fn simulate_local_vol(model: &ModelSpec, n: usize, substeps: usize, seed: u64) -> Result<LatentPath> {
    let ModelSpec::LocalVol { drift, sigma2, x0 } = model else {
        return Err(Error::InvalidSpec("simulate_local_vol needs a local-volatility model".into()));
    };
    let mut rng = rng::stream(seed, Domain::Path);
    let (path, _) =
        euler_local_vol(|t, x| drift.eval(t, x), |t, x| sigma2.eval(t, x), *x0, n, substeps, &mut rng, false)?;
    Ok(path)
}

/// Euler scheme with full truncation of the variance.
pub fn simulate_heston(model: &ModelSpec, n: usize, substeps: usize, seed: u64) -> Result<LatentPath> {
    let ModelSpec::Heston(p) = model else {
        return Err(Error::InvalidSpec("simulate_heston needs a Heston model".into()));
    };
    if !(p.nu0 >= 0.0) {
        return Err(Error::InvalidSpec("Heston nu0 must be non-negative".into()));
    }
    if !(p.eta.abs() <= 1.0) {
        return Err(Error::InvalidSpec("Heston correlation must lie in [-1, 1]".into()));
    }
    if n == 0 || substeps == 0 {
        return Err(Error::InvalidSpec("n and substeps must be positive".into()));
    }
    let mut rng = rng::stream(seed, Domain::Path);
    let dt = 1.0 / (n * substeps) as f64;
    let sdt = dt.sqrt();
    let ortho = (1.0 - p.eta * p.eta).sqrt();
    let (mut x, mut nu) = (p.x0, p.nu0);
    let mut xs = Vec::with_capacity(n + 1);
    let mut spot = Vec::with_capacity(n + 1);
    xs.push(x);
    spot.push(nu.max(0.0));
    for _ in 0..n {
        for _ in 0..substeps {
            let w: f64 = rng.sample(StandardNormal);
            let perp: f64 = rng.sample(StandardNormal);
            let b = p.eta * w + ortho * perp;
            let pos = nu.max(0.0);
            let vol = pos.sqrt();
            x += (p.mu - 0.5 * pos) * dt + vol * sdt * w;
            nu += p.delta * (p.alpha - pos) * dt + p.gamma * vol * sdt * b;
        }
        xs.push(x);
        spot.push(nu.max(0.0));
    }
    Ok(LatentPath { n, x: xs, sigma2_spot: spot })
}

/// Dispatch on the model kind.
pub fn simulate(model: &ModelSpec, n: usize, substeps: usize, seed: u64) -> Result<LatentPath> {
    match model {
        ModelSpec::LocalVol { .. } => simulate_local_vol(model, n, substeps, seed),
        ModelSpec::Heston(_) => simulate_heston(model, n, substeps, seed),
    }
}

/// Draw i.i.d. noise of the given kind into `out[i] += U_i`.
pub fn draw_noise(out: &mut [f64], noise: &NoiseSpec, rng: &mut ChaCha8Rng) -> Result<()> {
    if !(noise.omega2 >= 0.0) {
        return Err(Error::InvalidSpec(format!("noise variance must be >= 0, got {}", noise.omega2)));
    }
    let sd = noise.omega2.sqrt();
    match noise.kind {
        NoiseKind::None => {}
        NoiseKind::Gaussian => {
            for v in out.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v += sd * e;
            }
        }
        NoiseKind::UniformSymmetric => {
            let half = (3.0 * noise.omega2).sqrt();
            for v in out.iter_mut() {
                let u: f64 = rng.random_range(-1.0..1.0);
                *v += half * u;
            }
        }
    }
    Ok(())
}

pub fn add_noise(path: &LatentPath, noise: &NoiseSpec, seed: u64) -> Result<ObservationSeries> {
    let mut z = path.x.clone();
    let mut rng = rng::stream(seed, Domain::Noise);
    draw_noise(&mut z, noise, &mut rng)?;
    ObservationSeries::new(z)
}

/// Parse observations from CSV text: one value per row, or `time,value` rows
/// on a uniform grid. A non-numeric first row is treated as a header.
pub fn parse_observations(text: &str) -> Result<ObservationSeries> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => rows.push(v),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Parse(format!("row {}: {e}", i + 1))),
        }
    }
    if rows.len() < 3 {
        return Err(Error::Parse(format!("need at least 3 observations, found {}", rows.len())));
    }
    let width = rows[0].len();
    if !(width == 1 || width == 2) {
        return Err(Error::Parse(format!("expected 1 or 2 columns, found {width}")));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != width) {
        return Err(Error::Parse(format!("row {} has {} columns, expected {width}", bad + 1, rows[bad].len())));
    }
    if let Some(bad) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Parse(format!("row {} is not finite", bad + 1)));
    }
    if width == 2 {
        let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let step = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        if !(step > 0.0) {
            return Err(Error::NonUniformGrid { row: 1 });
        }
        for (i, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - step).abs() > 1e-9 * step {
                return Err(Error::NonUniformGrid { row: i + 1 });
            }
        }
    }
    ObservationSeries::new(rows.into_iter().map(|r| r[width - 1]).collect())
}

pub fn load_observations(path: impl AsRef<Path>) -> Result<ObservationSeries> {
    let text = std::fs::read_to_string(path)?;
    parse_observations(&text)
}
