//! Test reports and Monte Carlo rejection tables.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{ActiveConstants, TuningPlan};
use crate::projection::Functional;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Asymptotic,
    Bootstrap,
    Naive,
    NoisefreeBootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Reject,
    Accept,
}

impl Decision {
    pub fn from_reject(reject: bool) -> Self {
        if reject {
            Decision::Reject
        } else {
            Decision::Accept
        }
    }

    pub fn is_reject(self) -> bool {
        self == Decision::Reject
    }
}

/// Everything needed to reproduce a decision.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub pipeline: String,
    pub hypothesis: String,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub plan: Option<TuningPlan>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub constants: Option<ActiveConstants>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kappa_eff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho_eff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub master_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub failed_replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub clamp_events: Option<usize>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub theta_hat: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub omega2_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub index_convention: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub floor: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub functional: Functional,
    pub alpha: f64,
    pub decision: Decision,
    pub critical_value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_value: Option<f64>,
    pub method: Method,
    pub metadata: ReportMetadata,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bootstrap_sample: Option<Vec<f64>>,
}

impl TestReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub alpha: f64,
    pub rejections: usize,
    pub runs: usize,
    pub frequency: f64,
    pub std_error: f64,
}

impl Cell {
    pub fn new(alpha: f64, rejections: usize, runs: usize) -> Self {
        let p = if runs == 0 { 0.0 } else { rejections as f64 / runs as f64 };
        let se = if runs == 0 { 0.0 } else { (p * (1.0 - p) / runs as f64).sqrt() };
        Cell { alpha, rejections, runs, frequency: p, std_error: se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub key: String,
    pub cells: Vec<Cell>,
    #[serde(default)]
    pub failures: usize,
}

/// Rejection frequencies keyed by row (sample size, noise level, ...) and level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub title: String,
    pub row_label: String,
    pub alphas: Vec<f64>,
    pub mc_runs: usize,
    pub rows: Vec<TableRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
    Text,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputFormat::Json),
            "csv" => Ok(OutputFormat::Csv),
            "text" | "text-table" => Ok(OutputFormat::Text),
            _ => Err(Error::Config(format!("unknown output format {s:?}"))),
        }
    }
}

impl ReportTable {
    pub fn new(title: impl Into<String>, row_label: impl Into<String>, alphas: Vec<f64>, mc_runs: usize) -> Self {
        ReportTable { title: title.into(), row_label: row_label.into(), alphas, mc_runs, rows: Vec::new() }
    }

    pub fn cell(&self, key: &str, alpha: f64) -> Option<&Cell> {
        self.rows.iter().find(|r| r.key == key)?.cells.iter().find(|c| (c.alpha - alpha).abs() < 1e-12)
    }

    /// One line per cell.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record([self.row_label.as_str(), "alpha", "frequency", "std_error", "rejections", "runs"])
            .map_err(io)?;
        for row in &self.rows {
            for c in &row.cells {
                w.write_record([
                    row.key.clone(),
                    format!("{}", c.alpha),
                    format!("{:.3}", c.frequency),
                    format!("{:.3}", c.std_error),
                    c.rejections.to_string(),
                    c.runs.to_string(),
                ])
                .map_err(io)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    /// Rows by key, one column per level, frequencies to three decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let _ = write!(out, "{:>12}", self.row_label);
        for a in &self.alphas {
            let _ = write!(out, " {:>9}", format!("{a}"));
        }
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:>12}", row.key);
            for a in &self.alphas {
                match row.cells.iter().find(|c| (c.alpha - a).abs() < 1e-12) {
                    Some(c) => {
                        let _ = write!(out, " {:>9.3}", c.frequency);
                    }
                    None => {
                        let _ = write!(out, " {:>9}", "-");
                    }
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn render(&self, format: OutputFormat) -> Result<String> {
        match format {
            OutputFormat::Json => self.to_json(),
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Text => Ok(self.to_text()),
        }
    }
}

pub fn emit_table(table: &ReportTable, format: OutputFormat, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, table.render(format)?)?;
    Ok(())
}
