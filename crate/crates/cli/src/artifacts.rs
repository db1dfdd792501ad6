//! On-disk artifacts. Every writer reads its file back and checks it before
//! reporting success.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use graphnav_core::eval::{RobustnessRow, RobustnessTable};
use graphnav_core::policy::{Phase, PolicyParams};
use graphnav_core::train::LogRow;
use graphnav_core::VERSION;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const ENV_FILE: &str = "env.json";
pub const SFT_CHECKPOINT: &str = "ckpt_sft.json";
pub const FINAL_CHECKPOINT: &str = "ckpt_final.json";
pub const LAST_GOOD_CHECKPOINT: &str = "ckpt_last_good.json";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const ROBUSTNESS_CSV: &str = "robustness.csv";
pub const ROBUSTNESS_JSON: &str = "robustness.json";
pub const REPORT_MD: &str = "report.md";

pub const LOG_COLUMNS: [&str; 6] = ["iteration", "mean_reward", "success_frac", "mean_kl", "buffer_size", "wall_ms"];
pub const ROBUSTNESS_COLUMNS: [&str; 8] = ["method", "perturbation", "seed", "OSR", "NE", "SR", "SPL", "delta_SPL"];

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))
}

/// Writes pretty JSON and verifies that it parses back to the same value.
pub fn write_json<T>(path: &Path, value: &T) -> Result<()>
where
    T: Serialize + DeserializeOwned + PartialEq,
{
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    let back: T = read_json(path)?;
    ensure!(back == *value, "{} did not round-trip", path.display());
    Ok(())
}

/// Leading `#` lines of the CSV files.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvMeta {
    pub artifact_version: String,
    pub config: serde_json::Value,
}

impl CsvMeta {
    pub fn new(config: serde_json::Value) -> Self {
        CsvMeta { artifact_version: VERSION.to_string(), config }
    }

    fn write_to(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "# artifact_version: {}", self.artifact_version)?;
        writeln!(out, "# config: {}", serde_json::to_string(&self.config)?)?;
        Ok(())
    }

    fn parse(text: &str) -> Result<Self> {
        let mut version = None;
        let mut config = None;
        for line in text.lines().take_while(|l| l.starts_with('#')) {
            if let Some(v) = line.strip_prefix("# artifact_version: ") {
                version = Some(v.to_string());
            } else if let Some(c) = line.strip_prefix("# config: ") {
                config = Some(serde_json::from_str(c).context("malformed config echo")?);
            }
        }
        match (version, config) {
            (Some(artifact_version), Some(config)) => Ok(CsvMeta { artifact_version, config }),
            _ => bail!("missing artifact version or config echo"),
        }
    }
}

fn write_csv<T: Serialize>(path: &Path, meta: &CsvMeta, rows: &[T], columns: &[&str]) -> Result<()> {
    let mut buf = Vec::new();
    meta.write_to(&mut buf)?;
    {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut buf);
        w.write_record(columns)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
    }
    fs::write(path, buf).with_context(|| format!("cannot write {}", path.display()))
}

fn read_csv<T: DeserializeOwned>(path: &Path, columns: &[&str]) -> Result<(CsvMeta, Vec<T>)> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let meta = CsvMeta::parse(&text).with_context(|| format!("in {}", path.display()))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    ensure!(header == columns, "{}: unexpected columns {header:?}", path.display());
    let rows = r
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .with_context(|| format!("malformed row in {}", path.display()))?;
    Ok((meta, rows))
}

pub fn write_train_log(path: &Path, meta: &CsvMeta, rows: &[LogRow]) -> Result<()> {
    write_csv(path, meta, rows, &LOG_COLUMNS)?;
    let (m, back) = read_train_log(path)?;
    ensure!(m == *meta && back == rows, "{} did not round-trip", path.display());
    Ok(())
}

pub fn read_train_log(path: &Path) -> Result<(CsvMeta, Vec<LogRow>)> {
    read_csv(path, &LOG_COLUMNS)
}

/// One line of the robustness CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCsvRow {
    pub method: String,
    pub perturbation: String,
    pub seed: u64,
    #[serde(rename = "OSR")]
    pub osr: f64,
    #[serde(rename = "NE")]
    pub ne: f64,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "SPL")]
    pub spl: f64,
    #[serde(rename = "delta_SPL")]
    pub delta_spl: f64,
}

impl From<&RobustnessRow> for RobustnessCsvRow {
    fn from(r: &RobustnessRow) -> Self {
        RobustnessCsvRow {
            method: r.method.clone(),
            perturbation: r.perturbation.to_string(),
            seed: r.seed.unwrap_or_default(),
            osr: r.osr,
            ne: r.ne,
            sr: r.sr,
            spl: r.spl,
            delta_spl: r.delta_spl,
        }
    }
}

pub fn write_robustness_csv(path: &Path, meta: &CsvMeta, table: &RobustnessTable) -> Result<()> {
    let rows: Vec<RobustnessCsvRow> = table.rows.iter().map(Into::into).collect();
    write_csv(path, meta, &rows, &ROBUSTNESS_COLUMNS)?;
    let (m, back) = read_robustness_csv(path)?;
    ensure!(m == *meta && back == rows, "{} did not round-trip", path.display());
    Ok(())
}

pub fn read_robustness_csv(path: &Path) -> Result<(CsvMeta, Vec<RobustnessCsvRow>)> {
    read_csv(path, &ROBUSTNESS_COLUMNS)
}

/// An evaluated policy. The weights are recorded instead of the checkpoint
/// path so the report does not depend on where files were written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodEntry {
    pub name: String,
    pub phase: Phase,
    pub params: PolicyParams,
}

/// JSON form of the robustness study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustnessReport {
    pub artifact_version: String,
    pub config: serde_json::Value,
    pub methods: Vec<MethodEntry>,
    pub seeds: Vec<u64>,
    pub table: RobustnessTable,
}

impl RobustnessReport {
    /// Range checks on the metric columns.
    pub fn check(&self) -> Result<()> {
        ensure!(self.artifact_version == VERSION, "report from {}, expected {VERSION}", self.artifact_version);
        for r in self.table.rows.iter().chain(&self.table.summary) {
            let in_pct = |x: f64| (0.0..=100.0).contains(&x);
            ensure!(
                in_pct(r.spl) && in_pct(r.sr) && in_pct(r.osr),
                "metric out of range in row {} / {}",
                r.method,
                r.perturbation
            );
            ensure!(r.spl <= r.sr + 1e-9 && r.sr <= r.osr + 1e-9, "SPL <= SR <= OSR violated for {}", r.method);
            ensure!(r.ne.is_finite() && r.ne >= 0.0, "navigation error must be finite and non-negative");
        }
        Ok(())
    }
}
