//! The four subcommands. Each returns only after its outputs have been
//! written and read back.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use graphnav_core::bundle::EnvBundle;
use graphnav_core::eval::robustness_table;
use graphnav_core::policy::{Checkpoint, Phase, PolicyParams};
use graphnav_core::train::{self, LogRow};
use graphnav_core::VERSION;

use crate::artifacts::{self, CsvMeta, MethodEntry, RobustnessReport};
use crate::config::ExperimentConfig;

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("cannot create output directory {}", out.display()))
}

pub fn load_bundle(path: &Path) -> Result<EnvBundle> {
    let bundle: EnvBundle = artifacts::read_json(path)?;
    bundle.check().with_context(|| format!("invalid env bundle {}", path.display()))?;
    Ok(bundle)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let ckpt: Checkpoint = artifacts::read_json(path)?;
    ckpt.check().with_context(|| format!("invalid checkpoint {}", path.display()))?;
    Ok(ckpt)
}

/// Generates the train and unseen-validation splits into `env.json`.
pub fn gen_env(cfg: &ExperimentConfig, out: &Path) -> Result<PathBuf> {
    ensure_dir(out)?;
    let bundle = EnvBundle::generate(&cfg.env, cfg.seed, cfg.echo()).context("environment generation failed")?;
    let path = out.join(artifacts::ENV_FILE);
    artifacts::write_json(&path, &bundle)?;
    load_bundle(&path)?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub sft: PathBuf,
    pub last: PathBuf,
    pub log: PathBuf,
    pub flushes: usize,
    pub rows: Vec<LogRow>,
}

/// Runs warm-up and RL on the bundle's training split. With `wall_clock`
/// off the `wall_ms` column is written as zero so logs are reproducible
/// byte for byte.
pub fn train(cfg: &ExperimentConfig, out: &Path, env_path: &Path, wall_clock: bool) -> Result<TrainSummary> {
    ensure_dir(out)?;
    let bundle = load_bundle(env_path)?;
    ensure!(
        bundle.env == cfg.env && bundle.seed == cfg.seed,
        "{} was generated from a different env section or seed; rerun gen-env",
        env_path.display()
    );
    let echo = cfg.echo();
    let meta = CsvMeta::new(echo.clone());
    let log_path = out.join(artifacts::TRAIN_LOG);
    let scrub = |mut rows: Vec<LogRow>| {
        if !wall_clock {
            rows.iter_mut().for_each(|r| r.wall_ms = 0);
        }
        rows
    };

    let outcome = match train::train(&cfg.train_config(), &bundle.train, PolicyParams::default()) {
        Ok(o) => o,
        Err(abort) => {
            let path = out.join(artifacts::LAST_GOOD_CHECKPOINT);
            let phase = if abort.iteration == 0 { Phase::Init } else { Phase::Rl };
            let ckpt = Checkpoint::new(phase, abort.last_good.clone(), abort.last_good.clone(), echo);
            artifacts::write_json(&path, &ckpt)?;
            artifacts::write_train_log(&log_path, &meta, &scrub(abort.log.clone()))?;
            return Err(anyhow::Error::new(abort))
                .with_context(|| format!("last good parameters saved to {}", path.display()));
        }
    };

    let sft_path = out.join(artifacts::SFT_CHECKPOINT);
    let sft = Checkpoint::new(Phase::Sft, outcome.sft.clone(), outcome.sft.clone(), echo.clone());
    artifacts::write_json(&sft_path, &sft)?;

    let final_path = out.join(artifacts::FINAL_CHECKPOINT);
    let phase = if cfg.train.rl_steps == 0 { Phase::Sft } else { Phase::Rl };
    let last = Checkpoint::new(phase, outcome.final_params.clone(), outcome.reference().clone(), echo);
    artifacts::write_json(&final_path, &last)?;

    let rows = scrub(outcome.log);
    artifacts::write_train_log(&log_path, &meta, &rows)?;
    load_checkpoint(&sft_path)?;
    load_checkpoint(&final_path)?;
    Ok(TrainSummary { sft: sft_path, last: final_path, log: log_path, flushes: outcome.flushes.len(), rows })
}

/// Parses `NAME=PATH`, or a bare path named after its file stem.
pub fn parse_checkpoint_arg(arg: &str) -> Result<(String, PathBuf)> {
    if let Some((name, path)) = arg.split_once('=') {
        ensure!(!name.is_empty() && !path.is_empty(), "expected NAME=PATH, got `{arg}`");
        return Ok((name.to_string(), PathBuf::from(path)));
    }
    let path = PathBuf::from(arg);
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .with_context(|| format!("cannot derive a method name from `{arg}`"))?
        .to_string();
    Ok((name, path))
}

/// Checkpoints evaluated when none are named: the warm-up policy and the
/// final policy of the configured variant.
pub fn default_checkpoints(cfg: &ExperimentConfig, out: &Path) -> Vec<(String, PathBuf)> {
    vec![
        ("sft".to_string(), out.join(artifacts::SFT_CHECKPOINT)),
        (cfg.optim.variant.name().to_string(), out.join(artifacts::FINAL_CHECKPOINT)),
    ]
}

/// Evaluates each checkpoint on the unseen split under the configured
/// perturbation grid and writes the robustness CSV and JSON.
pub fn eval(
    cfg: &ExperimentConfig,
    out: &Path,
    env_path: &Path,
    checkpoints: &[(String, PathBuf)],
) -> Result<RobustnessReport> {
    ensure_dir(out)?;
    ensure!(!checkpoints.is_empty(), "no checkpoints to evaluate");
    let bundle = load_bundle(env_path)?;
    let mut entries: Vec<MethodEntry> = Vec::with_capacity(checkpoints.len());
    for (name, path) in checkpoints {
        if entries.iter().any(|e| &e.name == name) {
            bail!("method name `{name}` given twice");
        }
        let ckpt = load_checkpoint(path)?;
        entries.push(MethodEntry { name: name.clone(), phase: ckpt.phase, params: ckpt.params });
    }
    let methods: Vec<(String, PolicyParams)> = entries.iter().map(|e| (e.name.clone(), e.params.clone())).collect();

    let grid = cfg.eval.grid();
    let table = robustness_table(&methods, &bundle.val_unseen, &grid, &cfg.eval.seeds)?;
    let echo = cfg.echo();
    let report = RobustnessReport {
        artifact_version: VERSION.to_string(),
        config: echo.clone(),
        methods: entries,
        seeds: cfg.eval.seeds.clone(),
        table,
    };
    report.check()?;
    artifacts::write_robustness_csv(&out.join(artifacts::ROBUSTNESS_CSV), &CsvMeta::new(echo), &report.table)?;
    let json_path = out.join(artifacts::ROBUSTNESS_JSON);
    artifacts::write_json(&json_path, &report)?;
    artifacts::read_json::<RobustnessReport>(&json_path)?.check()?;
    Ok(report)
}

/// Renders the robustness summary, plus the training curve endpoints when a
/// log is present, as a markdown report.
pub fn report(out: &Path) -> Result<String> {
    let report: RobustnessReport = artifacts::read_json(&out.join(artifacts::ROBUSTNESS_JSON))?;
    report.check()?;

    let mut md = String::new();
    writeln!(md, "# Robustness report\n")?;
    writeln!(md, "artifact version: {}\n", report.artifact_version)?;
    writeln!(md, "Metrics averaged over evaluation seeds {:?}.\n", report.seeds)?;
    writeln!(md, "| method | perturbation | OSR | NE | SR | SPL | ΔSPL |")?;
    writeln!(md, "|---|---|---:|---:|---:|---:|---:|")?;
    for r in &report.table.summary {
        writeln!(
            md,
            "| {} | {} | {:.2} | {:.2} | {:.2} | {:.2} | {:+.2} |",
            r.method, r.perturbation, r.osr, r.ne, r.sr, r.spl, r.delta_spl
        )?;
    }

    let log_path = out.join(artifacts::TRAIN_LOG);
    if log_path.exists() {
        let (_, rows) = artifacts::read_train_log(&log_path)?;
        if !rows.is_empty() {
            let w = rows.len().min(10);
            let mean = |rs: &[LogRow]| rs.iter().map(|r| r.success_frac).sum::<f64>() / rs.len() as f64;
            writeln!(md, "\n## Training\n")?;
            writeln!(md, "iterations: {}", rows.len())?;
            writeln!(md, "success fraction, first {w} iterations: {:.3}", mean(&rows[..w]))?;
            writeln!(md, "success fraction, last {w} iterations: {:.3}", mean(&rows[rows.len() - w..]))?;
            writeln!(md, "final mean KL to reference: {:.5}", rows[rows.len() - 1].mean_kl)?;
        }
    }

    writeln!(md, "\n## Config\n\n```json\n{}\n```", serde_json::to_string_pretty(&report.config)?)?;
    let path = out.join(artifacts::REPORT_MD);
    fs::write(&path, &md).with_context(|| format!("cannot write {}", path.display()))?;
    ensure!(fs::read_to_string(&path)? == md, "{} did not round-trip", path.display());
    Ok(md)
}
