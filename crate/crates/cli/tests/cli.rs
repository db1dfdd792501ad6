use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use graphnav_cli::artifacts::{self, RobustnessReport};
use graphnav_cli::commands;
use graphnav_cli::config::{EvalSection, ExperimentConfig};
use graphnav_core::bundle::EnvBundle;
use graphnav_core::policy::{Checkpoint, Phase};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn smoke() -> ExperimentConfig {
    ExperimentConfig::load(&configs().join("smoke.toml")).unwrap()
}

fn graphnav(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphnav"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove(graphnav_cli::OUT_ENV)
        .output()
        .unwrap()
}

#[test]
fn invalid_config_exits_with_a_field_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\ngroup_size = 1\n").unwrap();
    let out = graphnav(&["gen-env", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.group_size"), "{err}");
    assert!(!dir.path().join(artifacts::ENV_FILE).exists());

    std::fs::write(&cfg, "[optim]\nvariant = \"ppo\"\n").unwrap();
    let out = graphnav(&["gen-env", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.toml");
    let cfg = cfg.to_str().unwrap();
    assert!(graphnav(&["gen-env", "--config", cfg], dir.path()).status.success());
    let out = graphnav(&["eval", "--config", cfg, "--checkpoint", "nowhere.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.json"));
    assert!(!dir.path().join(artifacts::ROBUSTNESS_JSON).exists());
}

#[test]
fn gen_env_is_reproducible_and_splits_are_disjoint() {
    let cfg = smoke();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = commands::gen_env(&cfg, a.path()).unwrap();
    let pb = commands::gen_env(&cfg, b.path()).unwrap();
    assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());

    let bundle: EnvBundle = commands::load_bundle(&pa).unwrap();
    assert_eq!(bundle.train.graphs.len(), cfg.env.train_graphs);
    assert_eq!(bundle.val_unseen.graphs.len(), cfg.env.val_graphs);
    assert_eq!(bundle.train.episodes.len(), cfg.env.train_graphs * cfg.env.train_episodes_per_graph);
    assert_eq!(bundle.val_unseen.episodes.len(), cfg.env.val_graphs * cfg.env.val_episodes_per_graph);
    let train_ids: HashSet<_> = bundle.train.graphs.iter().map(|g| g.id()).collect();
    assert!(bundle.val_unseen.graphs.iter().all(|g| !train_ids.contains(&g.id())));
    assert_eq!(bundle.config, cfg.echo());
}

#[test]
fn warmup_only_run_keeps_the_sft_policy() {
    let mut cfg = smoke();
    cfg.train.rl_steps = 0;
    let dir = tempfile::tempdir().unwrap();
    let env = commands::gen_env(&cfg, dir.path()).unwrap();
    let s = commands::train(&cfg, dir.path(), &env, false).unwrap();
    let sft: Checkpoint = commands::load_checkpoint(&s.sft).unwrap();
    let last: Checkpoint = commands::load_checkpoint(&s.last).unwrap();
    assert_eq!(sft.params, last.params);
    assert_eq!(last.phase, Phase::Sft);
    assert!(s.rows.is_empty());
}

#[test]
fn train_rejects_a_bundle_from_another_seed() {
    let cfg = smoke();
    let dir = tempfile::tempdir().unwrap();
    let env = commands::gen_env(&cfg, dir.path()).unwrap();
    let other = ExperimentConfig { seed: cfg.seed + 1, ..cfg };
    assert!(commands::train(&other, dir.path(), &env, false).is_err());
}

#[test]
fn unperturbed_grid_gives_one_zero_delta_row() {
    let mut cfg = smoke();
    cfg.eval = EvalSection { global_p: vec![0.0], early_n: Vec::new(), seeds: vec![0] };
    let dir = tempfile::tempdir().unwrap();
    let env = commands::gen_env(&cfg, dir.path()).unwrap();
    commands::train(&cfg, dir.path(), &env, false).unwrap();
    let report = commands::eval(&cfg, dir.path(), &env, &commands::default_checkpoints(&cfg, dir.path())).unwrap();
    for method in ["sft", "drgrpo"] {
        let rows: Vec<_> = report.table.rows.iter().filter(|r| r.method == method).collect();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].delta_spl, 0.0);
    }
}

#[test]
fn full_grid_has_seven_conditions_per_method() {
    let mut cfg = smoke();
    cfg.eval = EvalSection::default();
    let dir = tempfile::tempdir().unwrap();
    let env = commands::gen_env(&cfg, dir.path()).unwrap();
    commands::train(&cfg, dir.path(), &env, false).unwrap();
    let report = commands::eval(&cfg, dir.path(), &env, &commands::default_checkpoints(&cfg, dir.path())).unwrap();
    assert_eq!(report.table.summary.len(), 2 * 7);
    assert_eq!(report.table.rows.len(), 2 * 7 * cfg.eval.seeds.len());

    let (meta, rows) = artifacts::read_robustness_csv(&dir.path().join(artifacts::ROBUSTNESS_CSV)).unwrap();
    assert_eq!(rows.len(), report.table.rows.len());
    assert_eq!(meta.config, cfg.echo());
    let back: RobustnessReport = artifacts::read_json(&dir.path().join(artifacts::ROBUSTNESS_JSON)).unwrap();
    assert_eq!(back, report);

    let md = commands::report(dir.path()).unwrap();
    assert!(md.contains("early:2") && md.contains("global:0.8"));
}

#[test]
fn standard_run_improves_training_success() {
    let cfg = ExperimentConfig::load(&configs().join("standard.toml")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let env = commands::gen_env(&cfg, dir.path()).unwrap();
    let s = commands::train(&cfg, dir.path(), &env, true).unwrap();
    let mean = |rows: &[graphnav_core::train::LogRow]| rows.iter().map(|r| r.success_frac).sum::<f64>() / rows.len() as f64;
    let n = s.rows.len();
    assert_eq!(n, cfg.train.rl_steps);
    assert!(mean(&s.rows[n - 10..]) > mean(&s.rows[..10]));

    let (meta, rows) = artifacts::read_train_log(&s.log).unwrap();
    assert_eq!(rows, s.rows);
    assert_eq!(meta.artifact_version, graphnav_core::VERSION);
}

#[test]
fn rerun_produces_identical_outputs() {
    let cfg = configs().join("smoke.toml");
    let cfg = cfg.to_str().unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        for step in [&["gen-env"][..], &["train", "--no-wall-clock"], &["eval"], &["report"]] {
            let mut args = step.to_vec();
            args.extend(["--config", cfg]);
            let out = graphnav(&args, d.path());
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        }
    }
    let mut count = 0;
    for entry in std::fs::read_dir(dirs[0].path()).unwrap() {
        let name = entry.unwrap().file_name();
        let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(&name)).unwrap();
        assert_eq!(a, b, "{name:?}");
        count += 1;
    }
    assert_eq!(count, 7);
}

#[test]
fn seed_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("smoke.toml");
    let out = graphnav(&["gen-env", "--config", cfg.to_str().unwrap(), "--seed", "99"], dir.path());
    assert!(out.status.success());
    let bundle = commands::load_bundle(&dir.path().join(artifacts::ENV_FILE)).unwrap();
    assert_eq!(bundle.seed, 99);
}
