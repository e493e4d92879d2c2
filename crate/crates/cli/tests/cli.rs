use std::fs;
use std::path::Path;
use std::process::Command;

use pkml_cli::commands::Runner;
use pkml_cli::config::{ExperimentConfig, OUT_DIR_ENV};
use pkml_cli::error::{CliError, ExitKind};

const TINY: &str = r#"
[data]
n_patients = 40
n_physio = 200
n_drugs = 4

[transformer]
d_model = 8
n_heads = 2
d_ff = 16
epochs = 2

[diffusion]
epochs = 2
hidden_width = 16
hidden_layers = 1

[allometry]
epochs = 1
rhs_width = 8
rhs_hidden_layers = 1

[run]
ablation_samples = 50
"#;

fn pkml() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pkml"));
    c.env_remove(OUT_DIR_ENV);
    c
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("tiny.toml");
    fs::write(&p, TINY).unwrap();
    p
}

#[test]
fn misspelled_key_is_rejected_before_compute() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[transformer]\nd_modle = 32\n").unwrap();
    let err = ExperimentConfig::load(&bad).unwrap_err();
    assert!(matches!(err, CliError::Config { .. }));
    assert_eq!(err.exit_kind(), ExitKind::Config);

    let out = dir.path().join("out");
    let status = pkml()
        .args(["generate", "--config"])
        .arg(&bad)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    assert!(!out.exists(), "nothing may be written for a bad config");
}

#[test]
fn unknown_section_and_invalid_values_are_config_errors() {
    let p = Path::new("inline.toml");
    assert!(ExperimentConfig::parse("[optimizer]\nlr = 1.0\n", p).is_err());
    assert!(ExperimentConfig::parse("[transformer]\nn_heads = 3\n", p).is_err());
    assert!(ExperimentConfig::parse("[run]\nseed = 7\n", p).unwrap().run.seed == 7);
}

#[test]
fn default_config_matches_the_reference_setup() {
    let c = ExperimentConfig::default();
    assert_eq!((c.data.n_patients, c.data.n_physio, c.data.n_drugs), (1000, 2000, 50));
    assert_eq!(c.run.seed, 42);
    assert_eq!(c.run.ablation_samples, 2000);
    assert_eq!(c.run.holdout, "Human");
    let back = ExperimentConfig::parse(&c.to_toml(), Path::new("x")).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.digest(), c.digest());
}

#[test]
fn generate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(TINY, Path::new("tiny")).unwrap();
    let a = Runner::new(cfg.clone(), dir.path().join("a"))
        .unwrap()
        .generate()
        .unwrap();
    let b = Runner::new(cfg.clone(), dir.path().join("b"))
        .unwrap()
        .generate()
        .unwrap();
    assert_eq!(a.manifest.artifacts, b.manifest.artifacts);
    assert_eq!(a.manifest.artifacts.len(), 6);
    for art in &a.manifest.artifacts {
        let x = fs::read(dir.path().join("a").join(&art.file)).unwrap();
        let y = fs::read(dir.path().join("b").join(&art.file)).unwrap();
        assert_eq!(x, y, "{}", art.file);
    }

    let other = ExperimentConfig {
        run: pkml_cli::config::RunConfig {
            seed: 43,
            ..cfg.run.clone()
        },
        ..cfg
    };
    let c = Runner::new(other, dir.path().join("c")).unwrap().generate().unwrap();
    assert_ne!(a.manifest.artifacts, c.manifest.artifacts);
}

#[test]
fn effective_config_and_manifest_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = pkml()
        .args(["generate", "--seed", "9", "--config"])
        .arg(tiny_config(dir.path()))
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let eff = ExperimentConfig::load(&out.join("config.toml")).unwrap();
    assert_eq!(eff.run.seed, 9);
    assert_eq!(eff.data.n_patients, 40);
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("run_generate.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 9);
    assert_eq!(m["config_sha256"], eff.digest());
    for a in m["artifacts"].as_array().unwrap() {
        let f = out.join(a["file"].as_str().unwrap());
        assert_eq!(
            pkml_cli::manifest::sha256_file(&f).unwrap(),
            a["sha256"].as_str().unwrap()
        );
    }
}

#[test]
fn out_flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let (env_dir, flag_dir) = (dir.path().join("env"), dir.path().join("flag"));
    let cfg = tiny_config(dir.path());
    let ok = pkml()
        .env(OUT_DIR_ENV, &env_dir)
        .args(["generate", "--config"])
        .arg(&cfg)
        .status()
        .unwrap();
    assert!(ok.success());
    assert!(env_dir.join("data/physio.csv").exists());

    let ok = pkml()
        .env(OUT_DIR_ENV, &env_dir)
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&flag_dir)
        .status()
        .unwrap();
    assert!(ok.success());
    assert!(flag_dir.join("data/physio.csv").exists());
}

#[test]
fn missing_checkpoints_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    for cmd in [
        &["forecast"][..],
        &["predict-species"],
        &["reproduce-figures"],
        &["sample-population", "--n", "5"],
    ] {
        let status = pkml()
            .args(cmd)
            .arg("--config")
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join("run"))
            .status()
            .unwrap();
        assert_eq!(status.code(), Some(3), "{cmd:?}");
    }
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let err = Runner::new(ExperimentConfig::default(), blocker.join("sub")).unwrap_err();
    assert_eq!(err.exit_kind(), ExitKind::Data);
    assert!(err.to_string().contains("sub"));
}

#[test]
fn unknown_species_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let status = pkml()
        .args(["train-allometry", "--holdout", "cat", "--config"])
        .arg(tiny_config(dir.path()))
        .arg("--out")
        .arg(dir.path().join("run"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
}

#[test]
fn tiny_pipeline_emits_every_figure_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(TINY, Path::new("tiny")).unwrap();
    let runner = Runner::new(cfg, dir.path().join("run")).unwrap();
    let out = runner.reproduce_figures(true).unwrap();
    for f in [
        "fig1_data.csv",
        "fig2_data.csv",
        "fig3_data.csv",
        "table1.csv",
        "loso_report.csv",
    ] {
        assert!(out.manifest.artifacts.iter().any(|a| a.file == f), "{f}");
    }
    let fig3 = fs::read_to_string(runner.out.join("fig3_data.csv")).unwrap();
    let mut lines = fig3.lines();
    assert!(lines
        .next()
        .unwrap()
        .starts_with("drug_id,species,time_h,truth,prediction"));
    assert!(lines.all(|l| l.split(',').nth(1) == Some("Human") && l.ends_with(",42")));
    let table = fs::read_to_string(runner.out.join("table1.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.starts_with("config,lambda,violation_pct"));

    // figures alone now reuse the saved checkpoints
    let again = runner.reproduce_figures(false).unwrap();
    assert_eq!(
        again.manifest.metrics["loso.test_mse"],
        out.manifest.metrics["loso.test_mse"]
    );
    assert_eq!(
        again.manifest.metrics["ablation.violation_pct_lambda0"],
        out.manifest.metrics["ablation.violation_pct_lambda0"]
    );
}

#[test]
fn selftest_passes() {
    let out = pkml().arg("selftest").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
