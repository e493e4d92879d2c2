//! Subcommand implementations. Every command writes its artifacts plus a
//! `run_<command>.json` manifest under the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use pkml::allometry::{self, AllometryModel, LosoReport};
use pkml::autodiff::Checkpoint;
use pkml::diffusion::{self, AblationOptions, DiffusionConfig, DiffusionLog, DiffusionModel, Standardizer};
use pkml::io::{self, DataManifest, Datasets};
use pkml::synthdata::PhysioVector;
use pkml::transformer::{self, ForecastModel};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

pub const CONFIG_FILE: &str = "config.toml";
pub const DATA_DIR: &str = "data";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub const TRANSFORMER_CKPT: &str = "transformer.json";
pub const TRANSFORMER_LOG: &str = "transformer_log.csv";
pub const FIG1: &str = "fig1_data.csv";
pub const DIFFUSION_LOG: &str = "diffusion_log.csv";
pub const SAMPLES: &str = "samples.csv";
pub const TABLE1: &str = "table1.csv";
pub const FIG2: &str = "fig2_data.csv";
pub const ALLOMETRY_LOG: &str = "allometry_log.csv";
pub const LOSO_REPORT: &str = "loso_report.csv";
pub const FIG3: &str = "fig3_data.csv";

pub fn diffusion_ckpt(lambda: f64) -> String {
    format!("diffusion_lambda{lambda}.json")
}

/// Full physiological samples of one ablation arm.
pub fn arm_samples(lambda: f64) -> String {
    format!("samples_lambda{lambda}.csv")
}

pub fn allometry_ckpt(holdout: &str) -> String {
    format!("allometry_holdout_{}.json", holdout.to_ascii_lowercase())
}

fn arm_label(lambda: f64) -> &'static str {
    if lambda == 0.0 {
        "standard_ddpm"
    } else {
        "physics_informed_ddpm"
    }
}

/// Result of one command: its manifest, human-readable summary lines and
/// an optional failed check that maps to the criteria exit code.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: RunManifest,
    pub summary: Vec<String>,
    pub check_failure: Option<String>,
}

/// A configured output directory.
#[derive(Debug, Clone)]
pub struct Runner {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    config_sha256: String,
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    train_mse: f64,
}

#[derive(Serialize)]
struct DiffusionLogRow {
    lambda: f64,
    epoch: usize,
    loss: f64,
}

#[allow(non_snake_case)]
#[derive(Serialize)]
struct SampleRow {
    age: f64,
    height_cm: f64,
    weight_kg: f64,
    liver_L: f64,
    heart_L: f64,
    violates: bool,
}

#[derive(Serialize)]
struct Fig1Row {
    subject_id: usize,
    time_h: f64,
    truth: f64,
    prediction: f64,
    phase: &'static str,
    seed: u64,
}

#[derive(Serialize)]
struct Table1Row {
    config: &'static str,
    lambda: f64,
    violation_pct: f64,
}

#[allow(non_snake_case)]
#[derive(Serialize)]
struct Fig2Row {
    model: &'static str,
    weight_kg: f64,
    liver_L: f64,
    heart_L: f64,
    violates: bool,
    seed: u64,
}

#[derive(Serialize)]
struct LosoRow {
    held_out: String,
    test_mse: f64,
    baseline_mse: f64,
    interpolated_mse: Option<f64>,
}

#[derive(Serialize)]
struct Fig3Row {
    drug_id: usize,
    species: String,
    time_h: f64,
    truth: f64,
    prediction: f64,
    baseline: f64,
    interpolated: Option<f64>,
    seed: u64,
}

fn sample_rows(samples: &[PhysioVector]) -> impl Iterator<Item = SampleRow> + '_ {
    samples.iter().map(|v| SampleRow {
        age: v.age,
        height_cm: v.height_cm,
        weight_kg: v.weight_kg,
        liver_L: v.liver_l,
        heart_L: v.heart_l,
        violates: v.violates(),
    })
}

fn fig2_rows(lambda: f64, samples: &[PhysioVector], seed: u64) -> impl Iterator<Item = Fig2Row> + '_ {
    samples.iter().map(move |v| Fig2Row {
        model: arm_label(lambda),
        weight_kg: v.weight_kg,
        liver_L: v.liver_l,
        heart_L: v.heart_l,
        violates: v.violates(),
        seed,
    })
}

fn pct(rate: f64) -> f64 {
    100.0 * rate
}

impl Runner {
    /// Creates the output directory and writes the effective config into it.
    pub fn new(mut config: ExperimentConfig, out: PathBuf) -> CliResult<Self> {
        config.validate()?;
        config.run.out_dir = out.clone();
        fs::create_dir_all(&out).map_err(|e| pkml::Error::Io {
            path: out.clone(),
            source: e,
        })?;
        let text = config.to_toml();
        let path = out.join(CONFIG_FILE);
        fs::write(&path, &text).map_err(|e| pkml::Error::Io { path, source: e })?;
        let config_sha256 = config.digest();
        Ok(Self {
            config,
            out,
            config_sha256,
        })
    }

    pub fn seed(&self) -> u64 {
        self.config.run.seed
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join(DATA_DIR)
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.out.join(CHECKPOINT_DIR)
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }

    fn ckpt_path(&self, file: &str) -> PathBuf {
        self.checkpoint_dir().join(file)
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.config_sha256.clone(), self.seed())
    }

    fn finish(&self, mut manifest: RunManifest, files: &[PathBuf], summary: Vec<String>) -> CliResult<Outcome> {
        manifest.add_artifacts(&self.out, files)?;
        manifest.write(&self.out)?;
        Ok(Outcome {
            manifest,
            summary,
            check_failure: None,
        })
    }

    fn save_checkpoint(&self, ck: &Checkpoint, file: &str) -> CliResult<PathBuf> {
        let dir = self.checkpoint_dir();
        fs::create_dir_all(&dir).map_err(|e| pkml::Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let path = dir.join(file);
        ck.save(&path)?;
        Ok(path)
    }

    fn load_checkpoint(&self, file: &str) -> CliResult<Checkpoint> {
        let path = self.ckpt_path(file);
        if !path.exists() {
            return Err(CliError::MissingArtifact(path));
        }
        Ok(Checkpoint::load(&path)?)
    }

    fn expected_data_manifest(&self) -> (u64, usize, usize, usize) {
        let d = &self.config.data;
        (self.seed(), d.n_patients, d.n_physio, d.n_drugs)
    }

    /// Generates all three datasets and writes them under `data/`.
    pub fn generate(&self) -> CliResult<Outcome> {
        let t0 = Instant::now();
        let (seed, n_patients, n_physio, n_drugs) = self.expected_data_manifest();
        let (data, dm) = io::generate_all(seed, n_patients, n_physio, n_drugs)?;
        let files = io::write_all(&self.data_dir(), &data, &dm)?;
        let mut m = self.manifest("generate");
        m.timings_s.insert("generate".into(), t0.elapsed().as_secs_f64());
        m.metrics
            .insert("data.n_train".into(), data.forecast.train.len() as f64);
        m.metrics.insert("data.n_test".into(), data.forecast.test.len() as f64);
        m.metrics.insert("data.n_physio".into(), data.physio.len() as f64);
        m.metrics
            .insert("data.n_xspecies_profiles".into(), data.xspecies.records.len() as f64);
        let summary = vec![format!(
            "wrote {} forecasting profiles ({} train / {} test), {} physiological vectors, {} cross-species profiles to {}",
            data.forecast.train.len() + data.forecast.test.len(),
            data.forecast.train.len(),
            data.forecast.test.len(),
            data.physio.len(),
            data.xspecies.records.len(),
            self.data_dir().display()
        )];
        self.finish(m, &files, summary)
    }

    /// Reads `data/`, generating it first when absent or produced with a
    /// different seed or size.
    pub fn load_data(&self) -> CliResult<Datasets> {
        let dir = self.data_dir();
        if dir.join(io::DATA_MANIFEST_FILE).exists() {
            let dm: DataManifest = io::read_json(&dir.join(io::DATA_MANIFEST_FILE))?;
            if (dm.seed, dm.n_patients, dm.n_physio, dm.n_drugs) == self.expected_data_manifest() {
                return Ok(io::read_all(&dir)?.0);
            }
        }
        self.generate()?;
        Ok(io::read_all(&dir)?.0)
    }

    pub fn train_transformer(&self) -> CliResult<Outcome> {
        let data = self.load_data()?;
        let t0 = Instant::now();
        let mut model = ForecastModel::new(self.config.transformer.clone(), self.seed())?;
        let log = transformer::train(&mut model, &data.forecast, self.seed())?;
        let elapsed = t0.elapsed().as_secs_f64();

        let ck = self.save_checkpoint(&model.checkpoint(None)?, TRANSFORMER_CKPT)?;
        let log_path = self.path(TRANSFORMER_LOG);
        io::write_rows(
            &log_path,
            log.epoch_train_mse.iter().enumerate().map(|(i, &l)| EpochRow {
                epoch: i + 1,
                train_mse: l,
            }),
        )?;

        let mut m = self.manifest("train-transformer");
        m.timings_s.insert("train_transformer".into(), elapsed);
        let first = log.epoch_train_mse.first().copied().unwrap_or(f64::NAN);
        let last = log.epoch_train_mse.last().copied().unwrap_or(f64::NAN);
        let e = &log.eval;
        for (k, v) in [
            ("transformer.train_mse_first", first),
            ("transformer.train_mse_last", last),
            ("transformer.test_mse", e.mse),
            ("transformer.locf_mse", e.locf_mse),
            ("transformer.test_mse_scaled", e.mse_scaled),
            ("transformer.locf_mse_scaled", e.locf_mse_scaled),
            ("transformer.test_over_locf", e.mse / e.locf_mse),
        ] {
            m.metrics.insert(k.into(), v);
        }
        let summary = vec![
            format!(
                "train MSE epoch 1 {first:.5} -> epoch {} {last:.5}",
                log.epoch_train_mse.len()
            ),
            format!(
                "test forecast MSE {:.5} mg^2/L^2, last-value baseline {:.5} (ratio {:.4})",
                e.mse,
                e.locf_mse,
                e.mse / e.locf_mse
            ),
        ];
        self.finish(m, &[ck, log_path], summary)
    }

    /// Forecasts every test subject from its observed prefix with the saved
    /// transformer and writes `fig1_data.csv`.
    pub fn forecast(&self) -> CliResult<Outcome> {
        let model = ForecastModel::from_checkpoint(&self.load_checkpoint(TRANSFORMER_CKPT)?)?;
        let data = self.load_data()?;
        let t0 = Instant::now();
        let k = model.config.input_len;
        let seed = self.seed();
        let mut rows = Vec::new();
        let (mut se, mut lse, mut n) = (0.0, 0.0, 0usize);
        for (i, p) in data.forecast.test.iter().enumerate() {
            let id = p.meta.subject_id.unwrap_or(i);
            let pred = model.generate(&p.concentrations[..k])?;
            let last = p.concentrations[k - 1];
            for (j, (&t, &c)) in p.times.iter().zip(&p.concentrations).enumerate() {
                let (prediction, phase) = if j < k {
                    (c, "observed")
                } else {
                    let y = pred[j - k];
                    se += (y - c).powi(2);
                    lse += (last - c).powi(2);
                    n += 1;
                    (y, "forecast")
                };
                rows.push(Fig1Row {
                    subject_id: id,
                    time_h: t,
                    truth: c,
                    prediction,
                    phase,
                    seed,
                });
            }
        }
        let path = self.path(FIG1);
        io::write_rows(&path, rows)?;
        let mut m = self.manifest("forecast");
        m.timings_s.insert("forecast".into(), t0.elapsed().as_secs_f64());
        let (mse, locf) = (se / n as f64, lse / n as f64);
        m.metrics.insert("forecast.test_mse".into(), mse);
        m.metrics.insert("forecast.locf_mse".into(), locf);
        let summary = vec![format!(
            "forecast {} test subjects: MSE {mse:.5}, last-value baseline {locf:.5}",
            data.forecast.test.len()
        )];
        self.finish(m, &[path], summary)
    }

    fn diffusion_config(&self, lambda: f64) -> DiffusionConfig {
        DiffusionConfig {
            lambda,
            ..self.config.diffusion.clone()
        }
    }

    fn write_diffusion_logs(&self, logs: &[&DiffusionLog]) -> CliResult<PathBuf> {
        let path = self.path(DIFFUSION_LOG);
        io::write_rows(
            &path,
            logs.iter().flat_map(|l| {
                l.epoch_loss.iter().enumerate().map(|(i, &loss)| DiffusionLogRow {
                    lambda: l.lambda,
                    epoch: i + 1,
                    loss,
                })
            }),
        )?;
        Ok(path)
    }

    pub fn train_diffusion(&self, lambda: f64) -> CliResult<Outcome> {
        let data = self.load_data()?;
        let t0 = Instant::now();
        let stats = Standardizer::fit(&data.physio)?;
        let mut model = DiffusionModel::new(self.diffusion_config(lambda), stats, self.seed())?;
        let log = model.train(&data.physio, self.seed())?;
        let elapsed = t0.elapsed().as_secs_f64();
        let ck = self.save_checkpoint(&model.checkpoint(None), &diffusion_ckpt(lambda))?;
        let log_path = self.write_diffusion_logs(&[&log])?;
        let mut m = self.manifest("train-diffusion");
        m.timings_s.insert(format!("train_diffusion_lambda{lambda}"), elapsed);
        let last = log.epoch_loss.last().copied().unwrap_or(f64::NAN);
        m.metrics.insert(format!("diffusion.final_loss_lambda{lambda}"), last);
        let summary = vec![format!(
            "lambda {lambda}: {} epochs, final loss {last:.5}",
            log.epoch_loss.len()
        )];
        self.finish(m, &[ck, log_path], summary)
    }

    pub fn sample_population(&self, n: usize, lambda: f64) -> CliResult<Outcome> {
        let model = DiffusionModel::from_checkpoint(&self.load_checkpoint(&diffusion_ckpt(lambda))?)?;
        let t0 = Instant::now();
        let samples = model.sample(n, self.seed())?;
        let rate = diffusion::violation_rate(&samples)?;
        let path = self.path(SAMPLES);
        io::write_rows(&path, sample_rows(&samples))?;
        let mut m = self.manifest("sample-population");
        m.timings_s.insert("sample".into(), t0.elapsed().as_secs_f64());
        m.metrics.insert("samples.violation_pct".into(), pct(rate));
        let summary = vec![format!("{n} samples at lambda {lambda}: {:.2}% violate", pct(rate))];
        self.finish(m, &[path], summary)
    }

    /// Trains the unconstrained and constrained arms and writes the ablation
    /// table and scatter data. Fails the check unless the constrained rate
    /// is strictly lower.
    pub fn ablation(&self) -> CliResult<Outcome> {
        let data = self.load_data()?;
        let t0 = Instant::now();
        let opts = AblationOptions {
            config: self.config.diffusion.clone(),
            n_samples: self.config.run.ablation_samples,
            parallel: self.config.run.parallel_ablation,
            ..AblationOptions::default()
        };
        let outcome = diffusion::run_ablation(&data.physio, &opts, self.seed())?;
        let elapsed = t0.elapsed().as_secs_f64();
        let arms = &outcome.report.arms;
        let seed = self.seed();

        let mut files = Vec::new();
        for (arm, model) in arms.iter().zip(&outcome.models) {
            files.push(self.save_checkpoint(&model.checkpoint(None), &diffusion_ckpt(arm.lambda))?);
            let path = self.path(&arm_samples(arm.lambda));
            io::write_rows(&path, sample_rows(&arm.samples))?;
            files.push(path);
        }
        files.push(self.write_diffusion_logs(&arms.iter().map(|a| &a.log).collect::<Vec<_>>())?);
        let table = self.path(TABLE1);
        io::write_rows(
            &table,
            arms.iter().map(|a| Table1Row {
                config: arm_label(a.lambda),
                lambda: a.lambda,
                violation_pct: pct(a.violation_rate),
            }),
        )?;
        files.push(table);
        let fig2 = self.path(FIG2);
        io::write_rows(&fig2, arms.iter().flat_map(|a| fig2_rows(a.lambda, &a.samples, seed)))?;
        files.push(fig2);

        let mut m = self.manifest("ablation");
        m.timings_s.insert("ablation".into(), elapsed);
        let mut summary = Vec::new();
        for a in arms {
            m.metrics.insert(
                format!("ablation.violation_pct_lambda{}", a.lambda),
                pct(a.violation_rate),
            );
            summary.push(format!(
                "{:<24} lambda {}: {:.2}% of {} samples violate",
                arm_label(a.lambda),
                a.lambda,
                pct(a.violation_rate),
                a.samples.len()
            ));
        }
        let mut out = self.finish(m, &files, summary)?;
        let (u, c) = (arms[0].violation_rate, arms[1].violation_rate);
        if c >= u {
            out.check_failure = Some(format!(
                "constrained violation rate {:.2}% is not below unconstrained {:.2}%",
                pct(c),
                pct(u)
            ));
        }
        Ok(out)
    }

    /// Scatter data from the saved ablation checkpoints.
    pub fn fig2_from_checkpoints(&self) -> CliResult<Outcome> {
        let t0 = Instant::now();
        let seed = self.seed();
        let mut rows = Vec::new();
        let mut m = self.manifest("fig2");
        let mut summary = Vec::new();
        for lambda in AblationOptions::default().lambdas {
            let model = DiffusionModel::from_checkpoint(&self.load_checkpoint(&diffusion_ckpt(lambda))?)?;
            let samples = model.sample(self.config.run.ablation_samples, seed)?;
            let rate = diffusion::violation_rate(&samples)?;
            m.metrics
                .insert(format!("ablation.violation_pct_lambda{lambda}"), pct(rate));
            summary.push(format!("lambda {lambda}: {:.2}% violate", pct(rate)));
            rows.extend(fig2_rows(lambda, &samples, seed));
        }
        let path = self.path(FIG2);
        io::write_rows(&path, rows)?;
        m.timings_s.insert("fig2".into(), t0.elapsed().as_secs_f64());
        self.finish(m, &[path], summary)
    }

    fn loso_metrics(m: &mut RunManifest, r: &LosoReport) {
        m.metrics.insert("loso.test_mse".into(), r.test_mse);
        m.metrics.insert("loso.baseline_mse".into(), r.baseline_mse);
        if let Some(v) = r.interpolated_mse {
            m.metrics.insert("loso.interpolated_mse".into(), v);
        }
    }

    pub fn train_allometry(&self, holdout: &str) -> CliResult<Outcome> {
        let data = self.load_data()?;
        let t0 = Instant::now();
        let out = allometry::train_loso(&data.xspecies, holdout, &self.config.allometry, self.seed())?;
        let elapsed = t0.elapsed().as_secs_f64();
        let r = &out.report;
        let ck = self.save_checkpoint(&out.model.checkpoint(None), &allometry_ckpt(&r.held_out))?;
        let log_path = self.path(ALLOMETRY_LOG);
        io::write_rows(
            &log_path,
            r.train_loss.iter().enumerate().map(|(i, &l)| EpochRow {
                epoch: i + 1,
                train_mse: l,
            }),
        )?;
        let report = self.path(LOSO_REPORT);
        io::write_rows(
            &report,
            [LosoRow {
                held_out: r.held_out.clone(),
                test_mse: r.test_mse,
                baseline_mse: r.baseline_mse,
                interpolated_mse: r.interpolated_mse,
            }],
        )?;
        let mut m = self.manifest("train-allometry");
        m.timings_s.insert("train_allometry".into(), elapsed);
        Self::loso_metrics(&mut m, r);
        let mut summary = vec![format!(
            "held out {}: test MSE {:.5}, mean-profile baseline {:.5}",
            r.held_out, r.test_mse, r.baseline_mse
        )];
        if let Some(v) = r.interpolated_mse {
            summary.push(format!("log-weight interpolated embedding: test MSE {v:.5}"));
        }
        self.finish(m, &[ck, log_path, report], summary)
    }

    /// Held-out species profiles from the saved allometry checkpoint.
    pub fn predict_species(&self, holdout: &str) -> CliResult<Outcome> {
        let data = self.load_data()?;
        let held = data.xspecies.species_by_name(holdout)?;
        let name = held.name.clone();
        let model = AllometryModel::from_checkpoint(&self.load_checkpoint(&allometry_ckpt(&name))?)?;
        let t0 = Instant::now();
        let r = allometry::evaluate_loso(&model, &data.xspecies, &name)?;
        let seed = self.seed();
        let rows = r.predictions.iter().flat_map(|p| {
            let name = name.clone();
            (0..p.times.len()).map(move |j| Fig3Row {
                drug_id: p.drug_id,
                species: name.clone(),
                time_h: p.times[j],
                truth: p.truth[j],
                prediction: p.prediction[j],
                baseline: p.baseline[j],
                interpolated: p.interpolated.get(j).copied(),
                seed,
            })
        });
        let path = self.path(FIG3);
        io::write_rows(&path, rows)?;
        let mut m = self.manifest("predict-species");
        m.timings_s.insert("predict_species".into(), t0.elapsed().as_secs_f64());
        Self::loso_metrics(&mut m, &r);
        let summary = vec![format!(
            "{} {name} profiles: MSE {:.5}, baseline {:.5}",
            r.predictions.len(),
            r.test_mse,
            r.baseline_mse
        )];
        self.finish(m, &[path], summary)
    }

    /// Emits all three figure data files. With `train`, regenerates the data
    /// and trains every model first; otherwise the checkpoints must exist.
    /// The returned manifest merges the metrics and timings of every step.
    pub fn reproduce_figures(&self, train: bool) -> CliResult<Outcome> {
        let holdout = self.config.run.holdout.clone();
        let mut steps = Vec::new();
        if train {
            steps.push(self.generate()?);
            steps.push(self.train_transformer()?);
            steps.push(self.ablation()?);
            steps.push(self.train_allometry(&holdout)?);
        } else {
            for file in [
                TRANSFORMER_CKPT.to_string(),
                diffusion_ckpt(0.0),
                diffusion_ckpt(1.0),
                allometry_ckpt(&holdout),
            ] {
                let p = self.ckpt_path(&file);
                if !p.exists() {
                    return Err(CliError::MissingArtifact(p));
                }
            }
            steps.push(self.fig2_from_checkpoints()?);
        }
        steps.push(self.forecast()?);
        steps.push(self.predict_species(&holdout)?);

        let mut m = self.manifest("reproduce-figures");
        let mut summary = Vec::new();
        let mut check_failure = None;
        let mut artifacts: BTreeMap<String, String> = BTreeMap::new();
        for s in steps {
            m.metrics.extend(s.manifest.metrics);
            m.timings_s.extend(s.manifest.timings_s);
            artifacts.extend(s.manifest.artifacts.into_iter().map(|a| (a.file, a.sha256)));
            summary.extend(s.summary);
            check_failure = check_failure.or(s.check_failure);
        }
        m.artifacts = artifacts
            .into_iter()
            .map(|(file, sha256)| crate::manifest::Artifact { file, sha256 })
            .collect();
        m.write(&self.out)?;
        Ok(Outcome {
            manifest: m,
            summary,
            check_failure,
        })
    }
}

/// Resolves the output directory: explicit flag, then environment, then
/// the config file.
pub fn resolve_out(flag: Option<&Path>, env: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    flag.or(env)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| config.run.out_dir.clone())
}
