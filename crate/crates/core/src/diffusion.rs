//! Denoising diffusion over physiological vectors with an organ-volume
//! penalty on the implied clean sample.
//!
//! The denoiser sees standardised vectors; the constraint is always
//! evaluated after mapping back to physical units.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::Mlp;
use crate::autodiff::{AdamConfig, AdamState, Checkpoint, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::synthdata::PhysioVector;
use crate::transformer::positional_encoding;

pub const MODULE_NAME: &str = "diffusion";
pub const DATA_DIM: usize = 5;

/// Weight fraction bounding the combined liver and heart volume.
pub const ORGAN_WEIGHT_FRACTION: f64 = 0.04;

const WEIGHT_COL: usize = 2;
const LIVER_COL: usize = 3;
const HEART_COL: usize = 4;

/// `g(x) = V_liver + V_heart − 0.04·W` on a physical-unit physio array.
pub fn organ_volume_constraint(x: &[f64; DATA_DIM]) -> f64 {
    x[LIVER_COL] + x[HEART_COL] - ORGAN_WEIGHT_FRACTION * x[WEIGHT_COL]
}

fn constraint_coefficients() -> Tensor {
    let mut c = [0.0; DATA_DIM];
    c[WEIGHT_COL] = -ORGAN_WEIGHT_FRACTION;
    c[LIVER_COL] = 1.0;
    c[HEART_COL] = 1.0;
    Tensor::column_vector(c.to_vec()).expect("constraint column")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub time_embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Physics penalty weight λ.
    pub lambda: f64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
            hidden_width: 128,
            hidden_layers: 3,
            time_embed_dim: 16,
            epochs: 2000,
            batch_size: 128,
            lr: 1e-3,
            lambda: 1.0,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Config("diffusion needs at least 2 steps".into()));
        }
        if !(0.0 < self.beta_start && self.beta_start < self.beta_end && self.beta_end < 1.0) {
            return Err(Error::Config(format!(
                "beta schedule must satisfy 0 < start < end < 1, got {} .. {}",
                self.beta_start, self.beta_end
            )));
        }
        if self.hidden_width == 0 || self.hidden_layers == 0 || self.time_embed_dim == 0 {
            return Err(Error::Config("denoiser sizes must be positive".into()));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config(
                "batch_size, lr must be positive and lambda nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Linear β schedule; index `t` runs over `1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Self {
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if i + 1 == steps {
                    beta_end
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Self {
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn from_config(cfg: &DiffusionConfig) -> Self {
        Self::linear(cfg.steps, cfg.beta_start, cfg.beta_end)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn idx(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::Parameter(format!(
                "diffusion step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        Ok(self.betas[self.idx(t)?])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        Ok(self.alphas[self.idx(t)?])
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        Ok(self.alpha_bars[self.idx(t)?])
    }

    /// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
    pub fn forward_noising(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        if x0.len() != eps.len() {
            return Err(Error::shape("forward_noising", &[x0.len()], &[eps.len()]));
        }
        let ab = self.alpha_bar(t)?;
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| s * x + n * e).collect())
    }

    /// `x̂0 = (x_t − √(1−ᾱ_t)·ε̂) / √ᾱ_t`.
    pub fn predict_x0(&self, x_t: &[f64], t: usize, eps_hat: &[f64]) -> Result<Vec<f64>> {
        if x_t.len() != eps_hat.len() {
            return Err(Error::shape("predict_x0", &[x_t.len()], &[eps_hat.len()]));
        }
        let ab = self.alpha_bar(t)?;
        let (s, n) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x_t.iter().zip(eps_hat).map(|(x, e)| (x - n * e) / s).collect())
    }
}

/// Per-dimension standardisation statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; DATA_DIM],
    pub sd: [f64; DATA_DIM],
}

impl Standardizer {
    pub fn fit(data: &[PhysioVector]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Contract("cannot standardise an empty dataset".into()));
        }
        let n = data.len() as f64;
        let mut mean = [0.0; DATA_DIM];
        for v in data {
            mean.iter_mut().zip(v.to_array()).for_each(|(m, x)| *m += x / n);
        }
        let mut sd = [0.0; DATA_DIM];
        for v in data {
            sd.iter_mut()
                .zip(v.to_array())
                .zip(mean)
                .for_each(|((s, x), m)| *s += (x - m).powi(2) / n);
        }
        for s in &mut sd {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, sd })
    }

    pub fn encode(&self, x: &[f64; DATA_DIM]) -> [f64; DATA_DIM] {
        std::array::from_fn(|i| (x[i] - self.mean[i]) / self.sd[i])
    }

    pub fn decode(&self, z: &[f64]) -> [f64; DATA_DIM] {
        std::array::from_fn(|i| z[i] * self.sd[i] + self.mean[i])
    }
}

/// `ReLU(g(x̂0))²` for one standardised vector.
pub fn physics_penalty_value(x0_hat: &[f64], stats: &Standardizer) -> f64 {
    organ_volume_constraint(&stats.decode(x0_hat)).max(0.0).powi(2)
}

/// Batch mean of `ReLU(g(x̂0))²`, differentiable through de-standardisation.
pub fn physics_penalty(tape: &mut Tape, x0_hat: Var, stats: &Standardizer) -> Result<Var> {
    let (_, d) = tape.value(x0_hat).dims2()?;
    if d != DATA_DIM {
        return Err(Error::shape("physics_penalty", tape.shape(x0_hat), &[DATA_DIM]));
    }
    let sd = tape.constant(Tensor::row_vector(stats.sd.to_vec())?);
    let mean = tape.constant(Tensor::row_vector(stats.mean.to_vec())?);
    let scaled = tape.mul_row(x0_hat, sd)?;
    let phys = tape.add_row(scaled, mean)?;
    let coef = tape.constant(constraint_coefficients());
    let g = tape.matmul(phys, coef)?;
    let r = tape.relu(g);
    let sq = tape.square(r);
    Ok(tape.mean(sq))
}

pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    positional_encoding(t, dim)
}

/// MLP noise predictor `ε_θ(x_t, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    pub config: DiffusionConfig,
    pub params: ParamStore,
    mlp: Mlp,
}

impl Denoiser {
    pub fn new(config: DiffusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, "diffusion.init");
        let mut params = ParamStore::new();
        let mut widths = vec![DATA_DIM + config.time_embed_dim];
        widths.extend(std::iter::repeat_n(config.hidden_width, config.hidden_layers));
        widths.push(DATA_DIM);
        let mlp = Mlp::new(&mut params, "denoiser", &widths, &mut rng);
        Ok(Self { config, params, mlp })
    }

    /// `x_t: [B, 5]` standardised, one step index per row.
    pub fn forward_tape(&self, tape: &mut Tape, x_t: Var, steps: &[usize]) -> Result<Var> {
        let (b, d) = tape.value(x_t).dims2()?;
        if d != DATA_DIM || b != steps.len() {
            return Err(Error::shape("denoiser", tape.shape(x_t), &[steps.len(), DATA_DIM]));
        }
        let dim = self.config.time_embed_dim;
        let emb: Vec<f64> = steps.iter().flat_map(|&t| time_embedding(t, dim)).collect();
        let emb = tape.constant(Tensor::new(&[b, dim], emb)?);
        let input = tape.concat_cols(&[x_t, emb])?;
        self.mlp.forward(tape, &self.params, input)
    }

    pub fn predict_noise(&self, x_t: &[[f64; DATA_DIM]], steps: &[usize]) -> Result<Vec<[f64; DATA_DIM]>> {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[x_t.len(), DATA_DIM], x_t.concat())?);
        let out = self.forward_tape(&mut tape, x, steps)?;
        Ok(tape
            .value(out)
            .data()
            .chunks(DATA_DIM)
            .map(|c| std::array::from_fn(|i| c[i]))
            .collect())
    }
}

/// Draws of the stochastic parts of one training batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub steps: Vec<usize>,
    pub eps: Vec<[f64; DATA_DIM]>,
}

impl NoiseDraw {
    pub fn sample<R: Rng>(rng: &mut R, batch: usize, steps: usize) -> Self {
        let t = (0..batch).map(|_| rng.random_range(1..=steps)).collect();
        let eps = (0..batch)
            .map(|_| std::array::from_fn(|_| rng.sample(StandardNormal)))
            .collect();
        Self { steps: t, eps }
    }
}

/// Noise-matching loss `mean_i ‖ε_i − ε̂_i‖²`, plus `λ·mean_i ReLU(g(x̂0_i))²`
/// when `lambda` is `Some`.
pub fn training_loss(
    tape: &mut Tape,
    model: &Denoiser,
    schedule: &DiffusionSchedule,
    x0: &[[f64; DATA_DIM]],
    draw: &NoiseDraw,
    lambda: Option<f64>,
    stats: &Standardizer,
) -> Result<Var> {
    let b = x0.len();
    if b == 0 || draw.steps.len() != b || draw.eps.len() != b {
        return Err(Error::Contract(
            "training batch and noise draw must be nonempty and aligned".into(),
        ));
    }
    let mut x_t = Vec::with_capacity(b * DATA_DIM);
    let mut inv_sqrt_ab = Vec::with_capacity(b * DATA_DIM);
    let mut noise_coef = Vec::with_capacity(b * DATA_DIM);
    for ((x, e), &t) in x0.iter().zip(&draw.eps).zip(&draw.steps) {
        x_t.extend(schedule.forward_noising(x, t, e)?);
        let ab = schedule.alpha_bar(t)?;
        inv_sqrt_ab.extend([1.0 / ab.sqrt(); DATA_DIM]);
        noise_coef.extend([(1.0 - ab).sqrt() / ab.sqrt(); DATA_DIM]);
    }
    let xt_data = x_t.clone();
    let xt = tape.constant(Tensor::new(&[b, DATA_DIM], x_t)?);
    let eps = tape.constant(Tensor::new(&[b, DATA_DIM], draw.eps.concat())?);
    let eps_hat = model.forward_tape(tape, xt, &draw.steps)?;
    let mse = tape.mse_loss(eps_hat, eps)?;
    let noise_loss = tape.scale(mse, DATA_DIM as f64);

    let Some(lambda) = lambda else {
        return Ok(noise_loss);
    };
    // x̂0 = x_t/√ᾱ − ε̂·√(1−ᾱ)/√ᾱ, row-wise in t
    let scaled_xt: Vec<f64> = xt_data.iter().zip(&inv_sqrt_ab).map(|(x, c)| x * c).collect();
    let scaled_xt = tape.constant(Tensor::new(&[b, DATA_DIM], scaled_xt)?);
    let coef = tape.constant(Tensor::new(&[b, DATA_DIM], noise_coef)?);
    let correction = tape.mul(eps_hat, coef)?;
    let x0_hat = tape.sub(scaled_xt, correction)?;
    let penalty = physics_penalty(tape, x0_hat, stats)?;
    let weighted = tape.scale(penalty, lambda);
    tape.add(noise_loss, weighted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionModel {
    pub denoiser: Denoiser,
    pub schedule: DiffusionSchedule,
    pub stats: Standardizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionLog {
    pub lambda: f64,
    pub epoch_loss: Vec<f64>,
}

/// Which penalty term the training loop builds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyTerm {
    /// `λ·L_phy` with the configured λ (also when λ = 0).
    Weighted,
    /// No penalty subgraph at all.
    Omitted,
}

impl DiffusionModel {
    pub fn new(config: DiffusionConfig, stats: Standardizer, seed: u64) -> Result<Self> {
        let schedule = DiffusionSchedule::from_config(&config);
        Ok(Self {
            denoiser: Denoiser::new(config, seed)?,
            schedule,
            stats,
        })
    }

    pub fn config(&self) -> &DiffusionConfig {
        &self.denoiser.config
    }

    pub fn train(&mut self, data: &[PhysioVector], seed: u64) -> Result<DiffusionLog> {
        self.train_with(data, seed, PenaltyTerm::Weighted)
    }

    /// Minibatch Adam on the constrained objective. The data order and the
    /// (t, ε) draws depend only on `seed`, never on λ.
    pub fn train_with(&mut self, data: &[PhysioVector], seed: u64, term: PenaltyTerm) -> Result<DiffusionLog> {
        if data.is_empty() {
            return Err(Error::Contract("empty training set".into()));
        }
        let cfg = self.config().clone();
        let encoded: Vec<[f64; DATA_DIM]> = data.iter().map(|v| self.stats.encode(&v.to_array())).collect();
        let lambda = match term {
            PenaltyTerm::Weighted => Some(cfg.lambda),
            PenaltyTerm::Omitted => None,
        };
        let mut adam = AdamState::new(&self.denoiser.params, AdamConfig::with_lr(cfg.lr));
        let mut noise_rng = rng::stream(seed, "diffusion.noise");
        let mut shuffle_rng = rng::stream(seed, "diffusion.shuffle");
        let mut order: Vec<usize> = (0..encoded.len()).collect();
        let mut epoch_loss = Vec::with_capacity(cfg.epochs);
        for epoch in 0..cfg.epochs {
            order.shuffle(&mut shuffle_rng);
            let (mut total, mut batches) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<[f64; DATA_DIM]> = chunk.iter().map(|&i| encoded[i]).collect();
                let draw = NoiseDraw::sample(&mut noise_rng, batch.len(), cfg.steps);
                let mut tape = Tape::new();
                let loss = training_loss(
                    &mut tape,
                    &self.denoiser,
                    &self.schedule,
                    &batch,
                    &draw,
                    lambda,
                    &self.stats,
                )?;
                let lv = tape.value(loss).item();
                if !lv.is_finite() {
                    return Err(Error::TrainingDiverged {
                        epoch: epoch + 1,
                        detail: format!("loss {lv} (lambda {})", cfg.lambda),
                    });
                }
                tape.backward(loss, &mut self.denoiser.params)?;
                adam.step(&mut self.denoiser.params)?;
                total += lv;
                batches += 1;
            }
            epoch_loss.push(total / batches as f64);
        }
        Ok(DiffusionLog {
            lambda: cfg.lambda,
            epoch_loss,
        })
    }

    /// Ancestral sampling from `x_T ~ N(0, I)` with σ_t² = β_t and no noise
    /// on the final step; returns unclamped physical-unit vectors.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Vec<PhysioVector>> {
        if n == 0 {
            return Err(Error::Parameter("sample count must be positive".into()));
        }
        let mut rng = rng::stream(seed, "diffusion.sample");
        let mut x: Vec<[f64; DATA_DIM]> = (0..n)
            .map(|_| std::array::from_fn(|_| rng.sample(StandardNormal)))
            .collect();
        let s = &self.schedule;
        for t in (1..=s.steps()).rev() {
            let eps_hat = self.denoiser.predict_noise(&x, &vec![t; n])?;
            let (alpha, beta, ab) = (s.alpha(t)?, s.beta(t)?, s.alpha_bar(t)?);
            let coef = beta / (1.0 - ab).sqrt();
            let sigma = beta.sqrt();
            for (xi, ei) in x.iter_mut().zip(&eps_hat) {
                for d in 0..DATA_DIM {
                    let mean = (xi[d] - coef * ei[d]) / alpha.sqrt();
                    xi[d] = if t > 1 {
                        mean + sigma * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        mean
                    };
                }
            }
            if x.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite sample at diffusion step {t}")));
            }
        }
        x.iter()
            .map(|z| PhysioVector::from_slice(&self.stats.decode(z)))
            .collect()
    }

    pub fn checkpoint(&self, optimizer: Option<&AdamState>) -> Checkpoint {
        let extra = serde_json::json!({
            "config": self.denoiser.config,
            "stats": self.stats,
        });
        Checkpoint::capture(MODULE_NAME, &self.denoiser.params, optimizer, extra)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_module(MODULE_NAME)?;
        let bad = |e: serde_json::Error| Error::Contract(format!("checkpoint metadata: {e}"));
        let config: DiffusionConfig = serde_json::from_value(ck.extra["config"].clone()).map_err(bad)?;
        let stats: Standardizer = serde_json::from_value(ck.extra["stats"].clone()).map_err(bad)?;
        let mut model = Self::new(config, stats, 0)?;
        let params = ck.restore_store()?;
        if params.names() != model.denoiser.params.names() {
            return Err(Error::Contract("checkpoint parameter layout mismatch".into()));
        }
        model.denoiser.params = params;
        Ok(model)
    }
}

/// Fraction of vectors with `g(x) > 0`.
pub fn violation_rate(samples: &[PhysioVector]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract("violation rate of an empty sample".into()));
    }
    Ok(samples.iter().filter(|v| v.violates()).count() as f64 / samples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationArm {
    pub lambda: f64,
    pub violation_rate: f64,
    pub samples: Vec<PhysioVector>,
    pub log: DiffusionLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Unconstrained arm first, constrained arm second.
    pub arms: Vec<AblationArm>,
}

impl AblationReport {
    pub fn rate(&self, lambda: f64) -> Option<f64> {
        self.arms.iter().find(|a| a.lambda == lambda).map(|a| a.violation_rate)
    }

    /// Unconstrained rate over constrained rate (infinite when the latter is 0).
    pub fn reduction_factor(&self) -> f64 {
        let (u, c) = (self.arms[0].violation_rate, self.arms[1].violation_rate);
        if c == 0.0 {
            f64::INFINITY
        } else {
            u / c
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOptions {
    pub config: DiffusionConfig,
    pub lambdas: [f64; 2],
    pub n_samples: usize,
    pub parallel: bool,
}

impl Default for AblationOptions {
    fn default() -> Self {
        Self {
            config: DiffusionConfig::default(),
            lambdas: [0.0, 1.0],
            n_samples: 2000,
            parallel: false,
        }
    }
}

fn run_arm(
    data: &[PhysioVector],
    stats: Standardizer,
    cfg: DiffusionConfig,
    n: usize,
    seed: u64,
) -> Result<(AblationArm, DiffusionModel)> {
    let lambda = cfg.lambda;
    let mut model = DiffusionModel::new(cfg, stats, seed)?;
    let log = model.train(data, seed)?;
    let samples = model.sample(n, seed)?;
    let arm = AblationArm {
        lambda,
        violation_rate: violation_rate(&samples)?,
        samples,
        log,
    };
    Ok((arm, model))
}

/// Both trained arms alongside the report.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutcome {
    pub report: AblationReport,
    pub models: Vec<DiffusionModel>,
}

/// Trains two denoisers that differ only in λ (same initialisation, data
/// order and noise draws), samples each and reports violation rates.
pub fn run_ablation(data: &[PhysioVector], opts: &AblationOptions, seed: u64) -> Result<AblationOutcome> {
    let stats = Standardizer::fit(data)?;
    let cfgs = opts.lambdas.map(|lambda| DiffusionConfig {
        lambda,
        ..opts.config.clone()
    });
    for c in &cfgs {
        c.validate()?;
    }
    let results = if opts.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = cfgs
                .iter()
                .map(|c| {
                    let c = c.clone();
                    scope.spawn(move || run_arm(data, stats, c, opts.n_samples, seed))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("ablation arm panicked"))
                .collect::<Result<Vec<_>>>()
        })?
    } else {
        cfgs.iter()
            .map(|c| run_arm(data, stats, c.clone(), opts.n_samples, seed))
            .collect::<Result<Vec<_>>>()?
    };
    let (arms, models) = results.into_iter().unzip();
    Ok(AblationOutcome {
        report: AblationReport { arms },
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints_and_monotonicity() {
        let s = DiffusionSchedule::linear(100, 1e-4, 0.02);
        assert_eq!(s.beta(1).unwrap(), 1e-4);
        assert_eq!(s.beta(100).unwrap(), 0.02);
        for t in 2..=100 {
            assert!(s.alpha_bar(t).unwrap() < s.alpha_bar(t - 1).unwrap());
        }
        assert!(s.alpha_bar(100).unwrap() > 0.0 && s.alpha_bar(1).unwrap() < 1.0);
        assert!(s.beta(0).is_err() && s.beta(101).is_err());
    }

    #[test]
    fn zero_noise_scales_signal() {
        let s = DiffusionSchedule::linear(100, 1e-4, 0.02);
        let x0 = [1.0, -2.0, 0.5, 0.0, 3.0];
        let xt = s.forward_noising(&x0, 40, &[0.0; 5]).unwrap();
        let c = s.alpha_bar(40).unwrap().sqrt();
        for (a, b) in xt.iter().zip(x0) {
            assert_eq!(*a, c * b);
        }
    }

    #[test]
    fn predict_x0_first_step() {
        let s = DiffusionSchedule::linear(100, 1e-4, 0.02);
        let x = s.predict_x0(&[1.0; 5], 1, &[0.0; 5]).unwrap();
        assert!((x[0] - (1.0 + 5e-5)).abs() < 1e-8, "{}", x[0]);
    }

    #[test]
    fn penalty_examples() {
        let stats = Standardizer {
            mean: [0.0; 5],
            sd: [1.0; 5],
        };
        let ok = [40.0, 170.0, 70.0, 1.75, 0.35];
        let bad = [40.0, 170.0, 70.0, 2.6, 0.4];
        assert_eq!(physics_penalty_value(&ok, &stats), 0.0);
        assert!((physics_penalty_value(&bad, &stats) - 0.04).abs() < 1e-12);
    }

    #[test]
    fn config_rejects_bad_schedule() {
        let c = DiffusionConfig {
            beta_start: 0.5,
            beta_end: 0.1,
            ..DiffusionConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
