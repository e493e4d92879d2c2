//! Decoder-only Transformer that forecasts a concentration curve from its
//! first few samples.
//!
//! Concentrations are log-transformed and standardised with train-split
//! statistics. Training is teacher-forced next-step regression under a
//! causal mask; inference appends its own greedy predictions.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{zero_param, Linear};
use crate::autodiff::{AdamConfig, AdamState, Checkpoint, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::pkode::PKProfile;
use crate::rng;
use crate::synthdata::ForecastDataset;

pub const MODULE_NAME: &str = "transformer";

const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub input_len: usize,
    pub output_len: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 2,
            d_model: 32,
            d_ff: 64,
            input_len: 5,
            output_len: 45,
            epochs: 50,
            lr: 1e-3,
            batch_size: 32,
        }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 || self.d_ff == 0 || self.input_len == 0 || self.output_len == 0 {
            return Err(Error::Config("transformer sizes must be positive".into()));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch_size and lr must be positive".into()));
        }
        Ok(())
    }

    pub fn seq_len(&self) -> usize {
        self.input_len + self.output_len
    }
}

/// Sinusoidal encoding: `sin(pos / 10000^(2i/d))` on even dims, `cos` of
/// the same argument on odd dims.
pub fn positional_encoding(pos: usize, d_model: usize) -> Vec<f64> {
    (0..d_model)
        .map(|j| {
            let i2 = (j - j % 2) as f64;
            let arg = pos as f64 / 10000f64.powf(i2 / d_model as f64);
            if j % 2 == 0 {
                arg.sin()
            } else {
                arg.cos()
            }
        })
        .collect()
}

pub fn positional_table(len: usize, d_model: usize) -> Tensor {
    let data = (0..len).flat_map(|p| positional_encoding(p, d_model)).collect();
    Tensor::new(&[len, d_model], data).expect("positional table shape")
}

/// `softmax(Q·Kᵀ/√d_k)` — the attention weights alone.
pub fn attention_weights(tape: &mut Tape, q: Var, k: Var, causal: bool) -> Result<Var> {
    let dk = tape.value(q).dims2()?.1;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt());
    if causal {
        tape.causal_softmax_rows(scaled)
    } else {
        tape.softmax_rows(scaled)
    }
}

/// Scaled dot-product attention `softmax(Q·Kᵀ/√d_k)·V`.
pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, causal: bool) -> Result<Var> {
    let (lq, dq) = tape.value(q).dims2()?;
    let (lk, dk) = tape.value(k).dims2()?;
    let (lv, _) = tape.value(v).dims2()?;
    if dq != dk || lk != lv {
        return Err(Error::shape("attention", &[lq, dq], &[lk, dk]));
    }
    let w = attention_weights(tape, q, k, causal)?;
    tape.matmul(w, v)
}

/// Log-standardisation fitted on the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogScaler {
    pub mean: f64,
    pub sd: f64,
}

impl LogScaler {
    pub fn identity() -> Self {
        Self { mean: 0.0, sd: 1.0 }
    }

    pub fn fit(profiles: &[PKProfile]) -> Result<Self> {
        let logs: Vec<f64> = profiles
            .iter()
            .flat_map(|p| p.concentrations.iter().map(|c| c.max(LOG_FLOOR).ln()))
            .collect();
        if logs.is_empty() {
            return Err(Error::Contract("cannot fit scaler on no data".into()));
        }
        let n = logs.len() as f64;
        let mean = logs.iter().sum::<f64>() / n;
        let var = logs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Self { mean, sd })
    }

    pub fn encode(&self, c: f64) -> f64 {
        (c.max(LOG_FLOOR).ln() - self.mean) / self.sd
    }

    pub fn decode(&self, z: f64) -> f64 {
        (z * self.sd + self.mean).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Block {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ff1: Linear,
    ff2: Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub config: TransformerConfig,
    pub scaler: LogScaler,
    pub params: ParamStore,
    embed: Linear,
    blocks: Vec<Block>,
    head: Linear,
}

impl ForecastModel {
    pub fn new(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, "transformer.init");
        let mut params = ParamStore::new();
        let d = config.d_model;
        let embed = Linear::new(&mut params, "embed", 1, d, &mut rng);
        let blocks = (0..config.n_layers)
            .map(|l| Block {
                wq: Linear::new(&mut params, &format!("block{l}.wq"), d, d, &mut rng),
                wk: Linear::new(&mut params, &format!("block{l}.wk"), d, d, &mut rng),
                wv: Linear::new(&mut params, &format!("block{l}.wv"), d, d, &mut rng),
                wo: Linear::new(&mut params, &format!("block{l}.wo"), d, d, &mut rng),
                ff1: Linear::new(&mut params, &format!("block{l}.ff1"), d, config.d_ff, &mut rng),
                ff2: Linear::new(&mut params, &format!("block{l}.ff2"), config.d_ff, d, &mut rng),
            })
            .collect();
        let head = Linear::new(&mut params, "head", d, 1, &mut rng);
        Ok(Self {
            config,
            scaler: LogScaler::identity(),
            params,
            embed,
            blocks,
            head,
        })
    }

    /// Zeroes the output head (test hook).
    pub fn zero_head(&mut self) {
        zero_param(&mut self.params, self.head.weight);
        zero_param(&mut self.params, self.head.bias);
    }

    /// Records the forward pass for `batch` equal-length standardised
    /// sequences; returns next-value predictions as a `[B·L, 1]` column.
    pub fn forward_tape(&self, tape: &mut Tape, batch: &[Vec<f64>]) -> Result<Var> {
        let len = batch.first().map_or(0, Vec::len);
        if len == 0 {
            return Err(Error::Contract("forward on an empty sequence".into()));
        }
        if batch.iter().any(|s| s.len() != len) {
            return Err(Error::Contract("sequences in a batch must share a length".into()));
        }
        let d = self.config.d_model;
        let heads = self.config.n_heads;
        let dk = d / heads;
        let n_seq = batch.len();

        let x = tape.constant(Tensor::column_vector(batch.concat())?);
        let pe_one = positional_table(len, d);
        let pe = Tensor::new(&[n_seq * len, d], pe_one.data().repeat(n_seq))?;
        let pe = tape.constant(pe);
        let emb = self.embed.forward(tape, &self.params, x)?;
        let mut h = tape.add(emb, pe)?;

        for block in &self.blocks {
            let q = block.wq.forward(tape, &self.params, h)?;
            let k = block.wk.forward(tape, &self.params, h)?;
            let v = block.wv.forward(tape, &self.params, h)?;
            let mut seqs = Vec::with_capacity(n_seq);
            for s in 0..n_seq {
                let (qs, ks, vs) = (
                    tape.slice_rows(q, s * len, len)?,
                    tape.slice_rows(k, s * len, len)?,
                    tape.slice_rows(v, s * len, len)?,
                );
                let mut head_out = Vec::with_capacity(heads);
                for hd in 0..heads {
                    let qh = tape.slice_cols(qs, hd * dk, dk)?;
                    let kh = tape.slice_cols(ks, hd * dk, dk)?;
                    let vh = tape.slice_cols(vs, hd * dk, dk)?;
                    head_out.push(attention(tape, qh, kh, vh, true)?);
                }
                seqs.push(if heads == 1 {
                    head_out[0]
                } else {
                    tape.concat_cols(&head_out)?
                });
            }
            let att = if n_seq == 1 { seqs[0] } else { tape.concat_rows(&seqs)? };
            let att = block.wo.forward(tape, &self.params, att)?;
            h = tape.add(h, att)?;
            let f = block.ff1.forward(tape, &self.params, h)?;
            let f = tape.relu(f);
            let f = block.ff2.forward(tape, &self.params, f)?;
            h = tape.add(h, f)?;
        }
        self.head.forward(tape, &self.params, h)
    }

    /// Next-value predictions (standardised units) for every position.
    pub fn forward(&self, sequence: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward_tape(&mut tape, &[sequence.to_vec()])?;
        Ok(tape.value(out).data().to_vec())
    }

    /// Greedy autoregressive continuation of a raw-concentration prefix.
    pub fn generate(&self, prefix: &[f64]) -> Result<Vec<f64>> {
        if prefix.len() != self.config.input_len {
            return Err(Error::Contract(format!(
                "prefix length {} != input_len {}",
                prefix.len(),
                self.config.input_len
            )));
        }
        let mut seq: Vec<f64> = prefix.iter().map(|&c| self.scaler.encode(c)).collect();
        let mut out = Vec::with_capacity(self.config.output_len);
        for step in 0..self.config.output_len {
            let next = *self.forward(&seq)?.last().expect("nonempty");
            if !next.is_finite() {
                return Err(Error::Divergence {
                    time: step as f64,
                    detail: "non-finite forecast".into(),
                });
            }
            let conc = self.scaler.decode(next);
            if !conc.is_finite() {
                return Err(Error::Divergence {
                    time: step as f64,
                    detail: format!("forecast overflowed (standardised value {next})"),
                });
            }
            seq.push(next);
            out.push(conc);
        }
        Ok(out)
    }

    pub fn checkpoint(&self, optimizer: Option<&AdamState>) -> Result<Checkpoint> {
        let extra = serde_json::json!({
            "config": self.config,
            "scaler": self.scaler,
        });
        Ok(Checkpoint::capture(MODULE_NAME, &self.params, optimizer, extra))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_module(MODULE_NAME)?;
        let bad = |e: serde_json::Error| Error::Contract(format!("checkpoint metadata: {e}"));
        let config: TransformerConfig = serde_json::from_value(ck.extra["config"].clone()).map_err(bad)?;
        let scaler: LogScaler = serde_json::from_value(ck.extra["scaler"].clone()).map_err(bad)?;
        let mut model = Self::new(config, 0)?;
        let params = ck.restore_store()?;
        if params.names() != model.params.names() {
            return Err(Error::Contract("checkpoint parameter layout mismatch".into()));
        }
        model.params = params;
        model.scaler = scaler;
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastEval {
    /// Autoregressive forecast MSE on concentrations in mg/L.
    pub mse: f64,
    /// Same, on log-standardised values.
    pub mse_scaled: f64,
    /// Last observed value carried forward, mg/L.
    pub locf_mse: f64,
    pub locf_mse_scaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epoch_train_mse: Vec<f64>,
    pub eval: ForecastEval,
}

fn profile_split(model: &ForecastModel, p: &PKProfile) -> Result<(Vec<f64>, Vec<f64>)> {
    let (k, total) = (model.config.input_len, model.config.seq_len());
    if p.len() != total {
        return Err(Error::Contract(format!(
            "profile has {} points, model expects {total}",
            p.len()
        )));
    }
    Ok((p.concentrations[..k].to_vec(), p.concentrations[k..].to_vec()))
}

/// Forecasts every profile from its prefix and compares to ground truth.
pub fn evaluate(model: &ForecastModel, profiles: &[PKProfile]) -> Result<ForecastEval> {
    let sc = model.scaler;
    let (mut se, mut se_z, mut lse, mut lse_z, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for p in profiles {
        let (prefix, truth) = profile_split(model, p)?;
        let pred = model.generate(&prefix)?;
        let last = *prefix.last().expect("nonempty prefix");
        for (&y, &yhat) in truth.iter().zip(&pred) {
            se += (yhat - y).powi(2);
            se_z += (sc.encode(yhat) - sc.encode(y)).powi(2);
            lse += (last - y).powi(2);
            lse_z += (sc.encode(last) - sc.encode(y)).powi(2);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Contract("evaluation on an empty set".into()));
    }
    let n = n as f64;
    Ok(ForecastEval {
        mse: se / n,
        mse_scaled: se_z / n,
        locf_mse: lse / n,
        locf_mse_scaled: lse_z / n,
    })
}

/// Fits the scaler on the train split and trains with teacher forcing.
pub fn train(model: &mut ForecastModel, data: &ForecastDataset, seed: u64) -> Result<TrainingLog> {
    if data.train.is_empty() {
        return Err(Error::Contract("empty training split".into()));
    }
    let cfg = model.config.clone();
    model.scaler = LogScaler::fit(&data.train)?;
    let encoded: Vec<Vec<f64>> = data
        .train
        .iter()
        .map(|p| {
            profile_split(model, p)?;
            Ok(p.concentrations.iter().map(|&c| model.scaler.encode(c)).collect())
        })
        .collect::<Result<_>>()?;

    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(cfg.lr));
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut epoch_train_mse = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::indexed_stream(seed, "transformer.shuffle", epoch as u64));
        let (mut total, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<Vec<f64>> = chunk
                .iter()
                .map(|&i| encoded[i][..encoded[i].len() - 1].to_vec())
                .collect();
            let targets: Vec<f64> = chunk.iter().flat_map(|&i| encoded[i][1..].iter().copied()).collect();
            let mut tape = Tape::new();
            let pred = model.forward_tape(&mut tape, &inputs)?;
            let target = tape.constant(Tensor::column_vector(targets)?);
            let loss = tape.mse_loss(pred, target)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch: epoch + 1,
                    detail: format!("loss {lv}"),
                });
            }
            tape.backward(loss, &mut model.params)?;
            adam.step(&mut model.params)?;
            total += lv;
            batches += 1;
        }
        epoch_train_mse.push(total / batches as f64);
    }
    let eval = evaluate(model, &data.test)?;
    Ok(TrainingLog { epoch_train_mse, eval })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positional_encoding_values() {
        let pe0 = positional_encoding(0, 8);
        for (j, v) in pe0.iter().enumerate() {
            assert_eq!(*v, if j % 2 == 0 { 0.0 } else { 1.0 });
        }
        let pe1 = positional_encoding(1, 32);
        assert!((pe1[0] - 1f64.sin()).abs() < 1e-15);
        assert!((pe1[0] - 0.8415).abs() < 1e-4);
        for p in 0..60 {
            assert!(positional_encoding(p, 32).iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn config_validation() {
        let bad = TransformerConfig {
            n_heads: 3,
            ..TransformerConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert_eq!(TransformerConfig::default().seq_len(), 50);
    }

    #[test]
    fn scaler_round_trip() {
        let s = LogScaler { mean: -0.3, sd: 1.7 };
        for c in [1e-3, 0.5, 3.3] {
            assert!((s.decode(s.encode(c)) - c).abs() < 1e-12 * c.max(1.0));
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let m = ForecastModel::new(TransformerConfig::default(), 1).unwrap();
        assert!(m.forward(&[]).is_err());
        assert!(m.generate(&[1.0, 2.0]).is_err());
    }
}
