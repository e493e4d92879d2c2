mod common;

use common::{randn, rng};
use pkml::autodiff::Tape;
use pkml::synthdata::gen_dataset1;
use pkml::transformer::{attention_weights, evaluate, train, ForecastModel, TransformerConfig};
use proptest::prelude::*;

fn small() -> TransformerConfig {
    TransformerConfig {
        d_model: 16,
        d_ff: 32,
        epochs: 4,
        ..TransformerConfig::default()
    }
}

#[test]
fn prediction_at_i_ignores_later_tokens() {
    let model = ForecastModel::new(TransformerConfig::default(), 3).unwrap();
    let base: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
    let out = model.forward(&base).unwrap();
    for j in 0..base.len() {
        let mut changed = base.clone();
        changed[j] += 5.0;
        let out2 = model.forward(&changed).unwrap();
        for i in 0..j {
            assert_eq!(out[i], out2[i], "position {i} saw token {j}");
        }
        assert_ne!(out[j], out2[j]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_rows_are_distributions(seed in 0u64..1000, n in 1usize..8, causal in any::<bool>()) {
        let mut r = rng(seed);
        let mut tape = Tape::new();
        let q = tape.constant(randn(&mut r, &[n, 4]));
        let k = tape.constant(randn(&mut r, &[n, 4]));
        let w = attention_weights(&mut tape, q, k, causal).unwrap();
        let a = tape.value(w);
        for i in 0..n {
            let row = &a.data()[i * n..(i + 1) * n];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            if causal {
                prop_assert!(row[i + 1..].iter().all(|v| *v == 0.0));
            }
        }
    }
}

#[test]
fn zero_head_predicts_zero() {
    let mut model = ForecastModel::new(TransformerConfig::default(), 5).unwrap();
    model.zero_head();
    let out = model.forward(&[0.3, -1.0, 2.0, 0.1]).unwrap();
    assert!(out.iter().all(|v| *v == 0.0));
}

#[test]
fn generation_length_and_determinism() {
    let model = ForecastModel::new(TransformerConfig::default(), 5).unwrap();
    let prefix = [3.0, 2.8, 2.6, 2.5, 2.4];
    let a = model.generate(&prefix).unwrap();
    assert_eq!(a.len(), 45);
    assert_eq!(a, model.generate(&prefix).unwrap());
    assert!(model.generate(&prefix[..4]).is_err());
}

#[test]
fn short_training_reduces_loss_and_round_trips() {
    let data = gen_dataset1(150, 9).unwrap();
    let mut model = ForecastModel::new(small(), 9).unwrap();
    let log = train(&mut model, &data, 9).unwrap();
    assert_eq!(log.epoch_train_mse.len(), 4);
    assert!(log.epoch_train_mse[3] < log.epoch_train_mse[0]);
    assert!(
        log.eval.mse.is_finite() && log.eval.locf_mse > 0.0,
        "{:?} {:?}",
        log.eval,
        log.epoch_train_mse
    );

    let ck = model.checkpoint(None).unwrap();
    let restored = ForecastModel::from_checkpoint(&ck).unwrap();
    assert_eq!(restored, model);
    assert_eq!(evaluate(&restored, &data.test).unwrap(), log.eval);

    let mut again = ForecastModel::new(small(), 9).unwrap();
    assert_eq!(train(&mut again, &data, 9).unwrap(), log);
}
