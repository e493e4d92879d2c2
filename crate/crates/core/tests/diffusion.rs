mod common;

use common::{randn, rng};
use pkml::autodiff::Tape;
use pkml::diffusion::{
    physics_penalty, physics_penalty_value, training_loss, violation_rate, DiffusionConfig, DiffusionModel,
    DiffusionSchedule, NoiseDraw, PenaltyTerm, Standardizer,
};
use pkml::synthdata::{gen_physio, PhysioVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn schedule() -> DiffusionSchedule {
    DiffusionSchedule::from_config(&DiffusionConfig::default())
}

fn tiny(lambda: f64, epochs: usize) -> DiffusionConfig {
    DiffusionConfig {
        hidden_width: 16,
        epochs,
        batch_size: 32,
        lambda,
        ..DiffusionConfig::default()
    }
}

#[test]
fn schedule_endpoints_exact() {
    let s = schedule();
    assert_eq!(s.steps(), 100);
    assert_eq!(s.beta(1).unwrap(), 1e-4);
    assert_eq!(s.beta(100).unwrap(), 0.02);
}

#[test]
fn noising_variance_at_final_step() {
    let s = schedule();
    let mut r = rng(1);
    let n = 20000;
    let xs: Vec<f64> = (0..n)
        .map(|_| s.forward_noising(&[0.0], 100, &[r.sample(StandardNormal)]).unwrap()[0])
        .collect();
    let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let want = 1.0 - s.alpha_bar(100).unwrap();
    assert!((var / want - 1.0).abs() < 0.05, "{var} vs {want}");
}

proptest! {
    #[test]
    fn predict_x0_inverts_noising(t in 1usize..=100, x in prop::array::uniform5(-3.0..3.0f64), e in prop::array::uniform5(-3.0..3.0f64)) {
        let s = schedule();
        let xt = s.forward_noising(&x, t, &e).unwrap();
        let back = s.predict_x0(&xt, t, &e).unwrap();
        for (a, b) in back.iter().zip(x) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_zero_iff_compliant(w in 40.0..110.0f64, frac in 0.02..0.06f64, heart_share in 0.05..0.3f64) {
        let organs = frac * w;
        let v = [40.0, 170.0, w, organs * (1.0 - heart_share), organs * heart_share];
        let id = Standardizer { mean: [0.0; 5], sd: [1.0; 5] };
        let p = physics_penalty_value(&v, &id);
        let g = v[3] + v[4] - 0.04 * w;
        if g <= 0.0 {
            prop_assert_eq!(p, 0.0);
        } else {
            prop_assert!(p > 0.0);
            prop_assert!((p - g * g).abs() < 1e-12);
        }
    }
}

#[test]
fn out_of_range_steps_rejected() {
    let s = schedule();
    assert!(s.forward_noising(&[0.0], 0, &[0.0]).is_err());
    assert!(s.predict_x0(&[0.0], 101, &[0.0]).is_err());
}

#[test]
fn tape_penalty_matches_scalar_version() {
    let data = gen_physio(200, 3).unwrap();
    let stats = Standardizer::fit(&data).unwrap();
    let z = randn(&mut rng(4), &[16, 5]);
    let mut tape = Tape::new();
    let x = tape.constant(z.clone());
    let p = physics_penalty(&mut tape, x, &stats).unwrap();
    let want = z
        .data()
        .chunks(5)
        .map(|r| physics_penalty_value(r, &stats))
        .sum::<f64>()
        / 16.0;
    assert!((tape.value(p).item() - want).abs() < 1e-12);
}

#[test]
fn oracle_denoiser_has_zero_noise_loss() {
    // Zero output weights ⇒ ε̂ = 0, so the loss equals mean ‖ε‖² exactly when
    // the draw is all zeros.
    let data = gen_physio(8, 3).unwrap();
    let stats = Standardizer::fit(&data).unwrap();
    let model = DiffusionModel::new(tiny(1.0, 1), stats, 1).unwrap();
    let mut den = model.denoiser.clone();
    let last = den.params.ids().last().unwrap();
    let last_w = den.params.ids().nth(den.params.len() - 2).unwrap();
    for id in [last, last_w] {
        den.params.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let x0: Vec<[f64; 5]> = data.iter().map(|v| stats.encode(&v.to_array())).collect();
    let draw = NoiseDraw {
        steps: vec![10; 8],
        eps: vec![[0.0; 5]; 8],
    };
    let mut tape = Tape::new();
    let l = training_loss(&mut tape, &den, &model.schedule, &x0, &draw, Some(1.0), &stats).unwrap();
    assert_eq!(tape.value(l).item(), 0.0);
}

#[test]
fn untrained_loss_is_positive() {
    let data = gen_physio(32, 3).unwrap();
    let stats = Standardizer::fit(&data).unwrap();
    let model = DiffusionModel::new(tiny(1.0, 1), stats, 2).unwrap();
    let x0: Vec<[f64; 5]> = data.iter().map(|v| stats.encode(&v.to_array())).collect();
    let draw = NoiseDraw::sample(&mut rng(5), 32, 100);
    let mut tape = Tape::new();
    let l = training_loss(
        &mut tape,
        &model.denoiser,
        &model.schedule,
        &x0,
        &draw,
        Some(1.0),
        &stats,
    )
    .unwrap();
    assert!(tape.value(l).item() > 0.0);
}

#[test]
fn zero_lambda_is_bit_identical_to_no_penalty() {
    let data = gen_physio(96, 3).unwrap();
    let stats = Standardizer::fit(&data).unwrap();
    let mut a = DiffusionModel::new(tiny(0.0, 3), stats, 11).unwrap();
    let mut b = a.clone();
    let la = a.train_with(&data, 11, PenaltyTerm::Weighted).unwrap();
    let lb = b.train_with(&data, 11, PenaltyTerm::Omitted).unwrap();
    let bits = |m: &DiffusionModel| -> Vec<u64> {
        m.denoiser
            .params
            .tensors()
            .iter()
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(la, lb);
}

#[test]
fn positive_lambda_changes_training() {
    let data = gen_physio(96, 3).unwrap();
    let stats = Standardizer::fit(&data).unwrap();
    let mut a = DiffusionModel::new(tiny(0.0, 2), stats, 11).unwrap();
    let mut b = DiffusionModel::new(tiny(50.0, 2), stats, 11).unwrap();
    assert_eq!(a.denoiser.params, b.denoiser.params);
    a.train(&data, 11).unwrap();
    b.train(&data, 11).unwrap();
    assert_ne!(a.denoiser.params, b.denoiser.params);
}

#[test]
fn sampling_is_deterministic_and_checkpointable() {
    let data = gen_physio(64, 3).unwrap();
    let stats = Standardizer::fit(&data).unwrap();
    let mut m = DiffusionModel::new(tiny(1.0, 1), stats, 4).unwrap();
    m.train(&data, 4).unwrap();
    let s1 = m.sample(50, 9).unwrap();
    assert_eq!(s1.len(), 50);
    assert_eq!(s1, m.sample(50, 9).unwrap());
    assert_ne!(s1, m.sample(50, 10).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.json");
    m.checkpoint(None).save(&path).unwrap();
    let back = DiffusionModel::from_checkpoint(&pkml::autodiff::Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.sample(50, 9).unwrap(), s1);
}

#[test]
fn violation_rate_counts_positive_g() {
    let ok = PhysioVector {
        age: 40.0,
        height_cm: 170.0,
        weight_kg: 70.0,
        liver_l: 1.75,
        heart_l: 0.35,
    };
    let bad = PhysioVector {
        liver_l: 2.6,
        heart_l: 0.4,
        ..ok
    };
    assert_eq!(violation_rate(&[ok, bad, ok, ok]).unwrap(), 0.25);
    assert_eq!(violation_rate(&gen_physio(500, 1).unwrap()).unwrap(), 0.0);
    assert!(violation_rate(&[]).is_err());
}
