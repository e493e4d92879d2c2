use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

/// Adam with bias correction. Moment buffers are laid out parallel to the
/// tensors of the [`ParamStore`] they were created for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// One update over every trainable parameter that received a gradient,
    /// then clears all grads. Parameters the loss did not reach keep their
    /// values and moments.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if store.len() != self.first_moment.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} tensors, store has {}",
                self.first_moment.len(),
                store.len()
            )));
        }
        for (i, t) in store.tensors().iter().enumerate() {
            if t.len() != self.first_moment[i].len() {
                return Err(Error::shape("adam_step", t.shape(), &[self.first_moment[i].len()]));
            }
        }

        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);

        for (i, t) in store.tensors_mut().iter_mut().enumerate() {
            let Some(g) = t.grad().filter(|_| t.requires_grad()).map(|g| g.to_vec()) else {
                continue;
            };
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for (((w, gi), mi), vi) in t.data_mut().iter_mut().zip(&g).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};

    fn scalar_store(w: f64) -> (ParamStore, crate::autodiff::ParamId) {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::scalar(w));
        (store, id)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut store, id) = scalar_store(0.0);
        store.get_mut(id).accumulate_grad(&[1.0]).unwrap();
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.step(&mut store).unwrap();
        let w = store.get(id).item();
        assert!((w + 1e-3).abs() < 1e-10, "w = {w}");
        assert!(store.get(id).grad().is_none());
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_grad_leaves_parameter() {
        let (mut store, id) = scalar_store(0.7);
        store.get_mut(id).accumulate_grad(&[0.0]).unwrap();
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.step(&mut store).unwrap();
        assert_eq!(store.get(id).item(), 0.7);
    }

    #[test]
    fn unreached_parameter_is_untouched() {
        let (mut store, id) = scalar_store(0.5);
        let other = store.add("u", Tensor::scalar(1.0));
        store.get_mut(other).accumulate_grad(&[2.0]).unwrap();
        let mut adam = AdamState::new(&store, AdamConfig::default());
        adam.step(&mut store).unwrap();
        assert_eq!(store.get(id).item(), 0.5);
        assert_eq!(adam.first_moment[id.0], vec![0.0]);
        assert!(store.get(other).item() < 1.0);
    }

    #[test]
    fn converges_on_quadratic() {
        let (mut store, id) = scalar_store(0.0);
        let mut adam = AdamState::new(&store, AdamConfig::with_lr(0.1));
        for _ in 0..200 {
            let mut tape = Tape::new();
            let w = tape.param(&store, id);
            let d = tape.add_scalar(w, -3.0);
            let sq = tape.square(d);
            let loss = tape.sum(sq);
            tape.backward(loss, &mut store).unwrap();
            adam.step(&mut store).unwrap();
        }
        let w = store.get(id).item();
        assert!((w - 3.0).abs() < 0.1, "w = {w}");
    }

    #[test]
    fn step_counter_increments_by_one() {
        let (mut store, id) = scalar_store(1.0);
        let mut adam = AdamState::new(&store, AdamConfig::default());
        for expected in 1..=5 {
            store.get_mut(id).accumulate_grad(&[0.5]).unwrap();
            adam.step(&mut store).unwrap();
            assert_eq!(adam.step, expected);
        }
    }
}
