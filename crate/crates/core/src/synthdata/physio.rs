use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub const PHYSIO_COLUMNS: [&str; 5] = ["age", "height_cm", "weight_kg", "liver_L", "heart_L"];

/// Physiological parameter vector in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysioVector {
    pub age: f64,
    pub height_cm: f64,
    pub weight_kg: f64,
    pub liver_l: f64,
    pub heart_l: f64,
}

impl PhysioVector {
    pub fn to_array(&self) -> [f64; 5] {
        [self.age, self.height_cm, self.weight_kg, self.liver_l, self.heart_l]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            &[age, height_cm, weight_kg, liver_l, heart_l] => Ok(Self {
                age,
                height_cm,
                weight_kg,
                liver_l,
                heart_l,
            }),
            _ => Err(Error::shape("physio_vector", &[5], &[v.len()])),
        }
    }

    /// Organ-volume constraint `V_liver + V_heart − 0.04·W`; compliant iff ≤ 0.
    pub fn constraint(&self) -> f64 {
        crate::diffusion::organ_volume_constraint(&self.to_array())
    }

    pub fn violates(&self) -> bool {
        self.constraint() > 0.0
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite() && *v > 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysioConfig {
    pub weight_mean: f64,
    pub weight_sd: f64,
    pub weight_floor: f64,
    pub age_min: f64,
    pub age_max: f64,
    pub height_base: f64,
    pub height_slope: f64,
    pub height_sd: f64,
    pub liver_fraction: f64,
    pub heart_fraction: f64,
    pub organ_noise_sd: f64,
    pub max_attempts: usize,
}

impl Default for PhysioConfig {
    fn default() -> Self {
        Self {
            weight_mean: 70.0,
            weight_sd: 12.0,
            weight_floor: 40.0,
            age_min: 20.0,
            age_max: 70.0,
            height_base: 170.0,
            height_slope: 0.3,
            height_sd: 5.0,
            liver_fraction: 0.025,
            heart_fraction: 0.005,
            organ_noise_sd: 0.1,
            max_attempts: 1000,
        }
    }
}

impl PhysioConfig {
    /// Deterministic part of the sampler: organ volumes at a given weight
    /// and relative noise draws.
    pub fn organ_volumes(&self, weight: f64, eps_liver: f64, eps_heart: f64) -> (f64, f64) {
        (
            self.liver_fraction * weight * (1.0 + eps_liver),
            self.heart_fraction * weight * (1.0 + eps_heart),
        )
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> PhysioVector {
        let mut normal = || -> f64 { rng.sample(StandardNormal) };
        let mut weight = self.weight_mean + self.weight_sd * normal();
        while weight < self.weight_floor {
            weight = self.weight_mean + self.weight_sd * normal();
        }
        let height = self.height_base + self.height_slope * (weight - self.weight_mean) + self.height_sd * normal();
        let (liver, heart) = self.organ_volumes(weight, self.organ_noise_sd * normal(), self.organ_noise_sd * normal());
        let age = rng.random_range(self.age_min..self.age_max);
        PhysioVector {
            age,
            height_cm: height,
            weight_kg: weight,
            liver_l: liver,
            heart_l: heart,
        }
    }
}

pub fn gen_physio(n: usize, seed: u64) -> Result<Vec<PhysioVector>> {
    gen_physio_with(n, seed, &PhysioConfig::default())
}

/// Draws `n` vectors, rejection-resampling any that violate the organ
/// constraint so the returned set is fully compliant.
pub fn gen_physio_with(n: usize, seed: u64, cfg: &PhysioConfig) -> Result<Vec<PhysioVector>> {
    if n == 0 {
        return Err(Error::Parameter("sample count must be positive".into()));
    }
    let mut rng = rng::stream(seed, "dataset2.physio");
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut accepted = None;
        for _ in 0..cfg.max_attempts {
            let v = cfg.draw(&mut rng);
            if v.is_valid() && !v.violates() {
                accepted = Some(v);
                break;
            }
        }
        match accepted {
            Some(v) => out.push(v),
            None => {
                return Err(Error::Config(format!(
                    "sample {i}: no compliant vector after {} attempts",
                    cfg.max_attempts
                )))
            }
        }
    }
    Ok(out)
}
