//! Seeded generators for the forecasting, virtual-population and
//! cross-species datasets.
//!
//! Every generator is a pure function of its arguments and seed. Each
//! dataset draws from its own named stream (see [`crate::rng`]).

mod physio;
mod xspecies;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pkode::{self, Method, PKProfile, ProfileMeta, SolverConfig, TwoCompartmentParams};
use crate::rng;

pub use physio::{gen_physio, gen_physio_with, PhysioConfig, PhysioVector, PHYSIO_COLUMNS};
pub use xspecies::{
    baseline_human_pk, default_species, gen_crossspecies, make_drug_graph, scale_to_weight, CrossSpeciesDataset,
    CrossSpeciesRecord, DrugSpec, SpeciesSpec, CL_EXPONENT, DOSE_MG_PER_KG, REFERENCE_WEIGHT_KG, V_EXPONENT,
};

/// Bumped whenever any generator's output changes.
pub const GENERATOR_VERSION: &str = "1";

pub const GRID_POINTS: usize = 50;
pub const GRID_END_H: f64 = 24.0;
pub const SOLVER_SUBSTEPS: usize = 10;
pub const DATASET1_DOSE_MG: f64 = 100.0;
pub const TRAIN_FRACTION: f64 = 0.8;

/// The shared 50-point, 0–24 h sampling grid.
pub fn default_grid() -> Vec<f64> {
    pkode::uniform_grid(GRID_POINTS, GRID_END_H)
}

/// RK4 with every grid gap split into [`SOLVER_SUBSTEPS`].
pub fn default_solver(grid: &[f64]) -> SolverConfig {
    SolverConfig::subdivided(Method::Rk4, grid, SOLVER_SUBSTEPS).expect("default grid is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormal {
    pub median: f64,
    /// Coefficient of variation; zero yields the median exactly.
    pub cv: f64,
}

impl LogNormal {
    pub fn sigma(&self) -> f64 {
        (1.0 + self.cv * self.cv).ln().sqrt()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.median * (self.sigma() * z).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientDistribution {
    pub cl: LogNormal,
    pub v1: LogNormal,
    pub v2: LogNormal,
    pub q: LogNormal,
}

impl Default for PatientDistribution {
    fn default() -> Self {
        Self::with_cv(0.3)
    }
}

impl PatientDistribution {
    pub fn with_cv(cv: f64) -> Self {
        Self {
            cl: LogNormal { median: 5.0, cv },
            v1: LogNormal { median: 30.0, cv },
            v2: LogNormal { median: 50.0, cv },
            q: LogNormal { median: 8.0, cv },
        }
    }
}

pub fn sample_patients(n: usize, seed: u64) -> Result<Vec<TwoCompartmentParams>> {
    sample_patients_with(n, seed, &PatientDistribution::default())
}

pub fn sample_patients_with(n: usize, seed: u64, dist: &PatientDistribution) -> Result<Vec<TwoCompartmentParams>> {
    if n == 0 {
        return Err(Error::Parameter("patient count must be positive".into()));
    }
    let mut rng = rng::stream(seed, "dataset1.patients");
    Ok((0..n)
        .map(|_| TwoCompartmentParams {
            cl: dist.cl.sample(&mut rng),
            v1: dist.v1.sample(&mut rng),
            v2: dist.v2.sample(&mut rng),
            q: dist.q.sample(&mut rng),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDataset {
    pub params: Vec<TwoCompartmentParams>,
    pub train: Vec<PKProfile>,
    pub test: Vec<PKProfile>,
}

/// Two-compartment bolus profiles for `n` sampled patients, shuffled and
/// split 80/20 into train and test.
pub fn gen_dataset1(n: usize, seed: u64) -> Result<ForecastDataset> {
    let params = sample_patients(n, seed)?;
    let grid = default_grid();
    let cfg = default_solver(&grid);
    let mut profiles = params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut prof = pkode::simulate_profile(p, DATASET1_DOSE_MG, &grid, &cfg)?;
            prof.meta = ProfileMeta {
                subject_id: Some(i),
                ..ProfileMeta::default()
            };
            Ok(prof)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, "dataset1.split"));
    let n_train = ((n as f64) * TRAIN_FRACTION).round() as usize;
    let mut slots: Vec<Option<PKProfile>> = profiles.drain(..).map(Some).collect();
    let mut take = |i: usize| slots[i].take().expect("each index used once");
    let train = order[..n_train].iter().map(|&i| take(i)).collect();
    let test = order[n_train..].iter().map(|&i| take(i)).collect();
    Ok(ForecastDataset { params, train, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_cv_gives_medians() {
        let ps = sample_patients_with(10, 3, &PatientDistribution::with_cv(0.0)).unwrap();
        for p in ps {
            assert_eq!((p.cl, p.v1, p.v2, p.q), (5.0, 30.0, 50.0, 8.0));
        }
    }

    #[test]
    fn zero_patients_rejected() {
        assert!(sample_patients(0, 1).is_err());
    }

    #[test]
    fn lognormal_sigma_matches_cv() {
        let d = LogNormal { median: 1.0, cv: 0.3 };
        assert!((d.sigma() - 1.09f64.ln().sqrt()).abs() < 1e-15);
    }
}
