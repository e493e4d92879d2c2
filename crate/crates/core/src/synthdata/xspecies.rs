use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{default_grid, default_solver};
use crate::allometry::{MoleculeGraph, NODE_FEATURES};
use crate::error::{Error, Result};
use crate::pkode::{self, PKProfile, ProfileMeta};
use crate::rng;

/// Body weight at which the baseline human-scale CL and V are defined.
pub const REFERENCE_WEIGHT_KG: f64 = 70.0;
pub const CL_EXPONENT: f64 = 0.75;
pub const V_EXPONENT: f64 = 1.0;
pub const DOSE_MG_PER_KG: f64 = 1.0;

const MIN_NODES: usize = 5;
const MAX_NODES: usize = 15;
const EXTRA_EDGE_PROB: f64 = 0.1;

// Sensitivities of log CL and log V to the centred mean node features.
const CL_MEDIAN: f64 = 5.0;
const V_MEDIAN: f64 = 50.0;
const CL_WEIGHTS: [f64; NODE_FEATURES] = [2.0, -1.5, 1.0, 0.0, 0.5, 0.0, -1.0, 0.0];
const V_WEIGHTS: [f64; NODE_FEATURES] = [0.0, 1.0, -1.5, 2.0, 0.0, -0.5, 0.0, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesSpec {
    pub name: String,
    pub weight_kg: f64,
    pub index: usize,
}

pub fn default_species() -> Vec<SpeciesSpec> {
    [("Rat", 0.25), ("Dog", 10.0), ("Human", 70.0)]
        .iter()
        .enumerate()
        .map(|(index, &(name, weight_kg))| SpeciesSpec {
            name: name.to_string(),
            weight_kg,
            index,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrugSpec {
    pub drug_id: usize,
    pub graph: MoleculeGraph,
    /// Clearance at the reference weight, L/h.
    pub cl_human: f64,
    /// Volume at the reference weight, L.
    pub v_human: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSpeciesRecord {
    pub drug_id: usize,
    pub species_index: usize,
    pub cl: f64,
    pub v: f64,
    pub dose_mg: f64,
    /// Normalised so that the first concentration is exactly 1.
    pub profile: PKProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSpeciesDataset {
    pub species: Vec<SpeciesSpec>,
    pub drugs: Vec<DrugSpec>,
    pub records: Vec<CrossSpeciesRecord>,
}

impl CrossSpeciesDataset {
    pub fn species_by_name(&self, name: &str) -> Result<&SpeciesSpec> {
        self.species
            .iter()
            .find(|s| s.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::UnknownSpecies(name.to_string()))
    }

    pub fn records_for(&self, species_index: usize) -> impl Iterator<Item = &CrossSpeciesRecord> {
        self.records.iter().filter(move |r| r.species_index == species_index)
    }
}

/// Connected random graph with 5–15 nodes and uniform [0, 1) features.
pub fn make_drug_graph(drug_index: usize, seed: u64) -> MoleculeGraph {
    let mut rng = rng::indexed_stream(seed, "dataset3.graph", drug_index as u64);
    let n = rng.random_range(MIN_NODES..=MAX_NODES);
    let features = (0..n)
        .map(|_| (0..NODE_FEATURES).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut edges = Vec::new();
    // random spanning tree keeps the graph connected
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < EXTRA_EDGE_PROB {
                edges.push((a, b));
            }
        }
    }
    MoleculeGraph::new(drug_index, features, edges).expect("generated graph is valid")
}

/// Human-scale (CL, V) as smooth functions of the graph's mean node features.
pub fn baseline_human_pk(graph: &MoleculeGraph) -> (f64, f64) {
    let m = graph.mean_features();
    let dot = |w: &[f64; NODE_FEATURES]| -> f64 { w.iter().zip(&m).map(|(w, x)| w * (x - 0.5)).sum() };
    (CL_MEDIAN * dot(&CL_WEIGHTS).exp(), V_MEDIAN * dot(&V_WEIGHTS).exp())
}

/// Allometrically scaled (CL, V) for body weight `w`.
pub fn scale_to_weight(cl_human: f64, v_human: f64, w: f64) -> (f64, f64) {
    let r = w / REFERENCE_WEIGHT_KG;
    (cl_human * r.powf(CL_EXPONENT), v_human * r.powf(V_EXPONENT))
}

/// One-compartment bolus profiles for every (drug, species) pair.
pub fn gen_crossspecies(n_drugs: usize, seed: u64) -> Result<CrossSpeciesDataset> {
    if n_drugs == 0 {
        return Err(Error::Parameter("drug count must be positive".into()));
    }
    let species = default_species();
    let grid = default_grid();
    let cfg = default_solver(&grid);
    let mut drugs = Vec::with_capacity(n_drugs);
    let mut records = Vec::with_capacity(n_drugs * species.len());
    for d in 0..n_drugs {
        let graph = make_drug_graph(d, seed);
        let (cl_h, v_h) = baseline_human_pk(&graph);
        for sp in &species {
            let (cl, v) = scale_to_weight(cl_h, v_h, sp.weight_kg);
            let dose = DOSE_MG_PER_KG * sp.weight_kg;
            let raw = pkode::simulate_one_compartment(cl, v, dose, &grid, &cfg)?;
            let c0 = raw.concentrations[0];
            let conc = raw.concentrations.iter().map(|c| c / c0).collect();
            let profile = PKProfile::new(
                grid.clone(),
                conc,
                dose,
                ProfileMeta {
                    subject_id: None,
                    drug_id: Some(d),
                    species: Some(sp.name.clone()),
                },
            )?;
            records.push(CrossSpeciesRecord {
                drug_id: d,
                species_index: sp.index,
                cl,
                v,
                dose_mg: dose,
                profile,
            });
        }
        drugs.push(DrugSpec {
            drug_id: d,
            graph,
            cl_human: cl_h,
            v_human: v_h,
        });
    }
    Ok(CrossSpeciesDataset {
        species,
        drugs,
        records,
    })
}
