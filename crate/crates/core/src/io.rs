//! CSV and JSON file formats for the generated datasets.
//!
//! Floats are written in shortest round-trip form, so reading a file back
//! reproduces the in-memory values bit for bit.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pkode::{PKProfile, ProfileMeta};
use crate::synthdata::{
    self, default_species, CrossSpeciesDataset, CrossSpeciesRecord, DrugSpec, PhysioVector, SpeciesSpec,
};

pub const DATASET1_TRAIN_FILE: &str = "dataset1_train.csv";
pub const DATASET1_TEST_FILE: &str = "dataset1_test.csv";
pub const PHYSIO_FILE: &str = "physio.csv";
pub const XSPECIES_FILE: &str = "xspecies.csv";
pub const DRUGS_FILE: &str = "drugs.json";
pub const DATA_MANIFEST_FILE: &str = "manifest.json";

fn format_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => format_err(path, format!("{other:?}")),
    }
}

/// Writes serializable rows with a header derived from the field names.
pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProfileRow {
    subject_id: usize,
    time_h: f64,
    conc_mg_per_L: f64,
}

/// Long-format `subject_id,time_h,conc_mg_per_L`.
pub fn write_profiles(path: &Path, profiles: &[PKProfile]) -> Result<()> {
    let rows = profiles.iter().enumerate().flat_map(|(i, p)| {
        let id = p.meta.subject_id.unwrap_or(i);
        p.times.iter().zip(&p.concentrations).map(move |(&t, &c)| ProfileRow {
            subject_id: id,
            time_h: t,
            conc_mg_per_L: c,
        })
    });
    write_rows(path, rows)
}

/// Groups consecutive rows by subject; every subject receives `dose`.
pub fn read_profiles(path: &Path, dose: f64) -> Result<Vec<PKProfile>> {
    let rows: Vec<ProfileRow> = read_rows(path)?;
    let mut out: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
    for r in rows {
        match out.last_mut() {
            Some((id, t, c)) if *id == r.subject_id => {
                t.push(r.time_h);
                c.push(r.conc_mg_per_L);
            }
            _ => out.push((r.subject_id, vec![r.time_h], vec![r.conc_mg_per_L])),
        }
    }
    out.into_iter()
        .map(|(id, t, c)| {
            PKProfile::new(
                t,
                c,
                dose,
                ProfileMeta {
                    subject_id: Some(id),
                    ..ProfileMeta::default()
                },
            )
            .map_err(|e| format_err(path, format!("subject {id}: {e}")))
        })
        .collect()
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PhysioRow {
    age: f64,
    height_cm: f64,
    weight_kg: f64,
    liver_L: f64,
    heart_L: f64,
}

pub fn write_physio(path: &Path, data: &[PhysioVector]) -> Result<()> {
    write_rows(
        path,
        data.iter().map(|v| PhysioRow {
            age: v.age,
            height_cm: v.height_cm,
            weight_kg: v.weight_kg,
            liver_L: v.liver_l,
            heart_L: v.heart_l,
        }),
    )
}

pub fn read_physio(path: &Path) -> Result<Vec<PhysioVector>> {
    let rows: Vec<PhysioRow> = read_rows(path)?;
    Ok(rows
        .into_iter()
        .map(|r| PhysioVector {
            age: r.age,
            height_cm: r.height_cm,
            weight_kg: r.weight_kg,
            liver_l: r.liver_L,
            heart_l: r.heart_L,
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct XSpeciesRow {
    drug_id: usize,
    species: String,
    time_h: f64,
    conc_norm: f64,
}

/// `drug_id,species,time_h,conc_norm` plus a `drugs.json` sidecar holding
/// the graphs and reference-weight (CL, V) of every drug.
pub fn write_crossspecies(csv_path: &Path, drugs_path: &Path, data: &CrossSpeciesDataset) -> Result<()> {
    let rows = data.records.iter().flat_map(|r| {
        let name = data.species[r.species_index].name.clone();
        r.profile
            .times
            .iter()
            .zip(&r.profile.concentrations)
            .map(move |(&t, &c)| XSpeciesRow {
                drug_id: r.drug_id,
                species: name.clone(),
                time_h: t,
                conc_norm: c,
            })
    });
    write_rows(csv_path, rows)?;
    write_json(drugs_path, &data.drugs)
}

/// Rebuilds the dataset with the default species table; per-species CL, V
/// and dose are recomputed from the sidecar by allometric scaling.
pub fn read_crossspecies(csv_path: &Path, drugs_path: &Path) -> Result<CrossSpeciesDataset> {
    let drugs: Vec<DrugSpec> = read_json(drugs_path)?;
    let species = default_species();
    let rows: Vec<XSpeciesRow> = read_rows(csv_path)?;
    let mut records: Vec<CrossSpeciesRecord> = Vec::new();
    for r in rows {
        let sp = species
            .iter()
            .find(|s| s.name == r.species)
            .ok_or_else(|| Error::UnknownSpecies(r.species.clone()))?;
        match records.last_mut() {
            Some(rec) if rec.drug_id == r.drug_id && rec.species_index == sp.index => {
                rec.profile.times.push(r.time_h);
                rec.profile.concentrations.push(r.conc_norm);
            }
            _ => {
                let drug = drugs
                    .iter()
                    .find(|d| d.drug_id == r.drug_id)
                    .ok_or_else(|| format_err(csv_path, format!("drug {} missing from sidecar", r.drug_id)))?;
                records.push(new_record(drug, sp, r.time_h, r.conc_norm));
            }
        }
    }
    for rec in &mut records {
        rec.profile = PKProfile::new(
            std::mem::take(&mut rec.profile.times),
            std::mem::take(&mut rec.profile.concentrations),
            rec.dose_mg,
            rec.profile.meta.clone(),
        )
        .map_err(|e| format_err(csv_path, format!("drug {}: {e}", rec.drug_id)))?;
    }
    Ok(CrossSpeciesDataset {
        species,
        drugs,
        records,
    })
}

fn new_record(drug: &DrugSpec, sp: &SpeciesSpec, t: f64, c: f64) -> CrossSpeciesRecord {
    let (cl, v) = synthdata::scale_to_weight(drug.cl_human, drug.v_human, sp.weight_kg);
    let dose = synthdata::DOSE_MG_PER_KG * sp.weight_kg;
    CrossSpeciesRecord {
        drug_id: drug.drug_id,
        species_index: sp.index,
        cl,
        v,
        dose_mg: dose,
        profile: PKProfile {
            times: vec![t],
            concentrations: vec![c],
            dose,
            meta: ProfileMeta {
                subject_id: None,
                drug_id: Some(drug.drug_id),
                species: Some(sp.name.clone()),
            },
        },
    }
}

/// Sidecar describing how a data directory was produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataManifest {
    pub generator_version: String,
    pub seed: u64,
    pub n_patients: usize,
    pub n_physio: usize,
    pub n_drugs: usize,
    pub files: Vec<String>,
}

/// Every dataset in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Datasets {
    pub forecast: synthdata::ForecastDataset,
    pub physio: Vec<PhysioVector>,
    pub xspecies: CrossSpeciesDataset,
}

pub fn generate_all(seed: u64, n_patients: usize, n_physio: usize, n_drugs: usize) -> Result<(Datasets, DataManifest)> {
    let data = Datasets {
        forecast: synthdata::gen_dataset1(n_patients, seed)?,
        physio: synthdata::gen_physio(n_physio, seed)?,
        xspecies: synthdata::gen_crossspecies(n_drugs, seed)?,
    };
    let manifest = DataManifest {
        generator_version: synthdata::GENERATOR_VERSION.to_string(),
        seed,
        n_patients,
        n_physio,
        n_drugs,
        files: [
            DATASET1_TRAIN_FILE,
            DATASET1_TEST_FILE,
            PHYSIO_FILE,
            XSPECIES_FILE,
            DRUGS_FILE,
        ]
        .map(String::from)
        .to_vec(),
    };
    Ok((data, manifest))
}

/// Writes every dataset file plus the manifest; returns the written paths.
pub fn write_all(dir: &Path, data: &Datasets, manifest: &DataManifest) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_profiles(&dir.join(DATASET1_TRAIN_FILE), &data.forecast.train)?;
    write_profiles(&dir.join(DATASET1_TEST_FILE), &data.forecast.test)?;
    write_physio(&dir.join(PHYSIO_FILE), &data.physio)?;
    write_crossspecies(&dir.join(XSPECIES_FILE), &dir.join(DRUGS_FILE), &data.xspecies)?;
    write_json(&dir.join(DATA_MANIFEST_FILE), manifest)?;
    let mut paths: Vec<PathBuf> = manifest.files.iter().map(|f| dir.join(f)).collect();
    paths.push(dir.join(DATA_MANIFEST_FILE));
    Ok(paths)
}

/// Loads a directory produced by [`write_all`], checking the generator
/// version.
pub fn read_all(dir: &Path) -> Result<(Datasets, DataManifest)> {
    let manifest: DataManifest = read_json(&dir.join(DATA_MANIFEST_FILE))?;
    if manifest.generator_version != synthdata::GENERATOR_VERSION {
        return Err(format_err(
            &dir.join(DATA_MANIFEST_FILE),
            format!(
                "generator version {} (this build writes {})",
                manifest.generator_version,
                synthdata::GENERATOR_VERSION
            ),
        ));
    }
    let dose = synthdata::DATASET1_DOSE_MG;
    let train = read_profiles(&dir.join(DATASET1_TRAIN_FILE), dose)?;
    let test = read_profiles(&dir.join(DATASET1_TEST_FILE), dose)?;
    let data = Datasets {
        forecast: synthdata::ForecastDataset {
            params: Vec::new(),
            train,
            test,
        },
        physio: read_physio(&dir.join(PHYSIO_FILE))?,
        xspecies: read_crossspecies(&dir.join(XSPECIES_FILE), &dir.join(DRUGS_FILE))?,
    };
    Ok((data, manifest))
}
