//! Graph-conditioned Neural ODE for cross-species extrapolation.
//!
//! A message-passing encoder turns a molecule graph into `z_drug`, a
//! per-species table supplies `z_species`, and an MLP right-hand side
//! `dC/dt = f(C, t, z_drug, z_species)` is integrated with the fixed-step
//! solvers from [`crate::pkode`], unrolled on the tape.

mod graph;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use graph::{MoleculeGraph, NODE_FEATURES};

use crate::autodiff::nn::Mlp;
use crate::autodiff::{glorot_uniform, AdamConfig, AdamState, Checkpoint, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::pkode::{self, Method, OdeSystem, PKProfile, ProfileMeta, SolverConfig};
use crate::rng;
use crate::synthdata::{CrossSpeciesDataset, CrossSpeciesRecord, SpeciesSpec};

pub const MODULE_NAME: &str = "allometry";
/// Concentrations beyond this magnitude abort integration.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeciesInit {
    /// Glorot-uniform rows.
    Random,
    /// First coordinate `ln(W/70)`, remaining coordinates zero.
    LogWeight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AllometryConfig {
    pub gnn_rounds: usize,
    pub drug_dim: usize,
    pub species_dim: usize,
    pub rhs_width: usize,
    /// Hidden layers of the right-hand side MLP (one more linear layer maps to dC/dt).
    pub rhs_hidden_layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Solver steps per grid interval.
    pub ode_substeps: usize,
    pub species_init: SpeciesInit,
}

impl Default for AllometryConfig {
    fn default() -> Self {
        Self {
            gnn_rounds: 2,
            drug_dim: 16,
            species_dim: 8,
            rhs_width: 64,
            rhs_hidden_layers: 3,
            epochs: 300,
            lr: 1e-3,
            batch_size: 8,
            ode_substeps: 1,
            species_init: SpeciesInit::Random,
        }
    }
}

impl AllometryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gnn_rounds == 0 || self.drug_dim == 0 || self.species_dim == 0 || self.rhs_width == 0 {
            return Err(Error::Config("allometry dimensions must be positive".into()));
        }
        if self.batch_size == 0 || self.ode_substeps == 0 || !(self.lr > 0.0) {
            return Err(Error::Config("batch_size, ode_substeps and lr must be positive".into()));
        }
        Ok(())
    }

    /// `1 + 1 + drug_dim + species_dim`: concentration, time, both embeddings.
    pub fn rhs_input_dim(&self) -> usize {
        2 + self.drug_dim + self.species_dim
    }
}

/// `K` rounds of `H ← ReLU(Â·H·W)` with mean aggregation, then mean pooling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GnnEncoder {
    pub weights: Vec<ParamId>,
}

impl GnnEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, rounds: usize, out_dim: usize, rng: &mut R) -> Self {
        let weights = (0..rounds)
            .map(|k| {
                let fan_in = if k == 0 { NODE_FEATURES } else { out_dim };
                store.add_glorot(format!("gnn.{k}.weight"), fan_in, out_dim, rng)
            })
            .collect();
        Self { weights }
    }

    /// `[1, out_dim]` graph embedding.
    pub fn encode_tape(&self, tape: &mut Tape, store: &ParamStore, graph: &MoleculeGraph) -> Result<Var> {
        if graph.num_nodes() == 0 {
            return Err(Error::Contract("cannot encode an empty graph".into()));
        }
        let agg = tape.constant(graph.mean_aggregation());
        let mut h = tape.constant(graph.feature_tensor());
        for &w in &self.weights {
            let w = tape.param(store, w);
            let mixed = tape.matmul(agg, h)?;
            let lin = tape.matmul(mixed, w)?;
            h = tape.relu(lin);
        }
        tape.mean_rows(h)
    }

    pub fn encode(&self, store: &ParamStore, graph: &MoleculeGraph) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let z = self.encode_tape(&mut tape, store, graph)?;
        Ok(tape.value(z).data().to_vec())
    }
}

/// One independently trainable embedding row per species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesTable {
    pub species: Vec<SpeciesSpec>,
    pub rows: Vec<ParamId>,
}

impl SpeciesTable {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        species: &[SpeciesSpec],
        dim: usize,
        init: SpeciesInit,
        rng: &mut R,
    ) -> Self {
        let rows = species
            .iter()
            .map(|sp| {
                let t = match init {
                    SpeciesInit::Random => glorot_uniform(1, dim, rng),
                    SpeciesInit::LogWeight => {
                        let mut v = vec![0.0; dim];
                        v[0] = (sp.weight_kg / crate::synthdata::REFERENCE_WEIGHT_KG).ln();
                        Tensor::new(&[1, dim], v).expect("row shape")
                    }
                };
                store.add(format!("species.{}", sp.name.to_lowercase()), t)
            })
            .collect();
        Self {
            species: species.to_vec(),
            rows,
        }
    }

    pub fn row(&self, species_index: usize) -> Result<ParamId> {
        self.species
            .iter()
            .position(|s| s.index == species_index)
            .map(|i| self.rows[i])
            .ok_or_else(|| Error::UnknownSpecies(format!("species index {species_index}")))
    }

    pub fn by_name(&self, name: &str) -> Result<&SpeciesSpec> {
        self.species
            .iter()
            .find(|s| s.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::UnknownSpecies(name.to_string()))
    }
}

/// Right-hand side MLP over `(C, t, z_drug, z_species)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeuralOdeRhs {
    pub mlp: Mlp,
}

impl NeuralOdeRhs {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: &AllometryConfig, rng: &mut R) -> Self {
        let mut widths = vec![cfg.rhs_input_dim()];
        widths.extend(std::iter::repeat_n(cfg.rhs_width, cfg.rhs_hidden_layers));
        widths.push(1);
        Self {
            mlp: Mlp::new(store, "rhs", &widths, rng),
        }
    }

    /// `c: [B, 1]`, `t_norm` shared by the batch, `z: [B, drug+species]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, c: Var, t_norm: f64, z: Var) -> Result<Var> {
        let (b, _) = tape.value(c).dims2()?;
        let t = tape.constant(Tensor::new(&[b, 1], vec![t_norm; b])?);
        let input = tape.concat_cols(&[c, t, z])?;
        self.mlp.forward(tape, store, input)
    }
}

/// Tape-valued ODE whose state is a `[B, 1]` concentration column.
pub struct TapeSystem<'t, F> {
    pub tape: &'t mut Tape,
    pub field: F,
}

impl<F> OdeSystem for TapeSystem<'_, F>
where
    F: FnMut(&mut Tape, f64, Var) -> Result<Var>,
{
    type State = Var;

    fn rhs(&mut self, t: f64, y: &Var) -> Result<Var> {
        (self.field)(self.tape, t, *y)
    }

    fn axpy(&mut self, y: &Var, c: f64, k: &Var) -> Result<Var> {
        self.tape.axpy(*y, c, *k)
    }

    fn check(&self, t: f64, y: &Var) -> Result<()> {
        let v = self.tape.value(*y).data();
        if let Some(bad) = v.iter().find(|c| !c.is_finite() || c.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Divergence {
                time: t,
                detail: format!("neural ODE state reached {bad}"),
            });
        }
        Ok(())
    }
}

/// Integrates an arbitrary tape field from `c0` over `grid`; one state per
/// grid point.
pub fn integrate_tape<F>(tape: &mut Tape, field: F, c0: Var, grid: &[f64], cfg: &SolverConfig) -> Result<Vec<Var>>
where
    F: FnMut(&mut Tape, f64, Var) -> Result<Var>,
{
    pkode::integrate(&mut TapeSystem { tape, field }, c0, grid, cfg)
}

/// Neural ODE trajectory conditioned on `z = [z_drug | z_species]` rows.
#[allow(clippy::too_many_arguments)]
pub fn integrate_neural(
    tape: &mut Tape,
    store: &ParamStore,
    rhs: &NeuralOdeRhs,
    c0: Var,
    z: Var,
    grid: &[f64],
    cfg: &SolverConfig,
) -> Result<Vec<Var>> {
    let (t0, span) = grid_span(grid)?;
    integrate_tape(
        tape,
        |tape: &mut Tape, t, c| rhs.forward(tape, store, c, (t - t0) / span, z),
        c0,
        grid,
        cfg,
    )
}

fn grid_span(grid: &[f64]) -> Result<(f64, f64)> {
    match grid {
        [first, .., last] if last > first => Ok((*first, last - first)),
        _ => Err(Error::Grid("grid needs at least two increasing points".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllometryModel {
    pub config: AllometryConfig,
    pub params: ParamStore,
    pub gnn: GnnEncoder,
    pub species: SpeciesTable,
    pub rhs: NeuralOdeRhs,
}

impl AllometryModel {
    pub fn new(config: AllometryConfig, species: &[SpeciesSpec], seed: u64) -> Result<Self> {
        config.validate()?;
        if species.is_empty() {
            return Err(Error::Contract("species table needs at least one species".into()));
        }
        let mut rng = rng::stream(seed, "allometry.init");
        let mut params = ParamStore::new();
        let gnn = GnnEncoder::new(&mut params, config.gnn_rounds, config.drug_dim, &mut rng);
        let table = SpeciesTable::new(&mut params, species, config.species_dim, config.species_init, &mut rng);
        let rhs = NeuralOdeRhs::new(&mut params, &config, &mut rng);
        Ok(Self {
            config,
            params,
            gnn,
            species: table,
            rhs,
        })
    }

    pub fn solver(&self, grid: &[f64]) -> Result<SolverConfig> {
        SolverConfig::subdivided(Method::Rk4, grid, self.config.ode_substeps)
    }

    /// Predicted trajectories `[B, grid.len()]` for (graph, species row, C0)
    /// triples sharing one grid.
    pub fn forward_batch(&self, tape: &mut Tape, items: &[(&MoleculeGraph, usize, f64)], grid: &[f64]) -> Result<Var> {
        let rows = items
            .iter()
            .map(|&(g, s, _)| Ok((g, self.species.row(s)?)))
            .collect::<Result<Vec<_>>>()?;
        let z = self.conditioning(tape, &rows)?;
        let c0 = tape.constant(Tensor::new(&[items.len(), 1], items.iter().map(|i| i.2).collect())?);
        self.trajectory(tape, c0, z, grid)
    }

    /// Like [`Self::forward_batch`] with an explicit species embedding row
    /// (a `[1, species_dim]` constant) instead of a table lookup.
    pub fn forward_with_embedding(
        &self,
        tape: &mut Tape,
        graph: &MoleculeGraph,
        embedding: &[f64],
        c0: f64,
        grid: &[f64],
    ) -> Result<Var> {
        let zd = self.gnn.encode_tape(tape, &self.params, graph)?;
        let zs = tape.constant(Tensor::new(&[1, embedding.len()], embedding.to_vec())?);
        let z = tape.concat_cols(&[zd, zs])?;
        let c0 = tape.constant(Tensor::new(&[1, 1], vec![c0])?);
        self.trajectory(tape, c0, z, grid)
    }

    fn conditioning(&self, tape: &mut Tape, rows: &[(&MoleculeGraph, ParamId)]) -> Result<Var> {
        let mut parts = Vec::with_capacity(rows.len());
        for &(g, sp) in rows {
            let zd = self.gnn.encode_tape(tape, &self.params, g)?;
            let zs = tape.param(&self.params, sp);
            parts.push(tape.concat_cols(&[zd, zs])?);
        }
        tape.concat_rows(&parts)
    }

    fn trajectory(&self, tape: &mut Tape, c0: Var, z: Var, grid: &[f64]) -> Result<Var> {
        let cfg = self.solver(grid)?;
        let states = integrate_neural(tape, &self.params, &self.rhs, c0, z, grid, &cfg)?;
        tape.concat_cols(&states)
    }

    pub fn predict(&self, graph: &MoleculeGraph, species_index: usize, c0: f64, grid: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let out = self.forward_batch(&mut tape, &[(graph, species_index, c0)], grid)?;
        Ok(tape.value(out).data().to_vec())
    }

    pub fn embedding(&self, species_index: usize) -> Result<Vec<f64>> {
        Ok(self.params.get(self.species.row(species_index)?).data().to_vec())
    }

    /// Normalised profile from `C(0) = 1`; multiply by `dose / V` of the
    /// target species to recover mg/L.
    pub fn predict_profile(&self, graph: &MoleculeGraph, species: &str, grid: &[f64]) -> Result<PKProfile> {
        let sp = self.species.by_name(species)?.clone();
        let conc = self.predict(graph, sp.index, 1.0, grid)?;
        PKProfile::new(
            grid.to_vec(),
            conc,
            0.0,
            ProfileMeta {
                subject_id: None,
                drug_id: Some(graph.drug_id),
                species: Some(sp.name),
            },
        )
    }

    pub fn checkpoint(&self, optimizer: Option<&AdamState>) -> Checkpoint {
        let extra = serde_json::json!({
            "config": self.config,
            "species": self.species.species,
        });
        Checkpoint::capture(MODULE_NAME, &self.params, optimizer, extra)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_module(MODULE_NAME)?;
        let bad = |e: serde_json::Error| Error::Contract(format!("checkpoint metadata: {e}"));
        let config: AllometryConfig = serde_json::from_value(ck.extra["config"].clone()).map_err(bad)?;
        let species: Vec<SpeciesSpec> = serde_json::from_value(ck.extra["species"].clone()).map_err(bad)?;
        let mut model = Self::new(config, &species, 0)?;
        let params = ck.restore_store()?;
        if params.names() != model.params.names() {
            return Err(Error::Contract("checkpoint parameter layout mismatch".into()));
        }
        model.params = params;
        Ok(model)
    }
}

/// Training data for one LOSO fold: copies of the non-held-out records and
/// their graphs. Built before the model exists, so nothing downstream can
/// reach held-out rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingView {
    pub held_out: SpeciesSpec,
    pub species: Vec<SpeciesSpec>,
    pub graphs: Vec<MoleculeGraph>,
    pub records: Vec<CrossSpeciesRecord>,
}

impl TrainingView {
    pub fn build(data: &CrossSpeciesDataset, held_out: &str) -> Result<Self> {
        let held = data.species_by_name(held_out)?.clone();
        let training: Vec<_> = data.species.iter().filter(|s| s.index != held.index).collect();
        if training.len() < 2 {
            return Err(Error::Contract(format!(
                "need at least two training species, have {}",
                training.len()
            )));
        }
        let records: Vec<_> = data
            .records
            .iter()
            .filter(|r| r.species_index != held.index)
            .cloned()
            .collect();
        if records.is_empty() {
            return Err(Error::Contract("no training records".into()));
        }
        Ok(Self {
            held_out: held,
            species: data.species.clone(),
            graphs: data.drugs.iter().map(|d| d.graph.clone()).collect(),
            records,
        })
    }

    fn graph(&self, drug_id: usize) -> Result<&MoleculeGraph> {
        self.graphs
            .iter()
            .find(|g| g.drug_id == drug_id)
            .ok_or_else(|| Error::Contract(format!("no graph for drug {drug_id}")))
    }
}

fn profile_mse(pred: &[f64], truth: &[f64]) -> f64 {
    pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truth.len() as f64
}

/// Trains on the view's records only; the held-out species row is frozen.
pub fn train(model: &mut AllometryModel, view: &TrainingView, seed: u64) -> Result<Vec<f64>> {
    let held_row = model.species.row(view.held_out.index)?;
    model.params.set_trainable(held_row, false);
    let cfg = model.config.clone();
    let grid = view.records[0].profile.times.clone();
    let mut adam = AdamState::new(&model.params, AdamConfig::with_lr(cfg.lr));
    let mut shuffle = rng::stream(seed, "allometry.shuffle");
    let mut order: Vec<usize> = (0..view.records.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let (mut total, mut n) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let recs: Vec<&CrossSpeciesRecord> = chunk.iter().map(|&i| &view.records[i]).collect();
            let items = recs
                .iter()
                .map(|r| Ok((view.graph(r.drug_id)?, r.species_index, r.profile.concentrations[0])))
                .collect::<Result<Vec<_>>>()?;
            let truth: Vec<f64> = recs
                .iter()
                .flat_map(|r| r.profile.concentrations.iter().copied())
                .collect();
            let mut tape = Tape::new();
            let pred = model.forward_batch(&mut tape, &items, &grid).map_err(|e| match e {
                Error::Divergence { time, detail } => Error::TrainingDiverged {
                    epoch: epoch + 1,
                    detail: format!("{detail} at t={time}"),
                },
                other => other,
            })?;
            let target = tape.constant(Tensor::new(&[items.len(), grid.len()], truth)?);
            let loss = tape.mse_loss(pred, target)?;
            let lv = tape.value(loss).item();
            if !lv.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch: epoch + 1,
                    detail: format!("trajectory loss {lv}"),
                });
            }
            tape.backward(loss, &mut model.params)?;
            adam.step(&mut model.params)?;
            total += lv * items.len() as f64;
            n += items.len();
        }
        log.push(total / n as f64);
    }
    Ok(log)
}

/// One held-out prediction next to its truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutPrediction {
    pub drug_id: usize,
    pub times: Vec<f64>,
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
    pub baseline: Vec<f64>,
    /// Prediction with the species embedding extrapolated along log-weight.
    pub interpolated: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoReport {
    pub held_out: String,
    pub test_mse: f64,
    pub baseline_mse: f64,
    /// Secondary variant: held-out embedding placed on the log-weight line
    /// through the two training species' learned rows.
    pub interpolated_mse: Option<f64>,
    pub train_loss: Vec<f64>,
    pub predictions: Vec<HeldOutPrediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LosoOutcome {
    pub model: AllometryModel,
    pub report: LosoReport,
}

/// Per-timepoint mean of the training species' profiles of the same drug.
pub fn mean_profile_baseline(view: &TrainingView, drug_id: usize) -> Result<Vec<f64>> {
    let rows: Vec<&Vec<f64>> = view
        .records
        .iter()
        .filter(|r| r.drug_id == drug_id)
        .map(|r| &r.profile.concentrations)
        .collect();
    if rows.is_empty() {
        return Err(Error::Contract(format!("no training profiles for drug {drug_id}")));
    }
    let n = rows.len() as f64;
    Ok((0..rows[0].len())
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect())
}

/// Embedding for `target` on the line through two species' rows,
/// parameterised by log body weight.
pub fn log_weight_embedding(a: (&SpeciesSpec, &[f64]), b: (&SpeciesSpec, &[f64]), target: &SpeciesSpec) -> Vec<f64> {
    let (la, lb, lt) = (a.0.weight_kg.ln(), b.0.weight_kg.ln(), target.weight_kg.ln());
    let s = (lt - la) / (lb - la);
    a.1.iter().zip(b.1).map(|(x, y)| x + s * (y - x)).collect()
}

/// Predicts every held-out profile from its true C(0) and scores it against
/// the mean-profile baseline. `train_loss` is left empty.
pub fn evaluate_loso(model: &AllometryModel, data: &CrossSpeciesDataset, held_out: &str) -> Result<LosoReport> {
    let view = TrainingView::build(data, held_out)?;
    let held = view.held_out.clone();
    let trained: Vec<&SpeciesSpec> = view.species.iter().filter(|s| s.index != held.index).collect();
    let line = if trained.len() == 2 {
        let ea = model.embedding(trained[0].index)?;
        let eb = model.embedding(trained[1].index)?;
        Some(log_weight_embedding((trained[0], &ea), (trained[1], &eb), &held))
    } else {
        None
    };

    let mut predictions = Vec::new();
    for rec in data.records_for(held.index) {
        let graph = view.graph(rec.drug_id)?;
        let times = rec.profile.times.clone();
        let truth = rec.profile.concentrations.clone();
        let prediction = model.predict(graph, held.index, truth[0], &times)?;
        let interpolated = match &line {
            Some(e) => {
                let mut tape = Tape::new();
                let out = model.forward_with_embedding(&mut tape, graph, e, truth[0], &times)?;
                tape.value(out).data().to_vec()
            }
            None => Vec::new(),
        };
        predictions.push(HeldOutPrediction {
            drug_id: rec.drug_id,
            baseline: mean_profile_baseline(&view, rec.drug_id)?,
            times,
            truth,
            prediction,
            interpolated,
        });
    }
    if predictions.is_empty() {
        return Err(Error::Contract(format!("no {} records to evaluate", held.name)));
    }
    let mean_of =
        |f: &dyn Fn(&HeldOutPrediction) -> f64| predictions.iter().map(f).sum::<f64>() / predictions.len() as f64;
    let test_mse = mean_of(&|p| profile_mse(&p.prediction, &p.truth));
    let baseline_mse = mean_of(&|p| profile_mse(&p.baseline, &p.truth));
    let interpolated_mse = line
        .as_ref()
        .map(|_| mean_of(&|p| profile_mse(&p.interpolated, &p.truth)));
    Ok(LosoReport {
        held_out: held.name,
        test_mse,
        baseline_mse,
        interpolated_mse,
        train_loss: Vec::new(),
        predictions,
    })
}

/// Leave-one-species-out: train on the other species, then evaluate on the
/// held-out one with [`evaluate_loso`].
pub fn train_loso(
    data: &CrossSpeciesDataset,
    held_out: &str,
    config: &AllometryConfig,
    seed: u64,
) -> Result<LosoOutcome> {
    let view = TrainingView::build(data, held_out)?;
    let mut model = AllometryModel::new(config.clone(), &view.species, seed)?;
    let train_loss = train(&mut model, &view, seed)?;
    let report = LosoReport {
        train_loss,
        ..evaluate_loso(&model, data, held_out)?
    };
    Ok(LosoOutcome { model, report })
}
