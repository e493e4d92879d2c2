//! Compartmental pharmacokinetics and fixed-step ODE integration.
//!
//! The integrator is generic over [`OdeSystem`] so the same stepping code
//! drives plain `Vec<f64>` states and differentiable tape states.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Two-compartment disposition parameters of one subject.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoCompartmentParams {
    /// Clearance, L/h.
    pub cl: f64,
    /// Central volume, L.
    pub v1: f64,
    /// Peripheral volume, L.
    pub v2: f64,
    /// Inter-compartmental clearance, L/h.
    pub q: f64,
}

impl TwoCompartmentParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.cl, self.v1, self.v2, self.q];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite parameters {self:?}")));
        }
        if self.v1 <= 0.0 || self.v2 <= 0.0 {
            return Err(Error::Parameter(format!(
                "volumes must be positive (V1 = {}, V2 = {})",
                self.v1, self.v2
            )));
        }
        if self.cl < 0.0 || self.q < 0.0 {
            return Err(Error::Parameter(format!(
                "clearances must be nonnegative (CL = {}, Q = {})",
                self.cl, self.q
            )));
        }
        Ok(())
    }
}

/// Amount-based mass balance for central (`A1`) and peripheral (`A2`) pools.
pub fn two_compartment_rhs(state: [f64; 2], p: &TwoCompartmentParams) -> Result<[f64; 2]> {
    if p.v1 <= 0.0 || p.v2 <= 0.0 {
        return Err(Error::Parameter(format!(
            "volumes must be positive (V1 = {}, V2 = {})",
            p.v1, p.v2
        )));
    }
    let [a1, a2] = state;
    let out_central = (p.cl / p.v1) * a1 + (p.q / p.v1) * a1;
    let back = (p.q / p.v2) * a2;
    let da1 = -out_central + back;
    let da2 = (p.q / p.v1) * a1 - back;
    Ok([da1, da2])
}

/// Single pool with first-order elimination.
pub fn one_compartment_rhs(amount: f64, cl: f64, v: f64) -> Result<f64> {
    if v <= 0.0 {
        return Err(Error::Parameter(format!("volume must be positive, got {v}")));
    }
    Ok(-(cl / v) * amount)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    /// Internal step, h. Must divide every gap of the output grid.
    pub step: f64,
}

impl SolverConfig {
    pub fn rk4(step: f64) -> Self {
        Self {
            method: Method::Rk4,
            step,
        }
    }

    pub fn euler(step: f64) -> Self {
        Self {
            method: Method::Euler,
            step,
        }
    }

    /// Step equal to the spacing of a uniform grid split into `substeps`.
    pub fn subdivided(method: Method, grid: &[f64], substeps: usize) -> Result<Self> {
        if grid.len() < 2 || substeps == 0 {
            return Err(Error::Grid("need ≥ 2 grid points and ≥ 1 substep".into()));
        }
        let spacing = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
        Ok(Self {
            method,
            step: spacing / substeps as f64,
        })
    }
}

/// `n` points uniformly covering `[0, t_end]`.
pub fn uniform_grid(n: usize, t_end: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect()
}

/// A first-order system `dy/dt = f(t, y)` over an arbitrary state type.
///
/// The stepper only ever combines states through [`OdeSystem::axpy`], so a
/// system whose `axpy` performs `y + c·k` element-wise reproduces the plain
/// floating-point trajectory exactly.
pub trait OdeSystem {
    type State: Clone;

    fn rhs(&mut self, t: f64, y: &Self::State) -> Result<Self::State>;

    /// `y + c·k`.
    fn axpy(&mut self, y: &Self::State, c: f64, k: &Self::State) -> Result<Self::State>;

    /// Called after every full step; returns a divergence error to abort.
    fn check(&self, t: f64, y: &Self::State) -> Result<()>;
}

/// Adapts a closure over `Vec<f64>` states into an [`OdeSystem`].
pub struct VectorField<F>(pub F);

impl<F> OdeSystem for VectorField<F>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    type State = Vec<f64>;

    fn rhs(&mut self, t: f64, y: &Vec<f64>) -> Result<Vec<f64>> {
        (self.0)(t, y)
    }

    fn axpy(&mut self, y: &Vec<f64>, c: f64, k: &Vec<f64>) -> Result<Vec<f64>> {
        Ok(y.iter().zip(k).map(|(a, b)| a + c * b).collect())
    }

    fn check(&self, t: f64, y: &Vec<f64>) -> Result<()> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                time: t,
                detail: format!("non-finite state {y:?}"),
            });
        }
        Ok(())
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Grid("empty grid".into()));
    }
    if grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::Grid("non-finite grid time".into()));
    }
    if let Some(w) = grid.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::Grid(format!(
            "grid not strictly increasing at {} -> {}",
            w[0], w[1]
        )));
    }
    Ok(())
}

fn substeps(gap: f64, step: f64) -> Result<usize> {
    let ratio = gap / step;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-6 * ratio.max(1.0) {
        return Err(Error::Grid(format!("step {step} does not divide grid gap {gap}")));
    }
    Ok(n as usize)
}

/// Advances `y0` across `grid`, returning the state at every grid point.
pub fn integrate<S: OdeSystem>(sys: &mut S, y0: S::State, grid: &[f64], cfg: &SolverConfig) -> Result<Vec<S::State>> {
    check_grid(grid)?;
    if !(cfg.step > 0.0) {
        return Err(Error::Grid(format!("step must be positive, got {}", cfg.step)));
    }
    if grid.len() > 1 && cfg.step > grid[grid.len() - 1] - grid[0] {
        return Err(Error::Grid(format!(
            "step {} exceeds grid span {}",
            cfg.step,
            grid[grid.len() - 1] - grid[0]
        )));
    }
    sys.check(grid[0], &y0)?;

    let mut out = Vec::with_capacity(grid.len());
    out.push(y0.clone());
    let mut y = y0;
    for w in grid.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let n = substeps(t1 - t0, cfg.step)?;
        let h = (t1 - t0) / n as f64;
        for s in 0..n {
            let t = t0 + s as f64 * h;
            y = match cfg.method {
                Method::Euler => euler_step(sys, t, &y, h)?,
                Method::Rk4 => rk4_step(sys, t, &y, h)?,
            };
            sys.check(t + h, &y)?;
        }
        out.push(y.clone());
    }
    Ok(out)
}

fn euler_step<S: OdeSystem>(sys: &mut S, t: f64, y: &S::State, h: f64) -> Result<S::State> {
    let k = sys.rhs(t, y)?;
    sys.axpy(y, h, &k)
}

fn rk4_step<S: OdeSystem>(sys: &mut S, t: f64, y: &S::State, h: f64) -> Result<S::State> {
    let k1 = sys.rhs(t, y)?;
    let y2 = sys.axpy(y, 0.5 * h, &k1)?;
    let k2 = sys.rhs(t + 0.5 * h, &y2)?;
    let y3 = sys.axpy(y, 0.5 * h, &k2)?;
    let k3 = sys.rhs(t + 0.5 * h, &y3)?;
    let y4 = sys.axpy(y, h, &k3)?;
    let k4 = sys.rhs(t + h, &y4)?;
    let acc = sys.axpy(y, h / 6.0, &k1)?;
    let acc = sys.axpy(&acc, h / 3.0, &k2)?;
    let acc = sys.axpy(&acc, h / 3.0, &k3)?;
    sys.axpy(&acc, h / 6.0, &k4)
}

/// Integrates a closure-defined vector field.
pub fn integrate_fn<F>(f: F, y0: Vec<f64>, grid: &[f64], cfg: &SolverConfig) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    integrate(&mut VectorField(f), y0, grid, cfg)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProfileMeta {
    pub subject_id: Option<usize>,
    pub drug_id: Option<usize>,
    pub species: Option<String>,
}

/// Concentration-time curve of one subject, drug and species.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PKProfile {
    /// Hours, strictly increasing.
    pub times: Vec<f64>,
    /// mg/L (or normalised units where stated by the producer).
    pub concentrations: Vec<f64>,
    /// mg.
    pub dose: f64,
    pub meta: ProfileMeta,
}

impl PKProfile {
    pub fn new(times: Vec<f64>, concentrations: Vec<f64>, dose: f64, meta: ProfileMeta) -> Result<Self> {
        if times.len() != concentrations.len() {
            return Err(Error::shape("pk_profile", &[times.len()], &[concentrations.len()]));
        }
        check_grid(&times)?;
        Ok(Self {
            times,
            concentrations,
            dose,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// IV bolus of `dose` into the central pool at t = 0; returns `A1/V1`.
pub fn simulate_profile(
    params: &TwoCompartmentParams,
    dose: f64,
    grid: &[f64],
    cfg: &SolverConfig,
) -> Result<PKProfile> {
    params.validate()?;
    if !(dose > 0.0) {
        return Err(Error::Parameter(format!("dose must be positive, got {dose}")));
    }
    let p = *params;
    let traj = integrate_fn(
        |_, y| two_compartment_rhs([y[0], y[1]], &p).map(|d| d.to_vec()),
        vec![dose, 0.0],
        grid,
        cfg,
    )?;
    let conc = traj.iter().map(|s| s[0] / p.v1).collect();
    PKProfile::new(grid.to_vec(), conc, dose, ProfileMeta::default())
}

/// One-compartment IV bolus profile, `A/V`.
pub fn simulate_one_compartment(cl: f64, v: f64, dose: f64, grid: &[f64], cfg: &SolverConfig) -> Result<PKProfile> {
    if !(dose > 0.0) {
        return Err(Error::Parameter(format!("dose must be positive, got {dose}")));
    }
    let traj = integrate_fn(
        |_, y| Ok(vec![one_compartment_rhs(y[0], cl, v)?]),
        vec![dose],
        grid,
        cfg,
    )?;
    let conc = traj.iter().map(|s| s[0] / v).collect();
    PKProfile::new(grid.to_vec(), conc, dose, ProfileMeta::default())
}
