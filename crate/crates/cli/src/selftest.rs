//! Numerical invariants that can be verified in seconds, without training.

use pkml::autodiff::gradcheck::{check_case, neural_ode_end_to_end, op_catalog};
use pkml::diffusion::{DiffusionConfig, DiffusionSchedule, DATA_DIM};
use pkml::pkode::{integrate_fn, two_compartment_rhs, uniform_grid, Method, SolverConfig, TwoCompartmentParams};
use pkml::rng;
use rand::Rng;
use rand_distr::StandardNormal;

/// One verified invariant with its measured value.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

pub const GRADCHECK_TOL: f64 = 1e-5;
pub const END_TO_END_TOL: f64 = 1e-4;

/// Worst relative error per catalogued op over `cases` random inputs each.
pub fn gradcheck_catalog(cases: u64) -> Vec<(String, pkml::Result<f64>)> {
    op_catalog()
        .iter()
        .map(|c| (c.name.to_string(), check_case(c, cases)))
        .collect()
}

pub fn gradcheck_summary(cases: u64) -> Check {
    let results = gradcheck_catalog(cases);
    let mut worst = ("", 0.0f64);
    let mut failed = Vec::new();
    for (name, r) in &results {
        match r {
            Ok(e) if *e <= GRADCHECK_TOL => {
                if *e > worst.1 {
                    worst = (name, *e);
                }
            }
            Ok(e) => failed.push(format!("{name}={e:.2e}")),
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    }
    Check::new(
        "gradient check, every op",
        failed.is_empty(),
        format!(
            "{} ops x {cases} cases, worst {:.2e} ({}) tol {GRADCHECK_TOL:e}{}",
            results.len(),
            worst.1,
            worst.0,
            if failed.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failed.join(", "))
            }
        ),
    )
}

pub fn gradcheck_end_to_end() -> Check {
    match neural_ode_end_to_end(7, 6) {
        Ok(e) => Check::new(
            "gradient check through unrolled neural ODE",
            e <= END_TO_END_TOL,
            format!("max rel error {e:.2e} tol {END_TO_END_TOL:e}"),
        ),
        Err(e) => Check::new("gradient check through unrolled neural ODE", false, e.to_string()),
    }
}

fn decay_error(step: f64) -> pkml::Result<f64> {
    let out = integrate_fn(|_, y| Ok(vec![-y[0]]), vec![1.0], &[0.0, 1.0], &SolverConfig::rk4(step))?;
    Ok((out[1][0] - (-1f64).exp()).abs())
}

/// Observed orders between successive halvings of the step, and the error
/// at `h = 0.01`, for `dy/dt = -y` on `[0, 1]`.
pub fn rk4_convergence() -> pkml::Result<(Vec<f64>, f64)> {
    let errs = [0.1, 0.05, 0.025, 0.0125]
        .iter()
        .map(|&h| decay_error(h))
        .collect::<pkml::Result<Vec<_>>>()?;
    let orders = errs.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok((orders, decay_error(0.01)?))
}

pub fn rk4_check() -> Check {
    match rk4_convergence() {
        Ok((orders, err)) => Check::new(
            "RK4 order and accuracy",
            orders.iter().all(|o| (3.5..=4.5).contains(o)) && err <= 1e-8,
            format!(
                "orders [{}] in [3.5, 4.5]; error at h=0.01 {err:.2e} <= 1e-8",
                orders.iter().map(|o| format!("{o:.3}")).collect::<Vec<_>>().join(", ")
            ),
        ),
        Err(e) => Check::new("RK4 order and accuracy", false, e.to_string()),
    }
}

/// Largest relative drift of total drug amount with zero clearance over
/// `n` random subjects.
pub fn mass_conservation_drift(n: usize, seed: u64) -> pkml::Result<f64> {
    let mut rng = rng::stream(seed, "selftest.mass");
    let grid = uniform_grid(50, 24.0);
    let cfg = SolverConfig::subdivided(Method::Rk4, &grid, 10)?;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let p = TwoCompartmentParams {
            cl: 0.0,
            v1: rng.random_range(5.0..80.0),
            v2: rng.random_range(5.0..120.0),
            q: rng.random_range(0.5..20.0),
        };
        let dose: f64 = rng.random_range(1.0..500.0);
        let out = integrate_fn(
            |_, y| Ok(two_compartment_rhs([y[0], y[1]], &p)?.to_vec()),
            vec![dose, 0.0],
            &grid,
            &cfg,
        )?;
        for y in out {
            worst = worst.max(((y[0] + y[1]) - dose).abs() / dose);
        }
    }
    Ok(worst)
}

pub fn mass_check() -> Check {
    match mass_conservation_drift(100, 0) {
        Ok(d) => Check::new(
            "mass conservation at CL = 0",
            d <= 1e-9,
            format!("max relative drift {d:.2e} <= 1e-9 over 100 subjects"),
        ),
        Err(e) => Check::new("mass conservation at CL = 0", false, e.to_string()),
    }
}

/// Endpoints of the default noise schedule and the worst round-trip error
/// of `predict_x0(forward_noising(x0, t, eps), t, eps)` over random draws.
pub fn schedule_check() -> Check {
    let s = DiffusionSchedule::from_config(&DiffusionConfig::default());
    let t_max = s.steps();
    let (b1, bt) = match (s.beta(1), s.beta(t_max)) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return Check::new("diffusion schedule", false, "schedule lookup failed"),
    };
    let mut rng = rng::stream(0, "selftest.schedule");
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = rng.random_range(1..=t_max);
        let x0: Vec<f64> = (0..DATA_DIM)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * 3.0)
            .collect();
        let eps: Vec<f64> = (0..DATA_DIM).map(|_| rng.sample(StandardNormal)).collect();
        let back = s
            .forward_noising(&x0, t, &eps)
            .and_then(|xt| s.predict_x0(&xt, t, &eps))
            .expect("valid step");
        for (a, b) in back.iter().zip(&x0) {
            worst = worst.max((a - b).abs());
        }
    }
    Check::new(
        "diffusion schedule endpoints and inversion",
        b1 == 1e-4 && bt == 0.02 && worst <= 1e-12,
        format!("beta_1 = {b1:e}, beta_{t_max} = {bt:e} (exact); max inversion error {worst:.2e} <= 1e-12"),
    )
}

/// The fast invariant suite behind `pkml selftest`.
pub fn run_all() -> Vec<Check> {
    vec![
        gradcheck_summary(20),
        gradcheck_end_to_end(),
        rk4_check(),
        mass_check(),
        schedule_check(),
    ]
}
