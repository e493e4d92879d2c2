//! Central finite-difference oracle for checking analytic gradients.
//!
//! Only forward evaluation is used, so the oracle is independent of the
//! backward rules it validates.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Tape, Tensor, Var};
use crate::error::Result;
use crate::rng;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor of 1e-2 on the denominator, so gradients
/// that are essentially zero are compared on an absolute scale.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

/// Numerical gradient of `f` with respect to every element of every input.
pub fn numeric_gradients<F>(inputs: &[Tensor], step: f64, mut f: F) -> Vec<Vec<f64>>
where
    F: FnMut(&[Tensor]) -> f64,
{
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut g = vec![0.0; inputs[k].len()];
        for (j, gj) in g.iter_mut().enumerate() {
            let orig = work[k].data()[j];
            work[k].data_mut()[j] = orig + step;
            let fp = f(&work);
            work[k].data_mut()[j] = orig - step;
            let fm = f(&work);
            work[k].data_mut()[j] = orig;
            *gj = (fp - fm) / (2.0 * step);
        }
        out.push(g);
    }
    out
}

/// Largest [`rel_error`] between two gradient sets.
pub fn max_rel_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.iter().zip(n).map(|(&x, &y)| rel_error(x, y)))
        .fold(0.0, f64::max)
}

/// Standard-normal tensor.
pub fn randn<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.sample(StandardNormal)).collect()).expect("shape matches data")
}

/// Builds `op` on the inputs and reduces its output with a fixed random
/// weighting, so the check covers a full vector-Jacobian product.
fn scalar_loss<F>(tape: &mut Tape, vars: &[Var], op: &F, weights: &Tensor) -> Result<Var>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let out = op(tape, vars)?;
    if tape.value(out).is_scalar() {
        return Ok(out);
    }
    let w = tape.constant(weights.clone());
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

/// Max relative error between tape gradients and central differences for
/// `op` evaluated at `inputs`.
pub fn check_gradients<F>(inputs: &[Tensor], op: F, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut probe = Tape::new();
    let pv: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
    let out = op(&mut probe, &pv)?;
    let weights = randn(&mut rng::stream(seed, "gradcheck.weights"), probe.shape(out));

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.input(t.clone().with_requires_grad(true)))
        .collect();
    let loss = scalar_loss(&mut tape, &vars, &op, &weights)?;
    let grads = tape.gradients(loss)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| grads.get(*v).map_or(vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut failure = None;
    let numeric = numeric_gradients(inputs, FD_STEP, |xs| {
        let mut t = Tape::new();
        let vs: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
        match scalar_loss(&mut t, &vs, &op, &weights) {
            Ok(l) => t.value(l).item(),
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(max_rel_error(&analytic, &numeric))
}

pub type OpFn = fn(&mut Tape, &[Var]) -> Result<Var>;

/// One differentiable operation with the input shapes it is checked at.
#[derive(Clone)]
pub struct OpCase {
    pub name: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub op: OpFn,
}

fn case(name: &'static str, shapes: &[&[usize]], op: OpFn) -> OpCase {
    OpCase {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        op,
    }
}

/// Every differentiable tape operation, plus a few compositions that
/// exercise fan-out and the attention block.
pub fn op_catalog() -> Vec<OpCase> {
    vec![
        case("matmul", &[&[3, 4], &[4, 2]], |t, v| t.matmul(v[0], v[1])),
        case("add", &[&[2, 3], &[2, 3]], |t, v| t.add(v[0], v[1])),
        case("sub", &[&[2, 3], &[2, 3]], |t, v| t.sub(v[0], v[1])),
        case("mul", &[&[2, 3], &[2, 3]], |t, v| t.mul(v[0], v[1])),
        case("add_row", &[&[4, 3], &[1, 3]], |t, v| t.add_row(v[0], v[1])),
        case("mul_row", &[&[4, 3], &[1, 3]], |t, v| t.mul_row(v[0], v[1])),
        case("scale", &[&[3, 2]], |t, v| Ok(t.scale(v[0], -1.7))),
        case("add_scalar", &[&[3, 2]], |t, v| Ok(t.add_scalar(v[0], 0.3))),
        case("axpy", &[&[3, 2], &[3, 2]], |t, v| t.axpy(v[0], 0.4, v[1])),
        case("relu", &[&[3, 5]], |t, v| Ok(t.relu(v[0]))),
        case("square", &[&[3, 2]], |t, v| Ok(t.square(v[0]))),
        case("transpose", &[&[3, 2]], |t, v| t.transpose(v[0])),
        case("softmax_rows", &[&[2, 5]], |t, v| t.softmax_rows(v[0])),
        case("causal_softmax_rows", &[&[4, 4]], |t, v| t.causal_softmax_rows(v[0])),
        case("sum", &[&[3, 3]], |t, v| Ok(t.sum(v[0]))),
        case("mean", &[&[3, 3]], |t, v| Ok(t.mean(v[0]))),
        case("mean_rows", &[&[5, 3]], |t, v| t.mean_rows(v[0])),
        case("mse_loss", &[&[4, 2], &[4, 2]], |t, v| t.mse_loss(v[0], v[1])),
        case("concat_cols", &[&[3, 2], &[3, 1], &[3, 4]], |t, v| t.concat_cols(v)),
        case("slice_cols", &[&[3, 5]], |t, v| t.slice_cols(v[0], 1, 3)),
        case("concat_rows", &[&[2, 3], &[1, 3]], |t, v| t.concat_rows(v)),
        case("slice_rows", &[&[5, 3]], |t, v| t.slice_rows(v[0], 2, 2)),
        case("gather_rows", &[&[3, 4]], |t, v| t.gather_rows(v[0], &[2, 0, 2, 1, 2])),
        case("relu_matmul", &[&[3, 4], &[4, 3]], |t, v| {
            let m = t.matmul(v[0], v[1])?;
            Ok(t.relu(m))
        }),
        // x feeds two branches: sum(x·W) + sum(relu(x)²)
        case("fan_out", &[&[2, 3], &[3, 2]], |t, v| {
            let a = t.matmul(v[0], v[1])?;
            let a = t.sum(a);
            let r = t.relu(v[0]);
            let r = t.square(r);
            let b = t.sum(r);
            t.add(a, b)
        }),
        case("attention", &[&[3, 4], &[3, 4], &[3, 4]], |t, v| {
            crate::transformer::attention(t, v[0], v[1], v[2], false)
        }),
        case("causal_attention", &[&[3, 4], &[3, 4], &[3, 4]], |t, v| {
            crate::transformer::attention(t, v[0], v[1], v[2], true)
        }),
        case("physics_penalty", &[&[6, 5]], |t, v| {
            let stats = crate::diffusion::Standardizer {
                mean: [45.0, 170.0, 70.0, 1.75, 0.35],
                sd: [14.0, 6.0, 12.0, 0.34, 0.07],
            };
            // standard-normal rows land on both sides of g = 0
            crate::diffusion::physics_penalty(t, v[0], &stats)
        }),
    ]
}

/// Worst error over `cases` random draws of one operation's inputs.
pub fn check_case(case: &OpCase, cases: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..cases {
        let mut r = rng::indexed_stream(k, case.name, 0);
        let inputs: Vec<Tensor> = case.shapes.iter().map(|s| randn(&mut r, s)).collect();
        worst = worst.max(check_gradients(&inputs, case.op, k)?);
    }
    Ok(worst)
}

/// End-to-end check through GNN encoding, species lookup and the unrolled
/// RK4 Neural ODE: trajectory-MSE gradients w.r.t. sampled entries of every
/// parameter tensor against central differences. Returns the worst error.
pub fn neural_ode_end_to_end(seed: u64, entries_per_tensor: usize) -> Result<f64> {
    use crate::allometry::{AllometryConfig, AllometryModel};
    use crate::synthdata::{default_species, make_drug_graph};

    let species = default_species();
    let mut model = AllometryModel::new(AllometryConfig::default(), &species, seed)?;
    let graph = make_drug_graph(0, seed);
    let grid = [0.0, 1.0, 2.0, 3.0, 4.0];
    let target = [1.0, 0.8, 0.6, 0.45, 0.35];
    let sp = species[1].index;

    let loss_of = |m: &AllometryModel, tape: &mut Tape| -> Result<Var> {
        let pred = m.forward_batch(tape, &[(&graph, sp, 1.0)], &grid)?;
        let tgt = tape.constant(Tensor::new(&[1, grid.len()], target.to_vec())?);
        tape.mse_loss(pred, tgt)
    };
    let mut tape = Tape::new();
    let loss = loss_of(&model, &mut tape)?;
    tape.backward(loss, &mut model.params)?;
    let analytic: Vec<Option<Vec<f64>>> = model
        .params
        .tensors()
        .iter()
        .map(|t| t.grad().map(<[f64]>::to_vec))
        .collect();
    model.params.zero_grad();

    let mut pick = rng::stream(seed, "gradcheck.entries");
    let mut worst: f64 = 0.0;
    let ids: Vec<_> = model.params.ids().collect();
    for (&id, grad) in ids.iter().zip(&analytic) {
        let len = model.params.get(id).len();
        for _ in 0..entries_per_tensor.min(len) {
            let j = pick.random_range(0..len);
            let orig = model.params.get(id).data()[j];
            let eval = |x: f64, m: &mut AllometryModel| -> Result<f64> {
                m.params.get_mut(id).data_mut()[j] = x;
                let mut t = Tape::new();
                let l = loss_of(m, &mut t)?;
                Ok(t.value(l).item())
            };
            let fp = eval(orig + FD_STEP, &mut model)?;
            let fm = eval(orig - FD_STEP, &mut model)?;
            model.params.get_mut(id).data_mut()[j] = orig;
            let numeric = (fp - fm) / (2.0 * FD_STEP);
            let a = grad.as_ref().map_or(0.0, |g| g[j]);
            worst = worst.max(rel_error(a, numeric));
        }
    }
    Ok(worst)
}
