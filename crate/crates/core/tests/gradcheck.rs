//! Analytic tape gradients against central finite differences, 20 random
//! cases per differentiable operation.

use pkml::autodiff::gradcheck::{check_case, neural_ode_end_to_end, op_catalog};

const CASES: u64 = 20;
const TOL: f64 = 1e-5;

#[test]
fn every_operation_matches_finite_differences() {
    let mut failures = Vec::new();
    for case in op_catalog() {
        let err = check_case(&case, CASES).unwrap();
        if err.is_nan() || err >= TOL {
            failures.push(format!("{}: {err:e}", case.name));
        }
    }
    assert!(failures.is_empty(), "gradient mismatches: {failures:?}");
}

#[test]
fn catalog_covers_core_ops() {
    let names: Vec<_> = op_catalog().iter().map(|c| c.name).collect();
    for op in [
        "matmul",
        "relu",
        "softmax_rows",
        "mse_loss",
        "gather_rows",
        "concat_cols",
        "physics_penalty",
    ] {
        assert!(names.contains(&op), "{op} missing");
    }
}

#[test]
fn neural_ode_gradients_end_to_end() {
    let err = neural_ode_end_to_end(7, 6).unwrap();
    assert!(err < 1e-4, "end-to-end rel err {err:e}");
}
