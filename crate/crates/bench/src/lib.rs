//! Benchmark fixtures shared by the criterion targets.

use qpinn::{build_model, AnsatzKind, Model, ModelConfig, ScaleKind};

/// Deterministic `(x, y, t)` samples on `[-1, 1]^2 x [0, 1.5]`.
pub fn points(n: usize) -> [Vec<f64>; 3] {
    let f = |i: usize, a: usize, m: usize| ((i * a) % m) as f64 / m as f64;
    [
        (0..n).map(|i| 2.0 * f(i, 7, 97) - 1.0).collect(),
        (0..n).map(|i| 2.0 * f(i, 13, 89) - 1.0).collect(),
        (0..n).map(|i| 1.5 * f(i, 3, 83)).collect(),
    ]
}

pub fn hybrid(ansatz: AnsatzKind) -> Model {
    build_model(&ModelConfig::hybrid(ansatz, ScaleKind::Acos)).expect("valid model")
}
