//! Self-check suites: dense-matrix circuit oracle, exact-solution physics
//! identities and the end-to-end gradient check.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ansatz::{build_circuit, quantum_layer_forward, AnsatzKind, ScaleKind};
use crate::error::Result;
use crate::gradcheck::{check_model_gradient, GradCheckConfig, GradCheckReport};
use crate::network::{build_model, ModelConfig};
use crate::physics::{
    energy_residual, pde_residuals, physics_loss, symmetry_loss, Case, CollocationGrid, FieldBatch, FieldDerivs, PhysMode,
};
use crate::physics::{LossConfig, PinnLoss};
use crate::quantum::{run_circuit, AngleSource, GateKind, GateOp, ParamSlot};

/// One named comparison against a tolerance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance, passed: value <= tolerance }
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<48} {:.3e} (tol {:.1e})", self.name, self.value, self.tolerance)
    }
}

/// `2^n x 2^n` row-major matrix of one gate; wire 0 is the most significant bit.
pub fn dense_gate(n: usize, gate: &GateOp, angles: &[f64]) -> Vec<Complex64> {
    let dim = 1usize << n;
    let bit = |w: usize| 1usize << (n - 1 - w);
    let one = |m: [[Complex64; 2]; 2], w: usize| {
        let mut u = vec![Complex64::new(0.0, 0.0); dim * dim];
        for col in 0..dim {
            let b = usize::from(col & bit(w) != 0);
            for (a, row) in [(0usize, col & !bit(w)), (1, col | bit(w))] {
                u[row * dim + col] += m[a][b];
            }
        }
        u
    };
    let rx = |t: f64| {
        let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
        [[Complex64::new(c, 0.0), Complex64::new(0.0, -s)], [Complex64::new(0.0, -s), Complex64::new(c, 0.0)]]
    };
    let ry = |t: f64| {
        let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
        [[Complex64::new(c, 0.0), Complex64::new(-s, 0.0)], [Complex64::new(s, 0.0), Complex64::new(c, 0.0)]]
    };
    let rz = |t: f64| {
        let z = Complex64::new(0.0, 0.0);
        [[Complex64::from_polar(1.0, -t / 2.0), z], [z, Complex64::from_polar(1.0, t / 2.0)]]
    };
    match gate.kind {
        GateKind::RX => one(rx(angles[0]), gate.wires[0]),
        GateKind::RY => one(ry(angles[0]), gate.wires[0]),
        GateKind::RZ => one(rz(angles[0]), gate.wires[0]),
        GateKind::Rot => {
            let w = gate.wires[0];
            matmul(&one(rz(angles[2]), w), &matmul(&one(ry(angles[1]), w), &one(rz(angles[0]), w), dim), dim)
        }
        GateKind::CNOT | GateKind::CRZ => {
            let (c, t) = (gate.wires[0], gate.wires[1]);
            let mut u = vec![Complex64::new(0.0, 0.0); dim * dim];
            for col in 0..dim {
                if col & bit(c) == 0 {
                    u[col * dim + col] = Complex64::new(1.0, 0.0);
                } else if gate.kind == GateKind::CNOT {
                    u[(col ^ bit(t)) * dim + col] = Complex64::new(1.0, 0.0);
                } else {
                    let sign = if col & bit(t) == 0 { -1.0 } else { 1.0 };
                    u[col * dim + col] = Complex64::from_polar(1.0, sign * angles[0] / 2.0);
                }
            }
            u
        }
    }
}

fn matmul(a: &[Complex64], b: &[Complex64], dim: usize) -> Vec<Complex64> {
    let mut c = vec![Complex64::new(0.0, 0.0); dim * dim];
    for i in 0..dim {
        for k in 0..dim {
            let aik = a[i * dim + k];
            if aik == Complex64::new(0.0, 0.0) {
                continue;
            }
            for j in 0..dim {
                c[i * dim + j] += aik * b[k * dim + j];
            }
        }
    }
    c
}

/// Final state of a circuit applied to `|0...0>` by explicit matrix products.
pub fn dense_final_state(n: usize, gates: &[GateOp], params: &[f64], embedding: &[f64]) -> Vec<Complex64> {
    let dim = 1usize << n;
    let mut u = vec![Complex64::new(0.0, 0.0); dim * dim];
    for i in 0..dim {
        u[i * dim + i] = Complex64::new(1.0, 0.0);
    }
    for g in gates {
        let angles: Vec<f64> = g
            .slots
            .iter()
            .map(|s| match *s {
                ParamSlot::Param(i) => params[i],
                ParamSlot::Embedding(q) => embedding[q],
            })
            .collect();
        u = matmul(&dense_gate(n, g, &angles), &u, dim);
    }
    (0..dim).map(|i| u[i * dim]).collect()
}

/// Simulator vs dense oracle on random circuits, plus `<Z> = cos theta` after RX.
pub fn verify_qsim(n_circuits: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for c in 0..n_circuits {
        let kind = AnsatzKind::ALL[c % AnsatzKind::ALL.len()];
        let n = 2 + (c / AnsatzKind::ALL.len()) % 3;
        let layers = rng.random_range(1..=3);
        let circuit = build_circuit(kind, n, layers)?;
        let params: Vec<f64> = (0..circuit.param_count).map(|_| rng.random_range(-PI..PI)).collect();
        let emb: Vec<f64> = (0..n).map(|_| rng.random_range(-PI..PI)).collect();
        let angles = ndarray::Array2::from_shape_vec((1, n), emb.clone()).expect("shape");
        let state = run_circuit(n, 1, &circuit.gates, &AngleSource { params: &params, embedding: Some(angles.view()) })?;
        let dense = dense_final_state(n, &circuit.gates, &params, &emb);
        for (i, d) in dense.iter().enumerate() {
            let (re, im) = state.amplitude(0, i);
            worst = worst.max((re - d.re).abs()).max((im - d.im).abs());
        }
    }
    let mut rx_err: f64 = 0.0;
    for k in 0..100 {
        let theta = -PI + 2.0 * PI * k as f64 / 99.0;
        let gate = GateOp::new(GateKind::RX, vec![0], vec![ParamSlot::Param(0)]);
        let s = run_circuit(1, 1, &[gate], &AngleSource { params: &[theta], embedding: None })?;
        let z = crate::quantum::expectation_z(&s)[[0, 0]];
        rx_err = rx_err.max((z - theta.cos()).abs());
    }
    let mut enc_err: f64 = 0.0;
    let a: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let zeros = vec![0.0; build_circuit(AnsatzKind::NoEntanglement, 1, 1)?.param_count];
    for (kind, sign) in [(ScaleKind::Acos, 1.0), (ScaleKind::Asin, -1.0)] {
        let act = ndarray::Array2::from_shape_vec((a.len(), 1), a.clone()).expect("shape");
        let z = quantum_layer_forward(act.view(), &zeros, AnsatzKind::NoEntanglement, kind, 1)?;
        for (zi, ai) in z.column(0).iter().zip(&a) {
            enc_err = enc_err.max((zi - sign * ai).abs());
        }
    }
    Ok(vec![
        Check::at_most(format!("statevector vs dense oracle ({n_circuits} circuits)"), worst, 1e-12),
        Check::at_most("<Z> after RX(theta) vs cos(theta)", rx_err, 1e-12),
        Check::at_most("acos/asin encoding <Z> = +-a", enc_err, 1e-10),
    ])
}

/// Fields and derivatives of a traveling wave `E = -Hy = cos(pi (x - t))` and a
/// standing wave `E = cos(pi x) cos(pi t)`, `Hy = -sin(pi x) sin(pi t)`.
pub fn exact_vacuum_fields(grid: &CollocationGrid, standing: bool) -> (FieldBatch, FieldDerivs) {
    let n = grid.len();
    let (mut f, mut d) = (FieldBatch { ez: vec![0.0; n], hx: vec![0.0; n], hy: vec![0.0; n] }, FieldDerivs::default());
    d.ez = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    d.hx = d.ez.clone();
    d.hy = d.ez.clone();
    for i in 0..n {
        let (x, t) = (grid.x[i], grid.t[i]);
        if standing {
            let (sx, cx) = (PI * x).sin_cos();
            let (st, ct) = (PI * t).sin_cos();
            f.ez[i] = cx * ct;
            f.hy[i] = -sx * st;
            d.ez[0][i] = -PI * sx * ct;
            d.ez[2][i] = -PI * cx * st;
            d.hy[0][i] = -PI * cx * st;
            d.hy[2][i] = -PI * sx * ct;
        } else {
            let (s, c) = (PI * (x - t)).sin_cos();
            f.ez[i] = c;
            f.hy[i] = -c;
            d.ez[0][i] = -PI * s;
            d.ez[2][i] = PI * s;
            d.hy[0][i] = PI * s;
            d.hy[2][i] = -PI * s;
        }
    }
    (f, d)
}

pub fn verify_physics(seed: u64) -> Result<Vec<Check>> {
    let grid = CollocationGrid::new(17, 17, 9, 1.5)?;
    let eps = vec![1.0; grid.len()];
    let diel = vec![false; grid.len()];
    let (f, d) = exact_vacuum_fields(&grid, false);
    let res = pde_residuals(&f, &d, &eps)?;
    let phys = physics_loss(&res, &diel, PhysMode::Vac, None)?;
    let max_res = res.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let energy = energy_residual(&f, &d, &eps)?;
    let energy_mse = energy.iter().map(|v| v * v).sum::<f64>() / energy.len() as f64;
    let (fs, ds) = exact_vacuum_fields(&grid, true);
    let sym = symmetry_loss(&fs, &grid.mirror_x, &grid.mirror_y, Case::Vacuum)?;
    let res_s = pde_residuals(&fs, &ds, &eps)?;
    let phys_s = physics_loss(&res_s, &diel, PhysMode::Vac, None)?;

    // Poynting residual equals eps E res1 + Hx res2 + Hy res3 for arbitrary fields
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.len();
    let mut rand_vec = || (0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
    let rf = FieldBatch { ez: rand_vec(), hx: rand_vec(), hy: rand_vec() };
    let rd = FieldDerivs { ez: [rand_vec(), rand_vec(), rand_vec()], hx: [rand_vec(), rand_vec(), rand_vec()], hy: [rand_vec(), rand_vec(), rand_vec()] };
    let reps: Vec<f64> = (0..n).map(|i| if grid.x[i] >= 0.3 { 4.0 } else { 1.0 }).collect();
    let r = pde_residuals(&rf, &rd, &reps)?;
    let e = energy_residual(&rf, &rd, &reps)?;
    let combo_err = (0..n)
        .map(|i| (e[i] - (reps[i] * rf.ez[i] * r[0][i] + rf.hx[i] * r[1][i] + rf.hy[i] * r[2][i])).abs())
        .fold(0.0, f64::max);

    Ok(vec![
        Check::at_most("plane wave max |residual|", max_res, 1e-12),
        Check::at_most("plane wave physics loss", phys, 1e-12),
        Check::at_most("plane wave energy loss", energy_mse, 1e-12),
        Check::at_most("standing wave physics loss", phys_s, 1e-12),
        Check::at_most("standing wave symmetry loss", sym, 1e-12),
        Check::at_most("energy residual vs residual combination", combo_err, 1e-10),
    ])
}

/// Full hybrid `7 qubits x 4 layers` on a `5^3` grid (or a tiny model when `quick`).
pub fn verify_grad(quick: bool, progress: &mut dyn FnMut(usize, usize)) -> Result<(Check, GradCheckReport)> {
    let mut config = ModelConfig::hybrid(AnsatzKind::StronglyEntangling, ScaleKind::Acos);
    let mut gc = GradCheckConfig::default();
    if quick {
        config = ModelConfig { hidden_width: 8, rff_features: 8, n_qubits: 3, n_layers_pqc: 2, ..config };
        gc.h = 1e-5;
    }
    let model = build_model(&config)?;
    let loss = PinnLoss::new(CollocationGrid::cube(5, 1.5)?, LossConfig::new(Case::Vacuum))?;
    let params = model.init_params(0);
    let report = check_model_gradient(&model, &loss, params.as_slice(), gc, progress)?;
    let name = format!("{} gradients vs central FD (h={:e}, rtol {:e}, atol {:e})", report.checked, gc.h, gc.rtol, gc.atol);
    let check = Check { name, value: report.worst_ratio, tolerance: 1.0, passed: report.passed() };
    Ok((check, report))
}
