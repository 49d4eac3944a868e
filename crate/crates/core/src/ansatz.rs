//! Angle embedding, the six ansatz families and the five input scalings.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Unary, Var};
use crate::error::{Error, Result};
use crate::quantum::{self, lower, AngleSource, GateKind, GateOp, ParamSlot, Prim, QuantumLayerOp};

/// Inputs may exceed [-1, 1] by this much before being rejected; they are clamped.
pub const SCALE_CLAMP_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnsatzKind {
    #[serde(rename = "basic")]
    BasicEntangling,
    #[serde(rename = "strongly")]
    StronglyEntangling,
    CrossMesh,
    #[serde(rename = "cross_mesh_2rot")]
    CrossMesh2Rot,
    CrossMeshCnot,
    NoEntanglement,
}

impl AnsatzKind {
    pub const ALL: [AnsatzKind; 6] = [
        AnsatzKind::BasicEntangling,
        AnsatzKind::StronglyEntangling,
        AnsatzKind::CrossMesh,
        AnsatzKind::CrossMesh2Rot,
        AnsatzKind::CrossMeshCnot,
        AnsatzKind::NoEntanglement,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnsatzKind::BasicEntangling => "basic",
            AnsatzKind::StronglyEntangling => "strongly",
            AnsatzKind::CrossMesh => "cross_mesh",
            AnsatzKind::CrossMesh2Rot => "cross_mesh_2rot",
            AnsatzKind::CrossMeshCnot => "cross_mesh_cnot",
            AnsatzKind::NoEntanglement => "no_entanglement",
        }
    }

    pub fn is_entangling(self) -> bool {
        self != AnsatzKind::NoEntanglement
    }
}

impl fmt::Display for AnsatzKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnsatzKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownName { kind: "ansatz", value: s.to_string() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    None,
    Pi,
    Bias,
    Asin,
    Acos,
}

impl ScaleKind {
    pub const ALL: [ScaleKind; 5] = [ScaleKind::None, ScaleKind::Pi, ScaleKind::Bias, ScaleKind::Asin, ScaleKind::Acos];

    pub fn as_str(self) -> &'static str {
        match self {
            ScaleKind::None => "none",
            ScaleKind::Pi => "pi",
            ScaleKind::Bias => "bias",
            ScaleKind::Asin => "asin",
            ScaleKind::Acos => "acos",
        }
    }

    /// Tape ops realizing the map, applied in order.
    fn unary_chain(self) -> &'static [Unary] {
        const NONE: [Unary; 0] = [];
        const PI_: [Unary; 1] = [Unary::Affine(PI, 0.0)];
        const BIAS: [Unary; 1] = [Unary::Affine(FRAC_PI_2, FRAC_PI_2)];
        const ASIN: [Unary; 2] = [Unary::Asin, Unary::Affine(1.0, FRAC_PI_2)];
        const ACOS: [Unary; 1] = [Unary::Acos];
        match self {
            ScaleKind::None => &NONE,
            ScaleKind::Pi => &PI_,
            ScaleKind::Bias => &BIAS,
            ScaleKind::Asin => &ASIN,
            ScaleKind::Acos => &ACOS,
        }
    }
}

impl fmt::Display for ScaleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScaleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownName { kind: "scale", value: s.to_string() })
    }
}

fn clamp_unit(a: f64) -> Result<f64> {
    if !(a.abs() <= 1.0 + SCALE_CLAMP_TOL) {
        return Err(Error::ScaleDomain(a));
    }
    Ok(a.clamp(-1.0, 1.0))
}

/// Map an activation in [-1, 1] to an embedding angle.
pub fn scale(kind: ScaleKind, a: f64) -> Result<f64> {
    let a = clamp_unit(a)?;
    Ok(match kind {
        ScaleKind::None => a,
        ScaleKind::Pi => a * PI,
        ScaleKind::Bias => (a + 1.0) * FRAC_PI_2,
        ScaleKind::Asin => a.asin() + FRAC_PI_2,
        ScaleKind::Acos => a.acos(),
    })
}

/// Embedding layer plus `n_layers` ansatz layers over `n_qubits`.
#[derive(Clone, Debug)]
pub struct CircuitSpec {
    pub kind: AnsatzKind,
    pub n_qubits: usize,
    pub n_layers: usize,
    pub gates: Vec<GateOp>,
    pub param_count: usize,
    prims: Arc<Vec<Prim>>,
}

impl CircuitSpec {
    pub fn dump(&self) -> String {
        quantum::dump_circuit(&self.gates)
    }

    /// Append the differentiable PQC to a tape. `angles` are the embedding
    /// angles `[batch, n_qubits]`; circuit parameters start at `param_offset`.
    pub fn tape_layer(&self, tape: &mut Tape<'_>, angles: Var, param_offset: usize, keep_states: bool) -> Var {
        let op = QuantumLayerOp::new(self.n_qubits, Arc::clone(&self.prims), param_offset, keep_states);
        tape.custom(&[angles], Box::new(op))
    }
}

/// Build the circuit for an ansatz family.
pub fn build_circuit(kind: AnsatzKind, n_qubits: usize, n_layers: usize) -> Result<CircuitSpec> {
    if n_qubits == 0 || n_qubits > quantum::MAX_QUBITS {
        return Err(Error::Construction(format!("unsupported qubit count {n_qubits}")));
    }
    if kind.is_entangling() && n_qubits < 2 {
        return Err(Error::Construction(format!("{kind} needs at least 2 qubits")));
    }
    if n_layers == 0 {
        return Err(Error::Construction("at least one ansatz layer required".into()));
    }
    let mut gates = Vec::new();
    let mut next = 0usize;
    let mut param = || {
        let s = ParamSlot::Param(next);
        next += 1;
        s
    };
    for q in 0..n_qubits {
        gates.push(GateOp::new(GateKind::RX, vec![q], vec![ParamSlot::Embedding(q)]));
    }
    for layer in 1..=n_layers {
        match kind {
            AnsatzKind::BasicEntangling | AnsatzKind::StronglyEntangling => {
                for q in 0..n_qubits {
                    gates.push(GateOp::new(GateKind::Rot, vec![q], vec![param(), param(), param()]));
                }
                let gap = if kind == AnsatzKind::BasicEntangling { 1 } else { (layer - 1) % (n_qubits - 1) + 1 };
                for i in 0..n_qubits {
                    gates.push(GateOp::new(GateKind::CNOT, vec![i, (i + gap) % n_qubits], vec![]));
                }
            }
            AnsatzKind::CrossMesh | AnsatzKind::CrossMesh2Rot => {
                for q in 0..n_qubits {
                    gates.push(GateOp::new(GateKind::RX, vec![q], vec![param()]));
                    if kind == AnsatzKind::CrossMesh2Rot {
                        gates.push(GateOp::new(GateKind::RZ, vec![q], vec![param()]));
                    }
                }
                for i in 0..n_qubits {
                    for j in (0..n_qubits).filter(|&j| j != i) {
                        gates.push(GateOp::new(GateKind::CRZ, vec![i, j], vec![param()]));
                    }
                }
            }
            AnsatzKind::CrossMeshCnot => {
                for q in 0..n_qubits {
                    gates.push(GateOp::new(GateKind::Rot, vec![q], vec![param(), param(), param()]));
                }
                for i in 0..n_qubits {
                    for j in (0..n_qubits).filter(|&j| j != i) {
                        gates.push(GateOp::new(GateKind::CNOT, vec![i, j], vec![]));
                    }
                }
            }
            AnsatzKind::NoEntanglement => {
                for q in 0..n_qubits {
                    gates.push(GateOp::new(GateKind::Rot, vec![q], vec![param(), param(), param()]));
                }
            }
        }
    }
    for g in &gates {
        g.validate(n_qubits)?;
    }
    let prims: Vec<Prim> = gates.iter().flat_map(lower).collect();
    Ok(CircuitSpec { kind, n_qubits, n_layers, gates, param_count: next, prims: Arc::new(prims) })
}

/// Scale activations, run the PQC and read out `<Z_q>` per row.
pub fn quantum_layer_forward(activations: ArrayView2<'_, f64>, qparams: &[f64], kind: AnsatzKind, scale_kind: ScaleKind, n_layers: usize) -> Result<Array2<f64>> {
    let (batch, n) = activations.dim();
    let circuit = build_circuit(kind, n, n_layers)?;
    if qparams.len() != circuit.param_count {
        return Err(Error::Construction(format!("expected {} circuit parameters, got {}", circuit.param_count, qparams.len())));
    }
    let mut angles = Array2::zeros((batch, n));
    for ((r, q), &a) in activations.indexed_iter() {
        angles[[r, q]] = scale(scale_kind, a)?;
    }
    let src = AngleSource { params: qparams, embedding: Some(angles.view()) };
    let state = quantum::run_circuit(n, batch, &circuit.gates, &src)?;
    Ok(quantum::expectation_z(&state))
}

/// Append the scaling map to a tape (inputs must already lie in [-1, 1]).
pub fn tape_scale(tape: &mut Tape<'_>, a: Var, kind: ScaleKind) -> Var {
    kind.unary_chain().iter().fold(a, |v, &f| tape.unary(v, f))
}
