//! Batched statevector simulation.
//!
//! Amplitudes are stored amplitude-major: `re[idx * batch + row]`, so every
//! gate kernel runs a contiguous inner loop over the batch. Wire 0 is the
//! most significant bit of the basis index (`|10>` is index 2 on two qubits).

pub mod kernels;
pub mod layer;

use std::fmt;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use kernels::{Axis, Plane, PlaneMut};

pub use layer::QuantumLayerOp;

/// Largest register size supported by the simulator.
pub const MAX_QUBITS: usize = 12;

/// Batch of statevectors sharing a register size.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVectorBatch {
    n_qubits: usize,
    batch: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// Every row starts in `|0...0>`.
pub fn init_state(batch: usize, n_qubits: usize) -> Result<StateVectorBatch> {
    if !(1..=MAX_QUBITS).contains(&n_qubits) {
        return Err(Error::Capacity(n_qubits));
    }
    if batch == 0 {
        return Err(Error::InvalidBatch("batch must be at least 1".into()));
    }
    let dim = 1usize << n_qubits;
    let mut re = vec![0.0; dim * batch];
    re[..batch].fill(1.0);
    Ok(StateVectorBatch { n_qubits, batch, re, im: vec![0.0; dim * batch] })
}

impl StateVectorBatch {
    /// Build from per-row amplitude lists `(re, im)`.
    pub fn from_rows(n_qubits: usize, rows: &[Vec<(f64, f64)>]) -> Result<Self> {
        let mut s = init_state(rows.len().max(1), n_qubits)?;
        let dim = s.dim();
        for (b, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidBatch(format!("row {b} has {} amplitudes, expected {dim}", row.len())));
            }
            for (idx, &(r, i)) in row.iter().enumerate() {
                s.re[idx * s.batch + b] = r;
                s.im[idx * s.batch + b] = i;
            }
        }
        Ok(s)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn amplitude(&self, row: usize, idx: usize) -> (f64, f64) {
        let k = idx * self.batch + row;
        (self.re[k], self.im[k])
    }

    pub fn row(&self, row: usize) -> Vec<(f64, f64)> {
        (0..self.dim()).map(|i| self.amplitude(row, i)).collect()
    }

    /// Squared norm of each row.
    pub fn norms(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.batch];
        for idx in 0..self.dim() {
            let base = idx * self.batch;
            for (b, o) in out.iter_mut().enumerate() {
                let (r, i) = (self.re[base + b], self.im[base + b]);
                *o += r * r + i * i;
            }
        }
        out
    }

    pub(crate) fn plane(&self) -> Plane<'_> {
        Plane { re: &self.re, im: &self.im, rows: self.batch }
    }

    pub(crate) fn plane_mut(&mut self) -> PlaneMut<'_> {
        PlaneMut { re: &mut self.re, im: &mut self.im, rows: self.batch }
    }
}

/// Gate inventory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GateKind {
    RX,
    RY,
    RZ,
    /// `Rot(a, b, c) = RZ(c) RY(b) RZ(a)`
    Rot,
    CNOT,
    /// `diag(1, 1, e^{-i t/2}, e^{+i t/2})` on (control, target)
    CRZ,
}

impl GateKind {
    pub fn n_wires(self) -> usize {
        match self {
            GateKind::CNOT | GateKind::CRZ => 2,
            _ => 1,
        }
    }

    pub fn n_params(self) -> usize {
        match self {
            GateKind::CNOT => 0,
            GateKind::Rot => 3,
            _ => 1,
        }
    }
}

/// Where a gate angle comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamSlot {
    /// Shared trainable parameter `i` of the circuit.
    Param(usize),
    /// Per-row embedding angle in column `q`.
    Embedding(usize),
}

impl fmt::Display for ParamSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamSlot::Param(i) => write!(f, "p{i}"),
            ParamSlot::Embedding(q) => write!(f, "e{q}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateOp {
    pub kind: GateKind,
    /// `[target]` for one-qubit gates, `[control, target]` for two-qubit gates.
    pub wires: Vec<usize>,
    pub slots: Vec<ParamSlot>,
}

impl GateOp {
    pub fn new(kind: GateKind, wires: Vec<usize>, slots: Vec<ParamSlot>) -> Self {
        Self { kind, wires, slots }
    }

    pub fn validate(&self, n_qubits: usize) -> Result<()> {
        if self.wires.len() != self.kind.n_wires() {
            return Err(Error::InvalidGate(format!("{:?} needs {} wires, got {:?}", self.kind, self.kind.n_wires(), self.wires)));
        }
        if self.slots.len() != self.kind.n_params() {
            return Err(Error::InvalidGate(format!("{:?} needs {} angles, got {}", self.kind, self.kind.n_params(), self.slots.len())));
        }
        if let Some(&w) = self.wires.iter().find(|&&w| w >= n_qubits) {
            return Err(Error::InvalidGate(format!("wire {w} out of range for {n_qubits} qubits")));
        }
        if self.wires.len() == 2 && self.wires[0] == self.wires[1] {
            return Err(Error::InvalidGate(format!("wire collision on {}", self.wires[0])));
        }
        Ok(())
    }
}

impl fmt::Display for GateOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.kind)?;
        for w in &self.wires {
            write!(f, " {w}")?;
        }
        for s in &self.slots {
            write!(f, " {s}")?;
        }
        Ok(())
    }
}

/// Angles for resolving [`ParamSlot`]s.
#[derive(Clone, Copy, Debug)]
pub struct AngleSource<'a> {
    pub params: &'a [f64],
    /// `[batch, n_embedding]` per-row angles.
    pub embedding: Option<ArrayView2<'a, f64>>,
}

/// Primitive the simulator executes: a Pauli rotation (optionally controlled) or a CNOT.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Prim {
    Rot { axis: Axis, target: usize, control: Option<usize>, slot: ParamSlot },
    Cnot { control: usize, target: usize },
}

pub(crate) fn lower(gate: &GateOp) -> Vec<Prim> {
    let t = *gate.wires.last().expect("gate has wires");
    let rot = |axis, slot| Prim::Rot { axis, target: t, control: None, slot };
    match gate.kind {
        GateKind::RX => vec![rot(Axis::X, gate.slots[0])],
        GateKind::RY => vec![rot(Axis::Y, gate.slots[0])],
        GateKind::RZ => vec![rot(Axis::Z, gate.slots[0])],
        GateKind::Rot => vec![rot(Axis::Z, gate.slots[0]), rot(Axis::Y, gate.slots[1]), rot(Axis::Z, gate.slots[2])],
        GateKind::CNOT => vec![Prim::Cnot { control: gate.wires[0], target: t }],
        GateKind::CRZ => vec![Prim::Rot { axis: Axis::Z, target: t, control: Some(gate.wires[0]), slot: gate.slots[0] }],
    }
}

/// Half-angle cos/sin of a slot for every row.
pub(crate) fn half_angles(slot: ParamSlot, src: &AngleSource<'_>, rows: usize, row0: usize, cos: &mut [f64], sin: &mut [f64]) -> Result<()> {
    match slot {
        ParamSlot::Param(i) => {
            let a = *src
                .params
                .get(i)
                .ok_or_else(|| Error::InvalidGate(format!("parameter slot {i} out of range ({})", src.params.len())))?;
            let (s, c) = (0.5 * a).sin_cos();
            cos[..rows].fill(c);
            sin[..rows].fill(s);
        }
        ParamSlot::Embedding(q) => {
            let emb = src.embedding.ok_or_else(|| Error::InvalidGate("embedding slot without embedding angles".into()))?;
            if q >= emb.ncols() || row0 + rows > emb.nrows() {
                return Err(Error::InvalidGate(format!("embedding column {q} unavailable")));
            }
            for r in 0..rows {
                let (s, c) = (0.5 * emb[[row0 + r, q]]).sin_cos();
                cos[r] = c;
                sin[r] = s;
            }
        }
    }
    Ok(())
}

/// Apply one gate to every row.
pub fn apply_gate(state: &mut StateVectorBatch, gate: &GateOp, angles: &AngleSource<'_>) -> Result<()> {
    gate.validate(state.n_qubits)?;
    let n = state.n_qubits;
    let rows = state.batch;
    let mut cos = vec![0.0; rows];
    let mut sin = vec![0.0; rows];
    for prim in lower(gate) {
        match prim {
            Prim::Cnot { control, target } => kernels::cnot(&mut state.plane_mut(), n, control, target),
            Prim::Rot { axis, target, control, slot } => {
                half_angles(slot, angles, rows, 0, &mut cos, &mut sin)?;
                kernels::rotate(&mut state.plane_mut(), n, axis, target, control, &cos, &sin, false);
            }
        }
    }
    Ok(())
}

/// Run a gate list on `|0...0>` for every row.
pub fn run_circuit(n_qubits: usize, batch: usize, gates: &[GateOp], angles: &AngleSource<'_>) -> Result<StateVectorBatch> {
    let mut s = init_state(batch, n_qubits)?;
    for g in gates {
        apply_gate(&mut s, g, angles)?;
    }
    Ok(s)
}

/// `<Z_q>` for each row and qubit, shape `[batch, n]`.
pub fn expectation_z(state: &StateVectorBatch) -> Array2<f64> {
    let (n, rows) = (state.n_qubits, state.batch);
    let mut out = Array2::zeros((rows, n));
    kernels::expectation_z(&state.plane(), n, |r, q, v| out[[r, q]] += v);
    out
}

/// Meyer-Wallach global entanglement `Q = 2 (1 - mean_k Tr rho_k^2)` per row.
pub fn meyer_wallach(state: &StateVectorBatch) -> Vec<f64> {
    let (n, rows) = (state.n_qubits, state.batch);
    let dim = state.dim();
    let mut purity_sum = vec![0.0; rows];
    for q in 0..n {
        let bit = 1usize << (n - 1 - q);
        for r in 0..rows {
            let (mut p0, mut p1, mut cr, mut ci) = (0.0, 0.0, 0.0, 0.0);
            for i0 in (0..dim).filter(|i| i & bit == 0) {
                let i1 = i0 | bit;
                let (ar, ai) = state.amplitude(r, i0);
                let (br, bi) = state.amplitude(r, i1);
                p0 += ar * ar + ai * ai;
                p1 += br * br + bi * bi;
                // a * conj(b)
                cr += ar * br + ai * bi;
                ci += ai * br - ar * bi;
            }
            purity_sum[r] += p0 * p0 + p1 * p1 + 2.0 * (cr * cr + ci * ci);
        }
    }
    purity_sum
        .into_iter()
        .map(|s| (2.0 * (1.0 - s / n as f64)).clamp(0.0, 1.0))
        .collect()
}

/// Plain-text gate list, one gate per line.
pub fn dump_circuit(gates: &[GateOp]) -> String {
    let mut s = String::new();
    for g in gates {
        s.push_str(&g.to_string());
        s.push('\n');
    }
    s
}
