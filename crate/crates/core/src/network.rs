//! Classical PINN variants and the hybrid QPINN.
//!
//! Input pipeline: `(x, y, t)` -> periodic features
//! `(sin pi x, cos pi x, sin pi y, cos pi y, sin 2 pi t/tau, cos 2 pi t/tau)`
//! -> random Fourier features `(cos(F Omega^T), sin(F Omega^T))` -> tanh
//! stack -> linear head producing `(E_z, H_x, H_y)`.

use std::f64::consts::PI;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ansatz::{build_circuit, tape_scale, AnsatzKind, CircuitSpec, ScaleKind};
use crate::autodiff::{lift_inputs, Activation, ParameterStore, PeriodMap, Tape, Tensor, Unary, Var};
use crate::error::{Error, Result};

/// Spatial period of the domain `[-1, 1]`.
pub const SPATIAL_PERIOD: f64 = 2.0;
/// Periodic features fed to the Fourier layer.
pub const PERIODIC_FEATURES: usize = 6;

const STREAM_OMEGA: u64 = 1;
const STREAM_WEIGHTS: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ClassicalRegular,
    ClassicalReduced,
    ClassicalExtra,
    Hybrid,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::ClassicalRegular, Variant::ClassicalReduced, Variant::ClassicalExtra, Variant::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::ClassicalRegular => "classical_regular",
            Variant::ClassicalReduced => "classical_reduced",
            Variant::ClassicalExtra => "classical_extra",
            Variant::Hybrid => "hybrid",
        }
    }

    /// Number of `width -> width` hidden layers after the first one.
    fn hidden_repeats(self) -> usize {
        match self {
            Variant::ClassicalRegular => 3,
            Variant::ClassicalReduced => 2,
            Variant::ClassicalExtra => 4,
            Variant::Hybrid => 2,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::UnknownName { kind: "variant", value: s.to_string() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub hidden_width: usize,
    pub rff_features: usize,
    pub n_qubits: usize,
    pub n_layers_pqc: usize,
    pub ansatz: Option<AnsatzKind>,
    pub scale: Option<ScaleKind>,
    pub rff_sigma: f64,
    pub seed: u64,
    /// Time-domain length; the learned period starts at twice this value.
    pub t_domain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::ClassicalRegular,
            hidden_width: 128,
            rff_features: 128,
            n_qubits: 7,
            n_layers_pqc: 4,
            ansatz: None,
            scale: None,
            rff_sigma: 1.0,
            seed: 0,
            t_domain: 1.5,
        }
    }
}

impl ModelConfig {
    pub fn hybrid(ansatz: AnsatzKind, scale: ScaleKind) -> Self {
        Self { variant: Variant::Hybrid, ansatz: Some(ansatz), scale: Some(scale), ..Self::default() }
    }

    pub fn classical(variant: Variant) -> Self {
        Self { variant, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == Variant::Hybrid && (self.ansatz.is_none() || self.scale.is_none()) {
            return Err(Error::Config("hybrid variant requires both ansatz and scale".into()));
        }
        if self.hidden_width == 0 || self.rff_features == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(self.rff_sigma > 0.0) || !self.rff_sigma.is_finite() {
            return Err(Error::Config(format!("rff_sigma must be positive, got {}", self.rff_sigma)));
        }
        if !(self.t_domain > 0.0) || !self.t_domain.is_finite() {
            return Err(Error::Config(format!("t_domain must be positive, got {}", self.t_domain)));
        }
        Ok(())
    }
}

/// Frozen Gaussian projection `Omega` of shape `[rff_features, 6]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RffProjection {
    pub omega: Arc<Array2<f64>>,
}

impl RffProjection {
    pub fn sample(features: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_OMEGA);
        let normal = Normal::new(0.0, sigma).expect("positive sigma");
        let omega = Array2::from_shape_fn((features, PERIODIC_FEATURES), |_| normal.sample(&mut rng));
        Self { omega: Arc::new(omega) }
    }

    pub fn features(&self) -> usize {
        self.omega.nrows()
    }
}

/// Dense layer layout inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DenseSpec {
    pub weight: usize,
    pub bias: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub act: Activation,
}

impl DenseSpec {
    pub fn param_count(&self) -> usize {
        self.n_in * self.n_out + self.n_out
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ParamCounts {
    /// Dense weights and biases.
    pub dense: usize,
    /// Dense parameters plus the learned period.
    pub classical: usize,
    pub quantum: usize,
    pub period: usize,
    pub total: usize,
}

/// A built network: layer layout, frozen projection and optional PQC.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub rff: RffProjection,
    /// Layers before the PQC (hybrid) or before the head (classical).
    pub body: Vec<DenseSpec>,
    pub head: DenseSpec,
    pub circuit: Option<CircuitSpec>,
    pub period: PeriodMap,
    n_classical: usize,
    n_quantum: usize,
}

/// `(sin, cos)` pairs for x and y with period 2 and for t with period `tau`.
pub fn periodic_map(x: f64, y: f64, t: f64, tau: f64) -> [f64; PERIODIC_FEATURES] {
    let w = 2.0 * PI / SPATIAL_PERIOD;
    let wt = 2.0 * PI / tau;
    let (sx, cx) = (w * x).sin_cos();
    let (sy, cy) = (w * y).sin_cos();
    let (st, ct) = (wt * t).sin_cos();
    [sx, cx, sy, cy, st, ct]
}

/// `cos(F Omega^T)` followed by `sin(F Omega^T)` per row.
pub fn rff_forward(features: ArrayView2<'_, f64>, rff: &RffProjection) -> Array2<f64> {
    let z = features.dot(&rff.omega.t());
    let m = rff.features();
    let mut out = Array2::zeros((features.nrows(), 2 * m));
    for (r, row) in z.rows().into_iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            out[[r, j]] = v.cos();
            out[[r, m + j]] = v.sin();
        }
    }
    out
}

pub fn build_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let w = config.hidden_width;
    let mut offset = 0usize;
    let mut layer = |n_in: usize, n_out: usize, act: Activation| {
        let spec = DenseSpec { weight: offset, bias: offset + n_in * n_out, n_in, n_out, act };
        offset += spec.param_count();
        spec
    };
    let mut body = vec![layer(2 * config.rff_features, w, Activation::Tanh)];
    for _ in 0..config.variant.hidden_repeats() {
        body.push(layer(w, w, Activation::Tanh));
    }
    let (head, circuit) = if config.variant == Variant::Hybrid {
        let ansatz = config.ansatz.expect("validated");
        body.push(layer(w, config.n_qubits, Activation::Tanh));
        let head = layer(config.n_qubits, 3, Activation::Identity);
        (head, Some(build_circuit(ansatz, config.n_qubits, config.n_layers_pqc)?))
    } else {
        (layer(w, 3, Activation::Identity), None)
    };
    let n_classical = offset;
    let n_quantum = circuit.as_ref().map_or(0, |c| c.param_count);
    Ok(Model {
        config: config.clone(),
        rff: RffProjection::sample(config.rff_features, config.rff_sigma, config.seed),
        body,
        head,
        circuit,
        period: PeriodMap { base: config.t_domain },
        n_classical,
        n_quantum,
    })
}

impl Model {
    pub fn counts(&self) -> ParamCounts {
        ParamCounts {
            dense: self.n_classical,
            classical: self.n_classical + 1,
            quantum: self.n_quantum,
            period: 1,
            total: self.total_parameter_count(),
        }
    }

    pub fn total_parameter_count(&self) -> usize {
        self.n_classical + self.n_quantum + 1
    }

    pub fn n_classical(&self) -> usize {
        self.n_classical
    }

    pub fn n_quantum(&self) -> usize {
        self.n_quantum
    }

    pub fn tau_index(&self) -> usize {
        self.n_classical + self.n_quantum
    }

    pub fn tau(&self, params: &[f64]) -> f64 {
        self.period.tau(params[self.tau_index()])
    }

    pub fn is_hybrid(&self) -> bool {
        self.circuit.is_some()
    }

    /// Glorot-uniform weights, zero biases, quantum angles uniform in
    /// `[0, 2 pi)` and the period at twice the time domain.
    pub fn init_params(&self, seed: u64) -> ParameterStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(STREAM_WEIGHTS);
        let mut classical = vec![0.0; self.n_classical];
        for layer in self.body.iter().chain(std::iter::once(&self.head)) {
            let a = (6.0 / (layer.n_in + layer.n_out) as f64).sqrt();
            for v in &mut classical[layer.weight..layer.bias] {
                *v = rng.random_range(-a..a);
            }
        }
        let quantum = (0..self.n_quantum).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        ParameterStore::new(classical, quantum, self.period.raw_for(2.0 * self.config.t_domain))
    }

    fn check_params(&self, params: &[f64]) {
        assert_eq!(params.len(), self.total_parameter_count(), "parameter vector length");
    }

    /// Periodic features and Fourier layer on the tape.
    pub(crate) fn embed(&self, tape: &mut Tape<'_>, x: Var, y: Var, t: Var) -> Var {
        let w = 2.0 * PI / SPATIAL_PERIOD;
        let mut parts = Vec::with_capacity(PERIODIC_FEATURES);
        for v in [x, y] {
            let a = tape.unary(v, Unary::Affine(w, 0.0));
            parts.push(tape.unary(a, Unary::Sin));
            parts.push(tape.unary(a, Unary::Cos));
        }
        let phase = tape.time_phase(t, self.tau_index(), self.period);
        parts.push(tape.unary(phase, Unary::Sin));
        parts.push(tape.unary(phase, Unary::Cos));
        let f = tape.concat(&parts);
        let z = tape.const_matmul(f, Arc::clone(&self.rff.omega));
        let c = tape.unary(z, Unary::Cos);
        let s = tape.unary(z, Unary::Sin);
        tape.concat(&[c, s])
    }

    fn dense(tape: &mut Tape<'_>, x: Var, l: &DenseSpec) -> Var {
        tape.dense(x, l.weight, l.bias, l.n_in, l.n_out, l.act)
    }

    /// Embedding angles fed to the PQC (after scaling).
    pub fn pqc_angles(&self, tape: &mut Tape<'_>, x: Var, y: Var, t: Var) -> Option<Var> {
        self.check_params(tape.params());
        self.circuit.as_ref()?;
        let mut h = self.embed(tape, x, y, t);
        for l in &self.body {
            h = Self::dense(tape, h, l);
        }
        Some(tape_scale(tape, h, self.config.scale.expect("validated")))
    }

    /// Forward pass producing `[batch, 3]` fields; a jet when the inputs are jets.
    /// `keep_states` must be set when the tape will be differentiated.
    pub fn forward(&self, tape: &mut Tape<'_>, x: Var, y: Var, t: Var, keep_states: bool) -> Var {
        self.check_params(tape.params());
        let h = match &self.circuit {
            Some(circuit) => {
                let a = self.pqc_angles(tape, x, y, t).expect("hybrid");
                circuit.tape_layer(tape, a, self.n_classical, keep_states)
            }
            None => {
                let mut h = self.embed(tape, x, y, t);
                for l in &self.body {
                    h = Self::dense(tape, h, l);
                }
                h
            }
        };
        Self::dense(tape, h, &self.head)
    }

    /// Forward pass with input jets; returns the output node.
    pub fn forward_jet(&self, tape: &mut Tape<'_>, x: &[f64], y: &[f64], t: &[f64]) -> Result<Var> {
        let [vx, vy, vt] = lift_inputs(tape, x, y, t)?;
        Ok(self.forward(tape, vx, vy, vt, true))
    }

    /// Value-only evaluation in chunks; returns `[n, 3]`.
    pub fn eval(&self, params: &[f64], x: &[f64], y: &[f64], t: &[f64]) -> Result<Array2<f64>> {
        const CHUNK: usize = 2048;
        let n = x.len();
        if y.len() != n || t.len() != n {
            return Err(Error::InvalidBatch("coordinate arrays differ in length".into()));
        }
        let mut out = Array2::zeros((n, 3));
        let mut start = 0;
        while start < n {
            let end = (start + CHUNK).min(n);
            let mut tape = Tape::new(params);
            let [vx, vy, vt] = [x, y, t].map(|c| tape.leaf(Tensor::value_only(column(&c[start..end]))));
            let z = self.forward(&mut tape, vx, vy, vt, false);
            out.slice_mut(ndarray::s![start..end, ..]).assign(&tape.get(z).value());
            start = end;
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model output".into()));
        }
        Ok(out)
    }

    /// Scaled PQC input angles for value-only inputs (hybrid only).
    pub fn eval_angles(&self, params: &[f64], x: &[f64], y: &[f64], t: &[f64]) -> Option<Array2<f64>> {
        let mut tape = Tape::new(params);
        let [vx, vy, vt] = [x, y, t].map(|c| tape.leaf(Tensor::value_only(column(c))));
        let a = self.pqc_angles(&mut tape, vx, vy, vt)?;
        Some(tape.get(a).value().to_owned())
    }
}

fn column(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((v.len(), 1), v.to_vec()).expect("column")
}

const CHECKPOINT_MAGIC: &[u8] = b"QPINNCKPT1\n";

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub counts: ParamCounts,
    pub epoch: usize,
}

/// Magic line, u64 LE header length, JSON header, then the f64 LE parameters.
pub fn save_checkpoint(path: &Path, model: &Model, params: &ParameterStore, epoch: usize) -> Result<()> {
    let header = CheckpointHeader { config: model.config.clone(), counts: model.counts(), epoch };
    let json = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for v in params.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParameterStore)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = vec![0u8; CHECKPOINT_MAGIC.len()];
    r.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Config(format!("{} is not a checkpoint file", path.display())));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != 8 * header.counts.total {
        return Err(Error::Config(format!(
            "checkpoint payload has {} bytes, expected {}",
            payload.len(),
            8 * header.counts.total
        )));
    }
    let values = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
    let store = ParameterStore::from_flat(values, header.counts.dense, header.counts.quantum)?;
    Ok((header, store))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parameter_counts() {
        let classical = [
            (Variant::ClassicalRegular, 82_820),
            (Variant::ClassicalReduced, 66_308),
            (Variant::ClassicalExtra, 99_332),
        ];
        for (v, n) in classical {
            assert_eq!(build_model(&ModelConfig::classical(v)).unwrap().total_parameter_count(), n);
        }
        let hybrid = [
            (AnsatzKind::BasicEntangling, 66_932),
            (AnsatzKind::StronglyEntangling, 66_932),
            (AnsatzKind::CrossMesh, 67_044),
            (AnsatzKind::CrossMesh2Rot, 67_072),
            (AnsatzKind::CrossMeshCnot, 66_932),
            (AnsatzKind::NoEntanglement, 66_932),
        ];
        for (a, n) in hybrid {
            let m = build_model(&ModelConfig::hybrid(a, ScaleKind::Acos)).unwrap();
            assert_eq!(m.counts().classical, 66_848);
            assert_eq!(m.total_parameter_count(), n);
        }
    }

    #[test]
    fn hybrid_requires_ansatz_and_scale() {
        let cfg = ModelConfig { variant: Variant::Hybrid, ..ModelConfig::default() };
        assert!(matches!(build_model(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn periodic_map_examples() {
        let a = periodic_map(-1.0, 0.3, 0.2, 3.0);
        let b = periodic_map(1.0, 0.3, 0.2, 3.0);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-15);
        }
        let z = periodic_map(0.0, 0.0, 0.0, 1.7);
        assert_eq!(z, [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn rff_examples() {
        let zero = RffProjection { omega: Arc::new(Array2::zeros((128, 6))) };
        let f = Array2::from_shape_fn((2, 6), |(r, c)| (r + c) as f64 * 0.1);
        let out = rff_forward(f.view(), &zero);
        assert!(out.slice(ndarray::s![.., ..128]).iter().all(|&v| v == 1.0));
        assert!(out.slice(ndarray::s![.., 128..]).iter().all(|&v| v == 0.0));

        let mut omega = Array2::zeros((4, 6));
        omega[[2, 0]] = PI / 2.0;
        let rff = RffProjection { omega: Arc::new(omega) };
        let mut f = Array2::zeros((1, 6));
        f[[0, 0]] = 1.0;
        let out = rff_forward(f.view(), &rff);
        assert!(out[[0, 2]].abs() < 1e-15);
        assert!((out[[0, 4 + 2]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let m = build_model(&ModelConfig::classical(Variant::ClassicalReduced)).unwrap();
        let mut p = m.init_params(3);
        let tau = p.tau_index();
        for (i, v) in p.as_mut_slice().iter_mut().enumerate() {
            if i != tau {
                *v = 0.0;
            }
        }
        let out = m.eval(p.as_slice(), &[0.1, -0.4], &[0.7, 0.0], &[0.0, 1.2]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn initial_period_is_twice_time_domain() {
        let m = build_model(&ModelConfig::classical(Variant::ClassicalReduced)).unwrap();
        let p = m.init_params(0);
        assert!((m.tau(p.as_slice()) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn jet_and_value_paths_agree() {
        let m = build_model(&ModelConfig::hybrid(AnsatzKind::StronglyEntangling, ScaleKind::Acos)).unwrap();
        let p = m.init_params(5);
        let (x, y, t) = (vec![0.2, -0.9, 0.5], vec![0.1, 0.3, -1.0], vec![0.0, 0.7, 1.4]);
        let v = m.eval(p.as_slice(), &x, &y, &t).unwrap();
        let mut tape = Tape::new(p.as_slice());
        let z = m.forward_jet(&mut tape, &x, &y, &t).unwrap();
        let jv = tape.get(z).value().to_owned();
        for (a, b) in v.iter().zip(jv.iter()) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = build_model(&ModelConfig::hybrid(AnsatzKind::CrossMesh, ScaleKind::Pi)).unwrap();
        let p = m.init_params(11);
        let dir = std::env::temp_dir().join(format!("qpinn-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save_checkpoint(&path, &m, &p, 7).unwrap();
        let (h, q) = load_checkpoint(&path).unwrap();
        assert_eq!(h.epoch, 7);
        assert_eq!(h.counts.total, 67_044);
        assert_eq!(q, p);
        std::fs::remove_dir_all(dir).unwrap();
    }
}
