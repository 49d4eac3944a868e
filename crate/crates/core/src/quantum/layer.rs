//! Differentiable PQC layer for the jet tape.
//!
//! Input: per-row embedding angles `[batch, n]` (optionally a jet). Output:
//! `<Z_q>` for every qubit, plus `d<Z_q>/d(x, y, t)` when the input is a jet.
//! The forward pass evolves the state and its three tangent states together.
//! For a rotation `G = exp(-i phi P / 2)` the tangents pick up
//! `phi_k * (-i/2) P G psi`. The backward pass runs the gates in reverse and
//! uncomputes the states with `G^dagger`, so only final states are stored.

use std::sync::Arc;

use ndarray::Array2;

use super::kernels::{self, Plane, PlaneMut};
use super::{half_angles, AngleSource, ParamSlot, Prim};
use crate::autodiff::{CustomOp, Tensor};

/// Rows simulated together; sized so a chunk of states and adjoints stays in cache.
pub const DEFAULT_CHUNK: usize = 64;

/// Forward schedule: runs of trainable uncontrolled rotations on one wire
/// collapse into a single 2x2 unitary.
#[derive(Clone, Debug)]
enum Step {
    Prim(usize),
    Fused { target: usize, range: std::ops::Range<usize> },
}

fn plan(prims: &[Prim]) -> Vec<Step> {
    let fusable = |p: &Prim| match *p {
        Prim::Rot { control: None, slot: ParamSlot::Param(_), target, .. } => Some(target),
        _ => None,
    };
    let mut steps = Vec::new();
    let mut i = 0;
    while i < prims.len() {
        match fusable(&prims[i]) {
            Some(target) => {
                let mut j = i + 1;
                while j < prims.len() && fusable(&prims[j]) == Some(target) {
                    j += 1;
                }
                if j - i > 1 {
                    steps.push(Step::Fused { target, range: i..j });
                } else {
                    steps.push(Step::Prim(i));
                }
                i = j;
            }
            None => {
                steps.push(Step::Prim(i));
                i += 1;
            }
        }
    }
    steps
}

pub struct QuantumLayerOp {
    n_qubits: usize,
    prims: Arc<Vec<Prim>>,
    steps: Vec<Step>,
    param_offset: usize,
    chunk: usize,
    keep_states: bool,
    saved: Vec<Vec<f64>>,
}

impl QuantumLayerOp {
    pub(crate) fn new(n_qubits: usize, prims: Arc<Vec<Prim>>, param_offset: usize, keep_states: bool) -> Self {
        let steps = plan(&prims);
        Self { n_qubits, prims, steps, param_offset, chunk: DEFAULT_CHUNK, keep_states, saved: Vec::new() }
    }

    pub fn with_chunk(mut self, chunk: usize) -> Self {
        self.chunk = chunk.max(1);
        self
    }
}

fn split_planes(buf: &mut [f64], plane_len: usize, rows: usize) -> Vec<PlaneMut<'_>> {
    let mut out = Vec::new();
    let mut it = buf.chunks_mut(plane_len);
    while let (Some(re), Some(im)) = (it.next(), it.next()) {
        out.push(PlaneMut { re, im, rows });
    }
    out
}

impl QuantumLayerOp {
    fn forward_chunk(&self, input: &Tensor, src: &AngleSource<'_>, row0: usize, rows: usize, out: &mut Array2<f64>) -> Vec<f64> {
        let n = self.n_qubits;
        let dim = 1usize << n;
        let comps = input.components();
        let batch = input.rows();
        let plane_len = dim * rows;
        let mut buf = vec![0.0; comps * 2 * plane_len];
        buf[..rows].fill(1.0);
        let mut cos = vec![0.0; rows];
        let mut sin = vec![0.0; rows];
        let mut coef = vec![0.0; rows];
        {
            let mut planes = split_planes(&mut buf, plane_len, rows);
            for step in &self.steps {
                let prim = match step {
                    Step::Fused { target, range } => {
                        let u = self.prims[range.clone()].iter().fold(kernels::rotation_matrix(kernels::Axis::Z, 0.0), |u, p| match *p {
                            Prim::Rot { axis, slot: ParamSlot::Param(i), .. } => kernels::matmul2(&kernels::rotation_matrix(axis, src.params[i]), &u),
                            _ => unreachable!("only trainable rotations are fused"),
                        });
                        for p in planes.iter_mut() {
                            kernels::apply_u2(p, n, *target, &u);
                        }
                        continue;
                    }
                    Step::Prim(i) => &self.prims[*i],
                };
                match *prim {
                    Prim::Cnot { control, target } => {
                        for p in planes.iter_mut() {
                            kernels::cnot(p, n, control, target);
                        }
                    }
                    Prim::Rot { axis, target, control, slot } => {
                        half_angles(slot, src, rows, row0, &mut cos, &mut sin).expect("circuit validated at build");
                        for p in planes.iter_mut() {
                            kernels::rotate(p, n, axis, target, control, &cos, &sin, false);
                        }
                        if let (true, ParamSlot::Embedding(q)) = (input.is_jet(), slot) {
                            let (psi, tangents) = planes.split_at_mut(1);
                            for (k, t) in tangents.iter_mut().enumerate() {
                                let tk = input.tangent(k);
                                for r in 0..rows {
                                    coef[r] = -0.5 * tk[[row0 + r, q]];
                                }
                                kernels::pauli_axpy_i(&psi[0].as_plane(), t, n, axis, target, control, &coef);
                            }
                        }
                    }
                }
            }
            let psi = planes[0].as_plane();
            kernels::expectation_z(&psi, n, |r, q, v| out[[row0 + r, q]] += v);
            for k in 1..comps {
                kernels::z_cross(&psi, &planes[k].as_plane(), n, |r, q, v| out[[k * batch + row0 + r, q]] += v);
            }
        }
        buf
    }
}

impl CustomOp for QuantumLayerOp {
    fn name(&self) -> &str {
        "quantum_layer"
    }

    fn forward(&mut self, inputs: &[&Tensor], params: &[f64]) -> Tensor {
        let input = inputs[0];
        let n = self.n_qubits;
        assert_eq!(input.cols(), n, "quantum layer expects one angle per qubit");
        let batch = input.rows();
        let src = AngleSource { params: &params[self.param_offset..], embedding: Some(input.value()) };
        let mut out = Array2::zeros((input.components() * batch, n));
        self.saved.clear();
        let mut row0 = 0;
        while row0 < batch {
            let rows = self.chunk.min(batch - row0);
            let buf = self.forward_chunk(input, &src, row0, rows, &mut out);
            if self.keep_states {
                self.saved.push(buf);
            }
            row0 += rows;
        }
        Tensor::from_stacked(out, batch, input.is_jet())
    }

    fn backward(
        &self,
        inputs: &[&Tensor],
        _output: &Tensor,
        grad_output: &Array2<f64>,
        params: &[f64],
        grad_inputs: &mut [Array2<f64>],
        grad_params: &mut [f64],
    ) {
        assert!(self.keep_states, "quantum layer built without saved states cannot run backward");
        let input = inputs[0];
        let gin = &mut grad_inputs[0];
        let n = self.n_qubits;
        let dim = 1usize << n;
        let comps = input.components();
        let batch = input.rows();
        let src = AngleSource { params: &params[self.param_offset..], embedding: Some(input.value()) };

        let mut row0 = 0;
        for saved in &self.saved {
            let rows = self.chunk.min(batch - row0);
            let plane_len = dim * rows;
            let mut states = saved.clone();
            let mut adj = vec![0.0; comps * 2 * plane_len];

            // seed: d<Z>/dpsi = 2 Z psi, d(2 Re<psi, Z t>)/d(psi, t) = (2 Z t, 2 Z psi)
            {
                let mut w = vec![0.0; comps * rows];
                for idx in 0..dim {
                    w.fill(0.0);
                    for q in 0..n {
                        let sign = if idx & (1 << (n - 1 - q)) == 0 { 2.0 } else { -2.0 };
                        for c in 0..comps {
                            for r in 0..rows {
                                w[c * rows + r] += sign * grad_output[[c * batch + row0 + r, q]];
                            }
                        }
                    }
                    let off = idx * rows;
                    for r in 0..rows {
                        let (pr, pi) = (states[off + r], states[plane_len + off + r]);
                        let mut lr = w[r] * pr;
                        let mut li = w[r] * pi;
                        for k in 1..comps {
                            let base = k * 2 * plane_len;
                            let wk = w[k * rows + r];
                            lr += wk * states[base + off + r];
                            li += wk * states[base + plane_len + off + r];
                            adj[base + off + r] = wk * pr;
                            adj[base + plane_len + off + r] = wk * pi;
                        }
                        adj[off + r] = lr;
                        adj[plane_len + off + r] = li;
                    }
                }
            }

            let mut cos = vec![0.0; rows];
            let mut sin = vec![0.0; rows];
            let mut phibar = vec![0.0; rows];
            let mut tmp = vec![0.0; rows];
            let mut coef = vec![0.0; rows];
            let mut sp = split_planes(&mut states, plane_len, rows);
            let mut ap = split_planes(&mut adj, plane_len, rows);
            for prim in self.prims.iter().rev() {
                match *prim {
                    Prim::Cnot { control, target } => {
                        for p in sp.iter_mut().chain(ap.iter_mut()) {
                            kernels::cnot(p, n, control, target);
                        }
                    }
                    Prim::Rot { axis, target, control, slot } => {
                        half_angles(slot, &src, rows, row0, &mut cos, &mut sin).expect("circuit validated at build");
                        phibar.fill(0.0);
                        match slot {
                            ParamSlot::Param(i) => {
                                for (a, st) in ap.iter_mut().zip(sp.iter_mut()) {
                                    kernels::unrotate_with_inner(a, st, n, axis, target, control, &cos, &sin, &mut phibar);
                                }
                                grad_params[self.param_offset + i] += 0.5 * phibar.iter().sum::<f64>();
                            }
                            ParamSlot::Embedding(q) => {
                                for c in 0..comps {
                                    kernels::pauli_im_inner(&ap[c].as_plane(), &sp[c].as_plane(), n, axis, target, control, &mut phibar);
                                }
                                for r in 0..rows {
                                    gin[[row0 + r, q]] += 0.5 * phibar[r];
                                }
                                if input.is_jet() {
                                    for k in 1..comps {
                                        tmp.fill(0.0);
                                        kernels::pauli_im_inner(&ap[k].as_plane(), &sp[0].as_plane(), n, axis, target, control, &mut tmp);
                                        for r in 0..rows {
                                            gin[[k * batch + row0 + r, q]] += 0.5 * tmp[r];
                                        }
                                    }
                                    for k in 1..comps {
                                        let tk = input.tangent(k - 1);
                                        for r in 0..rows {
                                            coef[r] = 0.5 * tk[[row0 + r, q]];
                                        }
                                        {
                                            let (psi, rest) = sp.split_at_mut(1);
                                            let psi: Plane<'_> = psi[0].as_plane();
                                            kernels::pauli_axpy_i(&psi, &mut rest[k - 1], n, axis, target, control, &coef);
                                        }
                                        {
                                            let (lam, rest) = ap.split_at_mut(1);
                                            let mu = rest[k - 1].as_plane();
                                            kernels::pauli_axpy_i(&mu, &mut lam[0], n, axis, target, control, &coef);
                                        }
                                    }
                                }
                                for p in sp.iter_mut().chain(ap.iter_mut()) {
                                    kernels::rotate(p, n, axis, target, control, &cos, &sin, true);
                                }
                            }
                        }
                    }
                }
            }
            row0 += rows;
        }
    }
}
