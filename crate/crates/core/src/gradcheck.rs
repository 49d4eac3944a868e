//! Central finite-difference check of the full loss gradient.
//!
//! Every parameter is perturbed in turn. Dense-layer perturbations reuse
//! cached pre-activations: changing `W[o, i]` of layer `k` only moves column
//! `o` of that layer's pre-activation, which in turn is a rank-1 change of the
//! next layer's pre-activation. Only the remaining layers are re-run.

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::autodiff::{apply_tanh_jet, lift_inputs, Tape, Tensor, Var, TANGENTS};
use crate::error::Result;
use crate::network::{DenseSpec, Model};
use crate::physics::{PinnLoss, TIME_BINS};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradCheckConfig {
    pub h: f64,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { h: 1e-4, rtol: 1e-5, atol: 1e-8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GradMismatch {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub checked: usize,
    pub n_failures: usize,
    /// First failures, capped.
    pub failures: Vec<GradMismatch>,
    /// Largest `|g - fd| / (atol + rtol |fd|)`; at most 1 on success.
    pub worst_ratio: f64,
    pub worst: Option<GradMismatch>,
    pub max_abs_err: f64,
    pub loss: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.n_failures == 0 && self.checked > 0
    }
}

const MAX_LISTED: usize = 32;

struct Checker<'a> {
    model: &'a Model,
    loss: &'a PinnLoss,
    weights: [f64; TIME_BINS],
}

impl Checker<'_> {
    fn total(&self, params: &[f64]) -> Result<f64> {
        let mut tape = Tape::new(params);
        Ok(self.loss.build(&mut tape, self.model, Some(self.weights))?.1.total)
    }

    /// Loss with `input` fed to body layer `start` (or to the PQC/head when
    /// `start == body.len()`).
    fn tail(&self, params: &[f64], start: usize, input: &Tensor) -> Result<f64> {
        let m = self.model;
        let mut tape = Tape::new(params);
        let mut h = tape.leaf(input.clone());
        for l in &m.body[start..] {
            h = tape.dense(h, l.weight, l.bias, l.n_in, l.n_out, l.act);
        }
        if let Some(c) = &m.circuit {
            let a = crate::ansatz::tape_scale(&mut tape, h, m.config.scale.expect("hybrid"));
            h = c.tape_layer(&mut tape, a, m.n_classical(), false);
        }
        self.head(&mut tape, h)
    }

    fn head(&self, tape: &mut Tape<'_>, h: Var) -> Result<f64> {
        let l = &self.model.head;
        let z = tape.dense(h, l.weight, l.bias, l.n_in, l.n_out, l.act);
        Ok(self.loss.build_from_output(tape, z, Some(self.weights))?.1.total)
    }

    fn head_only(&self, params: &[f64], q: &Tensor) -> Result<f64> {
        let mut tape = Tape::new(params);
        let h = tape.leaf(q.clone());
        self.head(&mut tape, h)
    }
}

fn weight_view<'a>(params: &'a [f64], l: &DenseSpec) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((l.n_out, l.n_in), &params[l.weight..l.bias]).expect("weight shape")
}

/// Pre-activation of a dense layer on a stacked input (bias on value rows only).
fn pre_activation(a: &Tensor, params: &[f64], l: &DenseSpec) -> Array2<f64> {
    let mut z = a.data().dot(&weight_view(params, l).t());
    let bias = &params[l.bias..l.bias + l.n_out];
    for mut r in z.slice_mut(s![0..a.rows(), ..]).rows_mut() {
        for (o, &b) in r.iter_mut().zip(bias) {
            *o += b;
        }
    }
    z
}

fn activate(z: &Array2<f64>, rows: usize, jet: bool) -> Tensor {
    let mut d = z.clone();
    apply_tanh_jet(&mut d, rows, jet);
    Tensor::from_stacked(d, rows, jet)
}

/// tanh jet of one stacked column.
fn activate_column(z: &mut [f64], rows: usize, jet: bool) {
    for r in 0..rows {
        let v = z[r].tanh();
        z[r] = v;
        if jet {
            for k in 1..=TANGENTS {
                z[k * rows + r] *= 1.0 - v * v;
            }
        }
    }
}

/// Compare the tape gradient of the total loss with central differences over
/// every parameter. The time-bin weights are frozen at `params`.
/// `progress(done, total)` is called periodically.
pub fn check_model_gradient(
    model: &Model,
    loss: &PinnLoss,
    params: &[f64],
    config: GradCheckConfig,
    progress: &mut dyn FnMut(usize, usize),
) -> Result<GradCheckReport> {
    let g = &loss.grid;
    let weights = {
        let mut tape = Tape::new(params);
        loss.build(&mut tape, model, None)?.1.weights
    };
    let (analytic, base) = {
        let mut tape = Tape::new(params);
        let (node, b) = loss.build(&mut tape, model, Some(weights))?;
        (tape.backward(node)?.into_params(), b.total)
    };
    let ck = Checker { model, loss, weights };

    // cached activations: acts[k] feeds body layer k; acts[body.len()] feeds the PQC or head
    let (mut acts, mut pre) = (Vec::new(), Vec::new());
    {
        let mut tape = Tape::new(params);
        let [x, y, t] = lift_inputs(&mut tape, &g.x, &g.y, &g.t)?;
        let e = model.embed(&mut tape, x, y, t);
        acts.push(tape.get(e).clone());
    }
    for l in &model.body {
        let a = acts.last().expect("input");
        let z = pre_activation(a, params, l);
        let next = activate(&z, a.rows(), a.is_jet());
        pre.push(z);
        acts.push(next);
    }
    let rows = acts[0].rows();
    let jet = acts[0].is_jet();
    let last = model.body.len();
    let q_out = match &model.circuit {
        Some(c) => {
            let mut tape = Tape::new(params);
            let h = tape.leaf(acts[last].clone());
            let a = crate::ansatz::tape_scale(&mut tape, h, model.config.scale.expect("hybrid"));
            let q = c.tape_layer(&mut tape, a, model.n_classical(), false);
            tape.get(q).clone()
        }
        None => acts[last].clone(),
    };

    let n = params.len();
    let mut numeric = vec![f64::NAN; n];
    let mut done = 0usize;
    let h = config.h;
    let mut tick = |done: &mut usize| {
        *done += 1;
        if *done % 1024 == 0 {
            progress(*done, n);
        }
    };

    for (k, l) in model.body.iter().enumerate() {
        let a_in = &acts[k];
        let z = &pre[k];
        for o in 0..l.n_out {
            let zcol = z.column(o).to_vec();
            let acol = acts[k + 1].data().column(o).to_vec();
            for i in 0..=l.n_in {
                let idx = if i < l.n_in { l.weight + o * l.n_in + i } else { l.bias + o };
                let mut side = [0.0; 2];
                for (si, sgn) in [1.0, -1.0].into_iter().enumerate() {
                    let mut col = zcol.clone();
                    if i < l.n_in {
                        for (c, &v) in col.iter_mut().zip(a_in.data().column(i)) {
                            *c += sgn * h * v;
                        }
                    } else {
                        for c in &mut col[..rows] {
                            *c += sgn * h;
                        }
                    }
                    activate_column(&mut col, rows, jet);
                    side[si] = if k + 1 < last {
                        let nl = &model.body[k + 1];
                        let w = weight_view(params, nl);
                        let mut z1 = pre[k + 1].clone();
                        for (r, mut zr) in z1.axis_iter_mut(Axis(0)).enumerate() {
                            let d = col[r] - acol[r];
                            if d != 0.0 {
                                zr.scaled_add(d, &w.column(o));
                            }
                        }
                        ck.tail(params, k + 2, &activate(&z1, rows, jet))?
                    } else {
                        let mut a = acts[k + 1].data().clone();
                        a.column_mut(o).assign(&ndarray::Array1::from(col));
                        ck.tail(params, k + 1, &Tensor::from_stacked(a, rows, jet))?
                    };
                }
                numeric[idx] = (side[0] - side[1]) / (2.0 * h);
                tick(&mut done);
            }
        }
    }

    let mut p = params.to_vec();
    let fd = |idx: usize, p: &mut Vec<f64>, f: &dyn Fn(&[f64]) -> Result<f64>| -> Result<f64> {
        let orig = p[idx];
        p[idx] = orig + h;
        let plus = f(p)?;
        p[idx] = orig - h;
        let minus = f(p)?;
        p[idx] = orig;
        Ok((plus - minus) / (2.0 * h))
    };
    if model.circuit.is_some() {
        for idx in model.n_classical()..model.n_classical() + model.n_quantum() {
            numeric[idx] = fd(idx, &mut p, &|q| ck.tail(q, last, &acts[last]))?;
            tick(&mut done);
        }
    }
    let head = &model.head;
    for idx in head.weight..head.bias + head.n_out {
        numeric[idx] = fd(idx, &mut p, &|q| ck.head_only(q, &q_out))?;
        tick(&mut done);
    }
    let tau = model.tau_index();
    numeric[tau] = fd(tau, &mut p, &|q| ck.total(q))?;
    tick(&mut done);
    progress(done, n);

    let mut report = GradCheckReport {
        config,
        checked: 0,
        n_failures: 0,
        failures: Vec::new(),
        worst_ratio: 0.0,
        worst: None,
        max_abs_err: 0.0,
        loss: base,
    };
    for (index, (&a, &f)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - f).abs();
        let ratio = err / (config.atol + config.rtol * f.abs());
        let m = GradMismatch { index, analytic: a, numeric: f };
        report.checked += 1;
        report.max_abs_err = report.max_abs_err.max(err);
        if !(ratio <= 1.0) {
            report.n_failures += 1;
            if report.failures.len() < MAX_LISTED {
                report.failures.push(m);
            }
        }
        if !(ratio <= report.worst_ratio) {
            report.worst_ratio = ratio;
            report.worst = Some(m);
        }
    }
    Ok(report)
}
