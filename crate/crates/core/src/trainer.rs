//! Training loop, diagnostics and black-hole (trivial-solution) detection.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{loss_gradient, norm_and_variance, ParameterStore, Tape};
use crate::error::{Error, Result};
use crate::network::{build_model, save_checkpoint, Model, ModelConfig, ParamCounts};
use crate::physics::{Case, CollocationGrid, LossBreakdown, LossConfig, MaterialMap, PhysMode, PinnLoss};
use crate::quantum::{self, AngleSource};
use crate::reference::{l2_error, run_reference, FdtdConfig, FieldHistory};

const STREAM_QUANTUM_INIT: u64 = 3;
const STREAM_PROBE: u64 = 4;
const PROBE_SEED: u64 = 0x5eed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// i.i.d. uniform on `[0, 2 pi]`.
    Reg,
    Zeros,
    Pi,
    PiHalf,
}

impl InitStrategy {
    pub const ALL: [InitStrategy; 4] = [InitStrategy::Reg, InitStrategy::Zeros, InitStrategy::Pi, InitStrategy::PiHalf];

    pub fn as_str(self) -> &'static str {
        match self {
            InitStrategy::Reg => "reg",
            InitStrategy::Zeros => "zeros",
            InitStrategy::Pi => "pi",
            InitStrategy::PiHalf => "pi_half",
        }
    }
}

impl fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownName { kind: "init strategy", value: s.to_string() })
    }
}

pub fn init_quantum_params(strategy: InitStrategy, count: usize, seed: u64) -> Vec<f64> {
    match strategy {
        InitStrategy::Reg => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(STREAM_QUANTUM_INIT);
            (0..count).map(|_| rng.random_range(0.0..=2.0 * PI)).collect()
        }
        InitStrategy::Zeros => vec![0.0; count],
        InitStrategy::Pi => vec![PI; count],
        InitStrategy::PiHalf => vec![PI / 2.0; count],
    }
}

/// Step decay `lr0 * decay^floor(epoch / every)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr0: f64,
    pub decay: f64,
    pub every: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { lr0: 1e-3, decay: 0.85, every: 2000 }
    }
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        self.lr0 * self.decay.powi((epoch / self.every) as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, schedule: LrSchedule) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, schedule, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    /// One bias-corrected update with the learning rate of `epoch`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], epoch: usize) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::InvalidBatch(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient component {i} at epoch {epoch}")));
        }
        self.t += 1;
        let lr = self.schedule.at(epoch);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `I_BH` with its unclamped value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BhIndex {
    pub value: f64,
    pub raw: f64,
}

/// `1 - min_{t_k >= delta} U(t_k) / U(0)`; `times[0]` must be 0.
pub fn bh_index(times: &[f64], energy: &[f64], delta: f64) -> Result<BhIndex> {
    if times.len() != energy.len() || times.is_empty() {
        return Err(Error::InvalidBatch("energy history and times differ in length".into()));
    }
    let u0 = energy[0];
    if !(u0 > 0.0) {
        return Err(Error::UndefinedMetric(format!("initial energy {u0} is not positive")));
    }
    let min = times
        .iter()
        .zip(energy)
        .filter(|(&t, _)| t >= delta)
        .map(|(_, &u)| u / u0)
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::UndefinedMetric(format!("no energy samples at t >= {delta}")));
    }
    let raw = 1.0 - min;
    Ok(BhIndex { value: raw.clamp(0.0, 1.0), raw })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollapseThresholds {
    pub i_bh: f64,
    /// Upper bound on the final physics loss; `None` skips the loss condition.
    pub phys_max: Option<f64>,
}

impl Default for CollapseThresholds {
    fn default() -> Self {
        Self { i_bh: 0.9, phys_max: None }
    }
}

impl CollapseThresholds {
    /// Ten times the median physics loss of the converged arm.
    pub fn from_converged(i_bh: f64, converged_phys: &[f64]) -> Self {
        Self { i_bh, phys_max: median(converged_phys).map(|m| 10.0 * m) }
    }
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BHReport {
    pub i_bh: f64,
    pub i_bh_raw: f64,
    pub collapsed: bool,
    /// Set by [`ensemble_verdict`]; undefined for a single run.
    pub ensemble_bh: Option<bool>,
}

pub fn detect_collapse(log: &RunLog, thresholds: &CollapseThresholds) -> BHReport {
    let f = &log.final_eval;
    let (i_bh, raw) = f.i_bh.map_or((f64::NAN, f64::NAN), |b| (b.value, b.raw));
    let loss_ok = thresholds.phys_max.is_none_or(|m| f.loss.phys <= m);
    BHReport { i_bh, i_bh_raw: raw, collapsed: i_bh >= thresholds.i_bh && loss_ok, ensemble_bh: None }
}

/// Fraction collapsed and whether it exceeds 95%; `None` below two seeds.
pub fn ensemble_verdict(reports: &[BHReport]) -> Option<(f64, bool)> {
    if reports.len() < 2 {
        return None;
    }
    let frac = reports.iter().filter(|r| r.collapsed).count() as f64 / reports.len() as f64;
    Some((frac, frac > 0.95))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { nx: 24, ny: 24, nt: 24 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Epoch cadence of `I_BH` and L2 evaluation (the last epoch is always evaluated).
    pub every: usize,
    pub energy_nx: usize,
    pub energy_nt: usize,
    pub mw_probe_points: usize,
    pub l2_enabled: bool,
    pub reference_n: usize,
    pub reference_snapshots: usize,
    pub l2_stride_space: usize,
    pub l2_stride_time: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            every: 250,
            energy_nx: 64,
            energy_nt: 32,
            mw_probe_points: 16,
            l2_enabled: true,
            reference_n: 256,
            reference_snapshots: 100,
            l2_stride_space: 4,
            l2_stride_time: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub case: Case,
    pub model: ModelConfig,
    pub energy_loss_enabled: bool,
    /// Defaults to the case's mode.
    pub phys_loss_mode: Option<PhysMode>,
    pub kappa: f64,
    pub epochs: usize,
    pub lr: LrSchedule,
    /// Seeds the weights, the Fourier projection and the quantum init.
    pub seed: u64,
    pub init_strategy: InitStrategy,
    pub grid: GridConfig,
    /// Defaults to the case's time horizon.
    pub t_end: Option<f64>,
    pub eps_r: f64,
    pub slab_x0: f64,
    pub eval: EvalConfig,
    pub collapse: CollapseThresholds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            case: Case::Vacuum,
            model: ModelConfig::default(),
            energy_loss_enabled: true,
            phys_loss_mode: None,
            kappa: 1.0,
            epochs: 3000,
            lr: LrSchedule::default(),
            seed: 0,
            init_strategy: InitStrategy::Reg,
            grid: GridConfig::default(),
            t_end: None,
            eps_r: 4.0,
            slab_x0: 0.3,
            eval: EvalConfig::default(),
            collapse: CollapseThresholds::default(),
        }
    }
}

impl TrainConfig {
    pub fn t_end(&self) -> f64 {
        self.t_end.unwrap_or_else(|| self.case.default_t_end())
    }

    pub fn material(&self) -> MaterialMap {
        MaterialMap { case: self.case, eps_r: self.eps_r, slab_x0: self.slab_x0 }
    }

    /// Model configuration with the run seed and time domain applied.
    pub fn resolved_model(&self) -> ModelConfig {
        ModelConfig { seed: self.seed, t_domain: self.t_end(), ..self.model.clone() }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            case: self.case,
            mode: self.phys_loss_mode.unwrap_or_else(|| self.case.default_phys_mode()),
            energy_enabled: self.energy_loss_enabled,
            kappa: self.kappa,
            material: self.material(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        let lr = &self.lr;
        if !(lr.lr0 > 0.0) || !(lr.decay > 0.0) || lr.every == 0 {
            return Err(Error::Config(format!("invalid learning-rate schedule {lr:?}")));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::Config(format!("kappa must be non-negative, got {}", self.kappa)));
        }
        let e = &self.eval;
        if e.every == 0 || e.energy_nx < 2 || e.energy_nt < 2 || e.l2_stride_space == 0 || e.l2_stride_time == 0 {
            return Err(Error::Config("invalid evaluation settings".into()));
        }
        self.resolved_model().validate()
    }
}

/// One row per epoch, measured before that epoch's update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
    pub grad_norm_all: f64,
    pub grad_var_all: f64,
    pub grad_norm_q: Option<f64>,
    pub grad_var_q: Option<f64>,
    pub mw_q: Option<f64>,
    pub i_bh: Option<f64>,
    pub l2_err: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub epoch: usize,
    pub times: Vec<f64>,
    /// `U(t_k) / U(0)`.
    pub normalized: Vec<f64>,
    pub i_bh: Option<BhIndex>,
}

/// State after the last update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalEval {
    pub loss: LossBreakdown,
    pub i_bh: Option<BhIndex>,
    pub l2_err: Option<f64>,
    pub mw_q: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub config: TrainConfig,
    pub counts: ParamCounts,
    pub rows: Vec<EpochRow>,
    pub energy: Vec<EnergyTrace>,
    pub final_eval: FinalEval,
    pub wall_time_s: f64,
    #[serde(skip)]
    pub params: Option<ParameterStore>,
}

/// Energy-probe grid: periodic `n x n` nodes and `nt` uniform times on `[0, T]`.
#[derive(Clone, Debug)]
pub struct EnergyProbe {
    pub nx: usize,
    pub times: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    t: Vec<f64>,
    eps: Vec<f64>,
}

impl EnergyProbe {
    pub fn new(nx: usize, nt: usize, t_end: f64, material: &MaterialMap) -> Self {
        let nodes: Vec<f64> = (0..nx).map(|i| -1.0 + 2.0 * i as f64 / nx as f64).collect();
        let times: Vec<f64> = (0..nt).map(|k| t_end * k as f64 / (nt - 1) as f64).collect();
        let (mut x, mut y, mut t) = (Vec::new(), Vec::new(), Vec::new());
        for &tv in &times {
            for &xv in &nodes {
                for &yv in &nodes {
                    x.push(xv);
                    y.push(yv);
                    t.push(tv);
                }
            }
        }
        let eps = (0..nx * nx).map(|k| material.epsilon_at(nodes[k / nx], nodes[k % nx])).collect();
        Self { nx, times, x, y, t, eps }
    }

    /// `U(t_k)` of the model fields.
    pub fn energy(&self, model: &Model, params: &[f64]) -> Result<Vec<f64>> {
        let out = model.eval(params, &self.x, &self.y, &self.t)?;
        let per = self.nx * self.nx;
        let area = (2.0 / self.nx as f64).powi(2);
        Ok((0..self.times.len())
            .map(|k| {
                let mut acc = 0.0;
                for p in 0..per {
                    let r = out.row(k * per + p);
                    acc += self.eps[p] * r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
                }
                0.5 * acc * area
            })
            .collect())
    }

    /// Normalized trace and `I_BH` with `delta` the first positive probe time.
    pub fn trace(&self, model: &Model, params: &[f64], epoch: usize) -> Result<EnergyTrace> {
        let u = self.energy(model, params)?;
        let i_bh = bh_index(&self.times, &u, self.times[1]).ok();
        let normalized = u.iter().map(|v| v / u[0]).collect();
        Ok(EnergyTrace { epoch, times: self.times.clone(), normalized, i_bh })
    }
}

/// Sub-sampled reference `E_z` and its coordinates.
#[derive(Clone, Debug)]
pub struct L2Evaluator {
    x: Vec<f64>,
    y: Vec<f64>,
    t: Vec<f64>,
    ez: Vec<f64>,
}

impl L2Evaluator {
    pub fn new(history: &FieldHistory, stride_space: usize, stride_time: usize) -> Self {
        let (mut x, mut y, mut t, mut ez) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for k in (0..history.n_times()).step_by(stride_time) {
            for i in (0..history.x.len()).step_by(stride_space) {
                for j in (0..history.y.len()).step_by(stride_space) {
                    x.push(history.x[i]);
                    y.push(history.y[j]);
                    t.push(history.times[k]);
                    ez.push(history.ez[[k, i, j]]);
                }
            }
        }
        Self { x, y, t, ez }
    }

    pub fn len(&self) -> usize {
        self.ez.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ez.is_empty()
    }

    pub fn error(&self, model: &Model, params: &[f64]) -> Result<f64> {
        let out = model.eval(params, &self.x, &self.y, &self.t)?;
        l2_error(&out.column(0).to_vec(), &self.ez)
    }
}

/// Fixed probe inputs for the entanglement diagnostic.
pub fn probe_points(n: usize, t_end: f64) -> [Vec<f64>; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    rng.set_stream(STREAM_PROBE);
    let mut pts = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for _ in 0..n {
        pts[0].push(rng.random_range(-1.0..1.0));
        pts[1].push(rng.random_range(-1.0..1.0));
        pts[2].push(rng.random_range(0.0..t_end));
    }
    pts
}

/// Mean Meyer-Wallach `Q` of the PQC state over the probe inputs; `None` for classical models.
pub fn probe_entanglement(model: &Model, params: &[f64], probe: &[Vec<f64>; 3]) -> Result<Option<f64>> {
    let Some(circuit) = &model.circuit else { return Ok(None) };
    let angles: Array2<f64> = model.eval_angles(params, &probe[0], &probe[1], &probe[2]).expect("hybrid");
    let qp = &params[model.n_classical()..model.n_classical() + model.n_quantum()];
    let src = AngleSource { params: qp, embedding: Some(angles.view()) };
    let state = quantum::run_circuit(circuit.n_qubits, angles.nrows(), &circuit.gates, &src)?;
    let q = quantum::meyer_wallach(&state);
    Ok(Some(q.iter().sum::<f64>() / q.len() as f64))
}

struct Evaluators {
    energy: EnergyProbe,
    l2: Option<L2Evaluator>,
    probe: [Vec<f64>; 3],
}

impl Evaluators {
    fn new(config: &TrainConfig) -> Result<Self> {
        let t_end = config.t_end();
        let e = &config.eval;
        let l2 = if e.l2_enabled {
            let fdtd = FdtdConfig {
                nx: e.reference_n,
                ny: e.reference_n,
                t_end,
                n_snapshots: e.reference_snapshots,
                eps_r: config.eps_r,
                slab_x0: config.slab_x0,
                ..FdtdConfig::new(config.case)
            };
            Some(L2Evaluator::new(&run_reference(&fdtd)?, e.l2_stride_space, e.l2_stride_time))
        } else {
            None
        };
        Ok(Self {
            energy: EnergyProbe::new(e.energy_nx, e.energy_nt, t_end, &config.material()),
            l2,
            probe: probe_points(e.mw_probe_points, t_end),
        })
    }
}

/// Loss breakdown and gradient at `params`.
pub fn loss_and_gradient(model: &Model, loss: &PinnLoss, params: &[f64]) -> Result<(LossBreakdown, Vec<f64>)> {
    let mut tape = Tape::new(params);
    let (node, breakdown) = loss.build(&mut tape, model, None)?;
    if !breakdown.total.is_finite() {
        return Err(Error::NonFinite(format!("loss {breakdown:?}")));
    }
    Ok((breakdown, loss_gradient(&tape, node)?.grad))
}

fn loss_only(model: &Model, loss: &PinnLoss, params: &[f64]) -> Result<LossBreakdown> {
    let mut tape = Tape::new(params);
    Ok(loss.build(&mut tape, model, None)?.1)
}

/// Initial parameters: network init from the seed, quantum angles from the strategy.
pub fn initial_params(model: &Model, config: &TrainConfig) -> ParameterStore {
    let mut store = model.init_params(config.seed);
    let q = init_quantum_params(config.init_strategy, model.n_quantum(), config.seed);
    store.quantum_mut().copy_from_slice(&q);
    store
}

/// Train to completion. With `checkpoint_dir`, writes `final.ckpt` or, on a
/// non-finite loss or gradient, `last_good.ckpt` before returning the error.
pub fn train(config: &TrainConfig, checkpoint_dir: Option<&Path>) -> Result<RunLog> {
    config.validate()?;
    let started = Instant::now();
    let model = build_model(&config.resolved_model())?;
    let grid = CollocationGrid::new(config.grid.nx, config.grid.ny, config.grid.nt, config.t_end())?;
    let loss = PinnLoss::new(grid, config.loss_config())?;
    let evals = Evaluators::new(config)?;
    let mut params = initial_params(&model, config);
    let mut adam = Adam::new(params.len(), config.lr);
    let q_range = params.quantum_range();
    let mut rows = Vec::with_capacity(config.epochs);
    let mut energy = Vec::new();
    if let Some(dir) = checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    let abort = |params: &ParameterStore, epoch: usize, err: Error| -> Error {
        if let Some(dir) = checkpoint_dir {
            if let Err(e) = save_checkpoint(&dir.join("last_good.ckpt"), &model, params, epoch) {
                return Error::NonFinite(format!("{err}; writing last-good checkpoint failed: {e}"));
            }
        }
        err
    };

    for epoch in 0..config.epochs {
        let (breakdown, grad) = match loss_and_gradient(&model, &loss, params.as_slice()) {
            Ok(v) => v,
            Err(e @ Error::NonFinite(_)) => return Err(abort(&params, epoch, e)),
            Err(e) => return Err(e),
        };
        let (gn, gv) = norm_and_variance(&grad);
        let (gnq, gvq) = if model.is_hybrid() {
            let (n, v) = norm_and_variance(&grad[q_range.clone()]);
            (Some(n), Some(v))
        } else {
            (None, None)
        };
        let mw_q = probe_entanglement(&model, params.as_slice(), &evals.probe)?;
        let due = epoch % config.eval.every == 0 || epoch + 1 == config.epochs;
        let (i_bh, l2_err) = if due {
            let trace = evals.energy.trace(&model, params.as_slice(), epoch)?;
            let i = trace.i_bh.map(|b| b.value);
            energy.push(trace);
            let l2 = evals.l2.as_ref().map(|l| l.error(&model, params.as_slice())).transpose()?;
            (i, l2)
        } else {
            (None, None)
        };
        rows.push(EpochRow {
            epoch,
            lr: config.lr.at(epoch),
            loss: breakdown,
            grad_norm_all: gn,
            grad_var_all: gv,
            grad_norm_q: gnq,
            grad_var_q: gvq,
            mw_q,
            i_bh,
            l2_err,
        });
        let good = params.clone();
        if let Err(e) = adam.step(params.as_mut_slice(), &grad, epoch) {
            return Err(abort(&good, epoch, e));
        }
        if let Some(i) = params.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(abort(&good, epoch, Error::NonFinite(format!("parameter {i} after epoch {epoch}"))));
        }
    }

    let p = params.as_slice();
    let final_loss = match loss_only(&model, &loss, p) {
        Ok(l) if l.total.is_finite() => l,
        Ok(l) => return Err(abort(&params, config.epochs, Error::NonFinite(format!("final loss {l:?}")))),
        Err(e) => return Err(abort(&params, config.epochs, e)),
    };
    let trace = evals.energy.trace(&model, p, config.epochs)?;
    let final_eval = FinalEval {
        loss: final_loss,
        i_bh: trace.i_bh,
        l2_err: evals.l2.as_ref().map(|l| l.error(&model, p)).transpose()?,
        mw_q: probe_entanglement(&model, p, &evals.probe)?,
    };
    energy.push(trace);
    if let Some(dir) = checkpoint_dir {
        save_checkpoint(&dir.join("final.ckpt"), &model, &params, config.epochs)?;
    }
    Ok(RunLog {
        config: config.clone(),
        counts: model.counts(),
        rows,
        energy,
        final_eval,
        wall_time_s: started.elapsed().as_secs_f64(),
        params: Some(params),
    })
}

/// Metrics CSV row.
#[derive(Serialize)]
struct CsvRow {
    epoch: usize,
    lr: f64,
    phys: f64,
    ic: f64,
    sym: f64,
    energy: f64,
    total: f64,
    grad_norm_all: f64,
    grad_var_all: f64,
    grad_norm_q: Option<f64>,
    grad_var_q: Option<f64>,
    mw_q: Option<f64>,
    i_bh: Option<f64>,
    l2_err: Option<f64>,
}

pub const METRICS_HEADER: &str = "epoch,lr,phys,ic,sym,energy,total,grad_norm_all,grad_var_all,grad_norm_q,grad_var_q,mw_q,i_bh,l2_err";

pub fn write_metrics_csv(path: &Path, rows: &[EpochRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(CsvRow {
            epoch: r.epoch,
            lr: r.lr,
            phys: r.loss.phys,
            ic: r.loss.ic,
            sym: r.loss.sym,
            energy: r.loss.energy,
            total: r.loss.total,
            grad_norm_all: r.grad_norm_all,
            grad_var_all: r.grad_var_all,
            grad_norm_q: r.grad_norm_q,
            grad_var_q: r.grad_var_q,
            mw_q: r.mw_q,
            i_bh: r.i_bh,
            l2_err: r.l2_err,
        })
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub case: Case,
    pub variant: String,
    pub ansatz: Option<String>,
    pub scale: Option<String>,
    pub energy_loss_enabled: bool,
    pub init_strategy: InitStrategy,
    pub seed: u64,
    pub epochs: usize,
    pub counts: ParamCounts,
    pub initial_total: f64,
    pub final_loss: LossBreakdown,
    pub final_l2: Option<f64>,
    pub final_i_bh: Option<f64>,
    pub final_i_bh_raw: Option<f64>,
    pub final_mw_q: Option<f64>,
    pub collapsed: bool,
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn from_log(log: &RunLog) -> Self {
        let c = &log.config;
        let report = detect_collapse(log, &c.collapse);
        let f = &log.final_eval;
        Self {
            case: c.case,
            variant: c.model.variant.as_str().to_string(),
            ansatz: c.model.ansatz.map(|a| a.as_str().to_string()),
            scale: c.model.scale.map(|s| s.as_str().to_string()),
            energy_loss_enabled: c.energy_loss_enabled,
            init_strategy: c.init_strategy,
            seed: c.seed,
            epochs: c.epochs,
            counts: log.counts,
            initial_total: log.rows.first().map_or(f64::NAN, |r| r.loss.total),
            final_loss: f.loss.clone(),
            final_l2: f.l2_err,
            final_i_bh: f.i_bh.map(|b| b.value),
            final_i_bh_raw: f.i_bh.map(|b| b.raw),
            final_mw_q: f.mw_q,
            collapsed: report.collapsed,
            wall_time_s: log.wall_time_s,
        }
    }
}

/// `metrics.csv`, `summary.json` and `energy.json` in `dir`.
pub fn write_run_artifacts(dir: &Path, log: &RunLog) -> Result<RunSummary> {
    fs::create_dir_all(dir)?;
    write_metrics_csv(&dir.join("metrics.csv"), &log.rows)?;
    let summary = RunSummary::from_log(log);
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    fs::write(dir.join("energy.json"), serde_json::to_string(&log.energy)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_examples() {
        let s = LrSchedule::default();
        assert_eq!(s.at(0), 0.001);
        assert_eq!(s.at(1999), 0.001);
        assert!((s.at(2000) - 0.00085).abs() < 1e-18);
        assert!((s.at(4000) - 0.0007225).abs() < 1e-18);
    }

    #[test]
    fn init_strategies() {
        assert!(init_quantum_params(InitStrategy::Zeros, 84, 1).iter().all(|&v| v == 0.0));
        assert!(init_quantum_params(InitStrategy::Pi, 84, 1).iter().all(|&v| v == PI));
        assert!(init_quantum_params(InitStrategy::PiHalf, 84, 1).iter().all(|&v| v == PI / 2.0));
        let a = init_quantum_params(InitStrategy::Reg, 84, 9);
        assert_eq!(a, init_quantum_params(InitStrategy::Reg, 84, 9));
        assert_ne!(a, init_quantum_params(InitStrategy::Reg, 84, 10));
        assert!(a.iter().all(|&v| (0.0..=2.0 * PI).contains(&v)));
        assert!(matches!("ones".parse::<InitStrategy>(), Err(Error::UnknownName { .. })));
        assert_eq!("pi_half".parse::<InitStrategy>().unwrap(), InitStrategy::PiHalf);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut adam = Adam::new(3, LrSchedule::default());
        let mut p = vec![1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.0; 3], 0).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut adam = Adam::new(1, LrSchedule::default());
        let mut p = vec![1.0];
        assert!(matches!(adam.step(&mut p, &[f64::NAN], 0), Err(Error::NonFinite(_))));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut adam = Adam::new(1, LrSchedule { lr0: 0.1, ..LrSchedule::default() });
        let mut p = vec![3.0];
        for epoch in 0..500 {
            let g = [2.0 * (p[0] - 1.25)];
            adam.step(&mut p, &g, epoch).unwrap();
        }
        assert!((p[0] - 1.25).abs() < 1e-2, "{}", p[0]);
    }

    #[test]
    fn bh_index_examples() {
        let t = [0.0, 0.5, 1.0, 1.5];
        assert_eq!(bh_index(&t, &[2.0; 4], 0.5).unwrap().value, 0.0);
        assert_eq!(bh_index(&t, &[2.0, 0.0, 0.0, 0.0], 0.5).unwrap().value, 1.0);
        let b = bh_index(&t, &[1.0, 0.8, 0.35, 0.5], 0.5).unwrap();
        assert!((b.value - 0.65).abs() < 1e-15);
        let grow = bh_index(&t, &[1.0, 1.2, 1.5, 1.3], 0.5).unwrap();
        assert_eq!(grow.value, 0.0);
        assert!((grow.raw + 0.2).abs() < 1e-15);
        assert!(matches!(bh_index(&t, &[0.0; 4], 0.5), Err(Error::UndefinedMetric(_))));
    }

    fn log_with(i_bh: f64, phys: f64) -> RunLog {
        RunLog {
            config: TrainConfig::default(),
            counts: ParamCounts { dense: 0, classical: 1, quantum: 0, period: 1, total: 1 },
            rows: Vec::new(),
            energy: Vec::new(),
            final_eval: FinalEval {
                loss: LossBreakdown { phys, ..LossBreakdown::default() },
                i_bh: Some(BhIndex { value: i_bh, raw: i_bh }),
                l2_err: None,
                mw_q: None,
            },
            wall_time_s: 0.0,
            params: None,
        }
    }

    #[test]
    fn collapse_examples() {
        let th = CollapseThresholds::from_converged(0.9, &[1e-3, 2e-3, 3e-3]);
        assert!((th.phys_max.unwrap() - 0.02).abs() < 1e-15);
        assert!(detect_collapse(&log_with(0.99, 1e-6), &th).collapsed);
        assert!(!detect_collapse(&log_with(0.1, 1e-6), &th).collapsed);
        assert!(!detect_collapse(&log_with(0.99, 1.0), &th).collapsed);
        let all: Vec<_> = (0..5).map(|_| detect_collapse(&log_with(0.99, 1e-6), &th)).collect();
        assert_eq!(ensemble_verdict(&all), Some((1.0, true)));
        assert_eq!(ensemble_verdict(&all[..1]), None);
        let mut mixed = all.clone();
        mixed[0].collapsed = false;
        assert_eq!(ensemble_verdict(&mixed), Some((0.8, false)));
    }
}
