//! TEz Maxwell residuals and the PINN loss terms.
//!
//! With `eps_0 = mu_0 = 1` and `mu = 1`:
//!
//! ```text
//! res1 = dE/dt - (1/eps) (dHy/dx - dHx/dy)
//! res2 = dHx/dt + dE/dy
//! res3 = dHy/dt - dE/dx
//! ```
//!
//! The loss is `L = phys + 10 ic + 10 sym + 10 energy`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::network::Model;

/// Number of causal time bins.
pub const TIME_BINS: usize = 5;
/// Weight of the IC, symmetry and energy terms in the total loss.
pub const PENALTY_WEIGHT: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Case {
    Vacuum,
    Dielectric,
    Asymmetric,
}

impl Case {
    pub const ALL: [Case; 3] = [Case::Vacuum, Case::Dielectric, Case::Asymmetric];

    pub fn as_str(self) -> &'static str {
        match self {
            Case::Vacuum => "vacuum",
            Case::Dielectric => "dielectric",
            Case::Asymmetric => "asymmetric",
        }
    }

    pub fn default_t_end(self) -> f64 {
        match self {
            Case::Dielectric => 0.7,
            Case::Vacuum | Case::Asymmetric => 1.5,
        }
    }

    pub fn default_phys_mode(self) -> PhysMode {
        match self {
            Case::Dielectric => PhysMode::DielBalanced,
            Case::Vacuum | Case::Asymmetric => PhysMode::Vac,
        }
    }

    /// Initial `E_z`; the magnetic field starts at zero.
    pub fn initial_ez(self, x: f64, y: f64) -> f64 {
        match self {
            Case::Vacuum | Case::Dielectric => (-25.0 * (x * x + y * y)).exp(),
            Case::Asymmetric => {
                let (u, v) = ((x - 0.4) / 0.85, (y - 0.3) / 0.65);
                (-25.0 * (u * u + v * v)).exp()
            }
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownName { kind: "case", value: s.to_string() })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhysMode {
    /// `MSE(res1) + MSE(res2) + MSE(res3)`
    Vac,
    /// `res1` split into vacuum and dielectric points, each averaged separately.
    DielBalanced,
    /// Pooled `res1` with pointwise permittivity.
    Intuitive,
}

impl PhysMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PhysMode::Vac => "vac",
            PhysMode::DielBalanced => "diel_balanced",
            PhysMode::Intuitive => "intuitive",
        }
    }
}

impl FromStr for PhysMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [PhysMode::Vac, PhysMode::DielBalanced, PhysMode::Intuitive]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownName { kind: "phys mode", value: s.to_string() })
    }
}

/// Permittivity layout: vacuum everywhere except a slab `x >= slab_x0` in the dielectric case.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialMap {
    pub case: Case,
    pub eps_r: f64,
    pub slab_x0: f64,
}

impl MaterialMap {
    pub fn new(case: Case) -> Self {
        Self { case, eps_r: 4.0, slab_x0: 0.3 }
    }

    pub fn is_dielectric(&self, x: f64, _y: f64) -> bool {
        self.case == Case::Dielectric && x >= self.slab_x0
    }

    pub fn epsilon_at(&self, x: f64, y: f64) -> f64 {
        if self.is_dielectric(x, y) {
            self.eps_r
        } else {
            1.0
        }
    }
}

/// Mirror-symmetric uniform points on `[-1, 1]`, endpoints included.
fn symmetric_linspace(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let h = 2.0 / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| -1.0 + i as f64 * h).collect();
    for i in 0..n / 2 {
        v[n - 1 - i] = -v[i];
    }
    if n % 2 == 1 {
        v[n / 2] = 0.0;
    }
    v
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Tensor-product collocation points ordered `[t][x][y]`.
///
/// The spatial axes are symmetric about 0, so the mirrored point of every
/// sample is itself a sample and mirrors are index permutations.
#[derive(Clone, Debug)]
pub struct CollocationGrid {
    pub nx: usize,
    pub ny: usize,
    pub nt: usize,
    pub t_end: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub t: Vec<f64>,
    pub mirror_x: Arc<Vec<usize>>,
    pub mirror_y: Arc<Vec<usize>>,
    /// Rows of the `t = 0` slice.
    pub ic_rows: Arc<Vec<usize>>,
    /// Time bin of each point.
    pub bin: Vec<usize>,
}

impl CollocationGrid {
    pub fn new(nx: usize, ny: usize, nt: usize, t_end: f64) -> Result<Self> {
        if nx < 2 || ny < 2 || nt < 1 {
            return Err(Error::Config(format!("collocation grid {nx}x{ny}x{nt} too small")));
        }
        if !(t_end > 0.0) {
            return Err(Error::Config(format!("t_end must be positive, got {t_end}")));
        }
        let (xs, ys, ts) = (symmetric_linspace(nx), symmetric_linspace(ny), linspace(0.0, t_end, nt));
        let n = nx * ny * nt;
        let idx = |it: usize, ix: usize, iy: usize| (it * nx + ix) * ny + iy;
        let (mut x, mut y, mut t) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let (mut mx, mut my, mut bin) = (vec![0; n], vec![0; n], vec![0; n]);
        for (it, &tv) in ts.iter().enumerate() {
            for (ix, &xv) in xs.iter().enumerate() {
                for (iy, &yv) in ys.iter().enumerate() {
                    let k = idx(it, ix, iy);
                    x.push(xv);
                    y.push(yv);
                    t.push(tv);
                    mx[k] = idx(it, nx - 1 - ix, iy);
                    my[k] = idx(it, ix, ny - 1 - iy);
                    bin[k] = it * TIME_BINS / nt;
                }
            }
        }
        Ok(Self {
            nx,
            ny,
            nt,
            t_end,
            x,
            y,
            t,
            mirror_x: Arc::new(mx),
            mirror_y: Arc::new(my),
            ic_rows: Arc::new((0..nx * ny).collect()),
            bin,
        })
    }

    pub fn cube(n: usize, t_end: f64) -> Result<Self> {
        Self::new(n, n, n, t_end)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Field values per point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldBatch {
    pub ez: Vec<f64>,
    pub hx: Vec<f64>,
    pub hy: Vec<f64>,
}

/// First derivatives per field, indexed by axis (x, y, t).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldDerivs {
    pub ez: [Vec<f64>; 3],
    pub hx: [Vec<f64>; 3],
    pub hy: [Vec<f64>; 3],
}

impl FieldBatch {
    pub fn len(&self) -> usize {
        self.ez.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ez.is_empty()
    }

    pub fn from_array(a: ndarray::ArrayView2<'_, f64>) -> Self {
        Self { ez: a.column(0).to_vec(), hx: a.column(1).to_vec(), hy: a.column(2).to_vec() }
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.ez.len() != n || self.hx.len() != n || self.hy.len() != n {
            return Err(Error::InvalidBatch(format!("field arrays must all have length {n}")));
        }
        Ok(())
    }
}

impl FieldDerivs {
    fn check(&self, n: usize) -> Result<()> {
        if self.ez.iter().chain(&self.hx).chain(&self.hy).any(|v| v.len() != n) {
            return Err(Error::InvalidBatch(format!("derivative arrays must all have length {n}")));
        }
        Ok(())
    }
}

pub fn pde_residuals(f: &FieldBatch, d: &FieldDerivs, eps: &[f64]) -> Result<[Vec<f64>; 3]> {
    let n = eps.len();
    f.check(n)?;
    d.check(n)?;
    let res1 = (0..n).map(|i| d.ez[2][i] - (d.hy[0][i] - d.hx[1][i]) / eps[i]).collect();
    let res2 = (0..n).map(|i| d.hx[2][i] + d.ez[1][i]).collect();
    let res3 = (0..n).map(|i| d.hy[2][i] - d.ez[0][i]).collect();
    Ok([res1, res2, res3])
}

/// Pointwise Poynting residual `d_t u + div S`.
pub fn energy_residual(f: &FieldBatch, d: &FieldDerivs, eps: &[f64]) -> Result<Vec<f64>> {
    let n = eps.len();
    f.check(n)?;
    d.check(n)?;
    Ok((0..n)
        .map(|i| {
            let (e, hx, hy) = (f.ez[i], f.hx[i], f.hy[i]);
            (eps[i] * e * d.ez[2][i] + hx * d.hx[2][i] + hy * d.hy[2][i]) - (d.ez[0][i] * hy + e * d.hy[0][i])
                + (d.ez[1][i] * hx + e * d.hx[1][i])
        })
        .collect())
}

fn weighted_mse(r: &[f64], members: impl Fn(usize) -> bool, w: &dyn Fn(usize) -> f64) -> (f64, usize) {
    let mut acc = 0.0;
    let mut count = 0;
    for (i, v) in r.iter().enumerate() {
        if members(i) {
            acc += w(i) * v * v;
            count += 1;
        }
    }
    if count == 0 {
        (0.0, 0)
    } else {
        (acc / count as f64, count)
    }
}

/// Physics loss from residuals. `dielectric[i]` marks the points with `eps != 1`;
/// `weights` optionally scales each point's squared residual (time-bin weighting).
pub fn physics_loss(res: &[Vec<f64>; 3], dielectric: &[bool], mode: PhysMode, weights: Option<&[f64]>) -> Result<f64> {
    let n = dielectric.len();
    if res.iter().any(|r| r.len() != n) || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::InvalidBatch("residual, weight and material arrays differ in length".into()));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let all = |_: usize| true;
    let tail = weighted_mse(&res[1], all, &w).0 + weighted_mse(&res[2], all, &w).0;
    let first = match mode {
        PhysMode::Vac | PhysMode::Intuitive => weighted_mse(&res[0], all, &w).0,
        PhysMode::DielBalanced => {
            let (d, nd) = weighted_mse(&res[0], |i| dielectric[i], &w);
            if nd == 0 {
                return Err(Error::Config("balanced dielectric loss needs dielectric collocation points".into()));
            }
            weighted_mse(&res[0], |i| !dielectric[i], &w).0 + d
        }
    };
    Ok(first + tail)
}

/// Mean over points of `(E - E0)^2 + Hx^2 + Hy^2` on the `t = 0` slice.
pub fn ic_loss(f: &FieldBatch, x: &[f64], y: &[f64], case: Case) -> Result<f64> {
    f.check(x.len())?;
    if y.len() != x.len() || x.is_empty() {
        return Err(Error::InvalidBatch("IC coordinates".into()));
    }
    let s: f64 = (0..x.len())
        .map(|i| {
            let de = f.ez[i] - case.initial_ez(x[i], y[i]);
            de * de + f.hx[i] * f.hx[i] + f.hy[i] * f.hy[i]
        })
        .sum();
    Ok(s / x.len() as f64)
}

/// Parity signs `(E, Hx, Hy)` under `x -> -x` and under `y -> -y`.
const MIRROR_X_SIGNS: [f64; 3] = [1.0, 1.0, -1.0];
const MIRROR_Y_SIGNS: [f64; 3] = [1.0, -1.0, 1.0];

fn uses_mirror(case: Case) -> (bool, bool) {
    match case {
        Case::Vacuum => (true, true),
        Case::Dielectric => (false, true),
        Case::Asymmetric => (false, false),
    }
}

/// Mean over points of the squared parity violations. Mirrors are given as
/// index permutations of the batch.
pub fn symmetry_loss(f: &FieldBatch, mirror_x: &[usize], mirror_y: &[usize], case: Case) -> Result<f64> {
    let n = f.len();
    f.check(n)?;
    if mirror_x.len() != n || mirror_y.len() != n {
        return Err(Error::InvalidBatch("mirror permutations".into()));
    }
    let (ux, uy) = uses_mirror(case);
    let fields = [&f.ez, &f.hx, &f.hy];
    let mut acc = 0.0;
    for (used, perm, signs) in [(ux, mirror_x, MIRROR_X_SIGNS), (uy, mirror_y, MIRROR_Y_SIGNS)] {
        if !used {
            continue;
        }
        for (field, s) in fields.iter().zip(signs) {
            for i in 0..n {
                let d = field[i] - s * field[perm[i]];
                acc += d * d;
            }
        }
    }
    Ok(acc / n as f64)
}

/// Causal gating: `w_1 = 1`, `w_m = min(1, exp(-kappa * sum_{j<m} L_j))`.
pub fn time_bin_weights(bin_losses: &[f64; TIME_BINS], kappa: f64) -> [f64; TIME_BINS] {
    let mut w = [1.0; TIME_BINS];
    let mut acc = 0.0;
    for m in 1..TIME_BINS {
        acc += bin_losses[m - 1];
        w[m] = (-kappa * acc).exp().min(1.0);
    }
    w
}

pub fn total_loss(phys: f64, ic: f64, sym: f64, energy: Option<f64>) -> f64 {
    phys + PENALTY_WEIGHT * (ic + sym + energy.unwrap_or(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub case: Case,
    pub mode: PhysMode,
    pub energy_enabled: bool,
    pub kappa: f64,
    pub material: MaterialMap,
}

impl LossConfig {
    pub fn new(case: Case) -> Self {
        Self { case, mode: case.default_phys_mode(), energy_enabled: true, kappa: 1.0, material: MaterialMap::new(case) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Time-weighted physics loss (the value entering `total`).
    pub phys: f64,
    pub ic: f64,
    pub sym: f64,
    /// Reported even when the energy term is disabled.
    pub energy: f64,
    pub total: f64,
    /// Unweighted physics loss restricted to each time bin.
    pub bins: [f64; TIME_BINS],
    pub weights: [f64; TIME_BINS],
}

/// Loss assembly over a fixed collocation grid.
pub struct PinnLoss {
    pub grid: CollocationGrid,
    pub config: LossConfig,
    eps: Vec<f64>,
    dielectric: Vec<bool>,
    inv_eps: Option<Arc<Array2<f64>>>,
    eps_col: Option<Arc<Array2<f64>>>,
    ic_target: Array2<f64>,
}

impl PinnLoss {
    pub fn new(grid: CollocationGrid, config: LossConfig) -> Result<Self> {
        let m = config.material;
        if m.case != config.case {
            return Err(Error::Config("material map case differs from loss case".into()));
        }
        if !(m.eps_r > 0.0) {
            return Err(Error::Config(format!("eps_r must be positive, got {}", m.eps_r)));
        }
        let eps: Vec<f64> = grid.x.iter().zip(&grid.y).map(|(&x, &y)| m.epsilon_at(x, y)).collect();
        let dielectric: Vec<bool> = grid.x.iter().zip(&grid.y).map(|(&x, &y)| m.is_dielectric(x, y)).collect();
        if config.mode == PhysMode::DielBalanced && !dielectric.iter().any(|&d| d) {
            return Err(Error::Config("balanced dielectric loss needs dielectric collocation points".into()));
        }
        let uniform = eps.iter().all(|&e| e == 1.0);
        let col = |f: &dyn Fn(f64) -> f64| Some(Arc::new(Array2::from_shape_fn((eps.len(), 1), |(i, _)| f(eps[i]))));
        let (inv_eps, eps_col) = if uniform { (None, None) } else { (col(&|e| 1.0 / e), col(&|e| e)) };
        let ic_target = Array2::from_shape_fn((grid.ic_rows.len(), 3), |(k, c)| {
            let i = grid.ic_rows[k];
            if c == 0 {
                config.case.initial_ez(grid.x[i], grid.y[i])
            } else {
                0.0
            }
        });
        Ok(Self { grid, config, eps, dielectric, inv_eps, eps_col, ic_target })
    }

    pub fn eps(&self) -> &[f64] {
        &self.eps
    }

    pub fn dielectric(&self) -> &[bool] {
        &self.dielectric
    }

    fn bin_losses(&self, res: [&[f64]; 3]) -> [f64; TIME_BINS] {
        let mut out = [0.0; TIME_BINS];
        for (m, o) in out.iter_mut().enumerate() {
            let inbin = |i: usize| self.grid.bin[i] == m;
            let one: &dyn Fn(usize) -> f64 = &|_| 1.0;
            *o = weighted_mse(res[1], inbin, one).0 + weighted_mse(res[2], inbin, one).0;
            *o += match self.config.mode {
                PhysMode::Vac | PhysMode::Intuitive => weighted_mse(res[0], inbin, one).0,
                PhysMode::DielBalanced => {
                    weighted_mse(res[0], |i| inbin(i) && !self.dielectric[i], one).0
                        + weighted_mse(res[0], |i| inbin(i) && self.dielectric[i], one).0
                }
            };
        }
        out
    }

    fn mse_node(&self, tape: &mut Tape<'_>, r: Var, members: &dyn Fn(usize) -> bool, point_w: &[f64]) -> Option<Var> {
        let count = (0..self.grid.len()).filter(|&i| members(i)).count();
        if count == 0 {
            return None;
        }
        let w: Vec<f64> = (0..self.grid.len()).map(|i| if members(i) { point_w[i] } else { 0.0 }).collect();
        Some(tape.sum_squares(r, Some(Arc::new(w)), 1.0 / count as f64))
    }

    /// Build the full loss for `model` on the tape. `frozen_weights` fixes the
    /// time-bin weights; otherwise they follow from the current bin losses.
    pub fn build(&self, tape: &mut Tape<'_>, model: &Model, frozen_weights: Option<[f64; TIME_BINS]>) -> Result<(Var, LossBreakdown)> {
        let g = &self.grid;
        let z = model.forward_jet(tape, &g.x, &g.y, &g.t)?;
        self.build_from_output(tape, z, frozen_weights)
    }

    /// Loss from a precomputed `[N, 3]` output jet on the grid points.
    pub fn build_from_output(&self, tape: &mut Tape<'_>, z: Var, frozen_weights: Option<[f64; TIME_BINS]>) -> Result<(Var, LossBreakdown)> {
        let g = &self.grid;
        let n = g.len();
        let out = tape.get(z);
        if out.rows() != n || out.cols() != 3 || !out.is_jet() {
            return Err(Error::InvalidBatch(format!("expected a [{n}, 3] output jet")));
        }
        if out.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model output on collocation grid".into()));
        }
        let v = tape.component(z, 0);
        let dx = tape.tangent(z, 0);
        let dy = tape.tangent(z, 1);
        let dt = tape.tangent(z, 2);
        let [e, hx, hy] = [0, 1, 2].map(|c| tape.column(v, c));
        let [ex, _, hyx] = [0, 1, 2].map(|c| tape.column(dx, c));
        let [ey, hxy, _] = [0, 1, 2].map(|c| tape.column(dy, c));
        let [et, hxt, hyt] = [0, 1, 2].map(|c| tape.column(dt, c));

        let curl = tape.sub(hyx, hxy);
        let curl = match &self.inv_eps {
            Some(ie) => {
                let c = tape.constant(ie.as_ref().clone());
                tape.mul(curl, c)
            }
            None => curl,
        };
        let res1 = tape.sub(et, curl);
        let res2 = tape.add(hxt, ey);
        let res3 = tape.sub(hyt, ex);

        // Poynting residual from its own expansion
        let ee = match &self.eps_col {
            Some(ec) => {
                let c = tape.constant(ec.as_ref().clone());
                tape.mul(e, c)
            }
            None => e,
        };
        let t1 = tape.mul(ee, et);
        let t2 = tape.mul(hx, hxt);
        let t3 = tape.mul(hy, hyt);
        let t4 = tape.mul(ex, hy);
        let t5 = tape.mul(e, hyx);
        let t6 = tape.mul(ey, hx);
        let t7 = tape.mul(e, hxy);
        let du = tape.add(t1, t2);
        let du = tape.add(du, t3);
        let sx = tape.add(t4, t5);
        let sy = tape.add(t6, t7);
        let re = tape.sub(du, sx);
        let re = tape.add(re, sy);

        let col = |tape: &Tape<'_>, r: Var| tape.get(r).value().column(0).to_vec();
        let (r1, r2, r3) = (col(tape, res1), col(tape, res2), col(tape, res3));
        let bins = self.bin_losses([&r1, &r2, &r3]);
        let weights = frozen_weights.unwrap_or_else(|| time_bin_weights(&bins, self.config.kappa));
        let point_w: Vec<f64> = g.bin.iter().map(|&b| weights[b]).collect();

        let all = |_: usize| true;
        let mut terms = Vec::new();
        match self.config.mode {
            PhysMode::Vac | PhysMode::Intuitive => terms.extend(self.mse_node(tape, res1, &all, &point_w)),
            PhysMode::DielBalanced => {
                terms.extend(self.mse_node(tape, res1, &|i| !self.dielectric[i], &point_w));
                terms.extend(self.mse_node(tape, res1, &|i| self.dielectric[i], &point_w));
            }
        }
        terms.extend(self.mse_node(tape, res2, &all, &point_w));
        terms.extend(self.mse_node(tape, res3, &all, &point_w));
        let phys = sum_nodes(tape, &terms);

        let ic_vals = tape.gather(v, Arc::clone(&g.ic_rows));
        let target = tape.constant(self.ic_target.clone());
        let ic_diff = tape.sub(ic_vals, target);
        let ic = tape.sum_squares(ic_diff, None, 1.0 / g.ic_rows.len() as f64);

        let (ux, uy) = uses_mirror(self.config.case);
        let mut sym_terms = Vec::new();
        for (used, perm, signs) in [(ux, &g.mirror_x, MIRROR_X_SIGNS), (uy, &g.mirror_y, MIRROR_Y_SIGNS)] {
            if used {
                let m = tape.gather(v, Arc::clone(perm));
                let m = tape.const_matmul(m, Arc::new(Array2::from_diag(&ndarray::arr1(&signs))));
                let d = tape.sub(v, m);
                sym_terms.push(tape.sum_squares(d, None, 1.0 / n as f64));
            }
        }
        let sym = if sym_terms.is_empty() { None } else { Some(sum_nodes(tape, &sym_terms)) };
        let energy = tape.sum_squares(re, None, 1.0 / n as f64);

        let ic10 = tape.scale(ic, PENALTY_WEIGHT);
        let mut total = tape.add(phys, ic10);
        if let Some(s) = sym {
            let s10 = tape.scale(s, PENALTY_WEIGHT);
            total = tape.add(total, s10);
        }
        if self.config.energy_enabled {
            let e10 = tape.scale(energy, PENALTY_WEIGHT);
            total = tape.add(total, e10);
        }
        let val = |v: Var| tape.get(v).scalar().expect("scalar loss term");
        let breakdown = LossBreakdown {
            phys: val(phys),
            ic: val(ic),
            sym: sym.map_or(0.0, val),
            energy: val(energy),
            total: val(total),
            bins,
            weights,
        };
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite("total loss".into()));
        }
        Ok((total, breakdown))
    }
}

fn sum_nodes(tape: &mut Tape<'_>, terms: &[Var]) -> Var {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// `E = -Hy = cos(pi (x - t))`, `Hx = 0`: a wave travelling in +x.
    fn plane_wave(x: &[f64], t: &[f64]) -> (FieldBatch, FieldDerivs) {
        let n = x.len();
        let c: Vec<f64> = (0..n).map(|i| (PI * (x[i] - t[i])).cos()).collect();
        let s: Vec<f64> = (0..n).map(|i| -PI * (PI * (x[i] - t[i])).sin()).collect();
        let neg = |v: &[f64]| v.iter().map(|a| -a).collect::<Vec<f64>>();
        let z = vec![0.0; n];
        let f = FieldBatch { ez: c.clone(), hx: z.clone(), hy: neg(&c) };
        let d = FieldDerivs {
            ez: [s.clone(), z.clone(), neg(&s)],
            hx: [z.clone(), z.clone(), z.clone()],
            hy: [neg(&s), z, s],
        };
        (f, d)
    }

    #[test]
    fn plane_wave_has_zero_residuals() {
        let x: Vec<f64> = (0..50).map(|i| -1.0 + 0.04 * i as f64).collect();
        let t: Vec<f64> = (0..50).map(|i| 0.03 * i as f64).collect();
        let (f, d) = plane_wave(&x, &t);
        let eps = vec![1.0; 50];
        let res = pde_residuals(&f, &d, &eps).unwrap();
        assert!(res.iter().flatten().all(|v| v.abs() < 1e-12));
        assert!(energy_residual(&f, &d, &eps).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_fields_zero_residuals() {
        let n = 4;
        let f = FieldBatch { ez: vec![0.0; n], hx: vec![0.0; n], hy: vec![0.0; n] };
        let z = || [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let d = FieldDerivs { ez: z(), hx: z(), hy: z() };
        let res = pde_residuals(&f, &d, &[1.0; 4]).unwrap();
        assert!(res.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(physics_loss(&res, &[false; 4], PhysMode::Vac, None).unwrap(), 0.0);
    }

    #[test]
    fn constant_residuals_give_three_c_squared() {
        let c = 0.7;
        let res = [vec![c; 9], vec![c; 9], vec![c; 9]];
        let l = physics_loss(&res, &[false; 9], PhysMode::Vac, None).unwrap();
        assert!((l - 3.0 * c * c).abs() < 1e-15);
    }

    #[test]
    fn balanced_vs_intuitive_population_identity() {
        // 3 vacuum points with res1 = 1, 1 dielectric point with res1 = 3
        let res = [vec![1.0, 1.0, 1.0, 3.0], vec![0.0; 4], vec![0.0; 4]];
        let diel = [false, false, false, true];
        let bal = physics_loss(&res, &diel, PhysMode::DielBalanced, None).unwrap();
        let pool = physics_loss(&res, &diel, PhysMode::Intuitive, None).unwrap();
        assert_eq!(bal, 1.0 + 9.0);
        assert_eq!(pool, (3.0 + 9.0) / 4.0);
        assert!(matches!(physics_loss(&res, &[false; 4], PhysMode::DielBalanced, None), Err(Error::Config(_))));
    }

    #[test]
    fn time_bin_weight_examples() {
        assert_eq!(time_bin_weights(&[0.0; 5], 1.0), [1.0; 5]);
        let w = time_bin_weights(&[1e3, 0.0, 0.0, 0.0, 0.0], 1.0);
        assert_eq!(w[0], 1.0);
        assert!(w[1..].iter().all(|&v| v < 1e-300));
        assert_eq!(time_bin_weights(&[5.0, 2.0, 1.0, 3.0, 4.0], 0.0), [1.0; 5]);
    }

    #[test]
    fn total_loss_examples() {
        assert!((total_loss(1.0, 0.1, 0.2, Some(0.3)) - 7.0).abs() < 1e-12);
        assert!((total_loss(1.0, 0.1, 0.2, None) - 4.0).abs() < 1e-12);
        assert_eq!(total_loss(0.0, 0.0, 0.0, Some(0.0)), 0.0);
    }

    #[test]
    fn grid_mirrors_are_exact() {
        let g = CollocationGrid::new(6, 5, 4, 1.5).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.x[g.mirror_x[i]], -g.x[i]);
            assert_eq!(g.y[g.mirror_y[i]], -g.y[i]);
            assert_eq!(g.t[g.mirror_x[i]], g.t[i]);
        }
        assert!(g.ic_rows.iter().all(|&i| g.t[i] == 0.0));
        assert_eq!(g.bin.iter().max(), Some(&3));
    }

    #[test]
    fn parity_exact_fields_have_zero_symmetry_loss() {
        let g = CollocationGrid::new(7, 6, 3, 1.0).unwrap();
        let (x, y, t) = (&g.x, &g.y, &g.t);
        let f = FieldBatch {
            ez: (0..g.len()).map(|i| (PI * x[i]).cos() * (PI * y[i]).cos() * (1.0 + t[i])).collect(),
            hx: (0..g.len()).map(|i| (PI * x[i]).cos() * (PI * y[i]).sin() * t[i].sin()).collect(),
            hy: (0..g.len()).map(|i| (PI * x[i]).sin() * (PI * y[i]).cos() * t[i].cos()).collect(),
        };
        assert!(symmetry_loss(&f, &g.mirror_x, &g.mirror_y, Case::Vacuum).unwrap() < 1e-28);
    }

    #[test]
    fn odd_ez_violates_mirror_x_only_in_vacuum() {
        let g = CollocationGrid::new(5, 4, 2, 1.0).unwrap();
        let n = g.len();
        let f = FieldBatch { ez: g.x.clone(), hx: vec![0.0; n], hy: vec![0.0; n] };
        let expect = g.x.iter().map(|v| 4.0 * v * v).sum::<f64>() / n as f64;
        let l = symmetry_loss(&f, &g.mirror_x, &g.mirror_y, Case::Vacuum).unwrap();
        assert!((l - expect).abs() < 1e-14);
        assert_eq!(symmetry_loss(&f, &g.mirror_x, &g.mirror_y, Case::Dielectric).unwrap(), 0.0);
        assert_eq!(symmetry_loss(&f, &g.mirror_x, &g.mirror_y, Case::Asymmetric).unwrap(), 0.0);
    }

    #[test]
    fn ic_loss_examples() {
        let g = CollocationGrid::new(64, 64, 1, 1.0).unwrap();
        let n = g.len();
        for case in Case::ALL {
            let exact = FieldBatch {
                ez: (0..n).map(|i| case.initial_ez(g.x[i], g.y[i])).collect(),
                hx: vec![0.0; n],
                hy: vec![0.0; n],
            };
            assert_eq!(ic_loss(&exact, &g.x, &g.y, case).unwrap(), 0.0);
        }
        let zero = FieldBatch { ez: vec![0.0; n], hx: vec![0.0; n], hy: vec![0.0; n] };
        let mut oracle = 0.0;
        for &x in &symmetric_linspace(64) {
            for &y in &symmetric_linspace(64) {
                oracle += (-50.0 * (x * x + y * y)).exp();
            }
        }
        oracle /= 4096.0;
        assert!((ic_loss(&zero, &g.x, &g.y, Case::Vacuum).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn material_map() {
        let m = MaterialMap::new(Case::Dielectric);
        assert_eq!(m.epsilon_at(0.5, -0.9), 4.0);
        assert_eq!(m.epsilon_at(0.29, 0.0), 1.0);
        assert_eq!(MaterialMap::new(Case::Vacuum).epsilon_at(0.5, 0.0), 1.0);
    }
}
