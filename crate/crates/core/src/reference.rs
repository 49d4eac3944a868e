//! Yee FDTD reference for the periodic TEz problem.
//!
//! `E_z` lives on nodes `(x_i, y_j) = (-1 + i dx, -1 + j dy)` at integer
//! steps. `H_x` sits at `(x_i, y_j + dy/2)` and `H_y` at `(x_i + dx/2, y_j)`,
//! both at half steps. Snapshots average `H` back to the `E_z` nodes and
//! integer times.

use std::f64::consts::SQRT_2;
use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{Case, MaterialMap};

/// Initial field selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialCondition {
    /// The case's Gaussian pulse in `E_z`, `H = 0`.
    Pulse,
    /// `E_z` constant, `H = 0`.
    Uniform { value: f64 },
    /// `E_z = -H_y = cos(k pi (x - t))` at `t = 0`.
    PlaneWave { k: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdtdConfig {
    pub nx: usize,
    pub ny: usize,
    /// Time step; `None` picks the largest step not exceeding `cfl * min(dx, dy) / sqrt(2)`
    /// that divides the snapshot interval.
    pub dt: Option<f64>,
    pub cfl: f64,
    pub t_end: f64,
    pub n_snapshots: usize,
    pub case: Case,
    pub eps_r: f64,
    pub slab_x0: f64,
    pub ic: InitialCondition,
}

impl Default for FdtdConfig {
    fn default() -> Self {
        Self::new(Case::Vacuum)
    }
}

impl FdtdConfig {
    pub fn new(case: Case) -> Self {
        let m = MaterialMap::new(case);
        Self {
            nx: 256,
            ny: 256,
            dt: None,
            cfl: 0.5,
            t_end: case.default_t_end(),
            n_snapshots: 100,
            case,
            eps_r: m.eps_r,
            slab_x0: m.slab_x0,
            ic: InitialCondition::Pulse,
        }
    }

    pub fn material(&self) -> MaterialMap {
        MaterialMap { case: self.case, eps_r: self.eps_r, slab_x0: self.slab_x0 }
    }

    pub fn dx(&self) -> f64 {
        2.0 / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        2.0 / self.ny as f64
    }

    pub fn cfl_limit(&self) -> f64 {
        self.dx().min(self.dy()) / SQRT_2
    }

    /// Steps per snapshot interval and the resulting time step.
    pub fn schedule(&self) -> Result<(usize, f64)> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::Config(format!("FDTD grid {}x{} too small", self.nx, self.ny)));
        }
        if !(self.t_end > 0.0) || self.n_snapshots < 2 {
            return Err(Error::Config("FDTD needs t_end > 0 and at least 2 snapshots".into()));
        }
        if !(self.eps_r > 0.0) {
            return Err(Error::Config(format!("eps_r must be positive, got {}", self.eps_r)));
        }
        let limit = self.cfl_limit();
        let target = match self.dt {
            Some(dt) => {
                if !(dt > 0.0) {
                    return Err(Error::Config(format!("dt must be positive, got {dt}")));
                }
                if dt > limit {
                    return Err(Error::Cfl { dt, limit });
                }
                dt
            }
            None => {
                if !(self.cfl > 0.0) || self.cfl > 1.0 {
                    return Err(Error::Config(format!("cfl factor must be in (0, 1], got {}", self.cfl)));
                }
                self.cfl * limit
            }
        };
        let interval = self.t_end / (self.n_snapshots - 1) as f64;
        let steps = (interval / target * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        Ok((steps, interval / steps as f64))
    }

    pub fn snapshot_times(&self) -> Vec<f64> {
        let n = self.n_snapshots;
        (0..n).map(|k| self.t_end * k as f64 / (n - 1) as f64).collect()
    }

    /// Periodic node coordinates along x and y.
    pub fn nodes(&self) -> (Vec<f64>, Vec<f64>) {
        let nodes = |n: usize| (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
        (nodes(self.nx), nodes(self.ny))
    }
}

/// Collocated snapshots, each array laid out `[t][ix][iy]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldHistory {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub times: Vec<f64>,
    pub ez: Array3<f64>,
    pub hx: Array3<f64>,
    pub hy: Array3<f64>,
    pub eps: Array2<f64>,
    pub dt: f64,
    pub steps: usize,
}

impl FieldHistory {
    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn cell_area(&self) -> f64 {
        (2.0 / self.x.len() as f64) * (2.0 / self.y.len() as f64)
    }

    /// `U(t_k)` for every snapshot.
    pub fn energy_history(&self) -> Vec<f64> {
        (0..self.n_times())
            .map(|k| {
                total_energy(
                    self.ez.index_axis(ndarray::Axis(0), k),
                    self.hx.index_axis(ndarray::Axis(0), k),
                    self.hy.index_axis(ndarray::Axis(0), k),
                    self.eps.view(),
                    self.cell_area(),
                )
            })
            .collect()
    }
}

/// Riemann sum of `1/2 (eps E^2 + Hx^2 + Hy^2)` times the cell area.
pub fn total_energy(
    ez: ndarray::ArrayView2<'_, f64>,
    hx: ndarray::ArrayView2<'_, f64>,
    hy: ndarray::ArrayView2<'_, f64>,
    eps: ndarray::ArrayView2<'_, f64>,
    cell_area: f64,
) -> f64 {
    let mut acc = 0.0;
    Zip::from(&ez).and(&hx).and(&hy).and(&eps).for_each(|&e, &a, &b, &p| {
        acc += p * e * e + a * a + b * b;
    });
    0.5 * acc * cell_area
}

/// `sqrt(sum (pred - ref)^2 / sum ref^2)`.
pub fn l2_error(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::InvalidBatch(format!("prediction has {} values, reference {}", pred.len(), reference.len())));
    }
    let den: f64 = reference.iter().map(|r| r * r).sum();
    if den == 0.0 {
        return Err(Error::UndefinedMetric("reference field has zero norm".into()));
    }
    let num: f64 = pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum();
    Ok((num / den).sqrt())
}

pub fn run_reference(config: &FdtdConfig) -> Result<FieldHistory> {
    let (steps_per, dt) = config.schedule()?;
    let (nx, ny) = (config.nx, config.ny);
    let (dx, dy) = (config.dx(), config.dy());
    let (xs, ys) = config.nodes();
    let material = config.material();
    let eps = Array2::from_shape_fn((nx, ny), |(i, j)| material.epsilon_at(xs[i], ys[j]));
    let ce = eps.mapv(|e| dt / e);

    let mut e = Array2::from_shape_fn((nx, ny), |(i, j)| match config.ic {
        InitialCondition::Pulse => config.case.initial_ez(xs[i], ys[j]),
        InitialCondition::Uniform { value } => value,
        InitialCondition::PlaneWave { k } => (k * std::f64::consts::PI * xs[i]).cos(),
    });
    let mut hx = Array2::<f64>::zeros((nx, ny));
    let mut hy = Array2::<f64>::zeros((nx, ny));
    if let InitialCondition::PlaneWave { k } = config.ic {
        // H_y at (x + dx/2, -dt/2)
        let w = k * std::f64::consts::PI;
        hy = Array2::from_shape_fn((nx, ny), |(i, _)| -(w * (xs[i] + 0.5 * dx + 0.5 * dt)).cos());
    } else {
        // H^{-1/2} = H(0) - dt/2 dH/dt(0)
        update_h(&e, &mut hx, &mut hy, -0.5 * dt, dx, dy);
    }

    let times = config.snapshot_times();
    let nt = times.len();
    let mut out_e = Array3::zeros((nt, nx, ny));
    let mut out_hx = Array3::zeros((nt, nx, ny));
    let mut out_hy = Array3::zeros((nt, nx, ny));
    let total = steps_per * (nt - 1);
    let (mut hx_old, mut hy_old) = (hx.clone(), hy.clone());
    for step in 0..=total {
        hx_old.assign(&hx);
        hy_old.assign(&hy);
        update_h(&e, &mut hx, &mut hy, dt, dx, dy);
        if step % steps_per == 0 {
            let k = step / steps_per;
            out_e.index_axis_mut(ndarray::Axis(0), k).assign(&e);
            for i in 0..nx {
                let im = (i + nx - 1) % nx;
                for j in 0..ny {
                    let jm = (j + ny - 1) % ny;
                    out_hx[[k, i, j]] = 0.25 * (hx_old[[i, j]] + hx_old[[i, jm]] + hx[[i, j]] + hx[[i, jm]]);
                    out_hy[[k, i, j]] = 0.25 * (hy_old[[i, j]] + hy_old[[im, j]] + hy[[i, j]] + hy[[im, j]]);
                }
            }
        }
        if step < total {
            update_e(&mut e, &hx, &hy, &ce, dx, dy);
        }
    }
    if out_e.iter().any(|v: &f64| !v.is_finite()) {
        return Err(Error::NonFinite("FDTD fields".into()));
    }
    Ok(FieldHistory { x: xs, y: ys, times, ez: out_e, hx: out_hx, hy: out_hy, eps, dt, steps: total })
}

/// `Hx -= dt dE/dy`, `Hy += dt dE/dx` with forward differences.
fn update_h(e: &Array2<f64>, hx: &mut Array2<f64>, hy: &mut Array2<f64>, dt: f64, dx: f64, dy: f64) {
    let (nx, ny) = e.dim();
    let (cx, cy) = (dt / dx, dt / dy);
    for i in 0..nx {
        let ip = (i + 1) % nx;
        for j in 0..ny {
            let jp = (j + 1) % ny;
            let ev = e[[i, j]];
            hx[[i, j]] -= cy * (e[[i, jp]] - ev);
            hy[[i, j]] += cx * (e[[ip, j]] - ev);
        }
    }
}

/// `E += dt/eps (dHy/dx - dHx/dy)` with backward differences.
fn update_e(e: &mut Array2<f64>, hx: &Array2<f64>, hy: &Array2<f64>, ce: &Array2<f64>, dx: f64, dy: f64) {
    let (nx, ny) = e.dim();
    for i in 0..nx {
        let im = (i + nx - 1) % nx;
        for j in 0..ny {
            let jm = (j + ny - 1) % ny;
            let curl = (hy[[i, j]] - hy[[im, j]]) / dx - (hx[[i, j]] - hx[[i, jm]]) / dy;
            e[[i, j]] += ce[[i, j]] * curl;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SnapshotMeta {
    pub nx: usize,
    pub ny: usize,
    pub times: Vec<f64>,
    pub case: Case,
    pub eps_r: f64,
    pub slab_x0: Option<f64>,
    pub dt: f64,
    pub steps: usize,
    pub layout: String,
    pub files: Vec<String>,
}

const FIELD_FILES: [&str; 4] = ["ez.f64", "hx.f64", "hy.f64", "eps.f64"];

fn write_f64(path: &Path, data: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = data.flat_map(f64::to_le_bytes).collect();
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f64(path: &Path, expect: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expect * 8 {
        return Err(Error::Config(format!("{} holds {} bytes, expected {}", path.display(), bytes.len(), expect * 8)));
    }
    Ok(bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
}

/// Write `meta.json` plus raw little-endian arrays into `dir`.
pub fn export_snapshots(dir: &Path, history: &FieldHistory, config: &FdtdConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    let meta = SnapshotMeta {
        nx: history.x.len(),
        ny: history.y.len(),
        times: history.times.clone(),
        case: config.case,
        eps_r: config.eps_r,
        slab_x0: (config.case == Case::Dielectric).then_some(config.slab_x0),
        dt: history.dt,
        steps: history.steps,
        layout: "[t][ix][iy] f64 little-endian; eps is [ix][iy]".into(),
        files: FIELD_FILES.iter().map(|s| s.to_string()).collect(),
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    write_f64(&dir.join(FIELD_FILES[0]), history.ez.iter().copied())?;
    write_f64(&dir.join(FIELD_FILES[1]), history.hx.iter().copied())?;
    write_f64(&dir.join(FIELD_FILES[2]), history.hy.iter().copied())?;
    write_f64(&dir.join(FIELD_FILES[3]), history.eps.iter().copied())?;
    Ok(())
}

pub fn import_snapshots(dir: &Path) -> Result<(SnapshotMeta, FieldHistory)> {
    let meta: SnapshotMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let (nt, nx, ny) = (meta.times.len(), meta.nx, meta.ny);
    let field = |name: &str| -> Result<Array3<f64>> {
        Ok(Array3::from_shape_vec((nt, nx, ny), read_f64(&dir.join(name), nt * nx * ny)?).expect("shape checked"))
    };
    let eps = Array2::from_shape_vec((nx, ny), read_f64(&dir.join(FIELD_FILES[3]), nx * ny)?).expect("shape checked");
    let nodes = |n: usize| (0..n).map(|i| -1.0 + 2.0 * i as f64 / n as f64).collect();
    let history = FieldHistory {
        x: nodes(nx),
        y: nodes(ny),
        times: meta.times.clone(),
        ez: field(FIELD_FILES[0])?,
        hx: field(FIELD_FILES[1])?,
        hy: field(FIELD_FILES[2])?,
        eps,
        dt: meta.dt,
        steps: meta.steps,
    };
    Ok((meta, history))
}
