//! Pairwise amplitude kernels on amplitude-major planes.
//!
//! A plane holds `dim * rows` real and imaginary parts, indexed
//! `idx * rows + row`. Rotation angles are given as per-row half-angle
//! cosines and sines so shared and embedded angles use the same loop.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Clone, Copy, Debug)]
pub struct Plane<'a> {
    pub re: &'a [f64],
    pub im: &'a [f64],
    pub rows: usize,
}

#[derive(Debug)]
pub struct PlaneMut<'a> {
    pub re: &'a mut [f64],
    pub im: &'a mut [f64],
    pub rows: usize,
}

impl PlaneMut<'_> {
    pub fn as_plane(&self) -> Plane<'_> {
        Plane { re: self.re, im: self.im, rows: self.rows }
    }
}

#[inline]
fn bit(n: usize, wire: usize) -> usize {
    1 << (n - 1 - wire)
}

/// Index pairs `(i0, i1)` differing in the target bit, restricted to control = 1.
#[inline]
pub fn pairs(n: usize, target: usize, control: Option<usize>) -> impl Iterator<Item = (usize, usize)> {
    let tb = bit(n, target);
    let cb = control.map_or(0, |c| bit(n, c));
    (0..1usize << n).filter(move |&i| i & tb == 0 && i & cb == cb).map(move |i| (i, i | tb))
}

#[inline]
fn rows_pair(v: &mut [f64], i0: usize, i1: usize, rows: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(i0 < i1);
    let (lo, hi) = v.split_at_mut(i1 * rows);
    (&mut lo[i0 * rows..(i0 + 1) * rows], &mut hi[..rows])
}

/// Apply `exp(-i theta/2 P)` (or its inverse) on `target`, optionally controlled.
#[allow(clippy::too_many_arguments)]
pub fn rotate(p: &mut PlaneMut<'_>, n: usize, axis: Axis, target: usize, control: Option<usize>, cos: &[f64], sin: &[f64], inverse: bool) {
    let rows = p.rows;
    let cos = &cos[..rows];
    let sin = &sin[..rows];
    let sg = if inverse { -1.0 } else { 1.0 };
    for (i0, i1) in pairs(n, target, control) {
        let (r0, r1) = rows_pair(p.re, i0, i1, rows);
        let (m0, m1) = rows_pair(p.im, i0, i1, rows);
        match axis {
            Axis::X => {
                for r in 0..rows {
                    let (c, s) = (cos[r], sg * sin[r]);
                    let (ar, ai, br, bi) = (r0[r], m0[r], r1[r], m1[r]);
                    r0[r] = c * ar + s * bi;
                    m0[r] = c * ai - s * br;
                    r1[r] = s * ai + c * br;
                    m1[r] = c * bi - s * ar;
                }
            }
            Axis::Y => {
                for r in 0..rows {
                    let (c, s) = (cos[r], sg * sin[r]);
                    let (ar, ai, br, bi) = (r0[r], m0[r], r1[r], m1[r]);
                    r0[r] = c * ar - s * br;
                    m0[r] = c * ai - s * bi;
                    r1[r] = s * ar + c * br;
                    m1[r] = s * ai + c * bi;
                }
            }
            Axis::Z => {
                for r in 0..rows {
                    let (c, s) = (cos[r], sg * sin[r]);
                    let (ar, ai, br, bi) = (r0[r], m0[r], r1[r], m1[r]);
                    r0[r] = c * ar + s * ai;
                    m0[r] = c * ai - s * ar;
                    r1[r] = c * br - s * bi;
                    m1[r] = c * bi + s * br;
                }
            }
        }
    }
}

/// 2x2 matrix `[u00, u01, u10, u11]` of `(re, im)` entries for a Pauli rotation.
pub fn rotation_matrix(axis: Axis, theta: f64) -> [(f64, f64); 4] {
    let (s, c) = (0.5 * theta).sin_cos();
    match axis {
        Axis::X => [(c, 0.0), (0.0, -s), (0.0, -s), (c, 0.0)],
        Axis::Y => [(c, 0.0), (-s, 0.0), (s, 0.0), (c, 0.0)],
        Axis::Z => [(c, -s), (0.0, 0.0), (0.0, 0.0), (c, s)],
    }
}

/// Matrix product `a * b`.
pub fn matmul2(a: &[(f64, f64); 4], b: &[(f64, f64); 4]) -> [(f64, f64); 4] {
    let mul = |x: (f64, f64), y: (f64, f64)| (x.0 * y.0 - x.1 * y.1, x.0 * y.1 + x.1 * y.0);
    let add = |x: (f64, f64), y: (f64, f64)| (x.0 + y.0, x.1 + y.1);
    [
        add(mul(a[0], b[0]), mul(a[1], b[2])),
        add(mul(a[0], b[1]), mul(a[1], b[3])),
        add(mul(a[2], b[0]), mul(a[3], b[2])),
        add(mul(a[2], b[1]), mul(a[3], b[3])),
    ]
}

/// Apply a row-independent single-qubit unitary on `target`.
pub fn apply_u2(p: &mut PlaneMut<'_>, n: usize, target: usize, u: &[(f64, f64); 4]) {
    let rows = p.rows;
    let [(ar, ai), (br, bi), (cr, ci), (dr, di)] = *u;
    for (i0, i1) in pairs(n, target, None) {
        let (r0, r1) = rows_pair(p.re, i0, i1, rows);
        let (m0, m1) = rows_pair(p.im, i0, i1, rows);
        for r in 0..rows {
            let (xr, xi, yr, yi) = (r0[r], m0[r], r1[r], m1[r]);
            r0[r] = ar * xr - ai * xi + br * yr - bi * yi;
            m0[r] = ar * xi + ai * xr + br * yi + bi * yr;
            r1[r] = cr * xr - ci * xi + dr * yr - di * yi;
            m1[r] = cr * xi + ci * xr + dr * yi + di * yr;
        }
    }
}

/// Backward step for one rotation: `out[row] += Im <a, P b>` on the
/// post-gate planes, then un-apply the gate (`G^dagger`) to both.
#[allow(clippy::too_many_arguments)]
pub fn unrotate_with_inner(a: &mut PlaneMut<'_>, b: &mut PlaneMut<'_>, n: usize, axis: Axis, target: usize, control: Option<usize>, cos: &[f64], sin: &[f64], out: &mut [f64]) {
    let rows = a.rows;
    let (cos, sin, out) = (&cos[..rows], &sin[..rows], &mut out[..rows]);
    for (i0, i1) in pairs(n, target, control) {
        let (a0r, a1r) = rows_pair(a.re, i0, i1, rows);
        let (a0i, a1i) = rows_pair(a.im, i0, i1, rows);
        let (b0r, b1r) = rows_pair(b.re, i0, i1, rows);
        let (b0i, b1i) = rows_pair(b.im, i0, i1, rows);
        match axis {
            Axis::X => {
                for r in 0..rows {
                    let (c, s) = (cos[r], -sin[r]);
                    out[r] += a0r[r] * b1i[r] - a0i[r] * b1r[r] + a1r[r] * b0i[r] - a1i[r] * b0r[r];
                    let (ar, ai, br, bi) = (a0r[r], a0i[r], a1r[r], a1i[r]);
                    a0r[r] = c * ar + s * bi;
                    a0i[r] = c * ai - s * br;
                    a1r[r] = s * ai + c * br;
                    a1i[r] = c * bi - s * ar;
                    let (ar, ai, br, bi) = (b0r[r], b0i[r], b1r[r], b1i[r]);
                    b0r[r] = c * ar + s * bi;
                    b0i[r] = c * ai - s * br;
                    b1r[r] = s * ai + c * br;
                    b1i[r] = c * bi - s * ar;
                }
            }
            Axis::Y => {
                for r in 0..rows {
                    let (c, s) = (cos[r], -sin[r]);
                    out[r] += -(a0r[r] * b1r[r] + a0i[r] * b1i[r]) + a1r[r] * b0r[r] + a1i[r] * b0i[r];
                    let (ar, ai, br, bi) = (a0r[r], a0i[r], a1r[r], a1i[r]);
                    a0r[r] = c * ar - s * br;
                    a0i[r] = c * ai - s * bi;
                    a1r[r] = s * ar + c * br;
                    a1i[r] = s * ai + c * bi;
                    let (ar, ai, br, bi) = (b0r[r], b0i[r], b1r[r], b1i[r]);
                    b0r[r] = c * ar - s * br;
                    b0i[r] = c * ai - s * bi;
                    b1r[r] = s * ar + c * br;
                    b1i[r] = s * ai + c * bi;
                }
            }
            Axis::Z => {
                for r in 0..rows {
                    let (c, s) = (cos[r], -sin[r]);
                    out[r] += a0r[r] * b0i[r] - a0i[r] * b0r[r] - (a1r[r] * b1i[r] - a1i[r] * b1r[r]);
                    let (ar, ai, br, bi) = (a0r[r], a0i[r], a1r[r], a1i[r]);
                    a0r[r] = c * ar + s * ai;
                    a0i[r] = c * ai - s * ar;
                    a1r[r] = c * br - s * bi;
                    a1i[r] = c * bi + s * br;
                    let (ar, ai, br, bi) = (b0r[r], b0i[r], b1r[r], b1i[r]);
                    b0r[r] = c * ar + s * ai;
                    b0i[r] = c * ai - s * ar;
                    b1r[r] = c * br - s * bi;
                    b1i[r] = c * bi + s * br;
                }
            }
        }
    }
}

pub fn cnot(p: &mut PlaneMut<'_>, n: usize, control: usize, target: usize) {
    let rows = p.rows;
    for (i0, i1) in pairs(n, target, Some(control)) {
        let (r0, r1) = rows_pair(p.re, i0, i1, rows);
        r0.swap_with_slice(r1);
        let (m0, m1) = rows_pair(p.im, i0, i1, rows);
        m0.swap_with_slice(m1);
    }
}

/// `out[row] += Im <a, P b>` with `P` the (controlled) Pauli generator.
pub fn pauli_im_inner(a: &Plane<'_>, b: &Plane<'_>, n: usize, axis: Axis, target: usize, control: Option<usize>, out: &mut [f64]) {
    let rows = a.rows;
    let out = &mut out[..rows];
    for (i0, i1) in pairs(n, target, control) {
        let (a0r, a0i) = (&a.re[i0 * rows..][..rows], &a.im[i0 * rows..][..rows]);
        let (a1r, a1i) = (&a.re[i1 * rows..][..rows], &a.im[i1 * rows..][..rows]);
        let (b0r, b0i) = (&b.re[i0 * rows..][..rows], &b.im[i0 * rows..][..rows]);
        let (b1r, b1i) = (&b.re[i1 * rows..][..rows], &b.im[i1 * rows..][..rows]);
        match axis {
            Axis::X => {
                for r in 0..rows {
                    out[r] += a0r[r] * b1i[r] - a0i[r] * b1r[r] + a1r[r] * b0i[r] - a1i[r] * b0r[r];
                }
            }
            Axis::Y => {
                for r in 0..rows {
                    out[r] += -(a0r[r] * b1r[r] + a0i[r] * b1i[r]) + a1r[r] * b0r[r] + a1i[r] * b0i[r];
                }
            }
            Axis::Z => {
                for r in 0..rows {
                    out[r] += a0r[r] * b0i[r] - a0i[r] * b0r[r] - (a1r[r] * b1i[r] - a1i[r] * b1r[r]);
                }
            }
        }
    }
}

/// `dst += i * coef[row] * P src`.
pub fn pauli_axpy_i(src: &Plane<'_>, dst: &mut PlaneMut<'_>, n: usize, axis: Axis, target: usize, control: Option<usize>, coef: &[f64]) {
    let rows = src.rows;
    let coef = &coef[..rows];
    for (i0, i1) in pairs(n, target, control) {
        let (s0r, s0i) = (&src.re[i0 * rows..][..rows], &src.im[i0 * rows..][..rows]);
        let (s1r, s1i) = (&src.re[i1 * rows..][..rows], &src.im[i1 * rows..][..rows]);
        let (d0r, d1r) = rows_pair(dst.re, i0, i1, rows);
        let (d0i, d1i) = rows_pair(dst.im, i0, i1, rows);
        match axis {
            // iX: (i b1, i b0)
            Axis::X => {
                for r in 0..rows {
                    let c = coef[r];
                    d0r[r] -= c * s1i[r];
                    d0i[r] += c * s1r[r];
                    d1r[r] -= c * s0i[r];
                    d1i[r] += c * s0r[r];
                }
            }
            // iY: (b1, -b0)
            Axis::Y => {
                for r in 0..rows {
                    let c = coef[r];
                    d0r[r] += c * s1r[r];
                    d0i[r] += c * s1i[r];
                    d1r[r] -= c * s0r[r];
                    d1i[r] -= c * s0i[r];
                }
            }
            // iZ: (i b0, -i b1)
            Axis::Z => {
                for r in 0..rows {
                    let c = coef[r];
                    d0r[r] -= c * s0i[r];
                    d0i[r] += c * s0r[r];
                    d1r[r] += c * s1i[r];
                    d1i[r] -= c * s1r[r];
                }
            }
        }
    }
}

/// Calls `sink(row, qubit, contribution)`; contributions sum to `<Z_q>`.
pub fn expectation_z(p: &Plane<'_>, n: usize, mut sink: impl FnMut(usize, usize, f64)) {
    let rows = p.rows;
    let dim = 1usize << n;
    let mut prob = vec![0.0; rows];
    let mut acc = vec![0.0; rows * n];
    for idx in 0..dim {
        let re = &p.re[idx * rows..][..rows];
        let im = &p.im[idx * rows..][..rows];
        for r in 0..rows {
            prob[r] = re[r] * re[r] + im[r] * im[r];
        }
        for q in 0..n {
            let sign = if idx & bit(n, q) == 0 { 1.0 } else { -1.0 };
            let a = &mut acc[q * rows..][..rows];
            for r in 0..rows {
                a[r] += sign * prob[r];
            }
        }
    }
    for q in 0..n {
        for r in 0..rows {
            sink(r, q, acc[q * rows + r]);
        }
    }
}

/// `2 Re <a, Z_q b>` per row and qubit, written via `sink(row, qubit, value)`.
pub fn z_cross(a: &Plane<'_>, b: &Plane<'_>, n: usize, mut sink: impl FnMut(usize, usize, f64)) {
    let rows = a.rows;
    let dim = 1usize << n;
    let mut dot = vec![0.0; rows];
    let mut acc = vec![0.0; rows * n];
    for idx in 0..dim {
        let (ar, ai) = (&a.re[idx * rows..][..rows], &a.im[idx * rows..][..rows]);
        let (br, bi) = (&b.re[idx * rows..][..rows], &b.im[idx * rows..][..rows]);
        for r in 0..rows {
            dot[r] = ar[r] * br[r] + ai[r] * bi[r];
        }
        for q in 0..n {
            let sign = if idx & bit(n, q) == 0 { 2.0 } else { -2.0 };
            let acc_q = &mut acc[q * rows..][..rows];
            for r in 0..rows {
                acc_q[r] += sign * dot[r];
            }
        }
    }
    for q in 0..n {
        for r in 0..rows {
            sink(r, q, acc[q * rows + r]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plane_data(n: usize, rows: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let len = (1 << n) * rows;
        let f = |i: usize, k: u64| (((i as u64 * 2654435761 + k * 97 + seed) % 1000) as f64 / 500.0) - 1.0;
        ((0..len).map(|i| f(i, 1)).collect(), (0..len).map(|i| f(i, 2)).collect())
    }

    #[test]
    fn rotation_inverse_roundtrip() {
        let (n, rows) = (3, 5);
        let (re0, im0) = plane_data(n, rows, 7);
        let (mut re, mut im) = (re0.clone(), im0.clone());
        let cos: Vec<f64> = (0..rows).map(|r| (0.3 * r as f64).cos()).collect();
        let sin: Vec<f64> = (0..rows).map(|r| (0.3 * r as f64).sin()).collect();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let mut p = PlaneMut { re: &mut re, im: &mut im, rows };
            rotate(&mut p, n, axis, 1, Some(2), &cos, &sin, false);
            rotate(&mut p, n, axis, 1, Some(2), &cos, &sin, true);
        }
        for (a, b) in re.iter().zip(&re0).chain(im.iter().zip(&im0)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn fused_u2_matches_sequential_rotations() {
        let (n, rows) = (3, 6);
        let (re0, im0) = plane_data(n, rows, 5);
        let (mut re, mut im) = (re0.clone(), im0.clone());
        let (mut fr, mut fi) = (re0, im0);
        let seq: [(Axis, f64); 4] = [(Axis::Z, 0.7), (Axis::Y, -1.3), (Axis::Z, 2.1), (Axis::X, 0.4)];
        let mut u = rotation_matrix(Axis::Z, 0.0);
        for &(axis, th) in &seq {
            let mut p = PlaneMut { re: &mut re, im: &mut im, rows };
            let (s, c) = (0.5 * th).sin_cos();
            rotate(&mut p, n, axis, 2, None, &vec![c; rows], &vec![s; rows], false);
            u = matmul2(&rotation_matrix(axis, th), &u);
        }
        apply_u2(&mut PlaneMut { re: &mut fr, im: &mut fi, rows }, n, 2, &u);
        for (a, b) in re.iter().zip(&fr).chain(im.iter().zip(&fi)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn fused_backward_step_matches_parts() {
        let (n, rows) = (3, 4);
        let (ar, ai) = plane_data(n, rows, 21);
        let (br, bi) = plane_data(n, rows, 22);
        let cos: Vec<f64> = (0..rows).map(|r| (0.2 + r as f64).cos()).collect();
        let sin: Vec<f64> = (0..rows).map(|r| (0.2 + r as f64).sin()).collect();
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let mut want = vec![0.0; rows];
            pauli_im_inner(&Plane { re: &ar, im: &ai, rows }, &Plane { re: &br, im: &bi, rows }, n, axis, 2, Some(0), &mut want);
            let (mut war, mut wai, mut wbr, mut wbi) = (ar.clone(), ai.clone(), br.clone(), bi.clone());
            rotate(&mut PlaneMut { re: &mut war, im: &mut wai, rows }, n, axis, 2, Some(0), &cos, &sin, true);
            rotate(&mut PlaneMut { re: &mut wbr, im: &mut wbi, rows }, n, axis, 2, Some(0), &cos, &sin, true);
            let (mut gar, mut gai, mut gbr, mut gbi) = (ar.clone(), ai.clone(), br.clone(), bi.clone());
            let mut got = vec![0.0; rows];
            unrotate_with_inner(
                &mut PlaneMut { re: &mut gar, im: &mut gai, rows },
                &mut PlaneMut { re: &mut gbr, im: &mut gbi, rows },
                n, axis, 2, Some(0), &cos, &sin, &mut got,
            );
            assert_eq!(got, want);
            assert_eq!((gar, gai, gbr, gbi), (war, wai, wbr, wbi));
        }
    }

    #[test]
    fn axpy_matches_inner_product() {
        // Im<a, P b> == -Re<a, i P b>; build i P b with axpy on a zero plane.
        let (n, rows) = (3, 4);
        let (ar, ai) = plane_data(n, rows, 3);
        let (br, bi) = plane_data(n, rows, 11);
        for axis in [Axis::X, Axis::Y, Axis::Z] {
            let a = Plane { re: &ar, im: &ai, rows };
            let b = Plane { re: &br, im: &bi, rows };
            let mut im_inner = vec![0.0; rows];
            pauli_im_inner(&a, &b, n, axis, 0, Some(1), &mut im_inner);
            let (mut zr, mut zi) = (vec![0.0; ar.len()], vec![0.0; ar.len()]);
            let mut z = PlaneMut { re: &mut zr, im: &mut zi, rows };
            pauli_axpy_i(&b, &mut z, n, axis, 0, Some(1), &vec![1.0; rows]);
            for r in 0..rows {
                let mut re_dot = 0.0;
                for idx in 0..1 << n {
                    let k = idx * rows + r;
                    re_dot += ar[k] * zr[k] + ai[k] * zi[k];
                }
                assert!((im_inner[r] + re_dot).abs() < 1e-12, "{axis:?}");
            }
        }
    }
}
