//! Jet tape: forward-mode input derivatives under reverse-mode parameter gradients.
//!
//! Every tensor on the tape is either value-only or a *jet*. A jet carries
//! the value block plus three tangent blocks holding the derivatives with
//! respect to the lifted inputs (x, y, t). Blocks are stacked row-wise, so a
//! jet over `rows` batch points and `cols` features is stored as a
//! `(4 * rows, cols)` matrix and a dense layer is a single GEMM.
//!
//! The tape is eager: each op computes its output at construction time.
//! [`Tape::backward`] then walks the tape in reverse, propagating adjoints of
//! every block. Losses built from tangent blocks (PDE residuals) therefore get
//! exact parameter gradients, which is reverse-over-forward differentiation.

use std::sync::Arc;

use ndarray::{concatenate, s, Array2, ArrayView2, ArrayViewMut2, Axis, Zip};

use crate::error::{Error, Result};

/// Number of tangent directions carried by a jet: (x, y, t).
pub const TANGENTS: usize = 3;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A batched value with optional (x, y, t) tangents.
#[derive(Clone, Debug)]
pub struct Tensor {
    data: Array2<f64>,
    rows: usize,
    jet: bool,
}

impl Tensor {
    pub fn value_only(value: Array2<f64>) -> Self {
        let rows = value.nrows();
        Self { data: value, rows, jet: false }
    }

    pub fn jet(value: Array2<f64>, tangents: [Array2<f64>; TANGENTS]) -> Self {
        let rows = value.nrows();
        for t in &tangents {
            assert_eq!(t.dim(), value.dim(), "tangent shape must match value shape");
        }
        let data = concatenate(
            Axis(0),
            &[value.view(), tangents[0].view(), tangents[1].view(), tangents[2].view()],
        )
        .expect("stacking jet blocks");
        Self { data, rows, jet: true }
    }

    pub(crate) fn from_stacked(data: Array2<f64>, rows: usize, jet: bool) -> Self {
        debug_assert_eq!(data.nrows(), rows * if jet { 1 + TANGENTS } else { 1 });
        Self { data, rows, jet }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_jet(&self) -> bool {
        self.jet
    }

    pub fn components(&self) -> usize {
        if self.jet {
            1 + TANGENTS
        } else {
            1
        }
    }

    /// Block `c`: 0 is the value, 1..=3 are the x, y, t tangents.
    pub fn component(&self, c: usize) -> ArrayView2<'_, f64> {
        assert!(c < self.components(), "component {c} out of range");
        self.data.slice(s![c * self.rows..(c + 1) * self.rows, ..])
    }

    pub fn value(&self) -> ArrayView2<'_, f64> {
        self.component(0)
    }

    pub fn tangent(&self, axis: usize) -> ArrayView2<'_, f64> {
        assert!(self.jet, "tensor carries no tangents");
        self.component(1 + axis)
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// Scalar value of a 1x1 tensor.
    pub fn scalar(&self) -> Option<f64> {
        (self.rows == 1 && self.cols() == 1).then(|| self.data[[0, 0]])
    }
}

/// Elementwise functions with known first and second derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sin,
    Cos,
    Tanh,
    Square,
    Exp,
    Asin,
    Acos,
    /// `a * x + b`
    Affine(f64, f64),
}

impl Unary {
    /// Returns (f, f', f'') at `u`.
    #[inline]
    pub fn eval(self, u: f64) -> (f64, f64, f64) {
        match self {
            Unary::Sin => {
                let (s, c) = u.sin_cos();
                (s, c, -s)
            }
            Unary::Cos => {
                let (s, c) = u.sin_cos();
                (c, -s, -c)
            }
            Unary::Tanh => {
                let v = u.tanh();
                let d = 1.0 - v * v;
                (v, d, -2.0 * v * d)
            }
            Unary::Square => (u * u, 2.0 * u, 2.0),
            Unary::Exp => {
                let e = u.exp();
                (e, e, e)
            }
            Unary::Asin => {
                let u = u.clamp(-1.0, 1.0);
                let r = (1.0 - u * u).max(1e-200);
                let d = 1.0 / r.sqrt();
                (u.asin(), d, u * d / r)
            }
            Unary::Acos => {
                let u = u.clamp(-1.0, 1.0);
                let r = (1.0 - u * u).max(1e-200);
                let d = 1.0 / r.sqrt();
                (u.acos(), -d, -u * d / r)
            }
            Unary::Affine(a, b) => (a * u + b, a, 0.0),
        }
    }
}

/// Activation fused into [`Tape::dense`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Tanh,
}

/// Positive map from an unconstrained scalar to the learned time period:
/// `tau = base * (1 + softplus(raw))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodMap {
    pub base: f64,
}

impl PeriodMap {
    pub fn tau(&self, raw: f64) -> f64 {
        self.base * (1.0 + softplus(raw))
    }

    pub fn dtau(&self, raw: f64) -> f64 {
        self.base * sigmoid(raw)
    }

    /// Raw value reproducing a given period (must exceed `base`).
    pub fn raw_for(&self, tau: f64) -> f64 {
        let y: f64 = tau / self.base - 1.0;
        // inverse softplus
        y + (-(-y).exp_m1()).ln()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// User-defined differentiable op (used by the quantum layer).
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &str;

    /// Compute the output; may cache intermediates for `backward`.
    fn forward(&mut self, inputs: &[&Tensor], params: &[f64]) -> Tensor;

    /// Accumulate adjoints into `grad_inputs` (one per input, shaped like the
    /// input data) and `grad_params` (full flat parameter vector).
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &Array2<f64>,
        params: &[f64],
        grad_inputs: &mut [Array2<f64>],
        grad_params: &mut [f64],
    );
}

enum Op {
    Leaf,
    Param {
        offset: usize,
    },
    Unary {
        x: Var,
        f: Unary,
    },
    Add {
        a: Var,
        b: Var,
        alpha: f64,
        beta: f64,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Column {
        x: Var,
        col: usize,
    },
    Component {
        x: Var,
        comp: usize,
    },
    Gather {
        x: Var,
        idx: Arc<Vec<usize>>,
    },
    Dense {
        x: Var,
        w: usize,
        b: usize,
        n_in: usize,
        n_out: usize,
        act: Activation,
    },
    ConstMatMul {
        x: Var,
        m: Arc<Array2<f64>>,
    },
    TimePhase {
        t: Var,
        raw: usize,
        map: PeriodMap,
    },
    SumSquares {
        x: Var,
        weights: Option<Arc<Vec<f64>>>,
        scale: f64,
    },
    Sum {
        x: Var,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    out: Tensor,
    op: Op,
}

/// Eager computation graph over a borrowed flat parameter vector.
pub struct Tape<'p> {
    nodes: Vec<Node>,
    params: &'p [f64],
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    params: Vec<f64>,
    leaves: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn into_params(self) -> Vec<f64> {
        self.params
    }

    /// Adjoint of a leaf created with [`Tape::leaf`] (all blocks stacked).
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.leaves.get(v.0).and_then(|a| a.as_ref())
    }
}

/// Seed three batched input jets: x carries tangent (1,0,0), y (0,1,0), t (0,0,1).
pub fn lift_inputs(tape: &mut Tape<'_>, x: &[f64], y: &[f64], t: &[f64]) -> Result<[Var; 3]> {
    let n = x.len();
    if y.len() != n || t.len() != n {
        return Err(Error::InvalidBatch(format!(
            "coordinate arrays differ in length: x={}, y={}, t={}",
            x.len(),
            y.len(),
            t.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidBatch("empty batch".into()));
    }
    if let Some(bad) = x.iter().chain(y).chain(t).find(|v| !v.is_finite()) {
        return Err(Error::InvalidBatch(format!("non-finite coordinate {bad}")));
    }
    let mut out = [Var(0); 3];
    for (axis, coords) in [x, y, t].into_iter().enumerate() {
        let value = Array2::from_shape_vec((n, 1), coords.to_vec()).expect("column shape");
        let tangents = std::array::from_fn(|k| {
            Array2::from_elem((n, 1), if k == axis { 1.0 } else { 0.0 })
        });
        out[axis] = tape.leaf(Tensor::jet(value, tangents));
    }
    Ok(out)
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self { nodes: Vec::new(), params }
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].out
    }

    fn push(&mut self, out: Tensor, op: Op) -> Var {
        self.nodes.push(Node { out, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant (or externally seeded) tensor.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.leaf(Tensor::value_only(value))
    }

    /// A column of constants.
    pub fn constant_column(&mut self, values: &[f64]) -> Var {
        let a = Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column");
        self.constant(a)
    }

    /// A `rows x cols` view of the parameter vector starting at `offset`.
    pub fn param(&mut self, offset: usize, rows: usize, cols: usize) -> Var {
        let slice = &self.params[offset..offset + rows * cols];
        let a = Array2::from_shape_vec((rows, cols), slice.to_vec()).expect("param shape");
        self.push(Tensor::value_only(a), Op::Param { offset })
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Var {
        let input = self.get(x);
        let rows = input.rows;
        let mut data = Array2::zeros(input.data.dim());
        {
            let u0 = input.value();
            let mut d0 = data.slice_mut(s![0..rows, ..]);
            Zip::from(&mut d0).and(&u0).for_each(|o, &u| *o = f.eval(u).0);
        }
        if input.jet {
            for k in 1..=TANGENTS {
                let uk = input.component(k);
                let u0 = input.value();
                let mut dk = data.slice_mut(s![k * rows..(k + 1) * rows, ..]);
                Zip::from(&mut dk).and(&u0).and(&uk).for_each(|o, &u, &du| *o = f.eval(u).1 * du);
            }
        }
        let jet = input.jet;
        self.push(Tensor::from_stacked(data, rows, jet), Op::Unary { x, f })
    }

    /// `alpha * a + beta * b`; missing tangents count as zero.
    pub fn lincomb(&mut self, a: Var, alpha: f64, b: Var, beta: f64) -> Var {
        let (ta, tb) = (self.get(a), self.get(b));
        assert_eq!(ta.rows, tb.rows, "lincomb row mismatch");
        assert_eq!(ta.cols(), tb.cols(), "lincomb column mismatch");
        let jet = ta.jet || tb.jet;
        let rows = ta.rows;
        let comps = if jet { 1 + TANGENTS } else { 1 };
        let mut data = Array2::zeros((comps * rows, ta.cols()));
        for c in 0..comps {
            let mut block = data.slice_mut(s![c * rows..(c + 1) * rows, ..]);
            if c < ta.components() {
                block.scaled_add(alpha, &ta.component(c));
            }
            if c < tb.components() {
                block.scaled_add(beta, &tb.component(c));
            }
        }
        self.push(Tensor::from_stacked(data, rows, jet), Op::Add { a, b, alpha, beta })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.lincomb(a, 1.0, b, 1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.lincomb(a, 1.0, b, -1.0)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Unary::Affine(c, 0.0))
    }

    /// Elementwise product with the product rule on tangents.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.get(a), self.get(b));
        assert_eq!(ta.rows, tb.rows, "mul row mismatch");
        assert_eq!(ta.cols(), tb.cols(), "mul column mismatch");
        let jet = ta.jet || tb.jet;
        let rows = ta.rows;
        let comps = if jet { 1 + TANGENTS } else { 1 };
        let mut data = Array2::zeros((comps * rows, ta.cols()));
        {
            let mut v = data.slice_mut(s![0..rows, ..]);
            Zip::from(&mut v).and(&ta.value()).and(&tb.value()).for_each(|o, &x, &y| *o = x * y);
        }
        for c in 1..comps {
            let mut block = data.slice_mut(s![c * rows..(c + 1) * rows, ..]);
            if ta.jet {
                Zip::from(&mut block)
                    .and(&ta.component(c))
                    .and(&tb.value())
                    .for_each(|o, &da, &y| *o += da * y);
            }
            if tb.jet {
                Zip::from(&mut block)
                    .and(&ta.value())
                    .and(&tb.component(c))
                    .for_each(|o, &x, &db| *o += x * db);
            }
        }
        self.push(Tensor::from_stacked(data, rows, jet), Op::Mul { a, b })
    }

    /// Column-wise concatenation; parts must agree on rows and jetness.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let first = self.get(parts[0]);
        let (rows, jet) = (first.rows, first.jet);
        for &p in parts {
            let t = self.get(p);
            assert!(t.rows == rows && t.jet == jet, "concat parts disagree in rows or jetness");
        }
        let views: Vec<_> = parts.iter().map(|&p| self.get(p).data.view()).collect();
        let data = concatenate(Axis(1), &views).expect("concat");
        self.push(Tensor::from_stacked(data, rows, jet), Op::Concat { parts: parts.to_vec() })
    }

    pub fn column(&mut self, x: Var, col: usize) -> Var {
        let t = self.get(x);
        assert!(col < t.cols(), "column {col} out of range");
        let data = t.data.slice(s![.., col..col + 1]).to_owned();
        let (rows, jet) = (t.rows, t.jet);
        self.push(Tensor::from_stacked(data, rows, jet), Op::Column { x, col })
    }

    /// Detach block `comp` of a jet as a value-only tensor.
    pub fn component(&mut self, x: Var, comp: usize) -> Var {
        let t = self.get(x);
        let data = t.component(comp).to_owned();
        self.push(Tensor::value_only(data), Op::Component { x, comp })
    }

    /// Tangent block for `axis` (0 = x, 1 = y, 2 = t).
    pub fn tangent(&mut self, x: Var, axis: usize) -> Var {
        assert!(self.get(x).jet, "tangent of a value-only tensor");
        self.component(x, 1 + axis)
    }

    /// Select rows by index (may repeat or permute).
    pub fn gather(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Var {
        let t = self.get(x);
        let (rows, jet) = (t.rows, t.jet);
        let n = idx.len();
        let comps = t.components();
        let mut data = Array2::zeros((comps * n, t.cols()));
        for c in 0..comps {
            for (r, &i) in idx.iter().enumerate() {
                assert!(i < rows, "gather index {i} out of range");
                data.row_mut(c * n + r).assign(&t.data.row(c * rows + i));
            }
        }
        self.push(Tensor::from_stacked(data, n, jet), Op::Gather { x, idx })
    }

    /// Affine layer `act(x W^T + b)` with `W` stored row-major `(n_out, n_in)` at `w`
    /// and the bias at `b`.
    pub fn dense(&mut self, x: Var, w: usize, b: usize, n_in: usize, n_out: usize, act: Activation) -> Var {
        let t = self.get(x);
        assert_eq!(t.cols(), n_in, "dense input width");
        let rows = t.rows;
        let wm = ArrayView2::from_shape((n_out, n_in), &self.params[w..w + n_in * n_out]).expect("weight shape");
        let mut data = t.data.dot(&wm.t());
        let bias = &self.params[b..b + n_out];
        for mut r in data.slice_mut(s![0..rows, ..]).rows_mut() {
            for (o, &bv) in r.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        if act == Activation::Tanh {
            apply_tanh_jet(&mut data, rows, t.jet);
        }
        let jet = t.jet;
        self.push(Tensor::from_stacked(data, rows, jet), Op::Dense { x, w, b, n_in, n_out, act })
    }

    /// `x M^T` with a frozen matrix.
    pub fn const_matmul(&mut self, x: Var, m: Arc<Array2<f64>>) -> Var {
        let t = self.get(x);
        assert_eq!(t.cols(), m.ncols(), "const_matmul width");
        let data = t.data.dot(&m.t());
        let (rows, jet) = (t.rows, t.jet);
        self.push(Tensor::from_stacked(data, rows, jet), Op::ConstMatMul { x, m })
    }

    /// Phase `2*pi*t / tau` with `tau` the learned period read from parameter `raw`.
    pub fn time_phase(&mut self, t: Var, raw: usize, map: PeriodMap) -> Var {
        let tt = self.get(t);
        let omega = 2.0 * std::f64::consts::PI / map.tau(self.params[raw]);
        let data = tt.data.mapv(|v| v * omega);
        let (rows, jet) = (tt.rows, tt.jet);
        self.push(Tensor::from_stacked(data, rows, jet), Op::TimePhase { t, raw, map })
    }

    /// `scale * sum_r w_r * sum_c x[r, c]^2` over the value block of a value-only tensor.
    pub fn sum_squares(&mut self, x: Var, weights: Option<Arc<Vec<f64>>>, scale: f64) -> Var {
        let t = self.get(x);
        assert!(!t.jet, "sum_squares expects a value-only tensor");
        if let Some(w) = &weights {
            assert_eq!(w.len(), t.rows, "weight length");
        }
        let mut acc = 0.0;
        for (r, row) in t.data.rows().into_iter().enumerate() {
            let s: f64 = row.iter().map(|v| v * v).sum();
            acc += weights.as_ref().map_or(1.0, |w| w[r]) * s;
        }
        let out = Array2::from_elem((1, 1), scale * acc);
        self.push(Tensor::value_only(out), Op::SumSquares { x, weights, scale })
    }

    /// Sum of all entries of a value-only tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let t = self.get(x);
        assert!(!t.jet, "sum expects a value-only tensor");
        let out = Array2::from_elem((1, 1), t.data.sum());
        self.push(Tensor::value_only(out), Op::Sum { x })
    }

    pub fn custom(&mut self, inputs: &[Var], mut op: Box<dyn CustomOp>) -> Var {
        let out = {
            let ins: Vec<&Tensor> = inputs.iter().map(|&v| self.get(v)).collect();
            op.forward(&ins, self.params)
        };
        self.push(out, Op::Custom { inputs: inputs.to_vec(), op })
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.get(loss);
        if lt.rows != 1 || lt.cols() != 1 || lt.jet {
            return Err(Error::NonScalarLoss { rows: lt.data.nrows(), cols: lt.cols() });
        }
        let mut adj: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut leaves: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut grad = vec![0.0; self.params.len()];
        adj[loss.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => leaves[i] = Some(g),
                Op::Param { offset } => {
                    for (k, v) in g.iter().enumerate() {
                        grad[offset + k] += v;
                    }
                }
                Op::Unary { x, f } => {
                    let input = &self.nodes[x.0].out;
                    let gx = unary_backward(*f, input, &g);
                    accumulate(&mut adj, *x, gx);
                }
                Op::Add { a, b, alpha, beta } => {
                    for (v, c) in [(*a, *alpha), (*b, *beta)] {
                        let comps = self.nodes[v.0].out.components();
                        let rows = self.nodes[v.0].out.rows;
                        let gv = g.slice(s![0..comps * rows, ..]).mapv(|e| e * c);
                        accumulate(&mut adj, v, gv);
                    }
                }
                Op::Mul { a, b } => {
                    let (ga, gb) = mul_backward(&self.nodes[a.0].out, &self.nodes[b.0].out, &g);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Concat { parts } => {
                    let mut c0 = 0;
                    for &p in parts {
                        let w = self.nodes[p.0].out.cols();
                        accumulate(&mut adj, p, g.slice(s![.., c0..c0 + w]).to_owned());
                        c0 += w;
                    }
                }
                Op::Column { x, col } => {
                    let xt = &self.nodes[x.0].out;
                    let mut gx = Array2::zeros(xt.data.dim());
                    gx.slice_mut(s![.., *col..*col + 1]).assign(&g);
                    accumulate(&mut adj, *x, gx);
                }
                Op::Component { x, comp } => {
                    let xt = &self.nodes[x.0].out;
                    let mut gx = Array2::zeros(xt.data.dim());
                    let r = xt.rows;
                    gx.slice_mut(s![comp * r..(comp + 1) * r, ..]).assign(&g);
                    accumulate(&mut adj, *x, gx);
                }
                Op::Gather { x, idx } => {
                    let xt = &self.nodes[x.0].out;
                    let (rows, n) = (xt.rows, idx.len());
                    let mut gx = Array2::zeros(xt.data.dim());
                    for c in 0..xt.components() {
                        for (r, &src) in idx.iter().enumerate() {
                            let mut dst = gx.row_mut(c * rows + src);
                            dst += &g.row(c * n + r);
                        }
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::Dense { x, w, b, n_in, n_out, act } => {
                    let xt = &self.nodes[x.0].out;
                    let rows = xt.rows;
                    let mut gpre = g;
                    if *act == Activation::Tanh {
                        tanh_jet_backward(&node.out, &mut gpre);
                    }
                    let wm = ArrayView2::from_shape((*n_out, *n_in), &self.params[*w..*w + n_in * n_out])
                        .expect("weight shape");
                    let gw = gpre.t().dot(&xt.data);
                    for (dst, v) in grad[*w..*w + n_in * n_out].iter_mut().zip(gw.iter()) {
                        *dst += v;
                    }
                    let gb = gpre.slice(s![0..rows, ..]).sum_axis(Axis(0));
                    for (dst, v) in grad[*b..*b + n_out].iter_mut().zip(gb.iter()) {
                        *dst += v;
                    }
                    accumulate(&mut adj, *x, gpre.dot(&wm));
                }
                Op::ConstMatMul { x, m } => {
                    accumulate(&mut adj, *x, g.dot(m.as_ref()));
                }
                Op::TimePhase { t, raw, map } => {
                    let tt = &self.nodes[t.0].out;
                    let r = self.params[*raw];
                    let tau = map.tau(r);
                    let omega = 2.0 * std::f64::consts::PI / tau;
                    let domega = -omega / tau * map.dtau(r);
                    let mut acc = 0.0;
                    Zip::from(&g).and(&tt.data).for_each(|&gv, &tv| acc += gv * tv);
                    grad[*raw] += acc * domega;
                    accumulate(&mut adj, *t, g.mapv(|v| v * omega));
                }
                Op::SumSquares { x, weights, scale } => {
                    let xt = &self.nodes[x.0].out;
                    let s0 = g[[0, 0]] * 2.0 * scale;
                    let mut gx = xt.data.mapv(|v| v * s0);
                    if let Some(w) = weights {
                        for (mut row, wr) in gx.rows_mut().into_iter().zip(w.iter()) {
                            row *= *wr;
                        }
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::Sum { x } => {
                    let xt = &self.nodes[x.0].out;
                    accumulate(&mut adj, *x, Array2::from_elem(xt.data.dim(), g[[0, 0]]));
                }
                Op::Custom { inputs, op } => {
                    let ins: Vec<&Tensor> = inputs.iter().map(|&v| &self.nodes[v.0].out).collect();
                    let mut gins: Vec<Array2<f64>> = ins.iter().map(|t| Array2::zeros(t.data.dim())).collect();
                    op.backward(&ins, &node.out, &g, self.params, &mut gins, &mut grad);
                    for (&v, gv) in inputs.iter().zip(gins) {
                        accumulate(&mut adj, v, gv);
                    }
                }
            }
        }
        Ok(Gradients { params: grad, leaves })
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut adj[v.0] {
        Some(a) => *a += &g,
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn apply_tanh_jet(data: &mut Array2<f64>, rows: usize, jet: bool) {
    let (mut v0, mut rest) = data.view_mut().split_at(Axis(0), rows);
    v0.mapv_inplace(f64::tanh);
    if jet {
        for k in 0..TANGENTS {
            let mut blk = rest.slice_mut(s![k * rows..(k + 1) * rows, ..]);
            Zip::from(&mut blk).and(&v0).for_each(|o, &v| *o *= 1.0 - v * v);
        }
    }
}

/// Turn output adjoints of a fused tanh into pre-activation adjoints, in place.
/// Uses only the stored outputs: with v = tanh(u), f'' / f' = -2v.
fn tanh_jet_backward(out: &Tensor, g: &mut Array2<f64>) {
    let rows = out.rows;
    let v0 = out.value();
    if out.jet {
        // value adjoint picks up -2 v0 * sum_k v_k * gbar_k before rescaling
        let mut extra = Array2::<f64>::zeros(v0.dim());
        for k in 1..=TANGENTS {
            let vk = out.component(k);
            let gk = g.slice(s![k * rows..(k + 1) * rows, ..]);
            Zip::from(&mut extra).and(&vk).and(&gk).for_each(|e, &a, &b| *e += a * b);
        }
        let mut g0 = g.slice_mut(s![0..rows, ..]);
        Zip::from(&mut g0).and(&v0).and(&extra).for_each(|o, &v, &e| *o = (1.0 - v * v) * *o - 2.0 * v * e);
        for k in 1..=TANGENTS {
            let mut gk = g.slice_mut(s![k * rows..(k + 1) * rows, ..]);
            Zip::from(&mut gk).and(&v0).for_each(|o, &v| *o *= 1.0 - v * v);
        }
    } else {
        Zip::from(g.view_mut()).and(&v0).for_each(|o, &v| *o *= 1.0 - v * v);
    }
}

fn unary_backward(f: Unary, input: &Tensor, g: &Array2<f64>) -> Array2<f64> {
    let rows = input.rows;
    let mut gx = Array2::zeros(input.data.dim());
    let u0 = input.value();
    {
        let (mut gx0, mut gxr) = gx.view_mut().split_at(Axis(0), rows);
        let g0 = g.slice(s![0..rows, ..]);
        Zip::from(&mut gx0).and(&u0).and(&g0).for_each(|o, &u, &gv| *o = f.eval(u).1 * gv);
        if input.jet {
            for k in 1..=TANGENTS {
                let uk = input.component(k);
                let gk = g.slice(s![k * rows..(k + 1) * rows, ..]);
                Zip::from(&mut gx0).and(&u0).and(&uk).and(&gk).for_each(|o, &u, &du, &gv| {
                    *o += f.eval(u).2 * du * gv;
                });
                let mut gxk: ArrayViewMut2<f64> = gxr.slice_mut(s![(k - 1) * rows..k * rows, ..]);
                Zip::from(&mut gxk).and(&u0).and(&gk).for_each(|o, &u, &gv| *o = f.eval(u).1 * gv);
            }
        }
    }
    gx
}

fn mul_backward(a: &Tensor, b: &Tensor, g: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let rows = a.rows;
    let comps_g = g.nrows() / rows;
    let mut ga = Array2::zeros(a.data.dim());
    let mut gb = Array2::zeros(b.data.dim());
    let g0 = g.slice(s![0..rows, ..]);
    {
        let mut ga0 = ga.slice_mut(s![0..rows, ..]);
        Zip::from(&mut ga0).and(&g0).and(&b.value()).for_each(|o, &gv, &y| *o += gv * y);
        let mut gb0 = gb.slice_mut(s![0..rows, ..]);
        Zip::from(&mut gb0).and(&g0).and(&a.value()).for_each(|o, &gv, &x| *o += gv * x);
    }
    for c in 1..comps_g {
        let gc = g.slice(s![c * rows..(c + 1) * rows, ..]);
        if a.jet {
            // d(out_c)/d(a_c) = b0 ; d(out_c)/d(b0) = a_c
            let mut gac = ga.slice_mut(s![c * rows..(c + 1) * rows, ..]);
            Zip::from(&mut gac).and(&gc).and(&b.value()).for_each(|o, &gv, &y| *o += gv * y);
            let mut gb0 = gb.slice_mut(s![0..rows, ..]);
            Zip::from(&mut gb0).and(&gc).and(&a.component(c)).for_each(|o, &gv, &da| *o += gv * da);
        }
        if b.jet {
            let mut gbc = gb.slice_mut(s![c * rows..(c + 1) * rows, ..]);
            Zip::from(&mut gbc).and(&gc).and(&a.value()).for_each(|o, &gv, &x| *o += gv * x);
            let mut ga0 = ga.slice_mut(s![0..rows, ..]);
            Zip::from(&mut ga0).and(&gc).and(&b.component(c)).for_each(|o, &gv, &db| *o += gv * db);
        }
    }
    (ga, gb)
}

/// Flat parameter vector with classical, quantum and learned-period segments.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParameterStore {
    values: Vec<f64>,
    n_classical: usize,
    n_quantum: usize,
}

impl ParameterStore {
    /// Layout: `[classical.., quantum.., tau_raw]`.
    pub fn new(classical: Vec<f64>, quantum: Vec<f64>, tau_raw: f64) -> Self {
        let (n_classical, n_quantum) = (classical.len(), quantum.len());
        let mut values = classical;
        values.extend(quantum);
        values.push(tau_raw);
        Self { values, n_classical, n_quantum }
    }

    pub fn from_flat(values: Vec<f64>, n_classical: usize, n_quantum: usize) -> Result<Self> {
        if values.len() != n_classical + n_quantum + 1 {
            return Err(Error::Config(format!(
                "parameter payload has {} values, expected {}",
                values.len(),
                n_classical + n_quantum + 1
            )));
        }
        Ok(Self { values, n_classical, n_quantum })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn classical(&self) -> &[f64] {
        &self.values[..self.n_classical]
    }

    pub fn quantum(&self) -> &[f64] {
        &self.values[self.n_classical..self.n_classical + self.n_quantum]
    }

    pub fn quantum_mut(&mut self) -> &mut [f64] {
        let r = self.quantum_range();
        &mut self.values[r]
    }

    pub fn quantum_range(&self) -> std::ops::Range<usize> {
        self.n_classical..self.n_classical + self.n_quantum
    }

    pub fn n_classical(&self) -> usize {
        self.n_classical
    }

    pub fn n_quantum(&self) -> usize {
        self.n_quantum
    }

    /// Index of the raw learned-period parameter.
    pub fn tau_index(&self) -> usize {
        self.values.len() - 1
    }

    pub fn tau_raw(&self) -> f64 {
        self.values[self.tau_index()]
    }
}

/// Gradient with its Euclidean norm and population variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub grad: Vec<f64>,
    pub norm: f64,
    pub variance: f64,
}

impl GradientReport {
    pub fn new(grad: Vec<f64>) -> Self {
        let (norm, variance) = norm_and_variance(&grad);
        Self { grad, norm, variance }
    }

    /// Norm and variance of a sub-range (e.g. the quantum segment).
    pub fn segment_stats(&self, range: std::ops::Range<usize>) -> (f64, f64) {
        norm_and_variance(&self.grad[range])
    }
}

pub fn norm_and_variance(g: &[f64]) -> (f64, f64) {
    if g.is_empty() {
        return (0.0, 0.0);
    }
    let n = g.len() as f64;
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mean = g.iter().sum::<f64>() / n;
    let var = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (norm, var)
}

/// Differentiate scalar `loss` with respect to every parameter.
pub fn loss_gradient(tape: &Tape<'_>, loss: Var) -> Result<GradientReport> {
    Ok(GradientReport::new(tape.backward(loss)?.into_params()))
}
