//! Reverse-mode differentiation over batched dense matrices.
//!
//! Every value on the tape is a `rows x cols` matrix where rows index the
//! batch. Forward-mode tangents can be expressed with the same operations,
//! so losses that depend on input gradients (eikonal terms) are still
//! differentiated exactly with respect to the parameters.

use ndarray::{s, Array2, Axis, Zip};

use super::params::ParameterBlock;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<'p> {
    Leaf,
    Linear {
        x: Var,
        block: &'p ParameterBlock,
        layer: usize,
        bias: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// `a (B x C) * b (B x 1)` broadcast over columns.
    MulCol(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    /// Backward reuses the companion sigmoid node.
    Softplus {
        x: Var,
        slope: Var,
    },
    Sigmoid {
        x: Var,
        beta: f64,
    },
    Sin(Var),
    Cos(Var),
    Exp(Var),
    Abs(Var),
    Sqrt(Var),
    Square(Var),
    Concat(Vec<Var>),
    Columns {
        x: Var,
        start: usize,
    },
    GatherRows {
        x: Var,
        rows: Vec<usize>,
    },
    SumCols(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node<'p> {
    value: Array2<f64>,
    op: Op<'p>,
    needs_grad: bool,
}

/// Recorded forward computation. One tape per batch; drop it after backward.
#[derive(Debug, Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
}

/// Result of a backward pass.
#[derive(Debug)]
pub struct Gradients {
    leaves: Vec<Option<Array2<f64>>>,
    params: Vec<(usize, Vec<f64>)>,
}

impl Gradients {
    /// Adjoint of a leaf created with [`Tape::input`].
    pub fn wrt(&self, v: Var) -> Option<&Array2<f64>> {
        self.leaves.get(v.0).and_then(|a| a.as_ref())
    }

    /// Gradient with respect to every value of `block` (zeros if unused).
    pub fn params(&self, block: &ParameterBlock) -> Vec<f64> {
        let key = block as *const ParameterBlock as usize;
        self.params
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| vec![0.0; block.len()])
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op<'p>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf; no gradient is tracked for it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose adjoint is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// `x W^T (+ b)` for layer `layer` of `block`.
    pub fn linear(&mut self, x: Var, block: &'p ParameterBlock, layer: usize, bias: bool) -> Var {
        let w = block.weight(layer);
        let xv = self.value(x);
        assert_eq!(
            xv.ncols(),
            w.ncols(),
            "linear layer {layer}: input has {} columns, layer expects {}",
            xv.ncols(),
            w.ncols()
        );
        let mut y = xv.dot(&w.t());
        if bias {
            y += &block.bias(layer);
        }
        self.push(
            y,
            Op::Linear {
                x,
                block,
                layer,
                bias,
            },
            true,
        )
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op<'p>) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.dim(), bv.dim(), "elementwise shape mismatch");
        let mut out = av.clone();
        Zip::from(&mut out).and(bv).for_each(|o, &y| *o = f(*o, y));
        let needs = self.needs(a) || self.needs(b);
        self.push(out, op, needs)
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op<'p>) -> Var {
        let out = self.value(x).mapv(f);
        let needs = self.needs(x);
        self.push(out, op, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x / y, Op::Div(a, b))
    }

    /// Multiply every column of `a` by the single column `b`.
    pub fn mul_col(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.ncols(), 1, "mul_col expects a single column");
        assert_eq!(av.nrows(), bv.nrows(), "mul_col row mismatch");
        let out = av * bv;
        let needs = self.needs(a) || self.needs(b);
        self.push(out, Op::MulCol(a, b), needs)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::Offset(x))
    }

    /// Softplus and its slope `sigmoid(beta x)` from a single exponential.
    /// Returns `(softplus, slope)`; the slope node is differentiable too.
    pub fn softplus(&mut self, x: Var, beta: f64) -> (Var, Var) {
        let xv = self.value(x);
        let mut sp = Array2::zeros(xv.dim());
        let mut sg = Array2::zeros(xv.dim());
        Zip::from(&mut sp).and(&mut sg).and(xv).for_each(|sp, sg, &z| {
            let bz = beta * z;
            let e = (-bz.abs()).exp();
            *sp = (bz.max(0.0) + e.ln_1p()) / beta;
            *sg = if bz >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
        });
        let needs = self.needs(x);
        let slope = self.push(sg, Op::Sigmoid { x, beta }, needs);
        let out = self.push(sp, Op::Softplus { x, slope }, needs);
        (out, slope)
    }

    pub fn sin(&mut self, x: Var) -> Var {
        self.unary(x, f64::sin, Op::Sin(x))
    }

    pub fn cos(&mut self, x: Var) -> Var {
        self.unary(x, f64::cos, Op::Cos(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, f64::sqrt, Op::Sqrt(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|&p| self.value(p).ncols()).sum();
        let mut out = Array2::zeros((rows, cols));
        let mut c = 0;
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.nrows(), rows, "concat row mismatch");
            out.slice_mut(s![.., c..c + v.ncols()]).assign(v);
            c += v.ncols();
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::Concat(parts.to_vec()), needs)
    }

    /// Columns `start..start + width` of `x`.
    pub fn columns(&mut self, x: Var, start: usize, width: usize) -> Var {
        let out = self.value(x).slice(s![.., start..start + width]).to_owned();
        let needs = self.needs(x);
        self.push(out, Op::Columns { x, start }, needs)
    }

    pub fn column(&mut self, x: Var, j: usize) -> Var {
        self.columns(x, j, 1)
    }

    /// Rows of `x` selected (with repetition) by `rows`.
    pub fn gather_rows(&mut self, x: Var, rows: Vec<usize>) -> Var {
        let out = self.value(x).select(Axis(0), &rows);
        let needs = self.needs(x);
        self.push(out, Op::GatherRows { x, rows }, needs)
    }

    /// Per-row sum, `B x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let out = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        let needs = self.needs(x);
        self.push(out, Op::SumCols(x), needs)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(x).sum());
        let needs = self.needs(x);
        self.push(out, Op::Sum(x), needs)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let out = Array2::from_elem((1, 1), v.sum() / v.len() as f64);
        let needs = self.needs(x);
        self.push(out, Op::Mean(x), needs)
    }

    /// Backward pass from a `1 x 1` root with seed 1.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let dim = self.check_root(root)?;
        if dim != (1, 1) {
            return Err(Error::State(format!(
                "backward needs a scalar root, got {dim:?}; use backward_seeded"
            )));
        }
        self.backward_seeded(root, Array2::ones((1, 1)))
    }

    /// Backward pass with an explicit seed of the root's shape.
    pub fn backward_seeded(&self, root: Var, seed: Array2<f64>) -> Result<Gradients> {
        let dim = self.check_root(root)?;
        if seed.dim() != dim {
            return Err(Error::Shape(format!(
                "seed shape {:?} does not match root {dim:?}",
                seed.dim()
            )));
        }
        let n = root.0 + 1;
        let mut adj: Vec<Option<Array2<f64>>> = (0..n).map(|_| None).collect();
        let mut leaves: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params: Vec<(usize, Vec<f64>)> = Vec::new();
        adj[root.0] = Some(seed);

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    leaves[i] = Some(g);
                }
                Op::Linear {
                    x,
                    block,
                    layer,
                    bias,
                } => {
                    let key = *block as *const ParameterBlock as usize;
                    let slot = block.slot(*layer);
                    let pi = match params.iter().position(|(k, _)| *k == key) {
                        Some(pi) => pi,
                        None => {
                            params.push((key, vec![0.0; block.len()]));
                            params.len() - 1
                        }
                    };
                    let pg = &mut params[pi].1;
                    let xv = self.value(*x);
                    let gw = g.t().dot(xv);
                    let wlen = slot.inputs * slot.outputs;
                    for (d, s) in pg[slot.offset..slot.offset + wlen].iter_mut().zip(gw.iter()) {
                        *d += s;
                    }
                    if *bias {
                        let gb = g.sum_axis(Axis(0));
                        let start = slot.offset + wlen;
                        for (d, s) in pg[start..start + slot.outputs].iter_mut().zip(gb.iter()) {
                            *d += s;
                        }
                    }
                    if self.needs(*x) {
                        let gx = g.dot(&block.weight(*layer));
                        accumulate(&mut adj, *x, gx);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut adj, *b, g.clone());
                    }
                    accumulate(&mut adj, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut adj, *b, -&g);
                    }
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut adj, *a, &g * self.value(*b));
                    }
                    if self.needs(*b) {
                        accumulate(&mut adj, *b, &g * self.value(*a));
                    }
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    if self.needs(*a) {
                        accumulate(&mut adj, *a, &g / bv);
                    }
                    if self.needs(*b) {
                        // d(a/b)/db = -(a/b)/b
                        let mut gb = g.clone();
                        Zip::from(&mut gb)
                            .and(&node.value)
                            .and(bv)
                            .for_each(|gb, &q, &bv| *gb *= -q / bv);
                        accumulate(&mut adj, *b, gb);
                    }
                }
                Op::MulCol(a, b) => {
                    if self.needs(*b) {
                        let gb = (&g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        accumulate(&mut adj, *b, gb);
                    }
                    if self.needs(*a) {
                        accumulate(&mut adj, *a, &g * self.value(*b));
                    }
                }
                Op::Scale(x, c) => accumulate(&mut adj, *x, g * *c),
                Op::Offset(x) => accumulate(&mut adj, *x, g),
                Op::Softplus { x, slope } => {
                    accumulate(&mut adj, *x, g * self.value(*slope));
                }
                Op::Sigmoid { x, beta } => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|g, &s| *g *= beta * s * (1.0 - s));
                    accumulate(&mut adj, *x, gx);
                }
                Op::Sin(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|g, &v| *g *= v.cos());
                    accumulate(&mut adj, *x, gx);
                }
                Op::Cos(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|g, &v| *g *= -v.sin());
                    accumulate(&mut adj, *x, gx);
                }
                Op::Exp(x) => accumulate(&mut adj, *x, g * &node.value),
                Op::Abs(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|g, &v| *g *= sign(v));
                    accumulate(&mut adj, *x, gx);
                }
                Op::Sqrt(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(&node.value)
                        .for_each(|g, &r| *g *= 0.5 / r);
                    accumulate(&mut adj, *x, gx);
                }
                Op::Square(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx)
                        .and(self.value(*x))
                        .for_each(|g, &v| *g *= 2.0 * v);
                    accumulate(&mut adj, *x, gx);
                }
                Op::Concat(parts) => {
                    let mut c = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        if self.needs(p) {
                            accumulate(&mut adj, p, g.slice(s![.., c..c + w]).to_owned());
                        }
                        c += w;
                    }
                }
                Op::Columns { x, start } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    gx.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut adj, *x, gx);
                }
                Op::GatherRows { x, rows } => {
                    let mut gx = Array2::zeros(self.value(*x).dim());
                    for (r, &src) in rows.iter().enumerate() {
                        let mut dst = gx.row_mut(src);
                        dst += &g.row(r);
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::SumCols(x) => {
                    let xd = self.value(*x).dim();
                    let gx = g
                        .broadcast(xd)
                        .expect("sum_cols adjoint broadcast")
                        .to_owned();
                    accumulate(&mut adj, *x, gx);
                }
                Op::Sum(x) => {
                    let xd = self.value(*x).dim();
                    accumulate(&mut adj, *x, Array2::from_elem(xd, g[[0, 0]]));
                }
                Op::Mean(x) => {
                    let xv = self.value(*x);
                    let c = g[[0, 0]] / xv.len() as f64;
                    accumulate(&mut adj, *x, Array2::from_elem(xv.dim(), c));
                }
            }
        }
        Ok(Gradients { leaves, params })
    }

    fn check_root(&self, root: Var) -> Result<(usize, usize)> {
        if self.nodes.is_empty() {
            return Err(Error::State("backward called before any forward pass".into()));
        }
        self.nodes
            .get(root.0)
            .map(|n| n.value.dim())
            .ok_or_else(|| Error::State(format!("variable {} is not on this tape", root.0)))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(adj: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut adj[v.0] {
        Some(a) => *a += &g,
        slot @ None => *slot = Some(g),
    }
}
