//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every operation appends a node holding its value and the references it
//! was computed from. [`Tape::backward`] walks the tape in reverse record
//! order, which is a reverse topological order by construction, and visits
//! each node once. Recorded values are never mutated.

use std::collections::HashMap;

use super::tensor::Tensor;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulConst(Var, Tensor),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SegmentSum(Var, Vec<usize>),
    SegmentMean(Var, Vec<usize>, Vec<usize>),
    SegmentSoftmax(Var, Vec<usize>),
    RowDot(Var, Var),
    SumAll(Var),
    MeanRows(Var),
    Minimum(Var, Var),
    Clamp(Var, f64, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Recording of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<usize, Var>,
}

/// Gradients of a scalar with respect to every recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`; `None` when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Constant input. Receives a gradient but is not a parameter.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Parameter leaf identified by `id`. Repeated calls with the same id
    /// return the same node, so gradients from every use accumulate.
    pub fn param(&mut self, id: usize, value: &Tensor) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    fn zip_same(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "elementwise shape mismatch");
        let data = x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.rows, x.cols, data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let x = self.value(a);
        Tensor::from_vec(x.rows, x.cols, x.data.iter().map(|&p| f(p)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_same(a, b, |p, q| p + q);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_same(a, b, |p, q| p - q);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_same(a, b, |p, q| p * q);
        self.push(out, Op::Mul(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows, 1, "add_row expects a single row");
        assert_eq!(x.cols, r.cols, "add_row width mismatch");
        let mut out = x.clone();
        for i in 0..out.rows {
            for (o, b) in out.row_mut(i).iter_mut().zip(&r.data) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Elementwise product with a constant tensor.
    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Var {
        let x = self.value(a);
        assert_eq!(x.shape(), c.shape(), "mul_const shape mismatch");
        let data = x.data.iter().zip(&c.data).map(|(p, q)| p * q).collect();
        let out = Tensor::from_vec(x.rows, x.cols, data);
        self.push(out, Op::MulConst(a, c))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |p| p * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.map(a, |p| p + s);
        self.push(out, Op::AddScalar(a))
    }

    /// `1 - a`
    pub fn one_minus(&mut self, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, 1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.map(a, sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.map(a, f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.map(a, |p| p * p);
        self.push(out, Op::Square(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.value(p).rows, rows, "concat row mismatch");
                self.value(p).cols
            })
            .sum();
        let mut out = Tensor::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let t = self.value(p);
            for i in 0..rows {
                out.row_mut(i)[off..off + t.cols].copy_from_slice(t.row(i));
            }
            off += t.cols;
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Row selection `out[i] = a[idx[i]]`; indices may repeat.
    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(idx.len(), x.cols);
        for (i, &j) in idx.iter().enumerate() {
            assert!(j < x.rows, "gather index out of range");
            out.row_mut(i).copy_from_slice(x.row(j));
        }
        self.push(out, Op::GatherRows(a, idx))
    }

    /// Sums rows of `a` into `n` segments: `out[seg[i]] += a[i]`.
    pub fn segment_sum(&mut self, a: Var, seg: Vec<usize>, n: usize) -> Var {
        let x = self.value(a);
        assert_eq!(seg.len(), x.rows, "segment id count mismatch");
        let mut out = Tensor::zeros(n, x.cols);
        for (i, &s) in seg.iter().enumerate() {
            for (o, v) in out.row_mut(s).iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        self.push(out, Op::SegmentSum(a, seg))
    }

    /// Mean of the rows in each segment; empty segments yield zero rows.
    pub fn segment_mean(&mut self, a: Var, seg: Vec<usize>, n: usize) -> Var {
        let x = self.value(a);
        assert_eq!(seg.len(), x.rows, "segment id count mismatch");
        let mut counts = vec![0usize; n];
        for &s in &seg {
            counts[s] += 1;
        }
        let mut out = Tensor::zeros(n, x.cols);
        for (i, &s) in seg.iter().enumerate() {
            let w = 1.0 / counts[s] as f64;
            for (o, v) in out.row_mut(s).iter_mut().zip(x.row(i)) {
                *o += w * v;
            }
        }
        self.push(out, Op::SegmentMean(a, seg, counts))
    }

    /// Softmax of a column of scores within each segment.
    pub fn segment_softmax(&mut self, a: Var, seg: Vec<usize>, n: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.cols, 1, "segment_softmax expects a column");
        assert_eq!(seg.len(), x.rows, "segment id count mismatch");
        let mut max = vec![f64::NEG_INFINITY; n];
        for (i, &s) in seg.iter().enumerate() {
            max[s] = max[s].max(x.data[i]);
        }
        let mut exps: Vec<f64> = seg
            .iter()
            .enumerate()
            .map(|(i, &s)| (x.data[i] - max[s]).exp())
            .collect();
        let mut denom = vec![0.0; n];
        for (i, &s) in seg.iter().enumerate() {
            denom[s] += exps[i];
        }
        for (i, &s) in seg.iter().enumerate() {
            exps[i] /= denom[s];
        }
        let out = Tensor::column(exps);
        self.push(out, Op::SegmentSoftmax(a, seg))
    }

    /// Row-wise dot product of two equally shaped matrices, as a column.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.shape(), y.shape(), "row_dot shape mismatch");
        let data = (0..x.rows)
            .map(|i| x.row(i).iter().zip(y.row(i)).map(|(p, q)| p * q).sum())
            .collect();
        self.push(Tensor::column(data), Op::RowDot(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Column means as a `1 x c` row. Zero rows give a zero row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut out = Tensor::zeros(1, x.cols);
        if x.rows > 0 {
            let w = 1.0 / x.rows as f64;
            for i in 0..x.rows {
                for (o, v) in out.data.iter_mut().zip(x.row(i)) {
                    *o += w * v;
                }
            }
        }
        self.push(out, Op::MeanRows(a))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let out = self.zip_same(a, b, f64::min);
        self.push(out, Op::Minimum(a, b))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.map(a, |p| p.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Reverse pass from a `1 x 1` node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    /// Parameter gradients as `(param id, gradient)`, sorted by id.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<(usize, Tensor)> {
        let mut out: Vec<(usize, Tensor)> = self
            .params
            .iter()
            .map(|(&id, &v)| {
                let g = grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(self.value(v).rows, self.value(v).cols));
                (id, g)
            })
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.matmul_t(vb));
                accumulate(grads, *b, va.t_matmul(g));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, scaled(g, -1.0));
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, hadamard(g, self.value(*b)));
                accumulate(grads, *b, hadamard(g, self.value(*a)));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                let mut r = Tensor::zeros(1, g.cols);
                for i in 0..g.rows {
                    for (o, v) in r.data.iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                accumulate(grads, *row, r);
            }
            Op::MulConst(a, c) => accumulate(grads, *a, hadamard(g, c)),
            Op::Scale(a, s) => accumulate(grads, *a, scaled(g, *s)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Tanh(a) => accumulate(grads, *a, zip_map(g, y, |gi, yi| gi * (1.0 - yi * yi))),
            Op::Sigmoid(a) => accumulate(grads, *a, zip_map(g, y, |gi, yi| gi * yi * (1.0 - yi))),
            Op::Exp(a) => accumulate(grads, *a, hadamard(g, y)),
            Op::Log(a) => accumulate(grads, *a, zip_map(g, self.value(*a), |gi, xi| gi / xi)),
            Op::Square(a) => {
                accumulate(grads, *a, zip_map(g, self.value(*a), |gi, xi| 2.0 * gi * xi))
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols;
                    let mut part = Tensor::zeros(g.rows, c);
                    for i in 0..g.rows {
                        part.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                    }
                    accumulate(grads, p, part);
                    off += c;
                }
            }
            Op::GatherRows(a, idx) => {
                let src = self.value(*a);
                let mut ga = Tensor::zeros(src.rows, src.cols);
                for (i, &j) in idx.iter().enumerate() {
                    for (o, v) in ga.row_mut(j).iter_mut().zip(g.row(i)) {
                        *o += v;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SegmentSum(a, seg) => {
                let mut ga = Tensor::zeros(seg.len(), g.cols);
                for (i, &s) in seg.iter().enumerate() {
                    ga.row_mut(i).copy_from_slice(g.row(s));
                }
                accumulate(grads, *a, ga);
            }
            Op::SegmentMean(a, seg, counts) => {
                let mut ga = Tensor::zeros(seg.len(), g.cols);
                for (i, &s) in seg.iter().enumerate() {
                    let w = 1.0 / counts[s] as f64;
                    for (o, v) in ga.row_mut(i).iter_mut().zip(g.row(s)) {
                        *o = w * v;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SegmentSoftmax(a, seg) => {
                let n = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = vec![0.0; n];
                for (i, &s) in seg.iter().enumerate() {
                    dot[s] += g.data[i] * y.data[i];
                }
                let data = seg
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| y.data[i] * (g.data[i] - dot[s]))
                    .collect();
                accumulate(grads, *a, Tensor::column(data));
            }
            Op::RowDot(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(va.rows, va.cols);
                let mut gb = Tensor::zeros(vb.rows, vb.cols);
                for i in 0..va.rows {
                    let gi = g.data[i];
                    for (o, v) in ga.row_mut(i).iter_mut().zip(vb.row(i)) {
                        *o = gi * v;
                    }
                    for (o, v) in gb.row_mut(i).iter_mut().zip(va.row(i)) {
                        *o = gi * v;
                    }
                }
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::SumAll(a) => {
                let src = self.value(*a);
                let gs = g.item();
                accumulate(grads, *a, Tensor::from_vec(src.rows, src.cols, vec![gs; src.len()]));
            }
            Op::MeanRows(a) => {
                let src = self.value(*a);
                let mut ga = Tensor::zeros(src.rows, src.cols);
                if src.rows > 0 {
                    let w = 1.0 / src.rows as f64;
                    for i in 0..src.rows {
                        for (o, v) in ga.row_mut(i).iter_mut().zip(&g.data) {
                            *o = w * v;
                        }
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Minimum(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let pick_a: Vec<bool> = va.data.iter().zip(&vb.data).map(|(p, q)| p <= q).collect();
                let ga = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data.iter().zip(&pick_a).map(|(&v, &s)| if s { v } else { 0.0 }).collect(),
                );
                let gb = Tensor::from_vec(
                    g.rows,
                    g.cols,
                    g.data.iter().zip(&pick_a).map(|(&v, &s)| if s { 0.0 } else { v }).collect(),
                );
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Clamp(a, lo, hi) => {
                let src = self.value(*a);
                let ga = zip_map(g, src, |gi, xi| if xi < *lo || xi > *hi { 0.0 } else { gi });
                accumulate(grads, *a, ga);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn scaled(g: &Tensor, s: f64) -> Tensor {
    let mut out = g.clone();
    out.scale_assign(s);
    out
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip_map(a, b, |p, q| p * q)
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&p, &q)| f(p, q)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central differences of `f` with respect to every entry of every input.
    fn numeric_grads(inputs: &[Tensor], f: &dyn Fn(&[Tensor]) -> f64, eps: f64) -> Vec<Tensor> {
        let mut out = Vec::new();
        for k in 0..inputs.len() {
            let mut g = Tensor::zeros(inputs[k].rows, inputs[k].cols);
            for e in 0..inputs[k].len() {
                let mut plus = inputs.to_vec();
                plus[k].data[e] += eps;
                let mut minus = inputs.to_vec();
                minus[k].data[e] -= eps;
                g.data[e] = (f(&plus) - f(&minus)) / (2.0 * eps);
            }
            out.push(g);
        }
        out
    }

    fn assert_grad_close(analytic: &Tensor, numeric: &Tensor, tol: f64) {
        for (a, n) in analytic.data.iter().zip(&numeric.data) {
            let denom = a.abs().max(n.abs()).max(1e-6);
            assert!((a - n).abs() / denom < tol, "analytic {a} vs numeric {n}");
        }
    }

    fn check(inputs: Vec<Tensor>, build: impl Fn(&mut Tape, &[Var]) -> Var) {
        let f = |xs: &[Tensor]| {
            let mut t = Tape::new();
            let vars: Vec<Var> = xs.iter().map(|x| t.constant(x.clone())).collect();
            let out = build(&mut t, &vars);
            t.value(out).item()
        };
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss);
        let numeric = numeric_grads(&inputs, &f, 1e-5);
        for (v, n) in vars.iter().zip(&numeric) {
            let zero = Tensor::zeros(n.rows, n.cols);
            assert_grad_close(grads.get(*v).unwrap_or(&zero), n, 1e-6);
        }
    }

    #[test]
    fn linear_sum_gradient_is_outer_product() {
        let mut tape = Tape::new();
        let w = tape.param(0, &Tensor::from_vec(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]));
        let x = tape.constant(Tensor::from_vec(3, 1, vec![1.0, -2.0, 3.0]));
        let y = tape.matmul(w, x);
        let loss = tape.sum(y);
        let grads = tape.backward(loss);
        let gw = grads.get(w).unwrap();
        assert_eq!(gw.data, vec![1.0, -2.0, 3.0, 1.0, -2.0, 3.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z);
        let grads = tape.backward(s);
        assert_eq!(grads.get(z).unwrap().item(), 0.25);
    }

    #[test]
    fn repeated_param_accumulates() {
        let mut tape = Tape::new();
        let p = Tensor::scalar(3.0);
        let a = tape.param(7, &p);
        let b = tape.param(7, &p);
        assert_eq!(a, b);
        let y = tape.mul(a, b);
        let grads = tape.backward(y);
        let pg = tape.param_grads(&grads);
        assert_eq!(pg, vec![(7, Tensor::scalar(6.0))]);
    }

    #[test]
    fn unreachable_param_gets_zero() {
        let mut tape = Tape::new();
        let used = tape.param(0, &Tensor::scalar(2.0));
        let _unused = tape.param(1, &Tensor::from_vec(1, 2, vec![1.0, 1.0]));
        let loss = tape.square(used);
        let grads = tape.backward(loss);
        let pg = tape.param_grads(&grads);
        assert_eq!(pg[1].1, Tensor::zeros(1, 2));
    }

    #[test]
    fn primitive_ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 4, 3);
        let b = random(&mut rng, 4, 3);
        let w = random(&mut rng, 3, 2);
        let row = random(&mut rng, 1, 3);

        check(vec![a.clone(), w.clone()], |t, v| {
            let m = t.matmul(v[0], v[1]);
            let s = t.tanh(m);
            t.sum(s)
        });
        check(vec![a.clone(), b.clone()], |t, v| {
            let m = t.mul(v[0], v[1]);
            let d = t.sub(m, v[1]);
            let s = t.sigmoid(d);
            t.mean(s)
        });
        check(vec![a.clone(), row], |t, v| {
            let r = t.add_row(v[0], v[1]);
            let e = t.exp(r);
            let sq = t.square(e);
            t.sum(sq)
        });
        check(vec![a.clone(), b.clone()], |t, v| {
            let c = t.concat_cols(&[v[0], v[1]]);
            let g = t.gather_rows(c, vec![3, 0, 0, 2]);
            let sm = t.segment_mean(g, vec![0, 1, 1, 2], 4);
            let ss = t.segment_sum(sm, vec![0, 0, 1, 1], 2);
            let sq = t.square(ss);
            t.sum(sq)
        });
        check(vec![a.clone(), b.clone()], |t, v| {
            let d = t.row_dot(v[0], v[1]);
            let sm = t.segment_softmax(d, vec![0, 1, 0, 0], 2);
            let w = t.mul_const(sm, Tensor::column(vec![1.0, -2.0, 3.0, 0.5]));
            t.sum(w)
        });
        check(vec![a.clone()], |t, v| {
            let sq = t.square(v[0]);
            let p = t.add_scalar(sq, 0.5);
            let l = t.log(p);
            let m = t.mean_rows(l);
            let s = t.scale(m, 3.0);
            t.sum(s)
        });
        check(vec![a.clone(), b.clone()], |t, v| {
            let c = t.clamp(v[0], -0.5, 0.5);
            let m = t.minimum(c, v[1]);
            let o = t.one_minus(m);
            let sq = t.square(o);
            t.sum(sq)
        });
    }

    #[test]
    fn composite_three_layer_network_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, 5, 4);
        let w1 = random(&mut rng, 4, 6);
        let b1 = random(&mut rng, 1, 6);
        let w2 = random(&mut rng, 6, 6);
        let w3 = random(&mut rng, 6, 1);
        check(vec![x, w1, b1, w2, w3], |t, v| {
            let h = t.matmul(v[0], v[1]);
            let h = t.add_row(h, v[2]);
            let h = t.tanh(h);
            let h = t.matmul(h, v[3]);
            let h = t.sigmoid(h);
            let o = t.matmul(h, v[4]);
            let o = t.exp(o);
            let l = t.log(o);
            let sq = t.square(l);
            t.mean(sq)
        });
    }

    #[test]
    fn backward_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 6, 3);
        let run = || {
            let mut t = Tape::new();
            let v = t.param(0, &x);
            let d = t.row_dot(v, v);
            let sm = t.segment_softmax(d, vec![0, 1, 0, 1, 2, 2], 3);
            let l = t.sum(sm);
            let g = t.backward(l);
            t.param_grads(&g)
        };
        let a = run();
        let b = run();
        for ((_, ga), (_, gb)) in a.iter().zip(&b) {
            assert!(ga.data.iter().zip(&gb.data).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }
}
