//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation in creation order. Values are
//! computed eagerly; [`Tape::backward`] walks the record once in reverse and
//! adds the resulting gradients into the leaves marked as trainable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::is_missing;
use crate::matrix::Matrix;

/// Handle to a value on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`.
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxLast(Var),
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    SegmentSum {
        x: Var,
        segments: Vec<usize>,
    },
    ScaleRows(Var, Vec<f64>),
    Mean(Var),
    Sum(Var),
    ConcatCols(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    Transpose(Var),
    MaskMul(Var, Matrix),
    BceMasked {
        logits: Var,
        targets: Vec<f64>,
        count: usize,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    trainable: bool,
    grad: Option<Matrix>,
}

/// Ordered record of a computation.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_error(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::contract(format!(
        "{op}: incompatible shapes {}x{} and {}x{}",
        a.0, a.1, b.0, b.1
    ))
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is accumulated by [`Tape::backward`].
    pub fn param(&mut self, value: Matrix) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].trainable = true;
        v
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of a trainable leaf, zeros when untouched.
    pub fn grad_or_zeros(&self, v: Var) -> Matrix {
        let (r, c) = self.shape(v);
        self.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(r, c))
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(shape_error("matmul", sa, sb));
        }
        let value = self.value(a).matmul(self.value(b));
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`, the usual form of a linear map with weight `b`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.1 {
            return Err(shape_error("matmul_t", sa, sb));
        }
        let value = self.value(a).matmul_t(self.value(b));
        Ok(self.push(value, Op::MatMulT(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_error("add", sa, sb));
        }
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds the row vector `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb != (1, sa.1) {
            return Err(shape_error("add_row", sa, sb));
        }
        let mut value = self.value(a).clone();
        let bias = self.value(b).row(0).to_vec();
        for i in 0..sa.0 {
            for (x, b) in value.row_mut(i).iter_mut().zip(&bias) {
                *x += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_error("mul", sa, sb));
        }
        let data = self
            .value(a)
            .as_slice()
            .iter()
            .zip(self.value(b).as_slice())
            .map(|(x, y)| x * y)
            .collect();
        Ok(self.push(Matrix::from_vec(sa.0, sa.1, data), Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let mut value = self.value(a).clone();
        value.scale(c);
        self.push(value, Op::Scale(a, c))
    }

    /// Multiplies `a` by the 1×1 value `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.shape(s) != (1, 1) {
            return Err(shape_error("scale_by", self.shape(a), self.shape(s)));
        }
        let mut value = self.value(a).clone();
        value.scale(self.value(s)[(0, 0)]);
        Ok(self.push(value, Op::ScaleBy(a, s)))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(value, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.shape(a);
        if c == 0 {
            return Err(Error::contract("softmax over an empty axis"));
        }
        let mut value = self.value(a).clone();
        for i in 0..r {
            softmax_in_place(value.row_mut(i));
        }
        Ok(self.push(value, Op::SoftmaxLast(a)))
    }

    /// `x Wᵀ + b`, with `b` optional.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul_t(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    /// Coordinatewise max over the rows of each segment; ties go to the lowest row.
    pub fn segment_max(&mut self, x: Var, segments: &[usize], k: usize) -> Result<Var> {
        let (n, d) = self.shape(x);
        check_segments(segments, n, k)?;
        let src = self.value(x);
        let mut value = Matrix::zeros(k, d);
        let mut argmax = vec![usize::MAX; k * d];
        for (row, &s) in segments.iter().enumerate() {
            for j in 0..d {
                let v = src[(row, j)];
                let slot = s * d + j;
                if argmax[slot] == usize::MAX || v > value[(s, j)] {
                    value[(s, j)] = v;
                    argmax[slot] = row;
                }
            }
        }
        Ok(self.push(value, Op::SegmentMax { x, argmax }))
    }

    /// Sum over the rows of each segment.
    pub fn segment_sum(&mut self, x: Var, segments: &[usize], k: usize) -> Result<Var> {
        let (n, d) = self.shape(x);
        check_segments(segments, n, k)?;
        let src = self.value(x);
        let mut value = Matrix::zeros(k, d);
        for (row, &s) in segments.iter().enumerate() {
            for j in 0..d {
                value[(s, j)] += src[(row, j)];
            }
        }
        Ok(self.push(
            value,
            Op::SegmentSum {
                x,
                segments: segments.to_vec(),
            },
        ))
    }

    /// Multiplies row `i` by `factors[i]`.
    pub fn scale_rows(&mut self, x: Var, factors: &[f64]) -> Result<Var> {
        let (r, _) = self.shape(x);
        if factors.len() != r {
            return Err(shape_error("scale_rows", self.shape(x), (factors.len(), 1)));
        }
        let mut value = self.value(x).clone();
        for (i, f) in factors.iter().enumerate() {
            for v in value.row_mut(i) {
                *v *= f;
            }
        }
        Ok(self.push(value, Op::ScaleRows(x, factors.to_vec())))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let len = v.as_slice().len();
        if len == 0 {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let value = Matrix::from_vec(1, 1, vec![v.sum() / len as f64]);
        Ok(self.push(value, Op::Mean(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Matrix::from_vec(1, 1, vec![self.value(x).sum()]);
        self.push(value, Op::Sum(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat of nothing"))?;
        let rows = self.shape(*first).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(shape_error(
                    "concat_cols",
                    self.shape(*first),
                    self.shape(p),
                ));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                value.row_mut(i)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(x);
        if start > end || end > c {
            return Err(Error::contract(format!(
                "slice {start}..{end} out of {c} columns"
            )));
        }
        let mut value = Matrix::zeros(r, end - start);
        for i in 0..r {
            value
                .row_mut(i)
                .copy_from_slice(&self.value(x).row(i)[start..end]);
        }
        Ok(self.push(value, Op::SliceCols { x, start }))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let value = self.value(x).transpose();
        self.push(value, Op::Transpose(x))
    }

    /// Elementwise product with a fixed mask, used for dropout.
    pub fn mask_mul(&mut self, x: Var, mask: Matrix) -> Result<Var> {
        if self.shape(x) != mask.shape() {
            return Err(shape_error("mask_mul", self.shape(x), mask.shape()));
        }
        let data = self
            .value(x)
            .as_slice()
            .iter()
            .zip(mask.as_slice())
            .map(|(a, m)| a * m)
            .collect();
        let (r, c) = mask.shape();
        Ok(self.push(Matrix::from_vec(r, c, data), Op::MaskMul(x, mask)))
    }

    /// Mean binary cross-entropy on logits over non-missing targets; 0 when all are missing.
    pub fn bce_masked(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let z = self.value(logits);
        if z.as_slice().len() != targets.len() {
            return Err(shape_error("bce_masked", z.shape(), (1, targets.len())));
        }
        let (loss, count) = bce_sum(z.as_slice(), targets);
        let mean = if count == 0 { 0.0 } else { loss / count as f64 };
        Ok(self.push(
            Matrix::from_vec(1, 1, vec![mean]),
            Op::BceMasked {
                logits,
                targets: targets.to_vec(),
                count,
            },
        ))
    }

    /// Adds `∂root/∂leaf` into every trainable leaf's gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.shape(root) != (1, 1) {
            let (r, c) = self.shape(root);
            return Err(Error::contract(format!(
                "backward needs a scalar root, got {r}x{c}"
            )));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                if self.nodes[i].trainable {
                    let slot = &mut self.nodes[i].grad;
                    match slot {
                        Some(acc) => acc.add_assign(&g),
                        None => *slot = Some(g),
                    }
                }
                continue;
            }
            let node = &self.nodes[i];
            for (v, cg) in self.local_grads(&node.op, &node.value, &g) {
                match &mut adj[v.0] {
                    Some(acc) => acc.add_assign(&cg),
                    slot => *slot = Some(cg),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, op: &Op, out: &Matrix, g: &Matrix) -> Vec<(Var, Matrix)> {
        let val = |v: Var| &self.nodes[v.0].value;
        match op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => vec![(*a, g.matmul_t(val(*b))), (*b, val(*a).t_matmul(g))],
            Op::MatMulT(a, b) => vec![(*a, g.matmul(val(*b))), (*b, g.t_matmul(val(*a)))],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::AddRow(a, b) => {
                let mut gb = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (acc, x) in gb.row_mut(0).iter_mut().zip(g.row(i)) {
                        *acc += x;
                    }
                }
                vec![(*a, g.clone()), (*b, gb)]
            }
            Op::Mul(a, b) => vec![(*a, hadamard(g, val(*b))), (*b, hadamard(g, val(*a)))],
            Op::Scale(a, c) => {
                let mut ga = g.clone();
                ga.scale(*c);
                vec![(*a, ga)]
            }
            Op::ScaleBy(a, s) => {
                let mut ga = g.clone();
                ga.scale(val(*s)[(0, 0)]);
                let gs = hadamard(g, val(*a)).sum();
                vec![(*a, ga), (*s, Matrix::filled(1, 1, gs))]
            }
            Op::Relu(a) => {
                let x = val(*a);
                let data = g
                    .as_slice()
                    .iter()
                    .zip(x.as_slice())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                vec![(*a, Matrix::from_vec(g.rows(), g.cols(), data))]
            }
            Op::Sigmoid(a) => {
                let data = g
                    .as_slice()
                    .iter()
                    .zip(out.as_slice())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                vec![(*a, Matrix::from_vec(g.rows(), g.cols(), data))]
            }
            Op::SoftmaxLast(a) => {
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let (gr, yr) = (g.row(i), out.row(i));
                    let inner: f64 = gr.iter().zip(yr).map(|(g, y)| g * y).sum();
                    for ((o, g), y) in ga.row_mut(i).iter_mut().zip(gr).zip(yr) {
                        *o = y * (g - inner);
                    }
                }
                vec![(*a, ga)]
            }
            Op::SegmentMax { x, argmax } => {
                let (n, d) = val(*x).shape();
                let mut gx = Matrix::zeros(n, d);
                for (slot, &row) in argmax.iter().enumerate() {
                    if row != usize::MAX {
                        gx[(row, slot % d)] += g.as_slice()[slot];
                    }
                }
                vec![(*x, gx)]
            }
            Op::SegmentSum { x, segments } => {
                let d = g.cols();
                let mut gx = Matrix::zeros(segments.len(), d);
                for (row, &s) in segments.iter().enumerate() {
                    gx.row_mut(row).copy_from_slice(g.row(s));
                }
                vec![(*x, gx)]
            }
            Op::ScaleRows(x, factors) => {
                let mut gx = g.clone();
                for (i, f) in factors.iter().enumerate() {
                    for v in gx.row_mut(i) {
                        *v *= f;
                    }
                }
                vec![(*x, gx)]
            }
            Op::Mean(x) => {
                let (r, c) = val(*x).shape();
                vec![(*x, Matrix::filled(r, c, g[(0, 0)] / (r * c) as f64))]
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                vec![(*x, Matrix::filled(r, c, g[(0, 0)]))]
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let (r, c) = val(p).shape();
                    let mut gp = Matrix::zeros(r, c);
                    for i in 0..r {
                        gp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + c]);
                    }
                    offset += c;
                    out.push((p, gp));
                }
                out
            }
            Op::SliceCols { x, start } => {
                let (r, c) = val(*x).shape();
                let mut gx = Matrix::zeros(r, c);
                for i in 0..r {
                    gx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                vec![(*x, gx)]
            }
            Op::Transpose(x) => vec![(*x, g.transpose())],
            Op::MaskMul(x, mask) => vec![(*x, hadamard(g, mask))],
            Op::BceMasked {
                logits,
                targets,
                count,
            } => {
                let z = val(*logits);
                let scale = if *count == 0 {
                    0.0
                } else {
                    g[(0, 0)] / *count as f64
                };
                let data = z
                    .as_slice()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| {
                        if is_missing(t) {
                            0.0
                        } else {
                            (sigmoid(z) - t) * scale
                        }
                    })
                    .collect();
                vec![(*logits, Matrix::from_vec(z.rows(), z.cols(), data))]
            }
        }
    }
}

fn check_segments(segments: &[usize], n: usize, k: usize) -> Result<()> {
    if segments.len() != n {
        return Err(Error::contract(format!(
            "{} segment ids for {n} rows",
            segments.len()
        )));
    }
    if let Some(&bad) = segments.iter().find(|&&s| s >= k) {
        return Err(Error::contract(format!("segment id {bad} out of {k}")));
    }
    Ok(())
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| x * y)
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Summed stable BCE over non-missing targets and their count.
pub(crate) fn bce_sum(logits: &[f64], targets: &[f64]) -> (f64, usize) {
    let mut loss = 0.0;
    let mut count = 0;
    for (&z, &t) in logits.iter().zip(targets) {
        if is_missing(t) {
            continue;
        }
        loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        count += 1;
    }
    (loss, count)
}

// ---------------------------------------------------------------------------
// Finite-difference checking

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    /// `‖analytic − numeric‖∞ / max(‖analytic‖∞, ‖numeric‖∞)` over the whole
    /// gradient, all inputs taken together.
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
}

/// Compares reverse-mode gradients of a scalar function against central differences.
///
/// `f` receives a fresh tape and one trainable leaf per input and must return a scalar.
pub fn gradcheck<F>(inputs: &[Matrix], step: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Matrix]| -> Result<(Tape, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let (mut tape, vars, out) = eval(inputs)?;
    tape.backward(out)?;
    let mut abs: f64 = 0.0;
    let mut scale: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (idx, &v) in vars.iter().enumerate() {
        let analytic = tape.grad_or_zeros(v);
        let mut numeric = Matrix::zeros(analytic.rows(), analytic.cols());
        for e in 0..analytic.as_slice().len() {
            let orig = work[idx].as_slice()[e];
            work[idx].as_mut_slice()[e] = orig + step;
            let (t, _, o) = eval(&work)?;
            let plus = t.value(o)[(0, 0)];
            work[idx].as_mut_slice()[e] = orig - step;
            let (t, _, o) = eval(&work)?;
            let minus = t.value(o)[(0, 0)];
            work[idx].as_mut_slice()[e] = orig;
            numeric.as_mut_slice()[e] = (plus - minus) / (2.0 * step);
        }
        abs = abs.max(analytic.max_abs_diff(&numeric));
        scale = analytic
            .as_slice()
            .iter()
            .chain(numeric.as_slice())
            .fold(scale, |m, v| m.max(v.abs()));
    }
    let report = GradCheck {
        max_relative_error: if scale == 0.0 { 0.0 } else { abs / scale },
        max_absolute_error: abs,
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn relu_examples() {
        let mut t = Tape::new();
        let x = t.param(m(&[&[-1.0, 0.0, 2.0]]));
        let y = t.relu(x);
        assert_eq!(t.value(y).as_slice(), &[0.0, 0.0, 2.0]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[0.0, 0.0, 1.0]);

        let mut t = Tape::new();
        let x = t.param(m(&[&[3.0, -3.0]]));
        let y = t.relu(x);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x).unwrap().as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let a = t.constant(m(&[&[5.0], &[0.0]]));
        let b = t.constant(m(&[&[0.0, 0.0], &[2f64.ln(), 0.0]]));
        let sa = t.softmax_last(a).unwrap();
        let sb = t.softmax_last(b).unwrap();
        assert_eq!(t.value(sa).as_slice(), &[1.0, 1.0]);
        assert_eq!(t.value(sb).row(0), &[0.5, 0.5]);
        assert!((t.value(sb)[(1, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.value(sb)[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn backward_contracts() {
        let mut t = Tape::new();
        let w = t.param(m(&[&[1.0, 2.0], &[3.0, 4.0]]));
        let x = t.constant(m(&[&[5.0], &[7.0]]));
        let y = t.matmul(w, x).unwrap();
        assert!(matches!(t.backward(y), Err(Error::Contract(_))));
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(
            t.grad(w).unwrap().to_rows(),
            vec![vec![5.0, 7.0], vec![5.0, 7.0]]
        );
        t.backward(s).unwrap();
        assert_eq!(
            t.grad(w).unwrap().to_rows(),
            vec![vec![10.0, 14.0], vec![10.0, 14.0]]
        );
        assert!(t.grad(x).is_none());

        let mut t = Tape::new();
        let w = t.param(m(&[&[1.0]]));
        let c = t.constant(m(&[&[4.0]]));
        let zero = t.scale(w, 0.0);
        let out = t.add(zero, c).unwrap();
        t.backward(out).unwrap();
        assert_eq!(t.grad(w).unwrap().as_slice(), &[0.0]);
    }

    #[test]
    fn bce_examples() {
        let mut t = Tape::new();
        let z = t.param(m(&[&[0.0]]));
        let l = t.bce_masked(z, &[1.0]).unwrap();
        assert!((t.value(l)[(0, 0)] - 2f64.ln()).abs() < 1e-15);

        let z = t.param(m(&[&[0.3, -2.0]]));
        let l = t.bce_masked(z, &[f64::NAN, f64::NAN]).unwrap();
        assert_eq!(t.value(l)[(0, 0)], 0.0);
        t.backward(l).unwrap();
        assert_eq!(t.grad(z).unwrap().as_slice(), &[0.0, 0.0]);

        let z = t.constant(m(&[&[20.0, -20.0]]));
        let l = t.bce_masked(z, &[1.0, 0.0]).unwrap();
        assert!(t.value(l)[(0, 0)] < 1e-8);
    }

    #[test]
    fn segment_max_ties_go_to_lowest_row() {
        let mut t = Tape::new();
        let x = t.param(m(&[&[1.0, 5.0], &[1.0, 2.0], &[0.0, 9.0]]));
        let y = t.segment_max(x, &[0, 0, 1], 2).unwrap();
        assert_eq!(t.value(y).to_rows(), vec![vec![1.0, 5.0], vec![0.0, 9.0]]);
        let s = t.sum(y);
        t.backward(s).unwrap();
        assert_eq!(
            t.grad(x).unwrap().to_rows(),
            vec![vec![1.0, 1.0], vec![0.0, 0.0], vec![1.0, 1.0]]
        );
        assert!(t.segment_max(x, &[0, 3, 1], 2).is_err());
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::zeros(2, 3));
        let b = t.constant(Matrix::zeros(2, 3));
        assert!(t.matmul(a, b).is_err());
        let bias = t.constant(Matrix::zeros(1, 2));
        assert!(t.add_row(a, bias).is_err());
        assert!(t.matmul_t(a, b).is_ok());
    }
}
