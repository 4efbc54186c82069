//! Forward constructors and their vector-Jacobian products.

use alloc::vec::Vec;

use super::{Axis, Graph, Op, Var, LAYER_NORM_EPS};
use crate::matrix::{gemm_into, interp_weights, Matrix};
use crate::{math, Error, Result};

fn broadcast_shape(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<[usize; 2]> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a[0], b[0]), dim(a[1], b[1])) {
        (Some(r), Some(c)) => Ok([r, c]),
        _ => Err(Error::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

#[inline]
fn bidx(shape: [usize; 2], r: usize, c: usize) -> usize {
    let rr = if shape[0] == 1 { 0 } else { r };
    let cc = if shape[1] == 1 { 0 } else { c };
    rr * shape[1] + cc
}

fn zip_broadcast(a: &Matrix, b: &Matrix, out: [usize; 2], f: impl Fn(f64, f64) -> f64) -> Matrix {
    if a.shape() == b.shape() {
        let data = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| f(x, y)).collect();
        return Matrix::from_vec(out[0], out[1], data).expect("shape checked");
    }
    let (sa, sb) = (a.shape(), b.shape());
    let (da, db) = (a.as_slice(), b.as_slice());
    Matrix::from_fn(out[0], out[1], |r, c| f(da[bidx(sa, r, c)], db[bidx(sb, r, c)]))
}

/// Accumulate `g` (full output shape) into a buffer of `target` shape,
/// summing over broadcast dimensions.
fn reduce_into(grads: &mut [Option<Matrix>], v: Var, target: [usize; 2], g: &Matrix) {
    let slot = grads[v.0].get_or_insert_with(|| Matrix::zeros(target[0], target[1]));
    if target == g.shape() {
        slot.add_assign(g);
        return;
    }
    let buf = slot.as_mut_slice();
    for r in 0..g.rows() {
        for (c, &x) in g.row(r).iter().enumerate() {
            buf[bidx(target, r, c)] += x;
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, shape: [usize; 2], f: impl FnOnce(&mut Matrix)) {
    let slot = grads[v.0].get_or_insert_with(|| Matrix::zeros(shape[0], shape[1]));
    f(slot);
}

fn check_axis(op: &'static str, axis: usize) -> Result<Axis> {
    match axis {
        0 => Ok(Axis::Rows),
        1 => Ok(Axis::Cols),
        _ => Err(Error::InvalidAxis { op, axis }),
    }
}

/// Standard normal pdf and cdf, used by GELU.
fn phi(x: f64) -> f64 {
    math::exp(-0.5 * x * x) / math::sqrt(2.0 * math::PI)
}

fn big_phi(x: f64) -> f64 {
    0.5 * math::erfc(-x / math::SQRT_2)
}

impl Graph<'_> {
    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.requires_grad(a);
        self.push(value, op, rg)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let out = broadcast_shape(name, self.shape(a), self.shape(b))?;
        let value = zip_broadcast(self.value(a), self.value(b), out, f);
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, op, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = Matrix::matmul_t(self.value(a), false, self.value(b), false)?;
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.requires_grad(a);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| x * k)
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + k)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Concatenate along `axis` (0 stacks rows, 1 stacks columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let axis = check_axis("concat", axis)?;
        let Some(&first) = parts.first() else {
            return Err(Error::Contract("concat of zero tensors".into()));
        };
        let base = self.shape(first);
        let mut total = 0;
        for &p in parts {
            let s = self.shape(p);
            let (same, along) = match axis {
                Axis::Rows => (s[1] == base[1], s[0]),
                Axis::Cols => (s[0] == base[0], s[1]),
            };
            if !same {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: base,
                    rhs: s,
                });
            }
            total += along;
        }
        let value = match axis {
            Axis::Rows => {
                let mut data = Vec::with_capacity(total * base[1]);
                for &p in parts {
                    data.extend_from_slice(self.value(p).as_slice());
                }
                Matrix::from_vec(total, base[1], data)?
            }
            Axis::Cols => {
                let mut out = Matrix::zeros(base[0], total);
                let mut offset = 0;
                for &p in parts {
                    let m = self.value(p);
                    for r in 0..base[0] {
                        out.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
                    }
                    offset += m.cols();
                }
                out
            }
        };
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        Ok(self.push(value, Op::Concat(parts.to_vec(), axis), rg))
    }

    /// `len` rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let axis = check_axis("slice", axis)?;
        let s = self.shape(a);
        let extent = s[axis as usize];
        if start + len > extent || len == 0 {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: s,
                rhs: [start, len],
            });
        }
        let m = self.value(a);
        let value = match axis {
            Axis::Rows => Matrix::from_vec(len, s[1], m.as_slice()[start * s[1]..(start + len) * s[1]].to_vec())?,
            Axis::Cols => Matrix::from_fn(s[0], len, |r, c| m.get(r, start + c)),
        };
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Slice { src: a, axis, start }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.requires_grad(a);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::scalar(m.sum() / m.len() as f64);
        let rg = self.requires_grad(a);
        self.push(value, Op::Mean(a), rg)
    }

    fn reduce_axis(&mut self, a: Var, axis: Axis, mean: bool) -> Var {
        let m = self.value(a);
        let [rows, cols] = m.shape();
        let value = match axis {
            Axis::Rows => {
                let mut out = Matrix::zeros(1, cols);
                for r in 0..rows {
                    for (o, x) in out.as_mut_slice().iter_mut().zip(m.row(r)) {
                        *o += x;
                    }
                }
                if mean {
                    out.scale_in_place(1.0 / rows as f64);
                }
                out
            }
            Axis::Cols => Matrix::from_fn(rows, 1, |r, _| {
                let s: f64 = m.row(r).iter().sum();
                if mean {
                    s / cols as f64
                } else {
                    s
                }
            }),
        };
        let rg = self.requires_grad(a);
        let op = if mean { Op::MeanAxis(a, axis) } else { Op::SumAxis(a, axis) };
        self.push(value, op, rg)
    }

    /// Sum over `axis`; axis 0 yields a row vector, axis 1 a column vector.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let axis = check_axis("sum_axis", axis)?;
        Ok(self.reduce_axis(a, axis, false))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let axis = check_axis("mean_axis", axis)?;
        Ok(self.reduce_axis(a, axis, true))
    }

    /// Row `i` of the output is row `indices[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: s,
                rhs: [bad, 1],
            });
        }
        let m = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * s[1]);
        for &i in indices {
            data.extend_from_slice(m.row(i));
        }
        let value = Matrix::from_vec(indices.len(), s[1], data)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::GatherRows(a, indices.to_vec()), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    /// `max(0, x)`; the hinge used by the ranking loss. Gradient 1 for
    /// `x > 0`, 0 otherwise.
    pub fn max_with_zero(&mut self, a: Var) -> Var {
        self.relu(a)
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Gelu(a), |x| x * big_phi(x))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), math::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), math::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), math::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), math::ln)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(a, Op::Recip(a), |x| 1.0 / x)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), math::softplus)
    }

    /// Softmax along `axis` (0: each column sums to one, 1: each row).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let axis = check_axis("softmax", axis)?;
        let value = self.lane_map(a, axis, |lane| {
            let max = lane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in lane.iter_mut() {
                *x = math::exp(*x - max);
                total += *x;
            }
            for x in lane.iter_mut() {
                *x /= total;
            }
        });
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Softmax(a, axis), rg))
    }

    pub fn log_softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let axis = check_axis("log_softmax", axis)?;
        let value = self.lane_map(a, axis, |lane| {
            let max = lane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + math::ln(lane.iter().map(|&x| math::exp(x - max)).sum::<f64>());
            for x in lane.iter_mut() {
                *x -= lse;
            }
        });
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::LogSoftmax(a, axis), rg))
    }

    /// Normalise each row to zero mean and unit variance (eps 1e-5); no affine.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let [rows, cols] = m.shape();
        let mut value = m.clone();
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = value.row_mut(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / math::sqrt(var + LAYER_NORM_EPS);
            for x in row.iter_mut() {
                *x = (*x - mean) * is;
            }
            inv_std.push(is);
        }
        let rg = self.requires_grad(a);
        self.push(value, Op::LayerNorm { src: a, inv_std }, rg)
    }

    /// Linear interpolation along the last axis onto `n_out` columns, endpoints
    /// aligned.
    pub fn interp_1d(&mut self, a: Var, n_out: usize) -> Result<Var> {
        let s = self.shape(a);
        if n_out == 0 || s[1] == 0 {
            return Err(Error::ShapeMismatch {
                op: "interp_1d",
                lhs: s,
                rhs: [s[0], n_out],
            });
        }
        let w = interp_weights(s[1], n_out);
        let m = self.value(a);
        let value = Matrix::from_fn(s[0], n_out, |r, j| {
            let (i0, i1, t) = w[j];
            (1.0 - t) * m.get(r, i0) + t * m.get(r, i1)
        });
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Interp1d(a), rg))
    }

    fn lane_map(&self, a: Var, axis: Axis, f: impl Fn(&mut [f64])) -> Matrix {
        let m = self.value(a);
        match axis {
            Axis::Cols => {
                let mut out = m.clone();
                for r in 0..out.rows() {
                    f(out.row_mut(r));
                }
                out
            }
            Axis::Rows => {
                let mut t = m.transpose();
                for r in 0..t.rows() {
                    f(t.row_mut(r));
                }
                t.transpose()
            }
        }
    }

    pub(super) fn backprop_node(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        let elementwise = |grads: &mut [Option<Matrix>], a: Var, d: &dyn Fn(usize) -> f64| {
            let s = val(a).shape();
            accumulate(grads, a, s, |buf| {
                let gs = g.as_slice();
                for (k, o) in buf.as_mut_slice().iter_mut().enumerate() {
                    *o += gs[k] * d(k);
                }
            });
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if rg(a) {
                    let s = val(a).shape();
                    accumulate(grads, a, s, |buf| gemm_into(g, false, val(b), true, buf, 1.0));
                }
                if rg(b) {
                    let s = val(b).shape();
                    accumulate(grads, b, s, |buf| gemm_into(val(a), true, g, false, buf, 1.0));
                }
            }
            Op::Transpose(a) => {
                let s = val(*a).shape();
                let gt = g.transpose();
                accumulate(grads, *a, s, |buf| buf.add_assign(&gt));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if rg(*a) {
                    reduce_into(grads, *a, val(*a).shape(), g);
                }
                if rg(*b) {
                    let gb = if sign < 0.0 { g.map(|x| -x) } else { g.clone() };
                    reduce_into(grads, *b, val(*b).shape(), &gb);
                }
            }
            Op::Mul(a, b) => {
                let out = g.shape();
                if rg(*a) {
                    let ga = zip_broadcast(g, val(*b), out, |x, y| x * y);
                    reduce_into(grads, *a, val(*a).shape(), &ga);
                }
                if rg(*b) {
                    let gb = zip_broadcast(g, val(*a), out, |x, y| x * y);
                    reduce_into(grads, *b, val(*b).shape(), &gb);
                }
            }
            Op::Div(a, b) => {
                let out = g.shape();
                if rg(*a) {
                    let ga = zip_broadcast(g, val(*b), out, |x, y| x / y);
                    reduce_into(grads, *a, val(*a).shape(), &ga);
                }
                if rg(*b) {
                    // d(a/b)/db = -y / b
                    let yb = zip_broadcast(y, val(*b), out, |q, d| -q / d);
                    let gb = zip_broadcast(g, &yb, out, |x, t| x * t);
                    reduce_into(grads, *b, val(*b).shape(), &gb);
                }
            }
            Op::Scale(a, k) => {
                let k = *k;
                elementwise(grads, *a, &|_| k);
            }
            Op::AddScalar(a) => {
                let s = val(*a).shape();
                accumulate(grads, *a, s, |buf| buf.add_assign(g));
            }
            Op::Concat(parts, axis) => {
                let mut offset = 0;
                for &p in parts {
                    let s = val(p).shape();
                    if rg(p) {
                        accumulate(grads, p, s, |buf| match axis {
                            Axis::Rows => {
                                let n = s[0] * s[1];
                                let src = &g.as_slice()[offset * s[1]..offset * s[1] + n];
                                for (o, x) in buf.as_mut_slice().iter_mut().zip(src) {
                                    *o += x;
                                }
                            }
                            Axis::Cols => {
                                for r in 0..s[0] {
                                    let src = &g.row(r)[offset..offset + s[1]];
                                    for (o, x) in buf.row_mut(r).iter_mut().zip(src) {
                                        *o += x;
                                    }
                                }
                            }
                        });
                    }
                    offset += match axis {
                        Axis::Rows => s[0],
                        Axis::Cols => s[1],
                    };
                }
            }
            Op::Slice { src, axis, start } => {
                let s = val(*src).shape();
                accumulate(grads, *src, s, |buf| match axis {
                    Axis::Rows => {
                        let dst = &mut buf.as_mut_slice()[start * s[1]..start * s[1] + g.len()];
                        for (o, x) in dst.iter_mut().zip(g.as_slice()) {
                            *o += x;
                        }
                    }
                    Axis::Cols => {
                        for r in 0..s[0] {
                            for (o, x) in buf.row_mut(r)[*start..*start + g.cols()].iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                    }
                });
            }
            Op::Sum(a) | Op::Mean(a) => {
                let s = val(*a).shape();
                let mut k = g.as_slice()[0];
                if matches!(node.op, Op::Mean(_)) {
                    k /= (s[0] * s[1]) as f64;
                }
                accumulate(grads, *a, s, |buf| {
                    for o in buf.as_mut_slice() {
                        *o += k;
                    }
                });
            }
            Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
                let s = val(*a).shape();
                let denom = if matches!(node.op, Op::MeanAxis(..)) { s[*axis as usize] as f64 } else { 1.0 };
                accumulate(grads, *a, s, |buf| {
                    for r in 0..s[0] {
                        for c in 0..s[1] {
                            let gv = match axis {
                                Axis::Rows => g.get(0, c),
                                Axis::Cols => g.get(r, 0),
                            };
                            buf.as_mut_slice()[r * s[1] + c] += gv / denom;
                        }
                    }
                });
            }
            Op::GatherRows(a, idx) => {
                let s = val(*a).shape();
                accumulate(grads, *a, s, |buf| {
                    for (row, &src) in idx.iter().enumerate() {
                        for (o, x) in buf.row_mut(src).iter_mut().zip(g.row(row)) {
                            *o += x;
                        }
                    }
                });
            }
            Op::Relu(a) => {
                let x = val(*a).as_slice();
                elementwise(grads, *a, &|k| if x[k] > 0.0 { 1.0 } else { 0.0 });
            }
            Op::Gelu(a) => {
                let x = val(*a).as_slice();
                elementwise(grads, *a, &|k| big_phi(x[k]) + x[k] * phi(x[k]));
            }
            Op::Sigmoid(a) => {
                let ys = y.as_slice();
                elementwise(grads, *a, &|k| ys[k] * (1.0 - ys[k]));
            }
            Op::Tanh(a) => {
                let ys = y.as_slice();
                elementwise(grads, *a, &|k| 1.0 - ys[k] * ys[k]);
            }
            Op::Exp(a) => {
                let ys = y.as_slice();
                elementwise(grads, *a, &|k| ys[k]);
            }
            Op::Log(a) => {
                let x = val(*a).as_slice();
                elementwise(grads, *a, &|k| 1.0 / x[k]);
            }
            Op::Recip(a) => {
                let ys = y.as_slice();
                elementwise(grads, *a, &|k| -ys[k] * ys[k]);
            }
            Op::Softplus(a) => {
                let x = val(*a).as_slice();
                elementwise(grads, *a, &|k| math::sigmoid(x[k]));
            }
            Op::Softmax(a, axis) | Op::LogSoftmax(a, axis) => {
                let log = matches!(node.op, Op::LogSoftmax(..));
                let s = y.shape();
                let (lanes, lane_len) = match axis {
                    Axis::Cols => (s[0], s[1]),
                    Axis::Rows => (s[1], s[0]),
                };
                let at = |lane: usize, k: usize| match axis {
                    Axis::Cols => lane * s[1] + k,
                    Axis::Rows => k * s[1] + lane,
                };
                let ys = y.as_slice();
                let gs = g.as_slice();
                accumulate(grads, *a, s, |buf| {
                    let b = buf.as_mut_slice();
                    for lane in 0..lanes {
                        if log {
                            let gsum: f64 = (0..lane_len).map(|k| gs[at(lane, k)]).sum();
                            for k in 0..lane_len {
                                let idx = at(lane, k);
                                b[idx] += gs[idx] - math::exp(ys[idx]) * gsum;
                            }
                        } else {
                            let dot: f64 = (0..lane_len).map(|k| gs[at(lane, k)] * ys[at(lane, k)]).sum();
                            for k in 0..lane_len {
                                let idx = at(lane, k);
                                b[idx] += ys[idx] * (gs[idx] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm { src, inv_std } => {
                let s = y.shape();
                let n = s[1] as f64;
                accumulate(grads, *src, s, |buf| {
                    for r in 0..s[0] {
                        let gr = g.row(r);
                        let yr = y.row(r);
                        let mean_g = gr.iter().sum::<f64>() / n;
                        let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                        for ((o, &gv), &yv) in buf.row_mut(r).iter_mut().zip(gr).zip(yr) {
                            *o += inv_std[r] * (gv - mean_g - yv * mean_gy);
                        }
                    }
                });
            }
            Op::Interp1d(a) => {
                let s = val(*a).shape();
                let w = interp_weights(s[1], g.cols());
                accumulate(grads, *a, s, |buf| {
                    for r in 0..s[0] {
                        let row = buf.row_mut(r);
                        for (j, &(i0, i1, t)) in w.iter().enumerate() {
                            let gv = g.get(r, j);
                            row[i0] += (1.0 - t) * gv;
                            row[i1] += t * gv;
                        }
                    }
                });
            }
        }
    }
}
