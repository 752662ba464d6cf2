//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its value and the ids of its
//! inputs, so node order is a topological order. `backward` walks the tape
//! from the seed toward the leaves accumulating vector-Jacobian products.

use std::sync::Arc;

use super::ops::{self, axis_split};
use super::{NumericsError, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax { input: Var, axis: usize },
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols { input: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
}

/// A single forward pass recorded for differentiation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
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
        self.nodes.push(Node {
            value: Arc::new(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Records a leaf without copying its storage.
    pub fn leaf_shared(&mut self, t: Arc<Tensor>) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let v = ops::matmul_nt(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::MatMulNt(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(NumericsError::Shape {
                op,
                lhs: x.shape().to_vec(),
                rhs: y.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var, NumericsError> {
        self.same_shape(op, a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(t, node))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let v = ops::add_row(self.value(x), self.value(bias))?;
        Ok(self.push(v, Op::AddRow(x, bias)))
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|e| e * c);
        self.push(v, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|e| e.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var, NumericsError> {
        self.softmax_masked(x, axis, None)
    }

    /// Softmax where `mask[i] == false` excludes entry `i`.
    pub fn softmax_masked(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Result<Var, NumericsError> {
        let v = ops::softmax_masked(self.value(x), axis, mask)?;
        Ok(self.push(v, Op::Softmax { input: x, axis }))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, NumericsError> {
        let parts = ops::layer_norm_parts(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(
            parts.output,
            Op::LayerNorm {
                input: x,
                gain,
                bias,
                normalized: parts.normalized,
                inv_std: parts.inv_std,
            },
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let t = self.value(x);
        let (rows, cols) = t.require_matrix("slice_cols")?;
        if start >= end || end > cols {
            return Err(NumericsError::Invalid(format!(
                "column range {start}..{end} out of bounds for {cols} columns"
            )));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let v = Tensor::matrix(rows, w, data)?;
        Ok(self.push(v, Op::SliceCols { input: x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let rows = self.value(parts[0]).require_matrix("concat_cols")?.0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).require_matrix("concat_cols")?;
            if r != rows {
                return Err(NumericsError::Shape {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            total += c;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor::matrix(rows, total, data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let cols = self.value(parts[0]).require_matrix("concat_rows")?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).require_matrix("concat_rows")?;
            if c != cols {
                return Err(NumericsError::Shape {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::matrix(rows, cols, data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec())))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean of squared differences over all entries.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let d = self.sub(a, b)?;
        let sq = self.mul(d, d)?;
        Ok(self.mean(sq))
    }

    /// Gradients of the scalar node `seed` with respect to every recorded node.
    pub fn backward(&self, seed: Var) -> Result<Gradients, NumericsError> {
        let seed_val = self.value(seed);
        if !seed_val.is_scalar() {
            return Err(NumericsError::NonScalarSeed {
                shape: seed_val.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[seed.0] = Some(vec![1.0]);

        for idx in (0..=seed.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<(), NumericsError> {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let gt = Tensor::new(out.shape().to_vec(), g.to_vec())?;
                let da = ops::matmul_nt(&gt, self.value(*b))?;
                let db = ops::matmul_tn(self.value(*a), &gt)?;
                accumulate(grads, *a, da.data());
                accumulate(grads, *b, db.data());
            }
            Op::MatMulNt(a, b) => {
                // c = a bᵀ: da = g b, db = gᵀ a
                let gt = Tensor::new(out.shape().to_vec(), g.to_vec())?;
                let da = ops::matmul(&gt, self.value(*b))?;
                let db = ops::matmul_tn(&gt, self.value(*a))?;
                accumulate(grads, *a, da.data());
                accumulate(grads, *b, db.data());
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g);
                accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g);
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let da: Vec<f64> = g.iter().zip(bv).map(|(x, y)| x * y).collect();
                let db: Vec<f64> = g.iter().zip(av).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, &da);
                accumulate(grads, *b, &db);
            }
            Op::AddRow(x, b) => {
                accumulate(grads, *x, g);
                let n = self.value(*b).len();
                let mut db = vec![0.0; n];
                for (i, v) in g.iter().enumerate() {
                    db[i % n] += v;
                }
                accumulate(grads, *b, &db);
            }
            Op::Scale(x, c) => {
                let dx: Vec<f64> = g.iter().map(|v| v * c).collect();
                accumulate(grads, *x, &dx);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let dx: Vec<f64> = g
                    .iter()
                    .zip(xv)
                    .map(|(v, &e)| if e > 0.0 { *v } else { 0.0 })
                    .collect();
                accumulate(grads, *x, &dx);
            }
            Op::Softmax { input, axis } => {
                let (outer, len, inner) = axis_split(out.shape(), *axis)?;
                let y = out.data();
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| y[idx(j)] * g[idx(j)]).sum();
                        for j in 0..len {
                            dx[idx(j)] = y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
                accumulate(grads, *input, &dx);
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                let n = gv.len();
                let rows = inv_std.len();
                let mut dx = vec![0.0; g.len()];
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                for r in 0..rows {
                    let off = r * n;
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..n {
                        let dy = g[off + j];
                        let xh = normalized[off + j];
                        dgain[j] += dy * xh;
                        dbias[j] += dy;
                        let dxh = dy * gv[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                    }
                    let scale = inv_std[r] / n as f64;
                    for j in 0..n {
                        let dxh = g[off + j] * gv[j];
                        dx[off + j] = scale * (n as f64 * dxh - sum_dxh - normalized[off + j] * sum_dxh_xh);
                    }
                }
                accumulate(grads, *input, &dx);
                accumulate(grads, *gain, &dgain);
                accumulate(grads, *bias, &dbias);
            }
            Op::SliceCols { input, start } => {
                let src = self.value(*input);
                let (rows, cols) = (src.rows(), src.cols());
                let w = out.cols();
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    dx[r * cols + start..r * cols + start + w].copy_from_slice(&g[r * w..(r + 1) * w]);
                }
                accumulate(grads, *input, &dx);
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let rows = out.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut dp = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        dp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                    }
                    accumulate(grads, p, &dp);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    accumulate(grads, p, &g[offset..offset + n]);
                    offset += n;
                }
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                accumulate(grads, *x, &vec![g[0]; n]);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                accumulate(grads, *x, &vec![g[0] / n as f64; n]);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], target: Var, delta: &[f64]) {
    match &mut grads[target.0] {
        Some(existing) => {
            for (e, d) in existing.iter_mut().zip(delta) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(delta.to_vec()),
    }
}

/// Result of [`Graph::backward`]: one gradient per recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; nodes the seed does not depend on get zeros.
    pub fn get(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient matches node shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Raw gradient slice, `None` when the seed does not depend on `v`.
    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
    }

    /// Checks the analytic gradient of `build` with respect to every input
    /// against central differences.
    fn check_op(inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
        let eval = |ins: &[Tensor]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = ins.iter().map(|t| g.leaf(t.clone())).collect();
            let out = build(&mut g, &vars);
            (g, vars, out)
        };
        let (g, vars, out) = eval(&inputs);
        let grads = g.backward(out).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for (k, t) in inputs.iter().enumerate() {
            let analytic = grads.get(vars[k]);
            for i in 0..t.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let (gp, _, op) = eval(&plus);
                let (gm, _, om) = eval(&minus);
                let numeric = (gp.value(op).data()[0] - gm.value(om).data()[0]) / (2.0 * h);
                let a = analytic.data()[i];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        worst
    }

    /// Random weights so the scalar reduction does not hide errors.
    fn weighted_sum(g: &mut Graph, x: Var, rng_seed: u64) -> Var {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let shape = g.value(x).shape().to_vec();
        let w = g.leaf(rand_tensor(&mut rng, &shape));
        let p = g.mul(x, w).unwrap();
        g.sum(p)
    }

    #[test]
    fn identity_and_square_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(3.0));
        assert_eq!(g.backward(x).unwrap().get(x).data(), &[1.0]);

        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        assert_eq!(g.backward(s).unwrap().get(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_seed_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(x), Err(NumericsError::NonScalarSeed { .. })));
    }

    #[test]
    fn unreached_nodes_get_zero_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap());
        let frozen = g.leaf(Tensor::vector(vec![5.0]).unwrap());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert!(grads.raw(frozen).is_none());
        assert_eq!(grads.get(frozen).data(), &[0.0]);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..10u64 {
            let a = rand_tensor(&mut rng, &[3, 4]);
            let b = rand_tensor(&mut rng, &[4, 2]);
            let c = rand_tensor(&mut rng, &[3, 4]);
            let bias = rand_tensor(&mut rng, &[4]);
            let gain = rand_tensor(&mut rng, &[4]);
            let s = trial + 100;

            let cases: Vec<(&str, f64)> = vec![
                ("matmul", check_op(vec![a.clone(), b.clone()], |g, v| {
                    let m = g.matmul(v[0], v[1]).unwrap();
                    weighted_sum(g, m, s)
                })),
                ("matmul_nt", check_op(vec![a.clone(), c.clone()], |g, v| {
                    let m = g.matmul_nt(v[0], v[1]).unwrap();
                    weighted_sum(g, m, s)
                })),
                ("add/sub/mul", check_op(vec![a.clone(), c.clone()], |g, v| {
                    let p = g.add(v[0], v[1]).unwrap();
                    let q = g.sub(p, v[1]).unwrap();
                    let r = g.mul(q, v[1]).unwrap();
                    weighted_sum(g, r, s)
                })),
                ("add_row/scale", check_op(vec![a.clone(), bias.clone()], |g, v| {
                    let p = g.add_row(v[0], v[1]).unwrap();
                    let q = g.scale(p, -0.7);
                    weighted_sum(g, q, s)
                })),
                ("relu", check_op(vec![a.clone()], |g, v| {
                    let p = g.relu(v[0]);
                    weighted_sum(g, p, s)
                })),
                ("softmax axis 1", check_op(vec![a.clone()], |g, v| {
                    let p = g.softmax(v[0], 1).unwrap();
                    weighted_sum(g, p, s)
                })),
                ("softmax axis 0", check_op(vec![a.clone()], |g, v| {
                    let p = g.softmax(v[0], 0).unwrap();
                    weighted_sum(g, p, s)
                })),
                ("masked softmax", check_op(vec![a.clone()], |g, v| {
                    let mask: Vec<bool> = (0..12).map(|i| i % 4 <= i / 4).collect();
                    let p = g.softmax_masked(v[0], 1, Some(&mask)).unwrap();
                    weighted_sum(g, p, s)
                })),
                ("layer_norm", check_op(vec![a.clone(), gain.clone(), bias.clone()], |g, v| {
                    let p = g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
                    weighted_sum(g, p, s)
                })),
                ("slice/concat", check_op(vec![a.clone(), c.clone()], |g, v| {
                    let p = g.slice_cols(v[0], 1, 3).unwrap();
                    let q = g.concat_cols(&[p, v[1]]).unwrap();
                    let r = g.concat_rows(&[q, q]).unwrap();
                    weighted_sum(g, r, s)
                })),
                ("mse/mean", check_op(vec![a.clone(), c.clone()], |g, v| g.mse(v[0], v[1]).unwrap())),
            ];
            for (name, err) in cases {
                assert!(err < 1e-5, "{name}: relative error {err}");
            }
        }
    }

    #[test]
    fn composed_attention_block_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = rand_tensor(&mut rng, &[3, 4]);
        let wq = rand_tensor(&mut rng, &[4, 4]);
        let wk = rand_tensor(&mut rng, &[4, 4]);
        let wv = rand_tensor(&mut rng, &[4, 4]);
        let gain = rand_tensor(&mut rng, &[4]);
        let bias = rand_tensor(&mut rng, &[4]);
        let err = check_op(vec![x, wq, wk, wv, gain, bias], |g, v| {
            let q = g.matmul(v[0], v[1]).unwrap();
            let k = g.matmul(v[0], v[2]).unwrap();
            let val = g.matmul(v[0], v[3]).unwrap();
            let s = g.matmul_nt(q, k).unwrap();
            let s = g.scale(s, 0.5);
            let w = g.softmax(s, 1).unwrap();
            let o = g.matmul(w, val).unwrap();
            let r = g.add(o, v[0]).unwrap();
            let n = g.layer_norm(r, v[4], v[5], 1e-5).unwrap();
            weighted_sum(g, n, 9)
        });
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn nodes_are_recorded_in_topological_order() {
        let mut g = Graph::new();
        let a = g.leaf(Tensor::scalar(1.0));
        let b = g.leaf(Tensor::scalar(2.0));
        let c = g.add(a, b).unwrap();
        let d = g.mul(c, a).unwrap();
        assert!(a < c && b < c && c < d);
        assert_eq!(g.len(), 4);
    }
}
