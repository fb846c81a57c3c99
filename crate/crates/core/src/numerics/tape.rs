//! Reverse-mode differentiation over a linear operation record.
//!
//! Every op appends a node whose parents are earlier nodes, so node order is a
//! topological order and a reverse sweep computes all gradients.

use super::kernels::{
    broadcast_offsets, broadcast_shape, gemm_acc, gemm_acc_at, gemm_acc_bt, permute_data,
};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// `(k-1)/2` zeros on both sides, odd kernels only.
    Same,
    /// `k-1` zeros on the left; output at `t` sees inputs `<= t` only.
    Causal,
}

/// Pointwise operations selectable by id.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Tanh,
    Sigmoid,
    Relu,
    Add,
    Mul,
    Scale(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Tanh,
    Sigmoid,
    Relu,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary { kind: Binary, a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    Unary { kind: Unary, x: Var },
    MatMul { a: Var, b: Var },
    Softmax { x: Var },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Conv1d { x: Var, w: Var, b: Var, pad_left: usize },
    Reshape { x: Var },
    Permute { x: Var, perm: Vec<usize> },
    Concat { xs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    SumAxis { x: Var, axis: usize },
    SumAll { x: Var },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Binary { kind: Binary::Add, .. } => "add",
            Op::Binary { kind: Binary::Sub, .. } => "sub",
            Op::Binary { kind: Binary::Mul, .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::Unary { kind: Unary::Tanh, .. } => "tanh",
            Op::Unary { kind: Unary::Sigmoid, .. } => "sigmoid",
            Op::Unary { kind: Unary::Relu, .. } => "relu",
            Op::MatMul { .. } => "matmul",
            Op::Softmax { .. } => "softmax_last",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Conv1d { .. } => "conv1d",
            Op::Reshape { .. } => "reshape",
            Op::Permute { .. } => "permute",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::SumAxis { .. } => "sum_axis",
            Op::SumAll { .. } => "sum_all",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } | Op::MatMul { a, b } => vec![*a, *b],
            Op::Scale { x, .. }
            | Op::Unary { x, .. }
            | Op::Softmax { x }
            | Op::Reshape { x }
            | Op::Permute { x, .. }
            | Op::Slice { x, .. }
            | Op::SumAxis { x, .. }
            | Op::SumAll { x } => vec![*x],
            Op::LayerNorm { x, gain, bias, .. } => vec![*x, *gain, *bias],
            Op::Conv1d { x, w, b, .. } => vec![*x, *w, *b],
            Op::Concat { xs, .. } => xs.clone(),
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Read-only view of one recorded node.
#[derive(Debug)]
pub struct DiffNode<'a> {
    pub value: &'a Tensor,
    pub parents: Vec<Var>,
    pub rule: &'static str,
    pub requires_grad: bool,
    pub gradient: Option<&'a Tensor>,
}

/// Computation record for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op
            .parents()
            .iter()
            .any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn node(&self, v: Var) -> DiffNode<'_> {
        let n = &self.nodes[v.0];
        DiffNode {
            value: &n.value,
            parents: n.op.parents(),
            rule: n.op.name(),
            requires_grad: n.requires_grad,
            gradient: self.grads.get(v.0).and_then(Option::as_ref),
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Errors if the node's value contains NaN or infinity.
    pub fn check_finite(&self, v: Var) -> Result<()> {
        self.value(v)
            .check_finite(&format!("node {} ({})", v.0, self.nodes[v.0].op.name()))
    }

    // ---- pointwise ----

    fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let op_name = match kind {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
        };
        let data = if va.shape() == vb.shape() {
            let f = match kind {
                Binary::Add => |x: f64, y: f64| x + y,
                Binary::Sub => |x: f64, y: f64| x - y,
                Binary::Mul => |x: f64, y: f64| x * y,
            };
            let d: Vec<f64> = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(va.shape().to_vec(), d)
        } else {
            let shape = broadcast_shape(op_name, va.shape(), vb.shape())?;
            let oa = broadcast_offsets(&shape, va.shape());
            let ob = broadcast_offsets(&shape, vb.shape());
            let (da, db) = (va.data(), vb.data());
            let d: Vec<f64> = oa
                .iter()
                .zip(&ob)
                .map(|(&i, &j)| match kind {
                    Binary::Add => da[i] + db[j],
                    Binary::Sub => da[i] - db[j],
                    Binary::Mul => da[i] * db[j],
                })
                .collect();
            Tensor::from_parts(shape, d)
        };
        Ok(self.push(data, Op::Binary { kind, a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x).scale(factor);
        self.push(v, Op::Scale { x, factor })
    }

    fn unary(&mut self, kind: Unary, x: Var) -> Var {
        let f = match kind {
            Unary::Tanh => f64::tanh,
            Unary::Sigmoid => sigmoid,
            Unary::Relu => |v: f64| v.max(0.0),
        };
        let v = self.value(x).map(f);
        self.push(v, Op::Unary { kind, x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(Unary::Relu, x)
    }

    /// Dispatches a pointwise op by id; binary ops take two operands.
    pub fn elementwise(&mut self, op: Elementwise, operands: &[Var]) -> Result<Var> {
        let want = match op {
            Elementwise::Add | Elementwise::Mul => 2,
            _ => 1,
        };
        if operands.len() != want {
            return Err(Error::InvalidShape {
                shape: vec![operands.len()],
                reason: format!("{op:?} takes {want} operand(s)"),
            });
        }
        Ok(match op {
            Elementwise::Tanh => self.tanh(operands[0]),
            Elementwise::Sigmoid => self.sigmoid(operands[0]),
            Elementwise::Relu => self.relu(operands[0]),
            Elementwise::Scale(s) => self.scale(operands[0], s),
            Elementwise::Add => self.add(operands[0], operands[1])?,
            Elementwise::Mul => self.mul(operands[0], operands[1])?,
        })
    }

    // ---- contractions ----

    /// Batched matrix product `[..., m, k] x [..., k, n] -> [..., m, n]` with
    /// broadcasting over leading extents.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mm = MatMulDims::new(&sa, &sb)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; mm.batch * mm.m * mm.n];
        for bi in 0..mm.batch {
            let ao = mm.off_a[bi] * mm.m * mm.k;
            let bo = mm.off_b[bi] * mm.k * mm.n;
            gemm_acc(
                &va[ao..ao + mm.m * mm.k],
                &vb[bo..bo + mm.k * mm.n],
                &mut out[bi * mm.m * mm.n..(bi + 1) * mm.m * mm.n],
                mm.m,
                mm.k,
                mm.n,
            );
        }
        let v = Tensor::from_parts(mm.out_shape, out);
        Ok(self.push(v, Op::MatMul { a, b }))
    }

    /// Softmax over the final extent, stabilized by max subtraction.
    pub fn softmax_last(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = *v.shape().last().unwrap();
        let mut out = v.data().to_vec();
        for row in out.chunks_mut(n) {
            softmax_in_place(row);
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        self.push(t, Op::Softmax { x })
    }

    /// Layer normalization over the final extent with epsilon `1e-5`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let v = self.value(x);
        let n = *v.shape().last().unwrap();
        for p in [gain, bias] {
            if self.shape(p) != [n] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: v.shape().to_vec(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let rows = v.len() / n;
        let mut xhat = vec![0.0; v.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|&z| (z - mean) * (z - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * g[j] + b[j];
            }
        }
        let t = Tensor::from_parts(v.shape().to_vec(), out);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        ))
    }

    /// 1-D cross-correlation over the final (time) extent:
    /// `x [..., c_in, T]`, `w [c_out, c_in, k]`, `b [c_out]` -> `[..., c_out, T]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, padding: Padding) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        if sx.len() < 2 || sw.len() != 3 || sw[1] != sx[sx.len() - 2] || sb != [sw[0]] {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: sx,
                rhs: sw,
            });
        }
        let k = sw[2];
        let pad_left = match padding {
            Padding::Same => {
                if k % 2 == 0 {
                    return Err(Error::InvalidShape {
                        shape: sw,
                        reason: "same-padded convolution needs an odd kernel size".into(),
                    });
                }
                (k - 1) / 2
            }
            Padding::Causal => k - 1,
        };
        let (cin, t) = (sx[sx.len() - 2], sx[sx.len() - 1]);
        let cout = sw[0];
        let batch: usize = sx[..sx.len() - 2].iter().product();
        let (xv, wv, bv) = (
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
        );
        let mut out = vec![0.0; batch * cout * t];
        for bi in 0..batch {
            let xb = &xv[bi * cin * t..(bi + 1) * cin * t];
            let ob = &mut out[bi * cout * t..(bi + 1) * cout * t];
            for o in 0..cout {
                let orow = &mut ob[o * t..(o + 1) * t];
                orow.iter_mut().for_each(|v| *v = bv[o]);
                for c in 0..cin {
                    let xrow = &xb[c * t..(c + 1) * t];
                    for j in 0..k {
                        let wgt = wv[(o * cin + c) * k + j];
                        let (lo, hi, shift) = conv_range(t, j, pad_left);
                        for tt in lo..hi {
                            orow[tt] += wgt * xrow[(tt as isize + shift) as usize];
                        }
                    }
                }
            }
        }
        let mut shape = sx[..sx.len() - 2].to_vec();
        shape.extend([cout, t]);
        let v = Tensor::from_parts(shape, out);
        Ok(self.push(v, Op::Conv1d { x, w, b, pad_left }))
    }

    /// `conv1d` with same padding; rejects even kernels.
    pub fn conv1d_same(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.conv1d(x, w, b, Padding::Same)
    }

    // ---- shape ----

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(shape)?;
        Ok(self.push(v, Op::Reshape { x }))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        let mut seen = vec![false; s.len()];
        if perm.len() != s.len() || perm.iter().any(|&p| p >= s.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: format!("bad permutation {perm:?}"),
            });
        }
        let (shape, data) = permute_data(self.value(x).data(), s, perm);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        ))
    }

    /// Swaps the final two extents.
    pub fn transpose_last(&mut self, x: Var) -> Result<Var> {
        let n = self.shape(x).len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.swap(n - 2, n - 1);
        self.permute(x, &perm)
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        if axis >= first.len() {
            return Err(Error::InvalidShape {
                shape: first,
                reason: format!("concat axis {axis} out of range"),
            });
        }
        let mut total = 0;
        for &v in xs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in xs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(
            Tensor::from_parts(shape, out),
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
        ))
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(Error::InvalidShape {
                shape: s,
                reason: format!("slice {start}..{} on axis {axis}", start + len),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        Ok(self.push(Tensor::from_parts(shape, out), Op::Slice { x, axis, start }))
    }

    // ---- reductions ----

    /// Sums out `axis`; a rank-1 input reduces to shape `[1]`.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(Error::InvalidShape {
                shape: s,
                reason: format!("axis {axis} out of range"),
            });
        }
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..s[axis] {
                let base = (o * s[axis] + a) * inner;
                for i in 0..inner {
                    out[o * inner + i] += src[base + i];
                }
            }
        }
        let mut shape: Vec<usize> = s.iter().enumerate().filter(|&(i, _)| i != axis).map(|(_, &d)| d).collect();
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(self.push(Tensor::from_parts(shape, out), Op::SumAxis { x, axis }))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = self.shape(x)[axis] as f64;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::SumAll { x })
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n)
    }

    // ---- differentiation ----

    /// Reverse sweep from a scalar `loss`. Afterwards [`Tape::grad`] holds a
    /// gradient for every node that requires one. A second call without
    /// [`Tape::reset_grads`] is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward(
                "gradients already computed; call reset_grads first".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Backward(format!(
                "loss must be scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if let Some(p) = node.op.parents().iter().find(|p| p.0 >= id) {
                return Err(Error::Backward(format!(
                    "cycle: node {id} depends on node {}",
                    p.0
                )));
            }
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(n, g)| {
                n.requires_grad.then(|| {
                    let shape = n.value.shape().to_vec();
                    match g {
                        Some(g) => Tensor::from_parts(shape, g),
                        None => Tensor::zeros(&shape),
                    }
                })
            })
            .collect();
        self.backward_done = true;
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn backward_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Binary { kind, a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let same = va.shape() == vb.shape();
                let oa = (!same).then(|| broadcast_offsets(out.shape(), va.shape()));
                let ob = (!same).then(|| broadcast_offsets(out.shape(), vb.shape()));
                let ia = |i: usize| oa.as_ref().map_or(i, |o| o[i]);
                let ib = |i: usize| ob.as_ref().map_or(i, |o| o[i]);
                self.accumulate(grads, *a, |ga| {
                    for (i, &gi) in g.iter().enumerate() {
                        ga[ia(i)] += match kind {
                            Binary::Add | Binary::Sub => gi,
                            Binary::Mul => gi * vb.data()[ib(i)],
                        };
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for (i, &gi) in g.iter().enumerate() {
                        gb[ib(i)] += match kind {
                            Binary::Add => gi,
                            Binary::Sub => -gi,
                            Binary::Mul => gi * va.data()[ia(i)],
                        };
                    }
                });
            }
            Op::Scale { x, factor } => self.accumulate(grads, *x, |gx| {
                for (d, &gi) in gx.iter_mut().zip(g) {
                    *d += gi * factor;
                }
            }),
            Op::Unary { kind, x } => self.accumulate(grads, *x, |gx| {
                let y = out.data();
                for i in 0..g.len() {
                    gx[i] += g[i]
                        * match kind {
                            Unary::Tanh => 1.0 - y[i] * y[i],
                            Unary::Sigmoid => y[i] * (1.0 - y[i]),
                            Unary::Relu => {
                                if y[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        };
                }
            }),
            Op::MatMul { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mm = MatMulDims::new(va.shape(), vb.shape()).expect("validated in forward");
                let (m, k, n) = (mm.m, mm.k, mm.n);
                self.accumulate(grads, *a, |ga| {
                    for bi in 0..mm.batch {
                        let ao = mm.off_a[bi] * m * k;
                        let bo = mm.off_b[bi] * k * n;
                        gemm_acc_bt(
                            &g[bi * m * n..(bi + 1) * m * n],
                            &vb.data()[bo..bo + k * n],
                            &mut ga[ao..ao + m * k],
                            m,
                            k,
                            n,
                        );
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for bi in 0..mm.batch {
                        let ao = mm.off_a[bi] * m * k;
                        let bo = mm.off_b[bi] * k * n;
                        gemm_acc_at(
                            &va.data()[ao..ao + m * k],
                            &g[bi * m * n..(bi + 1) * m * n],
                            &mut gb[bo..bo + k * n],
                            m,
                            k,
                            n,
                        );
                    }
                });
            }
            Op::Softmax { x } => self.accumulate(grads, *x, |gx| {
                let n = *out.shape().last().unwrap();
                for ((yr, gr), dr) in out.data().chunks(n).zip(g.chunks(n)).zip(gx.chunks_mut(n)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..n {
                        dr[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }),
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let n = *out.shape().last().unwrap();
                let gv = self.value(*gain).data();
                self.accumulate(grads, *gain, |gg| {
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for j in 0..n {
                            gg[j] += gr[j] * hr[j];
                        }
                    }
                });
                self.accumulate(grads, *bias, |gb| {
                    for gr in g.chunks(n) {
                        for j in 0..n {
                            gb[j] += gr[j];
                        }
                    }
                });
                self.accumulate(grads, *x, |gx| {
                    let nf = n as f64;
                    for (r, ((gr, hr), dr)) in g
                        .chunks(n)
                        .zip(xhat.chunks(n))
                        .zip(gx.chunks_mut(n))
                        .enumerate()
                    {
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..n {
                            let dh = gr[j] * gv[j];
                            s1 += dh;
                            s2 += dh * hr[j];
                        }
                        for j in 0..n {
                            let dh = gr[j] * gv[j];
                            dr[j] += inv_std[r] / nf * (nf * dh - s1 - hr[j] * s2);
                        }
                    }
                });
            }
            Op::Conv1d { x, w, b, pad_left } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (cin, t) = (sx[sx.len() - 2], sx[sx.len() - 1]);
                let (cout, k) = (sw[0], sw[2]);
                let batch: usize = sx[..sx.len() - 2].iter().product();
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                self.accumulate(grads, *b, |gb| {
                    for bi in 0..batch {
                        for o in 0..cout {
                            let off = (bi * cout + o) * t;
                            gb[o] += g[off..off + t].iter().sum::<f64>();
                        }
                    }
                });
                self.accumulate(grads, *w, |gw| {
                    for bi in 0..batch {
                        for o in 0..cout {
                            let grow = &g[(bi * cout + o) * t..(bi * cout + o + 1) * t];
                            for c in 0..cin {
                                let xrow = &xv[(bi * cin + c) * t..(bi * cin + c + 1) * t];
                                for j in 0..k {
                                    let (lo, hi, shift) = conv_range(t, j, *pad_left);
                                    let mut s = 0.0;
                                    for tt in lo..hi {
                                        s += grow[tt] * xrow[(tt as isize + shift) as usize];
                                    }
                                    gw[(o * cin + c) * k + j] += s;
                                }
                            }
                        }
                    }
                });
                self.accumulate(grads, *x, |gx| {
                    for bi in 0..batch {
                        for o in 0..cout {
                            let grow = &g[(bi * cout + o) * t..(bi * cout + o + 1) * t];
                            for c in 0..cin {
                                let xrow = &mut gx[(bi * cin + c) * t..(bi * cin + c + 1) * t];
                                for j in 0..k {
                                    let wgt = wv[(o * cin + c) * k + j];
                                    let (lo, hi, shift) = conv_range(t, j, *pad_left);
                                    for tt in lo..hi {
                                        xrow[(tt as isize + shift) as usize] += wgt * grow[tt];
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::Reshape { x } => self.accumulate(grads, *x, |gx| {
                for (d, &gi) in gx.iter_mut().zip(g) {
                    *d += gi;
                }
            }),
            Op::Permute { x, perm } => self.accumulate(grads, *x, |gx| {
                let mut inv = vec![0; perm.len()];
                for (i, &p) in perm.iter().enumerate() {
                    inv[p] = i;
                }
                let (_, back) = permute_data(g, out.shape(), &inv);
                for (d, v) in gx.iter_mut().zip(back) {
                    *d += v;
                }
            }),
            Op::Concat { xs, axis } => {
                let s = out.shape();
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                let mut start = 0;
                for &v in xs {
                    let len = self.shape(v)[*axis];
                    self.accumulate(grads, v, |gv| {
                        for o in 0..outer {
                            let src = (o * s[*axis] + start) * inner;
                            let dst = o * len * inner;
                            for i in 0..len * inner {
                                gv[dst + i] += g[src + i];
                            }
                        }
                    });
                    start += len;
                }
            }
            Op::Slice { x, axis, start } => {
                let s = self.shape(*x);
                let len = out.shape()[*axis];
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        let dst = (o * s[*axis] + start) * inner;
                        let src = o * len * inner;
                        for i in 0..len * inner {
                            gx[dst + i] += g[src + i];
                        }
                    }
                });
            }
            Op::SumAxis { x, axis } => {
                let s = self.shape(*x);
                let outer: usize = s[..*axis].iter().product();
                let inner: usize = s[axis + 1..].iter().product();
                self.accumulate(grads, *x, |gx| {
                    for o in 0..outer {
                        for a in 0..s[*axis] {
                            let base = (o * s[*axis] + a) * inner;
                            for i in 0..inner {
                                gx[base + i] += g[o * inner + i];
                            }
                        }
                    }
                });
            }
            Op::SumAll { x } => self.accumulate(grads, *x, |gx| {
                gx.iter_mut().for_each(|d| *d += g[0]);
            }),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.len()]);
        f(buf);
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Output range `[lo, hi)` for kernel tap `j` and the input shift for it.
fn conv_range(t: usize, j: usize, pad_left: usize) -> (usize, usize, isize) {
    let shift = j as isize - pad_left as isize;
    let lo = (-shift).max(0) as usize;
    let hi = ((t as isize - shift).min(t as isize)).max(0) as usize;
    (lo.min(hi), hi, shift)
}

struct MatMulDims {
    m: usize,
    k: usize,
    n: usize,
    batch: usize,
    out_shape: Vec<usize>,
    off_a: Vec<usize>,
    off_b: Vec<usize>,
}

impl MatMulDims {
    fn new(sa: &[usize], sb: &[usize]) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(mismatch());
        }
        let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let out_batch = broadcast_shape("matmul", ba, bb).map_err(|_| mismatch())?;
        let batch: usize = out_batch.iter().product();
        let pad = |b: &[usize]| -> Vec<usize> {
            let mut v = vec![1; out_batch.len() - b.len()];
            v.extend_from_slice(b);
            v
        };
        let off_a = broadcast_offsets(&out_batch, &pad(ba));
        let off_b = broadcast_offsets(&out_batch, &pad(bb));
        let mut out_shape = out_batch;
        out_shape.extend([m, n]);
        Ok(MatMulDims {
            m,
            k,
            n,
            batch,
            out_shape,
            off_a,
            off_b,
        })
    }
}
