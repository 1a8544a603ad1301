//! Eager tape: every op computes its value when it is recorded, and
//! [`Graph::backward`] walks the tape in reverse.

use super::gemm::{gemm_acc, MatRef};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    BatchMatMul { a: NodeId, b: NodeId, transpose_b: bool },
    Conv1d { x: NodeId, w: NodeId, bias: NodeId, stride: usize, pad_left: usize },
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax { x: NodeId, axis: usize },
    Concat { parts: Vec<NodeId>, axis: usize },
    Slice { x: NodeId, axis: usize, start: usize },
    Reshape(NodeId),
    TransposeLast2(NodeId),
    Mean { x: NodeId, axis: Option<usize> },
    Mse(NodeId, NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param => "param",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul { .. } => "batch_matmul",
            Op::Conv1d { .. } => "conv1d",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Softmax { .. } => "softmax",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::TransposeLast2(_) => "transpose",
            Op::Mean { .. } => "mean",
            Op::Mse(..) => "mse",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `id`; zero when the loss does not depend on it.
    pub fn wrt(&self, id: NodeId) -> Tensor {
        let shape = &self.shapes[id.0];
        match &self.grads[id.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }
}

/// Decomposes `shape` around `axis` into (outer, axis length, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Output length and left padding of a "same" convolution.
pub fn conv_same_geometry(len: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out.saturating_sub(1)) * stride + kernel).saturating_sub(len);
    (out, total / 2)
}

#[derive(Debug, Default, Clone)]
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn label(&self, id: NodeId) -> String {
        format!("node {} ({})", id.0, self.nodes[id.0].op.name())
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { op, value, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn shape_err(&self, op: &str, message: String) -> Error {
        Error::shape_at(format!("node {} ({op})", self.nodes.len()), message)
    }

    /// Constant leaf.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Input, value: t, requires_grad: false });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node { op: Op::Param, value: t, requires_grad: true });
        NodeId(self.nodes.len() - 1)
    }

    fn broadcast_ok(a: &[usize], b: &[usize]) -> bool {
        a == b || (b.len() <= a.len() && a[a.len() - b.len()..] == *b)
    }

    /// Elementwise sum; `b` may broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if !Self::broadcast_ok(va.shape(), vb.shape()) {
            return Err(self.shape_err("add", format!("{:?} + {:?}", va.shape(), vb.shape())));
        }
        let n = vb.len().max(1);
        let data = va.data().iter().enumerate().map(|(i, x)| x + vb.data()[i % n]).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), out, &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(self.shape_err("sub", format!("{:?} - {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::Sub(a, b), out, &[a, b]))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(self.shape_err("mul", format!("{:?} * {:?}", va.shape(), vb.shape())));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), out, &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let va = self.value(a);
        let out = Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| x * factor).collect()).unwrap();
        self.push(Op::Scale(a, factor), out, &[a])
    }

    /// `(m, k) x (k, n)`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(self.shape_err("matmul", format!("{:?} x {:?}", va.shape(), vb.shape())));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_acc(MatRef::new(va.data(), m, k), MatRef::new(vb.data(), k, n), &mut out);
        let out = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::MatMul(a, b), out, &[a, b]))
    }

    /// Batched `(n, m, k) x (n, k, p)`, or `(n, m, k) x (n, p, k)^T` when
    /// `transpose_b` is set.
    pub fn batch_matmul(&mut self, a: NodeId, b: NodeId, transpose_b: bool) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let ok = va.rank() == 3 && vb.rank() == 3 && va.shape()[0] == vb.shape()[0] && {
            let kb = if transpose_b { vb.shape()[2] } else { vb.shape()[1] };
            kb == va.shape()[2]
        };
        if !ok {
            return Err(self.shape_err("batch_matmul", format!("{:?} x {:?} (t={transpose_b})", va.shape(), vb.shape())));
        }
        let (n, m, k) = (va.shape()[0], va.shape()[1], va.shape()[2]);
        let p = if transpose_b { vb.shape()[1] } else { vb.shape()[2] };
        let mut out = vec![0.0; n * m * p];
        for i in 0..n {
            let am = MatRef::new(&va.data()[i * m * k..(i + 1) * m * k], m, k);
            let bm = if transpose_b {
                MatRef::new(&vb.data()[i * p * k..(i + 1) * p * k], p, k).t()
            } else {
                MatRef::new(&vb.data()[i * k * p..(i + 1) * k * p], k, p)
            };
            gemm_acc(am, bm, &mut out[i * m * p..(i + 1) * m * p]);
        }
        let out = Tensor::new(vec![n, m, p], out)?;
        Ok(self.push(Op::BatchMatMul { a, b, transpose_b }, out, &[a, b]))
    }

    /// Cross-correlation of `x: (batch, in_ch, len)` with `w: (out_ch, in_ch,
    /// kernel)` plus `bias: (out_ch)`, zero "same" padding, output length
    /// `ceil(len / stride)`. The kernel is not flipped.
    pub fn conv1d(&mut self, x: NodeId, w: NodeId, bias: NodeId, stride: usize) -> Result<NodeId> {
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(bias));
        if vx.rank() != 3 || vw.rank() != 3 || vx.shape()[1] != vw.shape()[1] || vb.shape() != [vw.shape()[0]] || stride == 0
        {
            return Err(self.shape_err(
                "conv1d",
                format!("input {:?}, kernel {:?}, bias {:?}, stride {stride}", vx.shape(), vw.shape(), vb.shape()),
            ));
        }
        let (batch, cin, len) = (vx.shape()[0], vx.shape()[1], vx.shape()[2]);
        let (cout, kernel) = (vw.shape()[0], vw.shape()[2]);
        let (lout, pad_left) = conv_same_geometry(len, kernel, stride);
        let mut out = vec![0.0; batch * cout * lout];
        let mut col = vec![0.0; cin * kernel * lout];
        for b in 0..batch {
            im2col(&vx.data()[b * cin * len..(b + 1) * cin * len], cin, len, kernel, stride, pad_left, lout, &mut col);
            let ob = &mut out[b * cout * lout..(b + 1) * cout * lout];
            for (o, row) in ob.chunks_mut(lout).enumerate() {
                row.fill(vb.data()[o]);
            }
            gemm_acc(MatRef::new(vw.data(), cout, cin * kernel), MatRef::new(&col, cin * kernel, lout), ob);
        }
        let out = Tensor::new(vec![batch, cout, lout], out)?;
        Ok(self.push(Op::Conv1d { x, w, bias, stride, pad_left }, out, &[x, w, bias]))
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let va = self.value(a);
        let out = Tensor::new(va.shape().to_vec(), va.data().iter().map(|&x| f(x)).collect()).unwrap();
        self.push(op, out, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let va = self.value(a);
        if axis >= va.rank() {
            return Err(self.shape_err("softmax", format!("axis {axis} of {:?}", va.shape())));
        }
        let (outer, n, inner) = split_axis(va.shape(), axis);
        let src = va.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let max = (0..n).map(|j| src[base + j * inner]).fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for j in 0..n {
                    let e = (src[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..n {
                    out[base + j * inner] /= sum;
                }
            }
        }
        let out = Tensor::new(va.shape().to_vec(), out)?;
        Ok(self.push(Op::Softmax { x: a, axis }, out, &[a]))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = parts.first().ok_or_else(|| self.shape_err("concat", "no inputs".into()))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(self.shape_err("concat", format!("axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != base.len() || s.iter().enumerate().any(|(d, &v)| d != axis && v != base[d]) {
                return Err(self.shape_err("concat", format!("{s:?} incompatible with {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut shape = base.clone();
        shape[axis] = total;
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let v = self.value(*p);
                let block = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push(Op::Concat { parts: parts.to_vec(), axis }, out, parts))
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let va = self.value(a);
        if axis >= va.rank() || start + len > va.shape()[axis] {
            return Err(self.shape_err("slice", format!("[{start}..{}] on axis {axis} of {:?}", start + len, va.shape())));
        }
        let (outer, n, inner) = split_axis(va.shape(), axis);
        let mut shape = va.shape().to_vec();
        shape[axis] = len;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = o * n * inner + start * inner;
            out.extend_from_slice(&va.data()[from..from + len * inner]);
        }
        let out = Tensor::new(shape, out)?;
        Ok(self.push(Op::Slice { x: a, axis, start }, out, &[a]))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let out = self.value(a).clone().reshaped(shape).map_err(|e| self.shape_err("reshape", e.to_string()))?;
        Ok(self.push(Op::Reshape(a), out, &[a]))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let va = self.value(a);
        if va.rank() < 2 {
            return Err(self.shape_err("transpose", format!("rank {} < 2", va.rank())));
        }
        let r = va.rank();
        let (m, n) = (va.shape()[r - 2], va.shape()[r - 1]);
        let mut shape = va.shape().to_vec();
        shape.swap(r - 2, r - 1);
        let out = Tensor::new(shape, transpose_blocks(va.data(), m, n))?;
        Ok(self.push(Op::TransposeLast2(a), out, &[a]))
    }

    /// Mean over every element (rank-0 result) or over one axis.
    pub fn mean(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId> {
        let va = self.value(a);
        let out = match axis {
            None => Tensor::scalar(va.data().iter().sum::<f64>() / va.len().max(1) as f64),
            Some(ax) => {
                if ax >= va.rank() {
                    return Err(self.shape_err("mean", format!("axis {ax} of {:?}", va.shape())));
                }
                let (outer, n, inner) = split_axis(va.shape(), ax);
                let mut out = vec![0.0; outer * inner];
                for o in 0..outer {
                    for j in 0..n {
                        for i in 0..inner {
                            out[o * inner + i] += va.data()[(o * n + j) * inner + i];
                        }
                    }
                }
                out.iter_mut().for_each(|v| *v /= n as f64);
                let mut shape = va.shape().to_vec();
                shape.remove(ax);
                Tensor::new(shape, out)?
            }
        };
        Ok(self.push(Op::Mean { x: a, axis }, out, &[a]))
    }

    /// Mean squared difference, rank-0 result.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let (vp, vt) = (self.value(pred), self.value(target));
        if vp.shape() != vt.shape() {
            return Err(self.shape_err("mse", format!("{:?} vs {:?}", vp.shape(), vt.shape())));
        }
        let n = vp.len().max(1) as f64;
        let s = vp.data().iter().zip(vt.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
        Ok(self.push(Op::Mse(pred, target), Tensor::scalar(s), &[pred, target]))
    }

    /// Sign class (-1, 0, +1) of every relu input on the tape. Two
    /// evaluations with equal signatures lie in the same differentiable piece.
    pub fn relu_signature(&self) -> Vec<i8> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                sig.extend(self.nodes[x.0].value.data().iter().map(|&v| {
                    if v > 0.0 {
                        1
                    } else if v < 0.0 {
                        -1
                    } else {
                        0
                    }
                }));
            }
        }
        sig
    }

    /// Reverse sweep from a rank-0 (or single-element) `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "loss {} has shape {:?}, expected a scalar",
                self.label(loss),
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = (match node.op {
                Op::Param => None,
                _ => grads[idx].take(),
            }) else {
                continue;
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric {
                    node: self.label(NodeId(idx)),
                    message: "non-finite gradient".into(),
                });
            }
            self.propagate(idx, &g, &mut grads);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if let (Op::Param, Some(g)) = (&node.op, &grads[idx]) {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric { node: self.label(NodeId(idx)), message: "non-finite gradient".into() });
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        let val = |id: NodeId| self.nodes[id.0].value.data();
        macro_rules! buf {
            ($id:expr) => {
                grads[$id.0].get_or_insert_with(|| vec![0.0; self.nodes[$id.0].value.len()])
            };
        }
        match &node.op {
            Op::Input | Op::Param => {}
            Op::Add(a, b) => {
                if wants(*a) {
                    buf!(*a).iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if wants(*b) {
                    let gb = buf!(*b);
                    let n = gb.len().max(1);
                    for (i, s) in g.iter().enumerate() {
                        gb[i % n] += s;
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    buf!(*a).iter_mut().zip(g).for_each(|(d, s)| *d += s);
                }
                if wants(*b) {
                    buf!(*b).iter_mut().zip(g).for_each(|(d, s)| *d -= s);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let vb = val(*b);
                    buf!(*a).iter_mut().zip(g).zip(vb).for_each(|((d, s), y)| *d += s * y);
                }
                if wants(*b) {
                    let va = val(*a);
                    buf!(*b).iter_mut().zip(g).zip(va).for_each(|((d, s), x)| *d += s * x);
                }
            }
            Op::Scale(a, f) => {
                buf!(*a).iter_mut().zip(g).for_each(|(d, s)| *d += s * f);
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let gm = MatRef::new(g, m, n);
                if wants(*a) {
                    gemm_acc(gm, MatRef::new(val(*b), k, n).t(), buf!(*a));
                }
                if wants(*b) {
                    gemm_acc(MatRef::new(val(*a), m, k).t(), gm, buf!(*b));
                }
            }
            Op::BatchMatMul { a, b, transpose_b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (nb, m, k) = (sa[0], sa[1], sa[2]);
                let p = if *transpose_b { sb[1] } else { sb[2] };
                for i in 0..nb {
                    let gm = MatRef::new(&g[i * m * p..(i + 1) * m * p], m, p);
                    let bslice = &val(*b)[i * k * p..(i + 1) * k * p];
                    if wants(*a) {
                        let bt = if *transpose_b { MatRef::new(bslice, p, k) } else { MatRef::new(bslice, k, p).t() };
                        gemm_acc(gm, bt, &mut buf!(*a)[i * m * k..(i + 1) * m * k]);
                    }
                    if wants(*b) {
                        let at = MatRef::new(&val(*a)[i * m * k..(i + 1) * m * k], m, k).t();
                        let gb = &mut buf!(*b)[i * k * p..(i + 1) * k * p];
                        if *transpose_b {
                            // d(B^T) = A^T G  =>  dB = G^T A
                            gemm_acc(gm.t(), at.t(), gb);
                        } else {
                            gemm_acc(at, gm, gb);
                        }
                    }
                }
            }
            Op::Conv1d { x, w, bias, stride, pad_left } => {
                let (sx, sw) = (self.shape(*x), self.shape(*w));
                let (batch, cin, len) = (sx[0], sx[1], sx[2]);
                let (cout, kernel) = (sw[0], sw[2]);
                let lout = node.value.shape()[2];
                let ck = cin * kernel;
                let mut col = vec![0.0; ck * lout];
                let mut gcol = vec![0.0; ck * lout];
                for b in 0..batch {
                    let gb = MatRef::new(&g[b * cout * lout..(b + 1) * cout * lout], cout, lout);
                    if wants(*bias) {
                        let gbias = buf!(*bias);
                        for (o, row) in g[b * cout * lout..(b + 1) * cout * lout].chunks(lout).enumerate() {
                            gbias[o] += row.iter().sum::<f64>();
                        }
                    }
                    if wants(*w) {
                        im2col(&val(*x)[b * cin * len..(b + 1) * cin * len], cin, len, kernel, *stride, *pad_left, lout, &mut col);
                        gemm_acc(gb, MatRef::new(&col, ck, lout).t(), buf!(*w));
                    }
                    if wants(*x) {
                        gcol.fill(0.0);
                        gemm_acc(MatRef::new(val(*w), cout, ck).t(), gb, &mut gcol);
                        col2im_acc(&gcol, cin, len, kernel, *stride, *pad_left, lout, &mut buf!(*x)[b * cin * len..(b + 1) * cin * len]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                buf!(*a).iter_mut().zip(g).zip(y).for_each(|((d, s), y)| *d += s * y * (1.0 - y));
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                buf!(*a).iter_mut().zip(g).zip(y).for_each(|((d, s), y)| *d += s * (1.0 - y * y));
            }
            Op::Relu(a) => {
                let x = val(*a);
                buf!(*a).iter_mut().zip(g).zip(x).for_each(|((d, s), &x)| {
                    if x > 0.0 {
                        *d += s
                    }
                });
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, n, inner) = split_axis(node.value.shape(), *axis);
                let gx = buf!(*x);
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * n * inner + i;
                        let dot: f64 = (0..n).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..n {
                            let t = base + j * inner;
                            gx[t] += y[t] * (g[t] - dot);
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => {
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                let total = node.value.shape()[*axis] * inner;
                for p in parts {
                    let block = self.shape(*p)[*axis] * inner;
                    if wants(*p) {
                        let gp = buf!(*p);
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + block];
                            gp[o * block..(o + 1) * block].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                        }
                    }
                    offset += block;
                }
            }
            Op::Slice { x, axis, start } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let gx = buf!(*x);
                for o in 0..outer {
                    let from = o * n * inner + start * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    gx[from..from + len * inner].iter_mut().zip(src).for_each(|(d, s)| *d += s);
                }
            }
            Op::Reshape(a) => {
                buf!(*a).iter_mut().zip(g).for_each(|(d, s)| *d += s);
            }
            Op::TransposeLast2(a) => {
                let s = node.value.shape();
                let r = s.len();
                // output is (.., n, m); transposing it back restores (.., m, n)
                let back = transpose_blocks(g, s[r - 2], s[r - 1]);
                buf!(*a).iter_mut().zip(back).for_each(|(d, s)| *d += s);
            }
            Op::Mean { x, axis } => match axis {
                None => {
                    let gx = buf!(*x);
                    let n = gx.len().max(1) as f64;
                    gx.iter_mut().for_each(|d| *d += g[0] / n);
                }
                Some(ax) => {
                    let (outer, n, inner) = split_axis(self.shape(*x), *ax);
                    let gx = buf!(*x);
                    for o in 0..outer {
                        for j in 0..n {
                            for i in 0..inner {
                                gx[(o * n + j) * inner + i] += g[o * inner + i] / n as f64;
                            }
                        }
                    }
                }
            },
            Op::Mse(p, t) => {
                let (vp, vt) = (val(*p), val(*t));
                let n = vp.len().max(1) as f64;
                if wants(*p) {
                    buf!(*p).iter_mut().zip(vp.iter().zip(vt)).for_each(|(d, (a, b))| *d += g[0] * 2.0 * (a - b) / n);
                }
                if wants(*t) {
                    buf!(*t).iter_mut().zip(vp.iter().zip(vt)).for_each(|(d, (a, b))| *d -= g[0] * 2.0 * (a - b) / n);
                }
            }
        }
    }
}

fn transpose_blocks(src: &[f64], m: usize, n: usize) -> Vec<f64> {
    let block = m * n;
    let mut out = vec![0.0; src.len()];
    if block == 0 {
        return out;
    }
    for (sb, ob) in src.chunks(block).zip(out.chunks_mut(block)) {
        for i in 0..m {
            for j in 0..n {
                ob[j * m + i] = sb[i * n + j];
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], cin: usize, len: usize, kernel: usize, stride: usize, pad_left: usize, lout: usize, col: &mut [f64]) {
    for c in 0..cin {
        for k in 0..kernel {
            let row = &mut col[(c * kernel + k) * lout..(c * kernel + k + 1) * lout];
            for (t, v) in row.iter_mut().enumerate() {
                let pos = (t * stride + k) as isize - pad_left as isize;
                *v = if pos >= 0 && (pos as usize) < len { x[c * len + pos as usize] } else { 0.0 };
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_acc(col: &[f64], cin: usize, len: usize, kernel: usize, stride: usize, pad_left: usize, lout: usize, gx: &mut [f64]) {
    for c in 0..cin {
        for k in 0..kernel {
            let row = &col[(c * kernel + k) * lout..(c * kernel + k + 1) * lout];
            for (t, v) in row.iter().enumerate() {
                let pos = (t * stride + k) as isize - pad_left as isize;
                if pos >= 0 && (pos as usize) < len {
                    gx[c * len + pos as usize] += v;
                }
            }
        }
    }
}
