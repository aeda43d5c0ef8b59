//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] owns every intermediate value. Ops append nodes in evaluation
//! order, so the node list is always a valid topological order and
//! [`Graph::backward`] is a single reverse sweep.

use crate::error::{NumericsError, Result};
use crate::kernels::{self, split_axis, ConvGeom};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    BatchMatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    Tanh(NodeId),
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Softmax {
        x: NodeId,
        axis: usize,
    },
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Embedding {
        table: NodeId,
        ids: Vec<usize>,
    },
    Reshape(NodeId),
    Concat {
        inputs: Vec<NodeId>,
        axis: usize,
    },
    Slice {
        x: NodeId,
        axis: usize,
        start: usize,
    },
    Transpose(NodeId),
    Repeat {
        x: NodeId,
        axis: usize,
        n: usize,
    },
    Sum(NodeId),
    Mean(NodeId),
    L1(NodeId),
    SumSquares(NodeId),
    NormLast(NodeId),
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geom: ConvGeom,
    },
    Rodrigues(NodeId),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(NumericsError::NonFinite { op })
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NumericsError::mismatch(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn transpose_last2(data: &[f64], shape: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let r = shape.len();
    let (a, b) = (shape[r - 2], shape[r - 1]);
    let batch = data.len() / (a * b).max(1);
    let mut out = vec![0.0; data.len()];
    for n in 0..batch {
        let src = &data[n * a * b..(n + 1) * a * b];
        let dst = &mut out[n * a * b..(n + 1) * a * b];
        for i in 0..a {
            for j in 0..b {
                dst[j * a + i] = src[i * b + j];
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape.swap(r - 2, r - 1);
    (out, new_shape)
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

    /// A learnable leaf: gradients are produced for it by `backward`.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        check_finite(name, &value)?;
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.ndim() != 2 || bv.ndim() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(NumericsError::mismatch("matmul", av.shape(), bv.shape()));
        }
        let out = av.matmul(bv)?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// Batched matrix product of `[B, M, K]` and `[B, K, N]`.
    pub fn bmm(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(NumericsError::mismatch("bmm", sa, sb));
        }
        let (bn, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![0.0; bn * m * n];
        for i in 0..bn {
            kernels::gemm(
                m,
                k,
                n,
                &av.data()[i * m * k..],
                false,
                &bv.data()[i * k * n..],
                false,
                &mut out[i * m * n..],
                false,
            );
        }
        let t = Tensor::new(vec![bn, m, n], out)?;
        self.push("bmm", t, Op::BatchMatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let out = self.value(a).map(|x| c * x);
        self.push("scale", out, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push("relu", out, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push("leaky_relu", out, Op::LeakyRelu(a, slope), &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let out = self.value(a).map(f64::tanh);
        self.push("tanh", out, Op::Tanh(a), &[a])
    }

    /// `x W + b` over the last axis of `x`; `w` is `[in, out]`, `b` is `[out]`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        let xs = xv.shape();
        if xs.is_empty() || wv.ndim() != 2 || xs[xs.len() - 1] != wv.shape()[0] {
            return Err(NumericsError::mismatch("linear", xs, wv.shape()));
        }
        let (k, n) = (wv.shape()[0], wv.shape()[1]);
        let m = xv.numel() / k.max(1);
        let mut out = vec![0.0; m * n];
        kernels::gemm(m, k, n, xv.data(), false, wv.data(), false, &mut out, false);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [n] {
                return Err(NumericsError::mismatch("linear", bv.shape(), &[n]));
            }
            for row in out.chunks_mut(n) {
                for (o, bb) in row.iter_mut().zip(bv.data()) {
                    *o += bb;
                }
            }
        }
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = n;
        let t = Tensor::new(shape, out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("linear", t, Op::Linear { x, w, b }, &inputs)
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if axis >= xv.ndim() {
            return Err(NumericsError::invalid(
                "softmax",
                format!("axis {axis} out of range for shape {:?}", xv.shape()),
            ));
        }
        let (outer, dim, inner) = split_axis(xv.shape(), axis);
        let src = xv.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |s: usize| (o * dim + s) * inner + i;
                let mx = (0..dim).map(|s| src[at(s)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for s in 0..dim {
                    let e = (src[at(s)] - mx).exp();
                    out[at(s)] = e;
                    z += e;
                }
                for s in 0..dim {
                    out[at(s)] /= z;
                }
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        self.push("softmax", t, Op::Softmax { x, axis }, &[x])
    }

    /// Normalizes over the last axis then applies `gamma * xhat + beta`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let xv = self.value(x);
        let d = *xv.shape().last().ok_or_else(|| NumericsError::invalid("layer_norm", "scalar input"))?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [d] {
                return Err(NumericsError::mismatch("layer_norm", xv.shape(), self.value(p).shape()));
            }
        }
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let rows = xv.numel() / d.max(1);
        let mut xhat = vec![0.0; xv.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.numel()];
        for r in 0..rows {
            let row = &xv.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            rstd[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = gv[j] * h + bv[j];
            }
        }
        let t = Tensor::new(xv.shape().to_vec(), out)?;
        self.push(
            "layer_norm",
            t,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &[x, gamma, beta],
        )
    }

    /// Gathers rows of a `[n, d]` table.
    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        if tv.ndim() != 2 {
            return Err(NumericsError::invalid("embedding", "table must be 2-D"));
        }
        let (n, d) = (tv.shape()[0], tv.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= n {
                return Err(NumericsError::invalid(
                    "embedding",
                    format!("id {id} out of range for table with {n} rows"),
                ));
            }
            out.extend_from_slice(tv.row(id));
        }
        let t = Tensor::new(vec![ids.len(), d], out)?;
        self.push(
            "embedding",
            t,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let t = self.value(x).reshape(shape.to_vec())?;
        self.push("reshape", t, Op::Reshape(x), &[x])
    }

    pub fn concat(&mut self, inputs: &[NodeId], axis: usize) -> Result<NodeId> {
        let first = inputs
            .first()
            .ok_or_else(|| NumericsError::invalid("concat", "no inputs"))?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(NumericsError::invalid("concat", format!("axis {axis} out of range")));
        }
        let mut total = 0;
        for &i in inputs {
            let s = self.value(i).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(k, (a, b))| k == axis || a == b);
            if !compatible {
                return Err(NumericsError::mismatch("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &i in inputs {
                let v = self.value(i);
                let chunk = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let t = Tensor::new(shape, out)?;
        self.push(
            "concat",
            t,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    /// `len` entries starting at `start` along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, len: usize) -> Result<NodeId> {
        let xv = self.value(x);
        let s = xv.shape();
        if axis >= s.len() || start + len > s[axis] {
            return Err(NumericsError::invalid(
                "slice",
                format!("range {start}..{} on axis {axis} of {s:?}", start + len),
            ));
        }
        let (outer, dim, inner) = split_axis(s, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            out.extend_from_slice(&xv.data()[base..base + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let t = Tensor::new(shape, out)?;
        self.push("slice", t, Op::Slice { x, axis, start }, &[x])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        if xv.ndim() < 2 {
            return Err(NumericsError::invalid("transpose", "needs rank >= 2"));
        }
        let (data, shape) = transpose_last2(xv.data(), xv.shape());
        let t = Tensor::new(shape, data)?;
        self.push("transpose", t, Op::Transpose(x), &[x])
    }

    /// Inserts a new axis at `axis` holding `n` copies of `x`.
    pub fn repeat(&mut self, x: NodeId, axis: usize, n: usize) -> Result<NodeId> {
        let xv = self.value(x);
        if axis > xv.ndim() {
            return Err(NumericsError::invalid("repeat", format!("axis {axis} out of range")));
        }
        let outer: usize = xv.shape()[..axis].iter().product();
        let inner: usize = xv.shape()[axis..].iter().product();
        let mut out = Vec::with_capacity(outer * n * inner);
        for o in 0..outer {
            let src = &xv.data()[o * inner..(o + 1) * inner];
            for _ in 0..n {
                out.extend_from_slice(src);
            }
        }
        let mut shape = xv.shape().to_vec();
        shape.insert(axis, n);
        let t = Tensor::new(shape, out)?;
        self.push("repeat", t, Op::Repeat { x, axis, n }, &[x])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let t = Tensor::scalar(self.value(x).sum());
        self.push("sum", t, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        if v.numel() == 0 {
            return Err(NumericsError::invalid("mean", "empty tensor"));
        }
        let t = Tensor::scalar(v.sum() / v.numel() as f64);
        self.push("mean", t, Op::Mean(x), &[x])
    }

    /// Sum of absolute values.
    pub fn l1(&mut self, x: NodeId) -> Result<NodeId> {
        let t = Tensor::scalar(self.value(x).data().iter().map(|v| v.abs()).sum());
        self.push("l1", t, Op::L1(x), &[x])
    }

    /// Squared Euclidean norm of all entries.
    pub fn sum_squares(&mut self, x: NodeId) -> Result<NodeId> {
        let t = Tensor::scalar(self.value(x).data().iter().map(|v| v * v).sum());
        self.push("sum_squares", t, Op::SumSquares(x), &[x])
    }

    /// Euclidean norm along the last axis; the result drops that axis.
    pub fn norm_last(&mut self, x: NodeId) -> Result<NodeId> {
        let xv = self.value(x);
        let d = *xv.shape().last().ok_or_else(|| NumericsError::invalid("norm_last", "scalar input"))?;
        let out: Vec<f64> = xv
            .data()
            .chunks(d.max(1))
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let shape = xv.shape()[..xv.ndim() - 1].to_vec();
        let t = Tensor::new(shape, out)?;
        self.push("norm_last", t, Op::NormLast(x), &[x])
    }

    /// 2-D cross-correlation of `[N, C, H, W]` with `[O, C, kh, kw]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (xs, ws) = (xv.shape(), wv.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] {
            return Err(NumericsError::mismatch("conv2d", xs, ws));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(NumericsError::invalid("conv2d", "stride must be positive"));
        }
        let (n, c, h, wd) = (xs[0], xs[1], xs[2], xs[3]);
        let (o, kh, kw) = (ws[0], ws[2], ws[3]);
        if h + 2 * pad.0 < kh || wd + 2 * pad.1 < kw {
            return Err(NumericsError::mismatch("conv2d", xs, ws));
        }
        let geom = ConvGeom {
            c,
            h,
            w: wd,
            kh,
            kw,
            sh: stride.0,
            sw: stride.1,
            ph: pad.0,
            pw: pad.1,
            ho: (h + 2 * pad.0 - kh) / stride.0 + 1,
            wo: (wd + 2 * pad.1 - kw) / stride.1 + 1,
        };
        let bias = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [o] {
                    return Err(NumericsError::mismatch("conv2d", bv.shape(), &[o]));
                }
                Some(bv.data())
            }
            None => None,
        };
        let (rows, p) = (geom.rows(), geom.cols());
        let mut cols = vec![0.0; rows * p];
        let mut out = vec![0.0; n * o * p];
        for i in 0..n {
            kernels::im2col(&xv.data()[i * c * h * wd..(i + 1) * c * h * wd], &geom, &mut cols);
            let dst = &mut out[i * o * p..(i + 1) * o * p];
            if let Some(bias) = bias {
                for (oc, chunk) in dst.chunks_mut(p).enumerate() {
                    chunk.fill(bias[oc]);
                }
            }
            kernels::gemm(o, rows, p, wv.data(), false, &cols, false, dst, bias.is_some());
        }
        let t = Tensor::new(vec![n, o, geom.ho, geom.wo], out)?;
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push("conv2d", t, Op::Conv2d { x, w, b, geom }, &inputs)
    }

    /// 1-D convolution of `[N, C, L]` with `[O, C, k]`, built on `conv2d`.
    pub fn conv1d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let (xs, ws) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if xs.len() != 3 || ws.len() != 3 {
            return Err(NumericsError::mismatch("conv1d", &xs, &ws));
        }
        let x4 = self.reshape(x, &[xs[0], xs[1], 1, xs[2]])?;
        let w4 = self.reshape(w, &[ws[0], ws[1], 1, ws[2]])?;
        let y = self.conv2d(x4, w4, b, (1, stride), (0, pad))?;
        let ys = self.shape(y).to_vec();
        self.reshape(y, &[ys[0], ys[1], ys[3]])
    }

    /// Axis-angle rows `[N, 3]` to rotation matrices `[N, 3, 3]`.
    pub fn rodrigues(&mut self, r: NodeId) -> Result<NodeId> {
        let rv = self.value(r);
        if rv.ndim() != 2 || rv.shape()[1] != 3 {
            return Err(NumericsError::invalid(
                "rodrigues",
                format!("expected [N, 3], got {:?}", rv.shape()),
            ));
        }
        let n = rv.shape()[0];
        let mut out = Vec::with_capacity(n * 9);
        for row in rv.data().chunks(3) {
            out.extend_from_slice(&kernels::rodrigues([row[0], row[1], row[2]]));
        }
        let t = Tensor::new(vec![n, 3, 3], out)?;
        self.push("rodrigues", t, Op::Rodrigues(r), &[r])
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(NumericsError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(lv.shape().to_vec()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(node, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => {
                for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |id: NodeId| &self.nodes[id.0].value;
        let rg = |id: NodeId| self.nodes[id.0].requires_grad;
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if rg(*a) {
                    let mut da = vec![0.0; m * k];
                    kernels::gemm(m, n, k, gd, false, bv.data(), true, &mut da, false);
                    self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da)?);
                }
                if rg(*b) {
                    let mut db = vec![0.0; k * n];
                    kernels::gemm(k, m, n, av.data(), true, gd, false, &mut db, false);
                    self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db)?);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (bn, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                if rg(*a) {
                    let mut da = vec![0.0; bn * m * k];
                    for i in 0..bn {
                        kernels::gemm(
                            m,
                            n,
                            k,
                            &gd[i * m * n..],
                            false,
                            &bv.data()[i * k * n..],
                            true,
                            &mut da[i * m * k..],
                            false,
                        );
                    }
                    self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), da)?);
                }
                if rg(*b) {
                    let mut db = vec![0.0; bn * k * n];
                    for i in 0..bn {
                        kernels::gemm(
                            k,
                            m,
                            n,
                            &av.data()[i * m * k..],
                            true,
                            &gd[i * m * n..],
                            false,
                            &mut db[i * k * n..],
                            false,
                        );
                    }
                    self.accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), db)?);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(val(*b), |x, y| x * y)?);
                }
                if rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(val(*a), |x, y| x * y)?);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| c * x)),
            Op::Relu(a) => {
                let d = g.zip_map(val(*a), |gg, x| if x > 0.0 { gg } else { 0.0 })?;
                self.accumulate(grads, *a, d);
            }
            Op::LeakyRelu(a, slope) => {
                let d = g.zip_map(val(*a), |gg, x| if x > 0.0 { gg } else { slope * gg })?;
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(&node.value, |gg, y| gg * (1.0 - y * y))?;
                self.accumulate(grads, *a, d);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (k, n) = (wv.shape()[0], wv.shape()[1]);
                let m = xv.numel() / k.max(1);
                if rg(*x) {
                    let mut dx = vec![0.0; m * k];
                    kernels::gemm(m, n, k, gd, false, wv.data(), true, &mut dx, false);
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                if rg(*w) {
                    let mut dw = vec![0.0; k * n];
                    kernels::gemm(k, m, n, xv.data(), true, gd, false, &mut dw, false);
                    self.accumulate(grads, *w, Tensor::new(vec![k, n], dw)?);
                }
                if let Some(b) = b {
                    if rg(*b) {
                        let mut db = vec![0.0; n];
                        for row in gd.chunks(n) {
                            for (d, r) in db.iter_mut().zip(row) {
                                *d += r;
                            }
                        }
                        self.accumulate(grads, *b, Tensor::vector(db));
                    }
                }
            }
            Op::Softmax { x, axis } => {
                let y = node.value.data();
                let (outer, dim, inner) = split_axis(node.value.shape(), *axis);
                let mut dx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |s: usize| (o * dim + s) * inner + i;
                        let dot: f64 = (0..dim).map(|s| gd[at(s)] * y[at(s)]).sum();
                        for s in 0..dim {
                            dx[at(s)] = y[at(s)] * (gd[at(s)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(node.value.shape().to_vec(), dx)?);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let d = *node.value.shape().last().unwrap();
                let gv = val(*gamma).data();
                if rg(*x) {
                    let mut dx = vec![0.0; xhat.len()];
                    for (r, s) in rstd.iter().enumerate() {
                        let rows = r * d..(r + 1) * d;
                        let gh: Vec<f64> = gd[rows.clone()].iter().zip(gv).map(|(a, b)| a * b).collect();
                        let xh = &xhat[rows.clone()];
                        let mean_g = gh.iter().sum::<f64>() / d as f64;
                        let mean_gx = gh.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            dx[r * d + j] = s * (gh[j] - mean_g - xh[j] * mean_gx);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(node.value.shape().to_vec(), dx)?);
                }
                if rg(*gamma) {
                    let mut dg = vec![0.0; d];
                    for (row, xr) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += row[j] * xr[j];
                        }
                    }
                    self.accumulate(grads, *gamma, Tensor::vector(dg));
                }
                if rg(*beta) {
                    let mut db = vec![0.0; d];
                    for row in gd.chunks(d) {
                        for j in 0..d {
                            db[j] += row[j];
                        }
                    }
                    self.accumulate(grads, *beta, Tensor::vector(db));
                }
            }
            Op::Embedding { table, ids } => {
                let tv = val(*table);
                let d = tv.shape()[1];
                let mut dt = Tensor::zeros(tv.shape().to_vec());
                for (i, &id) in ids.iter().enumerate() {
                    let dst = &mut dt.data_mut()[id * d..(id + 1) * d];
                    for (a, b) in dst.iter_mut().zip(&gd[i * d..(i + 1) * d]) {
                        *a += b;
                    }
                }
                self.accumulate(grads, *table, dt);
            }
            Op::Reshape(x) => {
                self.accumulate(grads, *x, g.reshape(val(*x).shape().to_vec())?);
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = split_axis(node.value.shape(), *axis);
                let total = node.value.shape()[*axis] * inner;
                let mut offset = 0;
                for &i in inputs {
                    let v = val(i);
                    let chunk = v.shape()[*axis] * inner;
                    if rg(i) {
                        let mut d = Vec::with_capacity(v.numel());
                        for o in 0..outer {
                            let base = o * total + offset;
                            d.extend_from_slice(&gd[base..base + chunk]);
                        }
                        self.accumulate(grads, i, Tensor::new(v.shape().to_vec(), d)?);
                    }
                    offset += chunk;
                }
            }
            Op::Slice { x, axis, start } => {
                let xv = val(*x);
                let (outer, dim, inner) = split_axis(xv.shape(), *axis);
                let len = node.value.shape()[*axis];
                let mut dx = Tensor::zeros(xv.shape().to_vec());
                for o in 0..outer {
                    let base = (o * dim + start) * inner;
                    dx.data_mut()[base..base + len * inner]
                        .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                self.accumulate(grads, *x, dx);
            }
            Op::Transpose(x) => {
                let (d, shape) = transpose_last2(gd, g.shape());
                self.accumulate(grads, *x, Tensor::new(shape, d)?);
            }
            Op::Repeat { x, axis, n } => {
                let xv = val(*x);
                let outer: usize = xv.shape()[..*axis].iter().product();
                let inner: usize = xv.shape()[*axis..].iter().product();
                let mut dx = vec![0.0; xv.numel()];
                for o in 0..outer {
                    let dst = &mut dx[o * inner..(o + 1) * inner];
                    for r in 0..*n {
                        let src = &gd[(o * n + r) * inner..(o * n + r + 1) * inner];
                        for (a, b) in dst.iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::Sum(x) => {
                let s = g.item();
                self.accumulate(grads, *x, Tensor::full(val(*x).shape().to_vec(), s));
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let s = g.item() / xv.numel() as f64;
                self.accumulate(grads, *x, Tensor::full(xv.shape().to_vec(), s));
            }
            Op::L1(x) => {
                let s = g.item();
                let d = val(*x).map(|v| {
                    if v > 0.0 {
                        s
                    } else if v < 0.0 {
                        -s
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, d);
            }
            Op::SumSquares(x) => {
                let s = g.item();
                self.accumulate(grads, *x, val(*x).map(|v| 2.0 * s * v));
            }
            Op::NormLast(x) => {
                let xv = val(*x);
                let d = *xv.shape().last().unwrap();
                let norms = node.value.data();
                let mut dx = vec![0.0; xv.numel()];
                for (r, chunk) in xv.data().chunks(d.max(1)).enumerate() {
                    if norms[r] > 0.0 {
                        let f = gd[r] / norms[r];
                        for (j, v) in chunk.iter().enumerate() {
                            dx[r * d + j] = f * v;
                        }
                    }
                }
                self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
            }
            Op::Conv2d { x, w, b, geom } => {
                let (xv, wv) = (val(*x), val(*w));
                let n = xv.shape()[0];
                let o = wv.shape()[0];
                let (rows, p) = (geom.rows(), geom.cols());
                let in_size = geom.c * geom.h * geom.w;
                let mut cols = vec![0.0; rows * p];
                let mut dcols = vec![0.0; rows * p];
                let mut dw = vec![0.0; wv.numel()];
                let mut dx = if rg(*x) { vec![0.0; xv.numel()] } else { Vec::new() };
                for i in 0..n {
                    let go = &gd[i * o * p..(i + 1) * o * p];
                    if rg(*w) {
                        kernels::im2col(&xv.data()[i * in_size..(i + 1) * in_size], geom, &mut cols);
                        kernels::gemm(o, p, rows, go, false, &cols, true, &mut dw, true);
                    }
                    if rg(*x) {
                        kernels::gemm(rows, o, p, wv.data(), true, go, false, &mut dcols, false);
                        kernels::col2im(&dcols, geom, &mut dx[i * in_size..(i + 1) * in_size]);
                    }
                }
                if rg(*x) {
                    self.accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                if rg(*w) {
                    self.accumulate(grads, *w, Tensor::new(wv.shape().to_vec(), dw)?);
                }
                if let Some(b) = b {
                    if rg(*b) {
                        let mut db = vec![0.0; o];
                        for i in 0..n {
                            for (oc, d) in db.iter_mut().enumerate() {
                                *d += gd[(i * o + oc) * p..(i * o + oc + 1) * p].iter().sum::<f64>();
                            }
                        }
                        self.accumulate(grads, *b, Tensor::vector(db));
                    }
                }
            }
            Op::Rodrigues(r) => {
                let rv = val(*r);
                let mut dr = Vec::with_capacity(rv.numel());
                for (row, gm) in rv.data().chunks(3).zip(gd.chunks(9)) {
                    dr.extend_from_slice(&kernels::rodrigues_vjp([row[0], row[1], row[2]], gm));
                }
                self.accumulate(grads, *r, Tensor::new(rv.shape().to_vec(), dr)?);
            }
        }
        Ok(())
    }
}
