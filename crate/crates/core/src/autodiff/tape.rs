use super::kernels::{col2im, gemm, im2col, ConvGeom};
use super::{AutodiffError, Result, Tensor};

/// Floor applied inside [`Tape::log_clamped`].
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
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
    Conv2d { x: Var, k: Var, geom: ConvGeom, out_c: usize },
    ConvTranspose2d { x: Var, k: Var, geom: ConvGeom, in_c: usize },
    AddBias(Var, Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Expand { x: Var, h: usize, w: usize },
    Mean(Var),
    Sum(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    LogClamped(Var),
    Clamp(Var, f64, f64),
    Exp(Var),
    Abs(Var),
    MinibatchSimilarity { m: Var, b: usize, c: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// Persistent accumulator, present only on tracked leaves.
    grad: Option<Tensor>,
}

/// Define-by-run computation record. Operations append nodes in execution
/// order, so node order is a topological order and [`Tape::backward`] walks
/// it in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(AutodiffError::Shape(msg))
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

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf; `tracked` leaves receive gradients.
    pub fn leaf(&mut self, value: Tensor, tracked: bool) -> Var {
        let grad = tracked.then(|| Tensor::zeros(value.shape()));
        let v = self.push(value, Op::Leaf, tracked);
        self.nodes[v.0].grad = grad;
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a tracked leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            if let Some(g) = &mut n.grad {
                g.data_mut().fill(0.0);
            }
        }
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let src = &self.nodes[x.0].value;
        let value = Tensor::new(src.shape(), src.data().iter().map(|&v| f(v)).collect()).unwrap();
        let rg = self.rg(&[x]);
        self.push(value, op, rg)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return shape_err(format!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape(), data).unwrap();
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err(format!("matmul {sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::new(&[m, n], out).unwrap(), Op::MatMul(a, b), rg))
    }

    /// Cross-correlation of `x` (N x C x H x W) with `k` (K x C x kh x kw),
    /// zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[1] || stride == 0 {
            return shape_err(format!("conv2d input {sx:?} kernel {sk:?} stride {stride}"));
        }
        let (n, c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (out_c, kh, kw) = (sk[0], sk[2], sk[3]);
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        if kh > ph || kw > pw || (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return shape_err(format!(
                "conv2d output size not integral: input {h}x{w}, pad {pad}, kernel {kh}x{kw}, stride {stride}"
            ));
        }
        let geom = ConvGeom {
            channels: c,
            height: h,
            width: w,
            kh,
            kw,
            stride,
            pad,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        };
        let (rows, ncol) = (geom.col_rows(), geom.col_cols());
        let mut cols = vec![0.0; rows * ncol];
        let mut out = vec![0.0; n * out_c * ncol];
        let (xd, kd) = (self.value(x).data(), self.value(k).data());
        for s in 0..n {
            im2col(&xd[s * c * h * w..(s + 1) * c * h * w], &geom, &mut cols);
            gemm(out_c, rows, ncol, kd, false, &cols, false, &mut out[s * out_c * ncol..(s + 1) * out_c * ncol], 0.0);
        }
        let value = Tensor::new(&[n, out_c, geom.out_h, geom.out_w], out).unwrap();
        let rg = self.rg(&[x, k]);
        Ok(self.push(value, Op::Conv2d { x, k, geom, out_c }, rg))
    }

    /// Transposed convolution: the input-gradient map of [`Tape::conv2d`].
    /// `x` is N x Cin x H x W, `k` is Cin x Cout x kh x kw, and the output is
    /// N x Cout x ((H-1)s - 2p + kh) x ((W-1)s - 2p + kw).
    pub fn conv_transpose2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var> {
        let (sx, sk) = (self.shape(x).to_vec(), self.shape(k).to_vec());
        if sx.len() != 4 || sk.len() != 4 || sx[1] != sk[0] || stride == 0 {
            return shape_err(format!("conv_transpose2d input {sx:?} kernel {sk:?} stride {stride}"));
        }
        let (n, in_c, h, w) = (sx[0], sx[1], sx[2], sx[3]);
        let (out_c, kh, kw) = (sk[1], sk[2], sk[3]);
        let full_h = (h - 1) * stride + kh;
        let full_w = (w - 1) * stride + kw;
        if h == 0 || w == 0 || full_h <= 2 * pad || full_w <= 2 * pad {
            return shape_err(format!("conv_transpose2d output would be empty for input {h}x{w}"));
        }
        let geom = ConvGeom {
            channels: out_c,
            height: full_h - 2 * pad,
            width: full_w - 2 * pad,
            kh,
            kw,
            stride,
            pad,
            out_h: h,
            out_w: w,
        };
        let (rows, ncol) = (geom.col_rows(), geom.col_cols());
        let out_len = out_c * geom.height * geom.width;
        let mut cols = vec![0.0; rows * ncol];
        let mut out = vec![0.0; n * out_len];
        let (xd, kd) = (self.value(x).data(), self.value(k).data());
        for s in 0..n {
            gemm(rows, in_c, ncol, kd, true, &xd[s * in_c * ncol..(s + 1) * in_c * ncol], false, &mut cols, 0.0);
            col2im(&cols, &geom, &mut out[s * out_len..(s + 1) * out_len]);
        }
        let value = Tensor::new(&[n, out_c, geom.height, geom.width], out).unwrap();
        let rg = self.rg(&[x, k]);
        Ok(self.push(value, Op::ConvTranspose2d { x, k, geom, in_c }, rg))
    }

    /// Adds `b` (length C) along axis 1 of an N x C or N x C x H x W tensor.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x).to_vec(), self.shape(b).to_vec());
        if sx.len() < 2 || sb.len() != 1 || sb[0] != sx[1] {
            return shape_err(format!("add_bias {sx:?} + {sb:?}"));
        }
        let inner: usize = sx[2..].iter().product();
        let bd = self.value(b).data().to_vec();
        let mut data = self.value(x).data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += bd[(i / inner) % sx[1]];
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(Tensor::new(&sx, data).unwrap(), Op::AddBias(x, b), rg))
    }

    pub fn leaky_relu(&mut self, x: Var, alpha: f64) -> Var {
        self.unary(x, Op::LeakyRelu(x, alpha), |v| if v > 0.0 { v } else { alpha * v })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |v| {
            if v >= 0.0 {
                1.0 / (1.0 + (-v).exp())
            } else {
                let e = v.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    /// `ln(max(x, 1e-12))`; zero gradient below the floor. NaN stays NaN.
    pub fn log_clamped(&mut self, x: Var) -> Var {
        self.unary(x, Op::LogClamped(x), |v| if v.is_nan() { v } else { v.max(LOG_FLOOR).ln() })
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        self.unary(x, Op::Affine(x, scale), |v| scale * v + shift)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        let rg = self.rg(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = match inputs.first() {
            Some(v) => self.shape(*v).to_vec(),
            None => return shape_err("concat of nothing".into()),
        };
        if axis >= first.len() {
            return shape_err(format!("concat axis {axis} for rank {}", first.len()));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            if s.len() != first.len() || s.iter().enumerate().any(|(d, &n)| d != axis && n != first[d]) {
                return shape_err(format!("concat {first:?} with {s:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        let rg = self.rg(inputs);
        Ok(self.push(Tensor::new(&shape, data).unwrap(), Op::Concat { inputs: inputs.to_vec(), axis }, rg))
    }

    /// Broadcasts N x C to N x C x h x w (constant feature maps).
    pub fn expand_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return shape_err(format!("expand_spatial needs N x C, got {s:?}"));
        }
        let mut data = Vec::with_capacity(s[0] * s[1] * h * w);
        for &v in self.value(x).data() {
            data.extend(std::iter::repeat_n(v, h * w));
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::new(&[s[0], s[1], h, w], data).unwrap(), Op::Expand { x, h, w }, rg))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(m), Op::Mean(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// Minibatch similarity features. `m` is N x (B*C), read as N rows of B
    /// kernels with C entries each; output `o[i, b] = sum_{j != i}
    /// exp(-||m[i, b, :] - m[j, b, :]||_1)`.
    pub fn minibatch_similarity(&mut self, m: Var, b: usize, c: usize) -> Result<Var> {
        let s = self.shape(m).to_vec();
        if s.len() != 2 || s[1] != b * c {
            return shape_err(format!("minibatch_similarity needs N x {}, got {s:?}", b * c));
        }
        let n = s[0];
        let md = self.value(m).data();
        let mut out = vec![0.0; n * b];
        for i in 0..n {
            for j in i + 1..n {
                for k in 0..b {
                    let (ri, rj) = (&md[i * b * c + k * c..][..c], &md[j * b * c + k * c..][..c]);
                    let l1: f64 = ri.iter().zip(rj).map(|(x, y)| (x - y).abs()).sum();
                    let e = (-l1).exp();
                    out[i * b + k] += e;
                    out[j * b + k] += e;
                }
            }
        }
        let rg = self.rg(&[m]);
        Ok(self.push(Tensor::new(&[n, b], out).unwrap(), Op::MinibatchSimilarity { m, b, c }, rg))
    }

    /// Reverse-mode sweep from a scalar `loss`. Gradients are added to the
    /// accumulators of tracked leaves, so calling this twice without
    /// [`Tape::zero_grad`] sums both passes.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            if let Op::Leaf = op {
                if let Some(acc) = &mut self.nodes[idx].grad {
                    for (a, d) in acc.data_mut().iter_mut().zip(&g) {
                        *a += d;
                    }
                }
                continue;
            }
            self.backprop_op(idx, &op, &g, &mut grads);
        }
        Ok(())
    }

    fn backprop_op(&self, idx: usize, op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = &self.nodes[idx].value;
        let val = |v: &Var| self.nodes[v.0].value.data();
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot => *slot = Some(contrib),
            }
        };
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        match op {
            Op::Leaf => unreachable!(),
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if wants(a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g, false, val(b), true, &mut da, 0.0);
                    send(*a, da);
                }
                if wants(b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, val(a), true, g, false, &mut db, 0.0);
                    send(*b, db);
                }
            }
            Op::Conv2d { x, k, geom, out_c } => {
                let n = self.shape(*x)[0];
                let (rows, ncol) = (geom.col_rows(), geom.col_cols());
                let in_len = geom.channels * geom.height * geom.width;
                let (xd, kd) = (val(x), val(k));
                let mut cols = vec![0.0; rows * ncol];
                let mut dk = wants(k).then(|| vec![0.0; out_c * rows]);
                let mut dx = wants(x).then(|| vec![0.0; n * in_len]);
                for s in 0..n {
                    let gs = &g[s * out_c * ncol..(s + 1) * out_c * ncol];
                    if let Some(dk) = &mut dk {
                        im2col(&xd[s * in_len..(s + 1) * in_len], geom, &mut cols);
                        gemm(*out_c, ncol, rows, gs, false, &cols, true, dk, 1.0);
                    }
                    if let Some(dx) = &mut dx {
                        gemm(rows, *out_c, ncol, kd, true, gs, false, &mut cols, 0.0);
                        col2im(&cols, geom, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
                if let Some(dk) = dk {
                    send(*k, dk);
                }
                if let Some(dx) = dx {
                    send(*x, dx);
                }
            }
            Op::ConvTranspose2d { x, k, geom, in_c } => {
                let n = self.shape(*x)[0];
                let (rows, ncol) = (geom.col_rows(), geom.col_cols());
                let out_len = geom.channels * geom.height * geom.width;
                let (xd, kd) = (val(x), val(k));
                let mut cols = vec![0.0; rows * ncol];
                let mut dk = wants(k).then(|| vec![0.0; in_c * rows]);
                let mut dx = wants(x).then(|| vec![0.0; n * in_c * ncol]);
                for s in 0..n {
                    im2col(&g[s * out_len..(s + 1) * out_len], geom, &mut cols);
                    if let Some(dk) = &mut dk {
                        gemm(*in_c, ncol, rows, &xd[s * in_c * ncol..(s + 1) * in_c * ncol], false, &cols, true, dk, 1.0);
                    }
                    if let Some(dx) = &mut dx {
                        gemm(*in_c, rows, ncol, kd, false, &cols, false, &mut dx[s * in_c * ncol..(s + 1) * in_c * ncol], 0.0);
                    }
                }
                if let Some(dk) = dk {
                    send(*k, dk);
                }
                if let Some(dx) = dx {
                    send(*x, dx);
                }
            }
            Op::AddBias(x, b) => {
                if wants(b) {
                    let s = self.shape(*x);
                    let inner: usize = s[2..].iter().product();
                    let mut db = vec![0.0; s[1]];
                    for (i, gv) in g.iter().enumerate() {
                        db[(i / inner) % s[1]] += gv;
                    }
                    send(*b, db);
                }
                send(*x, g.to_vec());
            }
            Op::LeakyRelu(x, alpha) => {
                let d = val(x).iter().zip(g).map(|(&v, &gv)| if v > 0.0 { gv } else { alpha * gv }).collect();
                send(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = out.data().iter().zip(g).map(|(&y, &gv)| gv * y * (1.0 - y)).collect();
                send(*x, d);
            }
            Op::Tanh(x) => {
                let d = out.data().iter().zip(g).map(|(&y, &gv)| gv * (1.0 - y * y)).collect();
                send(*x, d);
            }
            Op::Exp(x) => {
                let d = out.data().iter().zip(g).map(|(&y, &gv)| gv * y).collect();
                send(*x, d);
            }
            Op::Abs(x) => {
                let d = val(x).iter().zip(g).map(|(&v, &gv)| gv * sign(v)).collect();
                send(*x, d);
            }
            Op::LogClamped(x) => {
                let d = val(x).iter().zip(g).map(|(&v, &gv)| if v > LOG_FLOOR || v.is_nan() { gv / v } else { 0.0 }).collect();
                send(*x, d);
            }
            Op::Clamp(x, lo, hi) => {
                let d = val(x)
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v >= *lo && v <= *hi { gv } else { 0.0 })
                    .collect();
                send(*x, d);
            }
            Op::Affine(x, scale) => send(*x, g.iter().map(|gv| gv * scale).collect()),
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Concat { inputs, axis } => {
                let shape = out.shape();
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let widths: Vec<usize> = inputs.iter().map(|v| self.shape(*v)[*axis] * inner).collect();
                let row: usize = widths.iter().sum();
                let mut offset = 0;
                for (v, &wd) in inputs.iter().zip(&widths) {
                    if wants(v) {
                        let mut d = Vec::with_capacity(outer * wd);
                        for o in 0..outer {
                            d.extend_from_slice(&g[o * row + offset..o * row + offset + wd]);
                        }
                        send(*v, d);
                    }
                    offset += wd;
                }
            }
            Op::Expand { x, h, w } => {
                let d = g.chunks_exact(h * w).map(|c| c.iter().sum()).collect();
                send(*x, d);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                send(*x, vec![g[0] / n as f64; n]);
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                send(*x, vec![g[0]; n]);
            }
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                if wants(a) {
                    send(*a, g.iter().zip(vb).map(|(gv, y)| gv * y).collect());
                }
                if wants(b) {
                    send(*b, g.iter().zip(va).map(|(gv, x)| gv * x).collect());
                }
            }
            Op::MinibatchSimilarity { m, b, c } => {
                let (b, c) = (*b, *c);
                let md = val(m);
                let n = self.shape(*m)[0];
                let mut d = vec![0.0; md.len()];
                for i in 0..n {
                    for j in i + 1..n {
                        for k in 0..b {
                            let (oi, oj) = (i * b * c + k * c, j * b * c + k * c);
                            let l1: f64 = (0..c).map(|t| (md[oi + t] - md[oj + t]).abs()).sum();
                            // both o[i,k] and o[j,k] contain this pair
                            let coef = (g[i * b + k] + g[j * b + k]) * (-l1).exp();
                            for t in 0..c {
                                let s = sign(md[oi + t] - md[oj + t]);
                                d[oi + t] -= coef * s;
                                d[oj + t] += coef * s;
                            }
                        }
                    }
                }
                send(*m, d);
            }
        }
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
