use super::{mismatch, Tensor, TensorError};
use crate::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    stride: usize,
    pad: usize,
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    AddBias(Var, Var),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    TransposeLast2(Var),
    Reshape(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        conv: Conv,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    BceWithLogits {
        x: Var,
        targets: Vec<T>,
    },
    Sum(Var),
    Mean(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Record of one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn split3(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

// c[m,n] += a[m,k] * b[k,n]
fn gemm_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

// da[m,k] += g[m,n] * b[k,n]^T
fn gemm_acc_bt<T: Scalar>(g: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (&gv, &bv) in grow.iter().zip(brow) {
                s += gv * bv;
            }
            da[i * k + p] += s;
        }
    }
}

// db[k,n] += a[m,k]^T * g[m,n]
fn gemm_acc_at<T: Scalar>(a: &[T], g: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let drow = &mut db[p * n..(p + 1) * n];
            for (dv, &gv) in drow.iter_mut().zip(grow) {
                *dv += av * gv;
            }
        }
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn cols(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, conv: Conv, cols: &mut [T]) {
    let l = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let q = (c * g.kh + ki) * g.kw + kj;
                let row = &mut cols[q * l..(q + 1) * l];
                for oy in 0..g.oh {
                    let iy = (oy * conv.stride + ki) as isize - conv.pad as isize;
                    for ox in 0..g.ow {
                        let ix = (ox * conv.stride + kj) as isize - conv.pad as isize;
                        row[oy * g.ow + ox] = if iy < 0
                            || ix < 0
                            || iy >= g.h as isize
                            || ix >= g.w as isize
                        {
                            T::zero()
                        } else {
                            x[(c * g.h + iy as usize) * g.w + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, conv: Conv, dx: &mut [T]) {
    let l = g.positions();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let q = (c * g.kh + ki) * g.kw + kj;
                let row = &cols[q * l..(q + 1) * l];
                for oy in 0..g.oh {
                    let iy = (oy * conv.stride + ki) as isize - conv.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.ow {
                        let ix = (ox * conv.stride + kj) as isize - conv.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dx[(c * g.h + iy as usize) * g.w + ix as usize] += row[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is tracked.
    pub fn variable(&mut self, value: Tensor<T>) -> Var {
        self.push_raw(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_raw(value, op, requires_grad))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var, TensorError> {
        self.same_shape(name, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape(), data)?;
        self.push(name, value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var, TensorError> {
        let value = self.value(x).map(|v| v * c);
        self.push("scale", value, Op::Scale(x, c), &[x])
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var, TensorError> {
        let vx = self.value(x);
        if vx.shape() != c.shape() {
            return Err(mismatch("mul_const", format!("{:?} vs {:?}", vx.shape(), c.shape())));
        }
        let data = vx.data().iter().zip(c.data()).map(|(&a, &b)| a * b).collect();
        let value = Tensor::new(vx.shape(), data)?;
        self.push("mul_const", value, Op::MulConst(x, c.data().to_vec()), &[x])
    }

    /// `x[..., d] + b[d]`, broadcasting over the leading axes.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (vx, vb) = (self.value(x), self.value(b));
        let d = *vx.shape().last().unwrap_or(&1);
        if vb.shape() != [d] {
            return Err(mismatch("add_bias", format!("{:?} + {:?}", vx.shape(), vb.shape())));
        }
        let bias = vb.data();
        let data = vx
            .data()
            .chunks(d)
            .flat_map(|row| row.iter().zip(bias).map(|(&a, &c)| a + c))
            .collect();
        let value = Tensor::new(vx.shape(), data)?;
        self.push("add_bias", value, Op::AddBias(x, b), &[x, b])
    }

    /// `[m, k] x [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_acc(va.data(), vb.data(), &mut out, m, k, n);
        let value = Tensor::new(&[m, n], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    /// `[B, m, k] x [B, k, n]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (va, vb) = (self.value(a), self.value(b));
        let (sa, sb) = (va.shape(), vb.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(mismatch("batch_matmul", format!("{sa:?} x {sb:?}")));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bs * m * n];
        for i in 0..bs {
            gemm_acc(
                &va.data()[i * m * k..(i + 1) * m * k],
                &vb.data()[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let value = Tensor::new(&[bs, m, n], out)?;
        self.push("batch_matmul", value, Op::BatchMatMul(a, b), &[a, b])
    }

    /// Swaps the last two axes.
    pub fn transpose_last2(&mut self, x: Var) -> Result<Var, TensorError> {
        let vx = self.value(x);
        let s = vx.shape();
        if s.len() < 2 {
            return Err(mismatch("transpose_last2", format!("{s:?}")));
        }
        let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
        let batch = vx.numel() / (m * n).max(1);
        let mut out = vec![T::zero(); vx.numel()];
        for b in 0..batch {
            let src = &vx.data()[b * m * n..(b + 1) * m * n];
            let dst = &mut out[b * m * n..(b + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    dst[j * m + i] = src[i * n + j];
                }
            }
        }
        let mut shape = s.to_vec();
        let r = shape.len();
        shape.swap(r - 2, r - 1);
        let value = Tensor::new(&shape, out)?;
        self.push("transpose_last2", value, Op::TransposeLast2(x), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(x).reshape(shape)?;
        self.push("reshape", value, Op::Reshape(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let value = self.value(x).map(|v| v.max(T::zero()));
        self.push("relu", value, Op::Relu(x), &[x])
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let vx = self.value(x);
        if !vx.is_finite() {
            return Err(TensorError::NonFinite("softmax input"));
        }
        let d = *vx.shape().last().unwrap_or(&1);
        let mut out = vx.data().to_vec();
        for row in out.chunks_mut(d) {
            let mx = row.iter().cloned().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let value = Tensor::new(vx.shape(), out)?;
        self.push("softmax", value, Op::Softmax(x), &[x])
    }

    /// Normalises each row over the last axis, then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var, TensorError> {
        let vx = self.value(x);
        let d = *vx.shape().last().unwrap_or(&1);
        let (vg, vb) = (self.value(gamma), self.value(beta));
        if vg.shape() != [d] || vb.shape() != [d] {
            return Err(mismatch(
                "layer_norm",
                format!("row {d} with gamma {:?}, beta {:?}", vg.shape(), vb.shape()),
            ));
        }
        let rows = vx.numel() / d;
        let dn = T::of_usize(d);
        let mut xhat = vec![T::zero(); vx.numel()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); vx.numel()];
        for r in 0..rows {
            let row = &vx.data()[r * d..(r + 1) * d];
            let mean = row.iter().cloned().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = vg.data()[j] * h + vb.data()[j];
            }
        }
        let value = Tensor::new(vx.shape(), out)?;
        self.push(
            "layer_norm",
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    fn conv_geom(&self, x: Var, w: Var, conv: Conv) -> Result<ConvGeom, TensorError> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || conv.stride == 0 {
            return Err(mismatch("conv2d", format!("input {sx:?}, kernel {sw:?}")));
        }
        let (h, wd, kh, kw) = (sx[2], sx[3], sw[2], sw[3]);
        if h + 2 * conv.pad < kh || wd + 2 * conv.pad < kw {
            return Err(mismatch("conv2d", format!("kernel {sw:?} larger than padded input {sx:?}")));
        }
        Ok(ConvGeom {
            c: sx[1],
            h,
            w: wd,
            kh,
            kw,
            oh: (h + 2 * conv.pad - kh) / conv.stride + 1,
            ow: (wd + 2 * conv.pad - kw) / conv.stride + 1,
        })
    }

    /// Cross-correlation of `x[N, C, H, W]` with `w[O, C, KH, KW]` plus `b[O]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let conv = Conv { stride, pad };
        let g = self.conv_geom(x, w, conv)?;
        let (vx, vw, vb) = (self.value(x), self.value(w), self.value(b));
        let (n, o) = (vx.shape()[0], vw.shape()[0]);
        if vb.shape() != [o] {
            return Err(mismatch("conv2d", format!("bias {:?} for {o} filters", vb.shape())));
        }
        let (q, l) = (g.cols(), g.positions());
        let mut cols = vec![T::zero(); q * l];
        let mut out = vec![T::zero(); n * o * l];
        let in_size = g.c * g.h * g.w;
        for s in 0..n {
            im2col(&vx.data()[s * in_size..(s + 1) * in_size], &g, conv, &mut cols);
            let dst = &mut out[s * o * l..(s + 1) * o * l];
            for (oc, row) in dst.chunks_mut(l).enumerate() {
                row.fill(vb.data()[oc]);
            }
            gemm_acc(vw.data(), &cols, dst, o, q, l);
        }
        let value = Tensor::new(&[n, o, g.oh, g.ow], out)?;
        self.push("conv2d", value, Op::Conv2d { x, w, b, conv }, &[x, w, b])
    }

    /// Non-overlapping `k`x`k` max pooling; trailing rows/columns are dropped.
    pub fn maxpool2d(&mut self, x: Var, k: usize) -> Result<Var, TensorError> {
        let vx = self.value(x);
        let s = vx.shape();
        if s.len() != 4 || k == 0 || s[2] < k || s[3] < k {
            return Err(mismatch("maxpool2d", format!("{s:?} with k = {k}")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h / k, w / k);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * k * w + ox * k;
                    for dy in 0..k {
                        for dx in 0..k {
                            let i = base + (oy * k + dy) * w + ox * k + dx;
                            if vx.data()[i] > vx.data()[best] {
                                best = i;
                            }
                        }
                    }
                    out.push(vx.data()[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        self.push("maxpool2d", value, Op::MaxPool { x, argmax }, &[x])
    }

    /// `[N, C, H, W] -> [N, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, TensorError> {
        let vx = self.value(x);
        let s = vx.shape();
        if s.len() != 4 {
            return Err(mismatch("global_avg_pool", format!("{s:?}")));
        }
        let hw = s[2] * s[3];
        let scale = T::one() / T::of_usize(hw);
        let data = vx.data().chunks(hw).map(|p| p.iter().cloned().sum::<T>() * scale).collect();
        let value = Tensor::new(&[s[0], s[1]], data)?;
        self.push("global_avg_pool", value, Op::GlobalAvgPool(x), &[x])
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = inputs
            .first()
            .ok_or_else(|| mismatch("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(mismatch("concat", format!("axis {axis} of {base:?}")));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(mismatch("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split3(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in inputs {
                let vv = self.value(*v);
                let chunk = vv.shape()[axis] * inner;
                out.extend_from_slice(&vv.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let value = Tensor::new(&shape, out)?;
        self.push(
            "concat",
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    /// Slice `start..start + len` of `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let vx = self.value(x);
        let s = vx.shape();
        if axis >= s.len() || start + len > s[axis] {
            return Err(mismatch("narrow", format!("{start}..{} of axis {axis} in {s:?}", start + len)));
        }
        let (outer, dim, inner) = split3(s, axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * dim + start) * inner;
            out.extend_from_slice(&vx.data()[from..from + len * inner]);
        }
        let mut shape = s.to_vec();
        shape[axis] = len;
        let value = Tensor::new(&shape, out)?;
        self.push("narrow", value, Op::Narrow { x, axis, start }, &[x])
    }

    /// Elementwise sigmoid cross-entropy against constant targets, in the
    /// stable form `max(x, 0) - x t + ln(1 + exp(-|x|))`.
    pub fn bce_with_logits(&mut self, x: Var, targets: &Tensor<T>) -> Result<Var, TensorError> {
        let vx = self.value(x);
        if vx.shape() != targets.shape() {
            return Err(mismatch("bce_with_logits", format!("{:?} vs {:?}", vx.shape(), targets.shape())));
        }
        let data = vx
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| z.max(T::zero()) - z * t + (-z.abs()).exp().ln_1p())
            .collect();
        let value = Tensor::new(vx.shape(), data)?;
        self.push(
            "bce_with_logits",
            value,
            Op::BceWithLogits {
                x,
                targets: targets.data().to_vec(),
            },
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let s = self.value(x).data().iter().cloned().sum::<T>();
        self.push("sum", Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x);
        let s = v.data().iter().cloned().sum::<T>() / T::of_usize(v.numel().max(1));
        self.push("mean", Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![T::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| g.map(|d| Tensor::new(n.value.shape(), d).expect("gradient shape")))
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
                if let Some(db) = self.slot(grads, *b) {
                    db.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = self.slot(grads, *a) {
                    da.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
                if let Some(db) = self.slot(grads, *b) {
                    db.iter_mut().zip(g).for_each(|(d, &gv)| *d -= gv);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if let Some(da) = self.slot(grads, *a) {
                    for ((d, &gv), &y) in da.iter_mut().zip(g).zip(vb) {
                        *d += gv * y;
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for ((d, &gv), &x) in db.iter_mut().zip(g).zip(va) {
                        *d += gv * x;
                    }
                }
            }
            Op::Scale(x, c) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv * *c);
                }
            }
            Op::MulConst(x, c) => {
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gv), &cv) in dx.iter_mut().zip(g).zip(c) {
                        *d += gv * cv;
                    }
                }
            }
            Op::AddBias(x, b) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
                if let Some(db) = self.slot(grads, *b) {
                    let d = db.len();
                    for row in g.chunks(d) {
                        db.iter_mut().zip(row).for_each(|(acc, &gv)| *acc += gv);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
                if let Some(da) = self.slot(grads, *a) {
                    gemm_acc_bt(g, vb.data(), da, m, k, n);
                }
                if let Some(db) = self.slot(grads, *b) {
                    gemm_acc_at(va.data(), g, db, m, k, n);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (bs, m, k, n) = (va.shape()[0], va.shape()[1], va.shape()[2], vb.shape()[2]);
                if let Some(da) = self.slot(grads, *a) {
                    for s in 0..bs {
                        gemm_acc_bt(
                            &g[s * m * n..(s + 1) * m * n],
                            &vb.data()[s * k * n..(s + 1) * k * n],
                            &mut da[s * m * k..(s + 1) * m * k],
                            m,
                            k,
                            n,
                        );
                    }
                }
                if let Some(db) = self.slot(grads, *b) {
                    for s in 0..bs {
                        gemm_acc_at(
                            &va.data()[s * m * k..(s + 1) * m * k],
                            &g[s * m * n..(s + 1) * m * n],
                            &mut db[s * k * n..(s + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::TransposeLast2(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    let s = self.shape(*x);
                    let (m, n) = (s[s.len() - 2], s[s.len() - 1]);
                    let batch = dx.len() / (m * n).max(1);
                    for b in 0..batch {
                        for i in 0..m {
                            for j in 0..n {
                                dx[b * m * n + i * n + j] += g[b * m * n + j * m + i];
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
            }
            Op::Relu(x) => {
                let vx = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for ((d, &gv), &v) in dx.iter_mut().zip(g).zip(vx) {
                        if v > T::zero() {
                            *d += gv;
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let d = *node.value.shape().last().unwrap_or(&1);
                if let Some(dx) = self.slot(grads, *x) {
                    for ((drow, grow), yrow) in dx.chunks_mut(d).zip(g.chunks(d)).zip(y.chunks(d)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for j in 0..d {
                            drow[j] += yrow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let d = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                if let Some(dg) = self.slot(grads, *gamma) {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                }
                if let Some(db) = self.slot(grads, *beta) {
                    for grow in g.chunks(d) {
                        db.iter_mut().zip(grow).for_each(|(acc, &gv)| *acc += gv);
                    }
                }
                if let Some(dx) = self.slot(grads, *x) {
                    let dn = T::of_usize(d);
                    for (r, ((drow, grow), hrow)) in
                        dx.chunks_mut(d).zip(g.chunks(d)).zip(xhat.chunks(d)).enumerate()
                    {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            let dh = grow[j] * gam[j];
                            sum_dh += dh;
                            sum_dh_h += dh * hrow[j];
                        }
                        let k = inv_std[r] / dn;
                        for j in 0..d {
                            let dh = grow[j] * gam[j];
                            drow[j] += k * (dn * dh - sum_dh - hrow[j] * sum_dh_h);
                        }
                    }
                }
            }
            Op::Conv2d { x, w, b, conv } => {
                let geom = self.conv_geom(*x, *w, *conv).expect("validated in forward");
                let (vx, vw) = (self.value(*x), self.value(*w));
                let (n, o) = (vx.shape()[0], vw.shape()[0]);
                let (q, l) = (geom.cols(), geom.positions());
                let in_size = geom.c * geom.h * geom.w;
                if let Some(db) = self.slot(grads, *b) {
                    for s in 0..n {
                        for (oc, d) in db.iter_mut().enumerate().take(o) {
                            let start = (s * o + oc) * l;
                            *d += g[start..start + l].iter().cloned().sum::<T>();
                        }
                    }
                }
                let want_w = self.nodes[w.0].requires_grad;
                let want_x = self.nodes[x.0].requires_grad;
                if want_w {
                    let mut cols = vec![T::zero(); q * l];
                    let dw = self.slot(grads, *w).unwrap();
                    for s in 0..n {
                        im2col(&vx.data()[s * in_size..(s + 1) * in_size], &geom, *conv, &mut cols);
                        gemm_acc_bt(&g[s * o * l..(s + 1) * o * l], &cols, dw, o, q, l);
                    }
                }
                if want_x {
                    let mut dcols = vec![T::zero(); q * l];
                    let dx = self.slot(grads, *x).unwrap();
                    for s in 0..n {
                        dcols.fill(T::zero());
                        gemm_acc_at(vw.data(), &g[s * o * l..(s + 1) * o * l], &mut dcols, o, q, l);
                        col2im(&dcols, &geom, *conv, &mut dx[s * in_size..(s + 1) * in_size]);
                    }
                }
            }
            Op::MaxPool { x, argmax } => {
                if let Some(dx) = self.slot(grads, *x) {
                    for (&src, &gv) in argmax.iter().zip(g) {
                        dx[src] += gv;
                    }
                }
            }
            Op::GlobalAvgPool(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    let s = self.shape(*x);
                    let hw = s[2] * s[3];
                    let scale = T::one() / T::of_usize(hw);
                    for (plane, &gv) in dx.chunks_mut(hw).zip(g) {
                        plane.iter_mut().for_each(|d| *d += gv * scale);
                    }
                }
            }
            Op::Concat { inputs, axis } => {
                let shape = node.value.shape();
                let (outer, _, inner) = split3(shape, *axis);
                let total = shape[*axis] * inner;
                let mut offset = 0;
                for v in inputs {
                    let chunk = self.shape(*v)[*axis] * inner;
                    if let Some(dv) = self.slot(grads, *v) {
                        for o in 0..outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            dv[o * chunk..(o + 1) * chunk]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, &gv)| *d += gv);
                        }
                    }
                    offset += chunk;
                }
            }
            Op::Narrow { x, axis, start } => {
                let (outer, dim, inner) = split3(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                if let Some(dx) = self.slot(grads, *x) {
                    for o in 0..outer {
                        let to = (o * dim + start) * inner;
                        let from = o * len * inner;
                        dx[to..to + len * inner]
                            .iter_mut()
                            .zip(&g[from..from + len * inner])
                            .for_each(|(d, &gv)| *d += gv);
                    }
                }
            }
            Op::BceWithLogits { x, targets } => {
                let vx = self.value(*x).data();
                if let Some(dx) = self.slot(grads, *x) {
                    for (((d, &gv), &z), &t) in dx.iter_mut().zip(g).zip(vx).zip(targets) {
                        *d += gv * (sigmoid(z) - t);
                    }
                }
            }
            Op::Sum(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    dx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(x) => {
                if let Some(dx) = self.slot(grads, *x) {
                    let scale = g[0] / T::of_usize(dx.len().max(1));
                    dx.iter_mut().for_each(|d| *d += scale);
                }
            }
        }
    }
}
