//! Differentiable primitives: elementwise arithmetic with broadcasting,
//! matmul, conv1d, softmax, reductions, activations, and the structural
//! ops (slice/stack/transpose/reshape) the encoder needs.

use std::collections::HashMap;

use super::{accumulate, strides_of, Result, Tensor, TensorError};

pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Div(Tensor, Tensor),
    Matmul(Tensor, Tensor),
    Transpose(Tensor),
    Conv1d {
        x: Tensor,
        w: Tensor,
        stride: usize,
        padding: usize,
    },
    Softmax {
        x: Tensor,
        axis: usize,
    },
    Sum {
        x: Tensor,
        axis: Option<usize>,
    },
    Mean {
        x: Tensor,
        axis: Option<usize>,
    },
    Exp(Tensor),
    Log(Tensor),
    Sqrt(Tensor),
    Relu(Tensor),
    Gelu(Tensor),
    Sigmoid(Tensor),
    Tanh(Tensor),
    Abs(Tensor),
    Neg(Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    SliceRows {
        x: Tensor,
        start: usize,
    },
    StackRows(Vec<Tensor>),
    BucketBias {
        scores: Tensor,
        table: Tensor,
        buckets: Vec<usize>,
    },
    MaskedFill {
        x: Tensor,
        mask: Vec<bool>,
    },
    Reshape(Tensor),
}

impl Op {
    pub(crate) fn parents(&self) -> Vec<Tensor> {
        match self {
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Matmul(a, b) => {
                vec![a.clone(), b.clone()]
            }
            Op::Conv1d { x, w, .. } => vec![x.clone(), w.clone()],
            Op::BucketBias { scores, table, .. } => vec![scores.clone(), table.clone()],
            Op::StackRows(rows) => rows.clone(),
            Op::Transpose(a)
            | Op::Softmax { x: a, .. }
            | Op::Sum { x: a, .. }
            | Op::Mean { x: a, .. }
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sqrt(a)
            | Op::Relu(a)
            | Op::Gelu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Abs(a)
            | Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::SliceRows { x: a, .. }
            | Op::MaskedFill { x: a, .. }
            | Op::Reshape(a) => vec![a.clone()],
        }
    }

    pub(crate) fn accumulate_parent_grads(
        &self,
        out: &Tensor,
        g: &[f64],
        flow: &mut HashMap<u64, Vec<f64>>,
    ) {
        match self {
            Op::Add(a, b) => {
                accumulate(flow, a, reduce_to_shape(g, out.shape(), a.shape()));
                accumulate(flow, b, reduce_to_shape(g, out.shape(), b.shape()));
            }
            Op::Sub(a, b) => {
                accumulate(flow, a, reduce_to_shape(g, out.shape(), a.shape()));
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                accumulate(flow, b, reduce_to_shape(&neg, out.shape(), b.shape()));
            }
            Op::Mul(a, b) => {
                let bv = broadcast_read(b, out.shape());
                let av = broadcast_read(a, out.shape());
                let ga: Vec<f64> = g.iter().zip(&bv).map(|(g, b)| g * b).collect();
                let gb: Vec<f64> = g.iter().zip(&av).map(|(g, a)| g * a).collect();
                accumulate(flow, a, reduce_to_shape(&ga, out.shape(), a.shape()));
                accumulate(flow, b, reduce_to_shape(&gb, out.shape(), b.shape()));
            }
            Op::Div(a, b) => {
                let bv = broadcast_read(b, out.shape());
                let av = broadcast_read(a, out.shape());
                let ga: Vec<f64> = g.iter().zip(&bv).map(|(g, b)| g / b).collect();
                let gb: Vec<f64> = g
                    .iter()
                    .zip(av.iter().zip(&bv))
                    .map(|(g, (a, b))| -g * a / (b * b))
                    .collect();
                accumulate(flow, a, reduce_to_shape(&ga, out.shape(), a.shape()));
                accumulate(flow, b, reduce_to_shape(&gb, out.shape(), b.shape()));
            }
            Op::Matmul(a, b) => {
                // dA = dC . B^T, dB = A^T . dC
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                let mut ga = vec![0.0; m * k];
                let mut gb = vec![0.0; k * n];
                let ad = a.data();
                let bd = b.data();
                for i in 0..m {
                    for j in 0..n {
                        let gij = g[i * n + j];
                        if gij == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            ga[i * k + p] += gij * bd[p * n + j];
                            gb[p * n + j] += gij * ad[i * k + p];
                        }
                    }
                }
                accumulate(flow, a, ga);
                accumulate(flow, b, gb);
            }
            Op::Transpose(a) => {
                let (r, c) = (a.shape()[0], a.shape()[1]);
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        ga[i * c + j] = g[j * r + i];
                    }
                }
                accumulate(flow, a, ga);
            }
            Op::Conv1d {
                x,
                w,
                stride,
                padding,
            } => {
                let (c_in, t) = (x.shape()[0], x.shape()[1]);
                let (c_out, k) = (w.shape()[0], w.shape()[2]);
                let t_out = out.shape()[1];
                let xd = x.data();
                let wd = w.data();
                let mut gx = vec![0.0; c_in * t];
                let mut gw = vec![0.0; c_out * c_in * k];
                for co in 0..c_out {
                    for s in 0..t_out {
                        let gos = g[co * t_out + s];
                        if gos == 0.0 {
                            continue;
                        }
                        for ci in 0..c_in {
                            for kk in 0..k {
                                let tt = (s * stride + kk) as isize - *padding as isize;
                                if tt < 0 || tt >= t as isize {
                                    continue;
                                }
                                let tt = tt as usize;
                                gx[ci * t + tt] += gos * wd[(co * c_in + ci) * k + kk];
                                gw[(co * c_in + ci) * k + kk] += gos * xd[ci * t + tt];
                            }
                        }
                    }
                }
                accumulate(flow, x, gx);
                accumulate(flow, w, gw);
            }
            Op::Softmax { x, axis } => {
                // dx = y * (g - sum(g*y, axis))
                let y = out.data();
                let shape = out.shape();
                let mut gx = vec![0.0; y.len()];
                for_each_lane(shape, *axis, |lane| {
                    let dot: f64 = lane.iter().map(|&i| g[i] * y[i]).sum();
                    for &i in lane {
                        gx[i] = y[i] * (g[i] - dot);
                    }
                });
                accumulate(flow, x, gx);
            }
            Op::Sum { x, axis } => {
                accumulate(flow, x, spread_reduction(g, x.shape(), *axis, 1.0));
            }
            Op::Mean { x, axis } => {
                let n = match axis {
                    Some(a) => x.shape()[*a] as f64,
                    None => x.numel() as f64,
                };
                accumulate(flow, x, spread_reduction(g, x.shape(), *axis, 1.0 / n));
            }
            Op::Exp(a) => {
                let ga: Vec<f64> = g.iter().zip(out.data()).map(|(g, y)| g * y).collect();
                accumulate(flow, a, ga);
            }
            Op::Log(a) => {
                let ga: Vec<f64> = g.iter().zip(a.data()).map(|(g, x)| g / x).collect();
                accumulate(flow, a, ga);
            }
            Op::Sqrt(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| if *y == 0.0 { 0.0 } else { g / (2.0 * y) })
                    .collect();
                accumulate(flow, a, ga);
            }
            Op::Relu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(a.data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(flow, a, ga);
            }
            Op::Gelu(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(a.data())
                    .map(|(g, x)| g * gelu_grad_scalar(*x))
                    .collect();
                accumulate(flow, a, ga);
            }
            Op::Sigmoid(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                accumulate(flow, a, ga);
            }
            Op::Tanh(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                accumulate(flow, a, ga);
            }
            Op::Abs(a) => {
                let ga: Vec<f64> = g
                    .iter()
                    .zip(a.data())
                    .map(|(g, x)| g * x.signum() * if *x == 0.0 { 0.0 } else { 1.0 })
                    .collect();
                accumulate(flow, a, ga);
            }
            Op::Neg(a) => {
                accumulate(flow, a, g.iter().map(|v| -v).collect());
            }
            Op::Scale(a, c) => {
                accumulate(flow, a, g.iter().map(|v| v * c).collect());
            }
            Op::AddScalar(a) => {
                accumulate(flow, a, g.to_vec());
            }
            Op::SliceRows { x, start } => {
                let row: usize = x.shape()[1..].iter().product();
                let mut gx = vec![0.0; x.numel()];
                gx[start * row..start * row + g.len()].copy_from_slice(g);
                accumulate(flow, x, gx);
            }
            Op::StackRows(rows) => {
                let d = rows[0].numel();
                for (i, r) in rows.iter().enumerate() {
                    accumulate(flow, r, g[i * d..(i + 1) * d].to_vec());
                }
            }
            Op::BucketBias {
                scores,
                table,
                buckets,
            } => {
                accumulate(flow, scores, g.to_vec());
                let mut gt = vec![0.0; table.numel()];
                for (i, &b) in buckets.iter().enumerate() {
                    gt[b] += g[i];
                }
                accumulate(flow, table, gt);
            }
            Op::MaskedFill { x, mask } => {
                let gx: Vec<f64> = g
                    .iter()
                    .zip(mask)
                    .map(|(g, m)| if *m { 0.0 } else { *g })
                    .collect();
                accumulate(flow, x, gx);
            }
            Op::Reshape(a) => {
                accumulate(flow, a, g.to_vec());
            }
        }
    }
}

/// Broadcast shape under the trailing-dimension rule.
fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = if da == db {
            da
        } else if da == 1 {
            db
        } else if db == 1 {
            da
        } else {
            return Err(TensorError::Broadcast(a.to_vec(), b.to_vec()));
        };
    }
    Ok(out)
}

/// Read a tensor's values expanded to a broadcast output shape.
fn broadcast_read(t: &Tensor, out_shape: &[usize]) -> Vec<f64> {
    if t.shape() == out_shape {
        return t.data().to_vec();
    }
    let rank = out_shape.len();
    let pad = rank - t.shape().len();
    let tstrides = strides_of(t.shape());
    // stride 0 on broadcast dimensions
    let mut eff = vec![0usize; rank];
    for i in 0..rank {
        if i >= pad && t.shape()[i - pad] != 1 {
            eff[i] = tstrides[i - pad];
        }
    }
    let n: usize = out_shape.iter().product();
    let ostrides = strides_of(out_shape);
    let td = t.data();
    let mut out = Vec::with_capacity(n);
    for lin in 0..n {
        let mut off = 0;
        let mut rem = lin;
        for i in 0..rank {
            let idx = rem / ostrides[i];
            rem %= ostrides[i];
            off += idx * eff[i];
        }
        out.push(td[off]);
    }
    out
}

/// Sum a gradient on the broadcast output shape back down to an input shape.
fn reduce_to_shape(g: &[f64], out_shape: &[usize], in_shape: &[usize]) -> Vec<f64> {
    if out_shape == in_shape {
        return g.to_vec();
    }
    let rank = out_shape.len();
    let pad = rank - in_shape.len();
    let istrides = strides_of(in_shape);
    let mut eff = vec![0usize; rank];
    for i in 0..rank {
        if i >= pad && in_shape[i - pad] != 1 {
            eff[i] = istrides[i - pad];
        }
    }
    let ostrides = strides_of(out_shape);
    let mut out = vec![0.0; in_shape.iter().product()];
    for (lin, gv) in g.iter().enumerate() {
        let mut off = 0;
        let mut rem = lin;
        for i in 0..rank {
            let idx = rem / ostrides[i];
            rem %= ostrides[i];
            off += idx * eff[i];
        }
        out[off] += gv;
    }
    out
}

/// Spread a reduced gradient back over the pre-reduction shape.
fn spread_reduction(g: &[f64], in_shape: &[usize], axis: Option<usize>, scale: f64) -> Vec<f64> {
    let n: usize = in_shape.iter().product();
    match axis {
        None => vec![g[0] * scale; n],
        Some(a) => {
            let mut out = vec![0.0; n];
            let strides = strides_of(in_shape);
            let outer = strides[a] * in_shape[a];
            for (i, o) in out.iter_mut().enumerate() {
                // index with axis dimension removed
                let pre = i / outer;
                let post = i % strides[a];
                let ridx = pre * strides[a] + post;
                *o = g[ridx] * scale;
            }
            out
        }
    }
}

/// Invoke `f` with the flat indices of each lane along `axis`.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(&[usize])) {
    let strides = strides_of(shape);
    let len = shape[axis];
    let stride = strides[axis];
    let n: usize = shape.iter().product();
    let outer = stride * len;
    let mut lane = vec![0usize; len];
    let lanes = n / len;
    for l in 0..lanes {
        let pre = l / stride;
        let post = l % stride;
        let base = pre * outer + post;
        for (j, slot) in lane.iter_mut().enumerate() {
            *slot = base + j * stride;
        }
        f(&lane);
    }
}

fn elementwise(
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
    op: impl Fn(Tensor, Tensor) -> Op,
) -> Result<Tensor> {
    let shape = broadcast_shapes(a.shape(), b.shape())?;
    let av = broadcast_read(a, &shape);
    let bv = broadcast_read(b, &shape);
    let data: Vec<f64> = av.iter().zip(&bv).map(|(x, y)| f(*x, *y)).collect();
    Ok(Tensor::result(data, shape, op(a.clone(), b.clone())))
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-form GELU.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl Tensor {
    pub fn add(&self, b: &Tensor) -> Result<Tensor> {
        elementwise(self, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, b: &Tensor) -> Result<Tensor> {
        elementwise(self, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, b: &Tensor) -> Result<Tensor> {
        elementwise(self, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&self, b: &Tensor) -> Result<Tensor> {
        elementwise(self, b, |x, y| x / y, Op::Div)
    }

    pub fn matmul(&self, b: &Tensor) -> Result<Tensor> {
        if self.shape().len() != 2 || b.shape().len() != 2 || self.shape()[1] != b.shape()[0] {
            return Err(TensorError::MatmulShape(
                self.shape().to_vec(),
                b.shape().to_vec(),
            ));
        }
        let (m, k) = (self.shape()[0], self.shape()[1]);
        let n = b.shape()[1];
        let ad = self.data();
        let bd = b.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += aip * bd[p * n + j];
                }
            }
        }
        Ok(Tensor::result(
            out,
            vec![m, n],
            Op::Matmul(self.clone(), b.clone()),
        ))
    }

    /// 2-D transpose.
    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.shape()[0], self.shape()[1]);
        let d = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        Tensor::result(out, vec![c, r], Op::Transpose(self.clone()))
    }

    /// Cross-correlation conv1d: x is C_in x T, w is C_out x C_in x K.
    pub fn conv1d(&self, w: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        let (c_in, t) = (self.shape()[0], self.shape()[1]);
        let (c_out, w_cin, k) = (w.shape()[0], w.shape()[1], w.shape()[2]);
        assert_eq!(c_in, w_cin, "conv1d channel mismatch");
        if t + 2 * padding < k {
            return Err(TensorError::KernelTooLong {
                kernel: k,
                padded: t + 2 * padding,
            });
        }
        let t_out = (t + 2 * padding - k) / stride + 1;
        let xd = self.data();
        let wd = w.data();
        let mut out = vec![0.0; c_out * t_out];
        for co in 0..c_out {
            for s in 0..t_out {
                let mut acc = 0.0;
                for ci in 0..c_in {
                    for kk in 0..k {
                        let tt = (s * stride + kk) as isize - padding as isize;
                        if tt < 0 || tt >= t as isize {
                            continue;
                        }
                        acc += xd[ci * t + tt as usize] * wd[(co * c_in + ci) * k + kk];
                    }
                }
                out[co * t_out + s] = acc;
            }
        }
        Ok(Tensor::result(
            out,
            vec![c_out, t_out],
            Op::Conv1d {
                x: self.clone(),
                w: w.clone(),
                stride,
                padding,
            },
        ))
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape().len() {
            return Err(TensorError::BadAxis {
                axis,
                shape: self.shape().to_vec(),
            });
        }
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(TensorError::NonFinite("softmax"));
        }
        let mut out = vec![0.0; self.numel()];
        let d = self.data();
        for_each_lane(self.shape(), axis, |lane| {
            let m = lane.iter().map(|&i| d[i]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for &i in lane {
                let e = (d[i] - m).exp();
                out[i] = e;
                z += e;
            }
            for &i in lane {
                out[i] /= z;
            }
        });
        Ok(Tensor::result(
            out,
            self.shape().to_vec(),
            Op::Softmax {
                x: self.clone(),
                axis,
            },
        ))
    }

    fn reduce(&self, axis: Option<usize>, keepdim: bool, mean: bool) -> Result<Tensor> {
        if let Some(a) = axis {
            if a >= self.shape().len() {
                return Err(TensorError::BadAxis {
                    axis: a,
                    shape: self.shape().to_vec(),
                });
            }
        }
        let d = self.data();
        let (data, shape) = match axis {
            None => {
                let mut acc = 0.0;
                for v in d {
                    acc += v;
                }
                if mean {
                    acc /= self.numel() as f64;
                }
                (vec![acc], if keepdim { vec![1; self.shape().len()] } else { vec![1] })
            }
            Some(a) => {
                let mut shape = self.shape().to_vec();
                let n = shape[a] as f64;
                let lanes: usize = self.numel() / shape[a];
                let mut data = vec![0.0; lanes];
                let mut li = 0usize;
                for_each_lane(self.shape(), a, |lane| {
                    let mut acc = 0.0;
                    for &i in lane {
                        acc += d[i];
                    }
                    data[li] = if mean { acc / n } else { acc };
                    li += 1;
                });
                // for_each_lane enumerates lanes as pre*stride + post which is
                // exactly the row-major order of the reduced shape
                if keepdim {
                    shape[a] = 1;
                } else {
                    shape.remove(a);
                    if shape.is_empty() {
                        shape.push(1);
                    }
                }
                (data, shape)
            }
        };
        let op = if mean {
            Op::Mean {
                x: self.clone(),
                axis,
            }
        } else {
            Op::Sum {
                x: self.clone(),
                axis,
            }
        };
        Ok(Tensor::result(data, shape, op))
    }

    pub fn sum(&self, axis: Option<usize>, keepdim: bool) -> Result<Tensor> {
        self.reduce(axis, keepdim, false)
    }

    pub fn mean(&self, axis: Option<usize>, keepdim: bool) -> Result<Tensor> {
        self.reduce(axis, keepdim, true)
    }

    /// Population variance along an axis, built compositionally.
    pub fn var(&self, axis: Option<usize>, keepdim: bool) -> Result<Tensor> {
        let mu = self.mean(axis, true)?;
        let diff = self.sub(&mu)?;
        diff.mul(&diff)?.mean(axis, keepdim)
    }

    pub fn exp(&self) -> Tensor {
        let data = self.data().iter().map(|v| v.exp()).collect();
        Tensor::result(data, self.shape().to_vec(), Op::Exp(self.clone()))
    }

    pub fn log(&self) -> Result<Tensor> {
        for &v in self.data() {
            if v <= 0.0 {
                return Err(TensorError::DomainError("log", "positive", v));
            }
        }
        let data = self.data().iter().map(|v| v.ln()).collect();
        Ok(Tensor::result(data, self.shape().to_vec(), Op::Log(self.clone())))
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        for &v in self.data() {
            if v < 0.0 {
                return Err(TensorError::DomainError("sqrt", "nonnegative", v));
            }
        }
        let data = self.data().iter().map(|v| v.sqrt()).collect();
        Ok(Tensor::result(data, self.shape().to_vec(), Op::Sqrt(self.clone())))
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|v| v.max(0.0)).collect();
        Tensor::result(data, self.shape().to_vec(), Op::Relu(self.clone()))
    }

    pub fn gelu(&self) -> Tensor {
        let data = self.data().iter().map(|v| gelu_scalar(*v)).collect();
        Tensor::result(data, self.shape().to_vec(), Op::Gelu(self.clone()))
    }

    pub fn sigmoid(&self) -> Tensor {
        let data = self
            .data()
            .iter()
            .map(|v| 1.0 / (1.0 + (-v).exp()))
            .collect();
        Tensor::result(data, self.shape().to_vec(), Op::Sigmoid(self.clone()))
    }

    pub fn tanh(&self) -> Tensor {
        let data = self.data().iter().map(|v| v.tanh()).collect();
        Tensor::result(data, self.shape().to_vec(), Op::Tanh(self.clone()))
    }

    pub fn abs(&self) -> Tensor {
        let data = self.data().iter().map(|v| v.abs()).collect();
        Tensor::result(data, self.shape().to_vec(), Op::Abs(self.clone()))
    }

    pub fn neg(&self) -> Tensor {
        let data = self.data().iter().map(|v| -v).collect();
        Tensor::result(data, self.shape().to_vec(), Op::Neg(self.clone()))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::result(data, self.shape().to_vec(), Op::Scale(self.clone(), c))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v + c).collect();
        Tensor::result(data, self.shape().to_vec(), Op::AddScalar(self.clone()))
    }

    /// Unit-norm rows (or lanes) along `axis`.
    pub fn l2_normalize(&self, axis: usize) -> Result<Tensor> {
        let sq = self.mul(self)?.sum(Some(axis), true)?;
        if sq.data().iter().any(|&v| v == 0.0) {
            return Err(TensorError::ZeroNorm);
        }
        self.div(&sq.sqrt()?)
    }

    /// Rows start..end along axis 0.
    pub fn slice_rows(&self, start: usize, end: usize) -> Tensor {
        debug_assert!(start < end && end <= self.shape()[0]);
        let row: usize = self.shape()[1..].iter().product();
        let data = self.data()[start * row..end * row].to_vec();
        let mut shape = self.shape().to_vec();
        shape[0] = end - start;
        Tensor::result(
            data,
            shape,
            Op::SliceRows {
                x: self.clone(),
                start,
            },
        )
    }

    /// Stack same-shape tensors as rows of a new leading axis.
    pub fn stack_rows(rows: &[Tensor]) -> Tensor {
        debug_assert!(!rows.is_empty());
        let d = rows[0].numel();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            debug_assert_eq!(r.numel(), d);
            data.extend_from_slice(r.data());
        }
        let mut shape = vec![rows.len()];
        shape.extend_from_slice(rows[0].shape());
        Tensor::result(data, shape, Op::StackRows(rows.to_vec()))
    }

    /// scores + table[buckets], with gradient scatter into the table.
    pub fn bucket_bias(&self, table: &Tensor, buckets: &[usize]) -> Tensor {
        debug_assert_eq!(buckets.len(), self.numel());
        let td = table.data();
        let data = self
            .data()
            .iter()
            .zip(buckets)
            .map(|(s, &b)| s + td[b])
            .collect();
        Tensor::result(
            data,
            self.shape().to_vec(),
            Op::BucketBias {
                scores: self.clone(),
                table: table.clone(),
                buckets: buckets.to_vec(),
            },
        )
    }

    /// Replace masked entries with a constant; gradient is zero there.
    pub fn masked_fill(&self, mask: &[bool], value: f64) -> Tensor {
        debug_assert_eq!(mask.len(), self.numel());
        let data = self
            .data()
            .iter()
            .zip(mask)
            .map(|(x, m)| if *m { value } else { *x })
            .collect();
        Tensor::result(
            data,
            self.shape().to_vec(),
            Op::MaskedFill {
                x: self.clone(),
                mask: mask.to_vec(),
            },
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::BadLength {
                len: self.numel(),
                shape: shape.to_vec(),
            });
        }
        Ok(Tensor::result(
            self.data().to_vec(),
            shape.to_vec(),
            Op::Reshape(self.clone()),
        ))
    }
}
