use crate::error::{Error, Result};

use super::conv::{self, ConvGeom};
use super::tape::{GradBuffer, Node};
use super::tensor::numel;
use super::{Scalar, Tensor, Var};

/// Negative slope of the leaky rectifier.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Variance floor of instance normalization.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Elementwise operation kinds. Binary kinds broadcast over trailing dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Relu,
    LeakyRelu,
    Tanh,
    Sigmoid,
    Abs,
    Square,
    Log,
    Exp,
    Sqrt,
}

impl ElementwiseOp {
    pub fn is_binary(self) -> bool {
        matches!(self, Self::Add | Self::Sub | Self::Mul | Self::Div)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

pub(crate) enum Op<T: Scalar> {
    Leaf,
    Binary {
        kind: ElementwiseOp,
        a: usize,
        b: usize,
    },
    Unary {
        kind: ElementwiseOp,
        a: usize,
    },
    Scale {
        a: usize,
        factor: T,
    },
    AddScalar {
        a: usize,
    },
    MatMul {
        a: usize,
        b: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        geom: ConvGeom,
    },
    Reduce {
        kind: ReduceOp,
        a: usize,
        /// Input flat index → output flat index.
        map: Vec<u32>,
        count: usize,
        /// For `Max`: winning input index per output element.
        argmax: Vec<u32>,
    },
    Reshape {
        a: usize,
    },
    TransposeLast2 {
        a: usize,
        rows: usize,
        cols: usize,
    },
    InstanceNorm {
        a: usize,
        group: usize,
        inv_std: Vec<T>,
    },
    Upsample2x {
        a: usize,
    },
    SelectPatches {
        a: usize,
        channels: usize,
        plane: usize,
        indices: Vec<usize>,
    },
    LogSoftmax {
        a: usize,
        width: usize,
    },
}

impl<T: Scalar> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Binary { a, b, .. } | Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::Unary { a, .. }
            | Op::Scale { a, .. }
            | Op::AddScalar { a }
            | Op::Reduce { a, .. }
            | Op::Reshape { a }
            | Op::TransposeLast2 { a, .. }
            | Op::InstanceNorm { a, .. }
            | Op::Upsample2x { a }
            | Op::SelectPatches { a, .. }
            | Op::LogSoftmax { a, .. } => vec![*a],
        }
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank {
            a[i + a.len() - rank]
        } else {
            1
        };
        let db = if i + b.len() >= rank {
            b[i + b.len() - rank]
        } else {
            1
        };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::Shape(format!(
                    "shapes {a:?} and {b:?} do not broadcast"
                )))
            }
        };
    }
    Ok(out)
}

/// For every flat index of `out`, the flat index of `inp` it reads under
/// trailing-dimension broadcasting.
pub(crate) fn index_map(out: &[usize], inp: &[usize]) -> Vec<u32> {
    let rank = out.len();
    let off = rank - inp.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..inp.len()).rev() {
        if inp[d] != 1 {
            strides[d + off] = s;
        }
        s *= inp[d];
    }
    // Merge neighbouring dims that step through memory as one.
    let mut dims: Vec<(usize, usize)> = Vec::with_capacity(rank);
    for d in 0..rank {
        let (e, st) = (out[d], strides[d]);
        if e == 1 {
            continue;
        }
        match dims.last_mut() {
            Some((pe, ps)) if *ps == st * e => *pe *= e,
            _ => dims.push((e, st)),
        }
        if let Some((_, ps)) = dims.last_mut() {
            *ps = st;
        }
    }
    let n = numel(out);
    let mut map = Vec::with_capacity(n);
    let Some(&(inner, inner_stride)) = dims.last() else {
        map.resize(n, 0);
        return map;
    };
    let outer = &dims[..dims.len() - 1];
    let mut idx = vec![0usize; outer.len()];
    let mut cur = 0usize;
    loop {
        map.extend((0..inner).map(|k| (cur + k * inner_stride) as u32));
        let mut d = outer.len();
        loop {
            if d == 0 {
                return map;
            }
            d -= 1;
            idx[d] += 1;
            cur += outer[d].1;
            if idx[d] < outer[d].0 {
                break;
            }
            cur -= outer[d].1 * idx[d];
            idx[d] = 0;
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::ONE / (T::ONE + (-x).exp())
}

fn unary_forward<T: Scalar>(kind: ElementwiseOp, x: &Tensor<T>) -> Result<Tensor<T>> {
    let slope = T::from_f64(LEAKY_SLOPE);
    let domain = |index: usize, detail: &str| Error::NumericDomain {
        op: match kind {
            ElementwiseOp::Log => "log",
            _ => "sqrt",
        },
        index,
        detail: detail.to_string(),
    };
    match kind {
        ElementwiseOp::Log => {
            if let Some(i) = x.data().iter().position(|&v| !(v > T::ZERO)) {
                return Err(domain(
                    i,
                    &format!("log of non-positive value {}", x.data()[i]),
                ));
            }
        }
        ElementwiseOp::Sqrt => {
            if let Some(i) = x.data().iter().position(|&v| !(v >= T::ZERO)) {
                return Err(domain(
                    i,
                    &format!("sqrt of negative value {}", x.data()[i]),
                ));
            }
        }
        _ => {}
    }
    Ok(x.map(|v| match kind {
        ElementwiseOp::Neg => -v,
        ElementwiseOp::Relu => {
            if v > T::ZERO {
                v
            } else {
                T::ZERO
            }
        }
        ElementwiseOp::LeakyRelu => {
            if v > T::ZERO {
                v
            } else {
                slope * v
            }
        }
        ElementwiseOp::Tanh => v.tanh(),
        ElementwiseOp::Sigmoid => sigmoid(v),
        ElementwiseOp::Abs => v.abs(),
        ElementwiseOp::Square => v * v,
        ElementwiseOp::Log => v.ln(),
        ElementwiseOp::Exp => v.exp(),
        ElementwiseOp::Sqrt => v.sqrt(),
        _ => unreachable!("binary op in unary path"),
    }))
}

fn binary_forward<T: Scalar>(
    kind: ElementwiseOp,
    a: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let shape = broadcast_shape(a.shape(), b.shape())?;
    let f = |x: T, y: T| match kind {
        ElementwiseOp::Add => x + y,
        ElementwiseOp::Sub => x - y,
        ElementwiseOp::Mul => x * y,
        ElementwiseOp::Div => x / y,
        _ => unreachable!("unary op in binary path"),
    };
    if kind == ElementwiseOp::Div {
        if let Some(i) = b
            .data()
            .iter()
            .position(|&v| v == T::ZERO || !v.is_finite())
        {
            return Err(Error::NumericDomain {
                op: "div",
                index: i,
                detail: format!("divisor {}", b.data()[i]),
            });
        }
    }
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(shape, data);
    }
    let ma = index_map(&shape, a.shape());
    let mb = index_map(&shape, b.shape());
    let (ad, bd) = (a.data(), b.data());
    let data = ma
        .iter()
        .zip(&mb)
        .map(|(&i, &j)| f(ad[i as usize], bd[j as usize]))
        .collect();
    Tensor::new(shape, data)
}

/// Apply an elementwise operation. `b` is required for binary kinds and must
/// be absent for unary ones.
pub fn elementwise<'t, T: Scalar>(
    kind: ElementwiseOp,
    a: &Var<'t, T>,
    b: Option<&Var<'t, T>>,
) -> Result<Var<'t, T>> {
    match (kind.is_binary(), b) {
        (true, Some(b)) => {
            a.same_tape(b)?;
            let value = {
                let nodes = a.tape.nodes.borrow();
                binary_forward(kind, &nodes[a.id].value, &nodes[b.id].value)?
            };
            Ok(a.tape.push(
                value,
                Op::Binary {
                    kind,
                    a: a.id,
                    b: b.id,
                },
            ))
        }
        (false, None) => {
            let value = unary_forward(kind, &a.value_ref())?;
            Ok(a.tape.push(value, Op::Unary { kind, a: a.id }))
        }
        (true, None) => Err(Error::Contract(format!("{kind:?} needs two operands"))),
        (false, Some(_)) => Err(Error::Contract(format!("{kind:?} takes one operand"))),
    }
}

fn normalize_axes(axes: &[usize], rank: usize) -> Result<Vec<usize>> {
    let mut out = axes.to_vec();
    out.sort_unstable();
    out.dedup();
    if let Some(&bad) = out.iter().find(|&&a| a >= rank) {
        return Err(Error::Shape(format!(
            "axis {bad} out of range for rank {rank}"
        )));
    }
    Ok(out)
}

/// Reduce over `axes`. With `keepdim` the reduced axes stay as extent 1.
pub fn reduce<'t, T: Scalar>(
    kind: ReduceOp,
    x: &Var<'t, T>,
    axes: &[usize],
    keepdim: bool,
) -> Result<Var<'t, T>> {
    let (value, op) = {
        let v = x.value_ref();
        let shape = v.shape();
        let axes = normalize_axes(axes, shape.len())?;
        let keep_shape: Vec<usize> = shape
            .iter()
            .enumerate()
            .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
            .collect();
        let out_shape: Vec<usize> = if keepdim {
            keep_shape.clone()
        } else {
            shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect()
        };
        let out_len = numel(&keep_shape);
        let count = v.len() / out_len;
        let map = index_map(shape, &keep_shape);
        let data = v.data();
        let mut argmax = Vec::new();
        let out: Vec<T> = match kind {
            ReduceOp::Sum | ReduceOp::Mean => {
                let mut acc = vec![0.0f64; out_len];
                for (i, &o) in map.iter().enumerate() {
                    acc[o as usize] += data[i].to_f64();
                }
                let div = if kind == ReduceOp::Mean {
                    count as f64
                } else {
                    1.0
                };
                acc.into_iter().map(|s| T::from_f64(s / div)).collect()
            }
            ReduceOp::Max => {
                let mut best: Vec<Option<(T, u32)>> = vec![None; out_len];
                for (i, &o) in map.iter().enumerate() {
                    let slot = &mut best[o as usize];
                    match slot {
                        Some((m, _)) if !(data[i] > *m) => {}
                        _ => *slot = Some((data[i], i as u32)),
                    }
                }
                let best: Vec<(T, u32)> = best.into_iter().map(|b| b.expect("non-empty")).collect();
                argmax = best.iter().map(|b| b.1).collect();
                best.into_iter().map(|b| b.0).collect()
            }
        };
        (
            Tensor::new(out_shape, out)?,
            Op::Reduce {
                kind,
                a: x.id,
                map,
                count,
                argmax,
            },
        )
    };
    Ok(x.tape.push(value, op))
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        elementwise(ElementwiseOp::Add, self, Some(other))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        elementwise(ElementwiseOp::Sub, self, Some(other))
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        elementwise(ElementwiseOp::Mul, self, Some(other))
    }

    pub fn div(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        elementwise(ElementwiseOp::Div, self, Some(other))
    }

    fn unary(&self, kind: ElementwiseOp) -> Var<'t, T> {
        elementwise(kind, self, None).expect("total unary op")
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.unary(ElementwiseOp::Neg)
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(ElementwiseOp::Relu)
    }

    /// Leaky rectifier with slope [`LEAKY_SLOPE`].
    pub fn leaky_relu(&self) -> Var<'t, T> {
        self.unary(ElementwiseOp::LeakyRelu)
    }

    pub fn tanh(&self) -> Var<'t, T> {
        self.unary(ElementwiseOp::Tanh)
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(ElementwiseOp::Sigmoid)
    }

    pub fn abs(&self) -> Var<'t, T> {
        self.unary(ElementwiseOp::Abs)
    }

    pub fn square(&self) -> Var<'t, T> {
        self.unary(ElementwiseOp::Square)
    }

    pub fn exp(&self) -> Var<'t, T> {
        self.unary(ElementwiseOp::Exp)
    }

    pub fn log(&self) -> Result<Var<'t, T>> {
        elementwise(ElementwiseOp::Log, self, None)
    }

    pub fn sqrt(&self) -> Result<Var<'t, T>> {
        elementwise(ElementwiseOp::Sqrt, self, None)
    }

    pub fn scale(&self, factor: f64) -> Var<'t, T> {
        let factor = T::from_f64(factor);
        let value = self.value_ref().map(|v| v * factor);
        self.tape.push(value, Op::Scale { a: self.id, factor })
    }

    pub fn add_scalar(&self, c: f64) -> Var<'t, T> {
        let c = T::from_f64(c);
        let value = self.value_ref().map(|v| v + c);
        self.tape.push(value, Op::AddScalar { a: self.id })
    }

    pub fn sum(&self, axes: &[usize], keepdim: bool) -> Result<Var<'t, T>> {
        reduce(ReduceOp::Sum, self, axes, keepdim)
    }

    pub fn mean(&self, axes: &[usize], keepdim: bool) -> Result<Var<'t, T>> {
        reduce(ReduceOp::Mean, self, axes, keepdim)
    }

    pub fn max(&self, axes: &[usize], keepdim: bool) -> Result<Var<'t, T>> {
        reduce(ReduceOp::Max, self, axes, keepdim)
    }

    pub fn sum_all(&self) -> Var<'t, T> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.sum(&axes, false).expect("valid axes")
    }

    pub fn mean_all(&self) -> Var<'t, T> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.mean(&axes, false).expect("valid axes")
    }

    /// Matrix product of `[m,k]·[k,n]`, or batched `[B,m,k]·[B,k,n]`.
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.same_tape(other)?;
        let (value, op) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[other.id].value);
            let (batch, m, k, k2, n, out_shape) = match (a.shape(), b.shape()) {
                (&[m, k], &[k2, n]) => (1, m, k, k2, n, vec![m, n]),
                (&[ba, m, k], &[bb, k2, n]) if ba == bb => (ba, m, k, k2, n, vec![ba, m, n]),
                (sa, sb) => {
                    return Err(Error::Shape(format!("matmul of {sa:?} and {sb:?}")));
                }
            };
            if k != k2 {
                return Err(Error::Shape(format!(
                    "matmul inner extents differ: {:?} · {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let mut out = vec![T::ZERO; batch * m * n];
            for bi in 0..batch {
                T::gemm(
                    m,
                    k,
                    n,
                    &a.data()[bi * m * k..],
                    false,
                    &b.data()[bi * k * n..],
                    false,
                    &mut out[bi * m * n..(bi + 1) * m * n],
                    false,
                );
            }
            (
                Tensor::new(out_shape, out)?,
                Op::MatMul {
                    a: self.id,
                    b: other.id,
                    batch,
                    m,
                    k,
                    n,
                },
            )
        };
        Ok(self.tape.push(value, op))
    }

    /// Cross-correlation of `[N,C,H,W]` input with `[F,C,kh,kw]` kernels,
    /// zero padding, no bias.
    pub fn conv2d(&self, weight: &Var<'t, T>, stride: usize, pad: usize) -> Result<Var<'t, T>> {
        self.same_tape(weight)?;
        let (value, geom) = {
            let nodes = self.tape.nodes.borrow();
            conv::forward(&nodes[self.id].value, &nodes[weight.id].value, stride, pad)?
        };
        Ok(self.tape.push(
            value,
            Op::Conv2d {
                x: self.id,
                w: weight.id,
                geom,
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let value = self.value_ref().reshape(shape.to_vec())?;
        Ok(self.tape.push(value, Op::Reshape { a: self.id }))
    }

    /// Swap the two trailing axes.
    pub fn transpose_last2(&self) -> Result<Var<'t, T>> {
        let (value, rows, cols) = {
            let v = self.value_ref();
            let shape = v.shape();
            if shape.len() < 2 {
                return Err(Error::Shape(format!(
                    "transpose of rank-{} tensor",
                    shape.len()
                )));
            }
            let (rows, cols) = (shape[shape.len() - 2], shape[shape.len() - 1]);
            let mut out_shape = shape.to_vec();
            let r = out_shape.len();
            out_shape.swap(r - 2, r - 1);
            let plane = rows * cols;
            let mut out = vec![T::ZERO; v.len()];
            for (src, dst) in v.data().chunks(plane).zip(out.chunks_mut(plane)) {
                for i in 0..rows {
                    for j in 0..cols {
                        dst[j * rows + i] = src[i * cols + j];
                    }
                }
            }
            (Tensor::new(out_shape, out)?, rows, cols)
        };
        Ok(self.tape.push(
            value,
            Op::TransposeLast2 {
                a: self.id,
                rows,
                cols,
            },
        ))
    }

    /// Per-sample, per-channel normalization of a `[N,C,H,W]` tensor to zero
    /// mean and unit (biased) variance. No affine parameters.
    pub fn instance_norm(&self) -> Result<Var<'t, T>> {
        let (value, group, inv_std) = {
            let v = self.value_ref();
            let shape = v.shape();
            if shape.len() != 4 {
                return Err(Error::Shape(format!(
                    "instance_norm expects rank 4, got {shape:?}"
                )));
            }
            let group = shape[2] * shape[3];
            let mut out = vec![T::ZERO; v.len()];
            let mut inv_std = Vec::with_capacity(v.len() / group);
            for (src, dst) in v.data().chunks(group).zip(out.chunks_mut(group)) {
                let mean = src.iter().map(|x| x.to_f64()).sum::<f64>() / group as f64;
                let var = src
                    .iter()
                    .map(|x| {
                        let d = x.to_f64() - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / group as f64;
                let is = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = T::from_f64((s.to_f64() - mean) * is);
                }
                inv_std.push(T::from_f64(is));
            }
            (Tensor::new(shape.to_vec(), out)?, group, inv_std)
        };
        Ok(self.tape.push(
            value,
            Op::InstanceNorm {
                a: self.id,
                group,
                inv_std,
            },
        ))
    }

    /// Nearest-neighbour 2× spatial upsampling of `[N,C,H,W]`.
    pub fn upsample2x(&self) -> Result<Var<'t, T>> {
        let value = {
            let v = self.value_ref();
            let &[n, c, h, w] = v.shape() else {
                return Err(Error::Shape(format!(
                    "upsample2x expects rank 4, got {:?}",
                    v.shape()
                )));
            };
            let mut out = vec![T::ZERO; n * c * 4 * h * w];
            for (src, dst) in v.data().chunks(h * w).zip(out.chunks_mut(4 * h * w)) {
                for i in 0..2 * h {
                    for j in 0..2 * w {
                        dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
                    }
                }
            }
            Tensor::new(vec![n, c, 2 * h, 2 * w], out)?
        };
        Ok(self.tape.push(value, Op::Upsample2x { a: self.id }))
    }

    /// Gather feature vectors at flat spatial `indices` from `[N,C,H,W]`,
    /// giving `[N,P,C]`. The same locations are used for every sample.
    pub fn select_patches(&self, indices: &[usize]) -> Result<Var<'t, T>> {
        let (value, channels, plane) = {
            let v = self.value_ref();
            let &[n, c, h, w] = v.shape() else {
                return Err(Error::Shape(format!(
                    "select_patches expects rank 4, got {:?}",
                    v.shape()
                )));
            };
            let plane = h * w;
            if let Some(&bad) = indices.iter().find(|&&i| i >= plane) {
                return Err(Error::Index(format!(
                    "patch index {bad} outside {h}x{w} feature map"
                )));
            }
            if indices.is_empty() {
                return Err(Error::Index("no patch indices".into()));
            }
            let p = indices.len();
            let mut out = vec![T::ZERO; n * p * c];
            let data = v.data();
            for ni in 0..n {
                for (pi, &idx) in indices.iter().enumerate() {
                    for ci in 0..c {
                        out[(ni * p + pi) * c + ci] = data[(ni * c + ci) * plane + idx];
                    }
                }
            }
            (Tensor::new(vec![n, p, c], out)?, c, plane)
        };
        Ok(self.tape.push(
            value,
            Op::SelectPatches {
                a: self.id,
                channels,
                plane,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&self) -> Result<Var<'t, T>> {
        let (value, width) = {
            let v = self.value_ref();
            let width = *v
                .shape()
                .last()
                .ok_or_else(|| Error::Shape("log_softmax of a rank-0 tensor".into()))?;
            let mut out = vec![T::ZERO; v.len()];
            for (src, dst) in v.data().chunks(width).zip(out.chunks_mut(width)) {
                let max = src
                    .iter()
                    .map(|x| x.to_f64())
                    .fold(f64::NEG_INFINITY, f64::max);
                let lse = max
                    + src
                        .iter()
                        .map(|x| (x.to_f64() - max).exp())
                        .sum::<f64>()
                        .ln();
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = T::from_f64(s.to_f64() - lse);
                }
            }
            (Tensor::new(v.shape().to_vec(), out)?, width)
        };
        Ok(self.tape.push(value, Op::LogSoftmax { a: self.id, width }))
    }
}

/// Local derivative of a unary op given input `x` and output `y`.
fn unary_derivative<T: Scalar>(kind: ElementwiseOp, x: T, y: T) -> T {
    match kind {
        ElementwiseOp::Neg => -T::ONE,
        ElementwiseOp::Relu => {
            if x > T::ZERO {
                T::ONE
            } else {
                T::ZERO
            }
        }
        ElementwiseOp::LeakyRelu => {
            if x > T::ZERO {
                T::ONE
            } else {
                T::from_f64(LEAKY_SLOPE)
            }
        }
        ElementwiseOp::Tanh => T::ONE - y * y,
        ElementwiseOp::Sigmoid => y * (T::ONE - y),
        ElementwiseOp::Abs => {
            if x > T::ZERO {
                T::ONE
            } else if x < T::ZERO {
                -T::ONE
            } else {
                T::ZERO
            }
        }
        ElementwiseOp::Square => x + x,
        ElementwiseOp::Log => T::ONE / x,
        ElementwiseOp::Exp => y,
        ElementwiseOp::Sqrt => T::from_f64(0.5) / y,
        _ => unreachable!(),
    }
}

/// Propagate `g` (gradient of the node's output) to the node's inputs.
pub(crate) fn backward<T: Scalar>(
    op: &Op<T>,
    out: &Tensor<T>,
    g: &[T],
    nodes: &[Node<T>],
    grads: &mut GradBuffer<'_, T>,
) {
    match op {
        Op::Leaf => {}
        Op::Unary { kind, a } => {
            let x = nodes[*a].value.data();
            let y = out.data();
            if let Some(dx) = grads.slot(*a) {
                for i in 0..g.len() {
                    dx[i] += g[i] * unary_derivative(*kind, x[i], y[i]);
                }
            }
        }
        Op::Binary { kind, a, b } => {
            let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
            let same = av.shape() == out.shape() && bv.shape() == out.shape();
            let (ma, mb) = if same {
                (None, None)
            } else {
                (
                    Some(index_map(out.shape(), av.shape())),
                    Some(index_map(out.shape(), bv.shape())),
                )
            };
            let ia = |i: usize| ma.as_ref().map_or(i, |m| m[i] as usize);
            let ib = |i: usize| mb.as_ref().map_or(i, |m| m[i] as usize);
            let (ad, bd) = (av.data(), bv.data());
            if let Some(da) = grads.slot(*a) {
                for i in 0..g.len() {
                    let d = match kind {
                        ElementwiseOp::Add | ElementwiseOp::Sub => g[i],
                        ElementwiseOp::Mul => g[i] * bd[ib(i)],
                        ElementwiseOp::Div => g[i] / bd[ib(i)],
                        _ => unreachable!(),
                    };
                    da[ia(i)] += d;
                }
            }
            if let Some(db) = grads.slot(*b) {
                for i in 0..g.len() {
                    let d = match kind {
                        ElementwiseOp::Add => g[i],
                        ElementwiseOp::Sub => -g[i],
                        ElementwiseOp::Mul => g[i] * ad[ia(i)],
                        ElementwiseOp::Div => {
                            let y = bd[ib(i)];
                            -g[i] * ad[ia(i)] / (y * y)
                        }
                        _ => unreachable!(),
                    };
                    db[ib(i)] += d;
                }
            }
        }
        Op::Scale { a, factor } => {
            if let Some(dx) = grads.slot(*a) {
                for (d, &gi) in dx.iter_mut().zip(g) {
                    *d += gi * *factor;
                }
            }
        }
        Op::AddScalar { a } | Op::Reshape { a } => {
            if let Some(dx) = grads.slot(*a) {
                for (d, &gi) in dx.iter_mut().zip(g) {
                    *d += gi;
                }
            }
        }
        Op::MatMul {
            a,
            b,
            batch,
            m,
            k,
            n,
        } => {
            let (m, k, n) = (*m, *k, *n);
            let (ad, bd) = (nodes[*a].value.data(), nodes[*b].value.data());
            if let Some(da) = grads.slot(*a) {
                for bi in 0..*batch {
                    T::gemm(
                        m,
                        n,
                        k,
                        &g[bi * m * n..],
                        false,
                        &bd[bi * k * n..],
                        true,
                        &mut da[bi * m * k..(bi + 1) * m * k],
                        true,
                    );
                }
            }
            if let Some(db) = grads.slot(*b) {
                for bi in 0..*batch {
                    T::gemm(
                        k,
                        m,
                        n,
                        &ad[bi * m * k..],
                        true,
                        &g[bi * m * n..],
                        false,
                        &mut db[bi * k * n..(bi + 1) * k * n],
                        true,
                    );
                }
            }
        }
        Op::Conv2d { x, w, geom } => {
            let (xd, wd) = (nodes[*x].value.data(), nodes[*w].value.data());
            if let Some(dw) = grads.slot(*w) {
                conv::backward_weight(geom, xd, g, dw);
            }
            if let Some(dx) = grads.slot(*x) {
                conv::backward_input(geom, wd, g, dx);
            }
        }
        Op::Reduce {
            kind,
            a,
            map,
            count,
            argmax,
        } => {
            if let Some(dx) = grads.slot(*a) {
                match kind {
                    ReduceOp::Sum => {
                        for (i, &o) in map.iter().enumerate() {
                            dx[i] += g[o as usize];
                        }
                    }
                    ReduceOp::Mean => {
                        let inv = T::from_f64(1.0 / *count as f64);
                        for (i, &o) in map.iter().enumerate() {
                            dx[i] += g[o as usize] * inv;
                        }
                    }
                    ReduceOp::Max => {
                        for (o, &i) in argmax.iter().enumerate() {
                            dx[i as usize] += g[o];
                        }
                    }
                }
            }
        }
        Op::TransposeLast2 { a, rows, cols } => {
            if let Some(dx) = grads.slot(*a) {
                let plane = rows * cols;
                for (src, dst) in g.chunks(plane).zip(dx.chunks_mut(plane)) {
                    for i in 0..*rows {
                        for j in 0..*cols {
                            dst[i * cols + j] += src[j * rows + i];
                        }
                    }
                }
            }
        }
        Op::InstanceNorm { a, group, inv_std } => {
            if let Some(dx) = grads.slot(*a) {
                let y = out.data();
                let gs = *group as f64;
                for (gi, is) in inv_std.iter().enumerate() {
                    let r = gi * group..(gi + 1) * group;
                    let (gg, yy) = (&g[r.clone()], &y[r.clone()]);
                    let mean_g = gg.iter().map(|v| v.to_f64()).sum::<f64>() / gs;
                    let mean_gy = gg
                        .iter()
                        .zip(yy)
                        .map(|(a, b)| a.to_f64() * b.to_f64())
                        .sum::<f64>()
                        / gs;
                    let is = is.to_f64();
                    for ((d, &gv), &yv) in dx[r].iter_mut().zip(gg).zip(yy) {
                        *d += T::from_f64(is * (gv.to_f64() - mean_g - yv.to_f64() * mean_gy));
                    }
                }
            }
        }
        Op::Upsample2x { a } => {
            if let Some(dx) = grads.slot(*a) {
                let s = nodes[*a].value.shape();
                let (h, w) = (s[2], s[3]);
                for (src, dst) in g.chunks(4 * h * w).zip(dx.chunks_mut(h * w)) {
                    for i in 0..2 * h {
                        for j in 0..2 * w {
                            dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
                        }
                    }
                }
            }
        }
        Op::SelectPatches {
            a,
            channels,
            plane,
            indices,
        } => {
            if let Some(dx) = grads.slot(*a) {
                let (c, p) = (*channels, indices.len());
                let n = g.len() / (p * c);
                for ni in 0..n {
                    for (pi, &idx) in indices.iter().enumerate() {
                        for ci in 0..c {
                            dx[(ni * c + ci) * plane + idx] += g[(ni * p + pi) * c + ci];
                        }
                    }
                }
            }
        }
        Op::LogSoftmax { a, width } => {
            if let Some(dx) = grads.slot(*a) {
                let y = out.data();
                for ((gg, yy), d) in g
                    .chunks(*width)
                    .zip(y.chunks(*width))
                    .zip(dx.chunks_mut(*width))
                {
                    let total: f64 = gg.iter().map(|v| v.to_f64()).sum();
                    for ((dv, &gv), &yv) in d.iter_mut().zip(gg).zip(yy) {
                        *dv += T::from_f64(gv.to_f64() - yv.to_f64().exp() * total);
                    }
                }
            }
        }
    }
}
