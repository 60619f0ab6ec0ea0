//! 2-D cross-correlation via im2col + gemm.

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output columns `[lo, hi)` whose input column `ow·stride + k − pad` lies
/// inside `[0, len)`.
fn valid_range(len: usize, out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > k {
        (pad - k).div_ceil(stride)
    } else {
        0
    };
    let hi = if len + pad > k {
        out.min((len + pad - k).div_ceil(stride))
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds every sample into `cols`, laid out `[C·kh·kw, N·Ho·Wo]`.
fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let plane = g.out_plane();
    let width = g.n * plane;
    let in_plane = g.h * g.w;
    for i in 0..g.n {
        for c in 0..g.c {
            let src = &x[(i * g.c + c) * in_plane..(i * g.c + c + 1) * in_plane];
            for ki in 0..g.kh {
                let (oh_lo, oh_hi) = valid_range(g.h, g.ho, ki, g.stride, g.pad);
                for kj in 0..g.kw {
                    let (lo, hi) = valid_range(g.w, g.wo, kj, g.stride, g.pad);
                    let row = (c * g.kh + ki) * g.kw + kj;
                    let dst = &mut cols[row * width + i * plane..row * width + (i + 1) * plane];
                    for oh in 0..g.ho {
                        let line = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                        if oh < oh_lo || oh >= oh_hi {
                            line.fill(T::ZERO);
                            continue;
                        }
                        let base = (oh * g.stride + ki - g.pad) * g.w;
                        line[..lo].fill(T::ZERO);
                        line[hi..].fill(T::ZERO);
                        if lo < hi {
                            let first = base + lo * g.stride + kj - g.pad;
                            if g.stride == 1 {
                                line[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                            } else {
                                for (t, d) in line[lo..hi].iter_mut().enumerate() {
                                    *d = src[first + t * g.stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx`.
fn col2im<T: Scalar>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let plane = g.out_plane();
    let width = g.n * plane;
    let in_plane = g.h * g.w;
    for i in 0..g.n {
        for c in 0..g.c {
            let dst = &mut dx[(i * g.c + c) * in_plane..(i * g.c + c + 1) * in_plane];
            for ki in 0..g.kh {
                let (oh_lo, oh_hi) = valid_range(g.h, g.ho, ki, g.stride, g.pad);
                for kj in 0..g.kw {
                    let (lo, hi) = valid_range(g.w, g.wo, kj, g.stride, g.pad);
                    if lo >= hi {
                        continue;
                    }
                    let row = (c * g.kh + ki) * g.kw + kj;
                    let src = &cols[row * width + i * plane..row * width + (i + 1) * plane];
                    for oh in oh_lo..oh_hi {
                        let base = (oh * g.stride + ki - g.pad) * g.w;
                        let first = base + lo * g.stride + kj - g.pad;
                        let line = &src[oh * g.wo + lo..oh * g.wo + hi];
                        if g.stride == 1 {
                            for (d, v) in dst[first..first + hi - lo].iter_mut().zip(line) {
                                *d += *v;
                            }
                        } else {
                            for (t, v) in line.iter().enumerate() {
                                dst[first + t * g.stride] += *v;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor<T>, ConvGeom)> {
    let (&[n, c, h, wd], &[f, c2, kh, kw]) = (x.shape(), w.shape()) else {
        return Err(Error::Shape(format!(
            "conv2d expects [N,C,H,W] and [F,C,kh,kw], got {:?} and {:?}",
            x.shape(),
            w.shape()
        )));
    };
    if c != c2 {
        return Err(Error::Shape(format!(
            "conv2d channel mismatch: input {c}, kernel {c2}"
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv2d stride must be positive".into()));
    }
    if kh > h + 2 * pad || kw > wd + 2 * pad {
        return Err(Error::Shape(format!(
            "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
            h + 2 * pad,
            wd + 2 * pad
        )));
    }
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let geom = ConvGeom {
        n,
        c,
        h,
        w: wd,
        f,
        kh,
        kw,
        stride,
        pad,
        ho,
        wo,
    };
    let (patch, plane) = (geom.patch(), geom.out_plane());
    let width = n * plane;
    let mut cols = vec![T::ZERO; patch * width];
    im2col(&geom, x.data(), &mut cols);
    let mut flat = vec![T::ZERO; f * width];
    T::gemm(
        f,
        patch,
        width,
        w.data(),
        false,
        &cols,
        false,
        &mut flat,
        false,
    );
    let mut out = vec![T::ZERO; n * f * plane];
    for i in 0..n {
        for o in 0..f {
            out[(i * f + o) * plane..(i * f + o + 1) * plane]
                .copy_from_slice(&flat[o * width + i * plane..o * width + (i + 1) * plane]);
        }
    }
    Ok((Tensor::new(vec![n, f, ho, wo], out)?, geom))
}

/// `dy` from `[N, F, plane]` to `[F, N·plane]`.
fn flatten_grad<T: Scalar>(g: &ConvGeom, dy: &[T]) -> Vec<T> {
    let plane = g.out_plane();
    let width = g.n * plane;
    let mut flat = vec![T::ZERO; g.f * width];
    for i in 0..g.n {
        for o in 0..g.f {
            flat[o * width + i * plane..o * width + (i + 1) * plane]
                .copy_from_slice(&dy[(i * g.f + o) * plane..(i * g.f + o + 1) * plane]);
        }
    }
    flat
}

pub(crate) fn backward_weight<T: Scalar>(g: &ConvGeom, x: &[T], dy: &[T], dw: &mut [T]) {
    let width = g.n * g.out_plane();
    let mut cols = vec![T::ZERO; g.patch() * width];
    im2col(g, x, &mut cols);
    let flat = flatten_grad(g, dy);
    T::gemm(g.f, width, g.patch(), &flat, false, &cols, true, dw, true);
}

pub(crate) fn backward_input<T: Scalar>(g: &ConvGeom, w: &[T], dy: &[T], dx: &mut [T]) {
    let width = g.n * g.out_plane();
    let flat = flatten_grad(g, dy);
    let mut cols = vec![T::ZERO; g.patch() * width];
    T::gemm(
        g.patch(),
        g.f,
        width,
        w,
        true,
        &flat,
        false,
        &mut cols,
        false,
    );
    col2im(g, &cols, dx);
}
