use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// `(0.01·L)²` with dynamic range `L = 1`.
pub const SSIM_C1: f64 = 1e-4;
/// `(0.03·L)²` with dynamic range `L = 1`.
pub const SSIM_C2: f64 = 9e-4;

/// Maps `[-1, 1]` pixel values to `[0, 1]`.
pub fn to_unit_range<T: Scalar>(image: &Tensor<T>) -> Tensor<f64> {
    let t = image.cast::<f64>();
    t.map(|v| (v + 1.0) * 0.5)
}

/// Single-channel plane from a `[C, H, W]` image (C = 1 or 3), in f64.
pub fn luminance_plane<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize, Vec<f64>)> {
    let [c, h, w] = image.shape()[..] else {
        return Err(Error::Shape(format!(
            "expected [C, H, W] image, got {:?}",
            image.shape()
        )));
    };
    let d = image.data();
    let plane = h * w;
    match c {
        1 => Ok((h, w, d.iter().map(|v| v.to_f64()).collect())),
        3 => Ok((
            h,
            w,
            (0..plane)
                .map(|i| {
                    0.299 * d[i].to_f64()
                        + 0.587 * d[plane + i].to_f64()
                        + 0.114 * d[2 * plane + i].to_f64()
                })
                .collect(),
        )),
        _ => Err(Error::Shape(format!("expected 1 or 3 channels, got {c}"))),
    }
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-(x * x) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter over the valid region.
fn filter(h: usize, w: usize, x: &[f64], k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..SSIM_WINDOW).map(|t| k[t] * x[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..SSIM_WINDOW)
                .map(|t| k[t] * rows[(i + t) * ow + j])
                .sum();
        }
    }
    out
}

/// Mean structural similarity of two `[C, H, W]` images with values in
/// `[0, 1]`.
///
/// Three-channel inputs are reduced to luminance first. The mean of the
/// local map can dip below zero for anti-correlated images; the result is
/// clamped to `[0, 1]`.
pub fn ssim<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::Shape(format!(
            "ssim of {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    let (h, w, a) = luminance_plane(x)?;
    let (_, _, b) = luminance_plane(y)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Contract(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let k = gaussian_kernel();
    let sq = |v: &[f64]| v.iter().map(|t| t * t).collect::<Vec<_>>();
    let ab: Vec<f64> = a.iter().zip(&b).map(|(p, q)| p * q).collect();
    let mu_a = filter(h, w, &a, &k);
    let mu_b = filter(h, w, &b, &k);
    let e_aa = filter(h, w, &sq(&a), &k);
    let e_bb = filter(h, w, &sq(&b), &k);
    let e_ab = filter(h, w, &ab, &k);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_aa[i] - ma * ma;
        let var_b = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
        let den = (ma * ma + mb * mb + SSIM_C1) * (var_a + var_b + SSIM_C2);
        total += num / den;
    }
    Ok((total / n as f64).clamp(0.0, 1.0))
}
