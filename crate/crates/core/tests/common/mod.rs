//! Shared test oracles. Kept independent of the code paths they check.
#![allow(dead_code)]

use semgan_core::autodiff::{Tape, Tensor, Var};
use semgan_core::rng::SplitMix64;
use semgan_core::Result;

pub mod grad_cases;

pub const FD_STEP: f64 = 1e-3;
pub const FD_REL_TOL: f64 = 1e-4;

/// Max relative error between tape gradients and central finite differences.
///
/// Relative error per entry is `|analytic - numeric| / max(|analytic|, 1e-6)`;
/// the max is over every entry of every input.
pub fn gradient_error<F>(inputs: &[Tensor<f64>], f: F) -> f64
where
    F: for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::<f64>::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&vars).expect("forward");
        loss.backward().expect("backward");
        vars.iter()
            .map(|v| v.grad().expect("every input reached"))
            .collect()
    };
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let tape = Tape::<f64>::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&vars).expect("forward").item().unwrap()
    };
    let mut worst = 0.0f64;
    for (i, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let a = analytic[i].data()[j];
            let rel = (a - numeric).abs() / a.abs().max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn randn(shape: &[usize], rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::randn(shape.to_vec(), 0.0, 1.0, rng)
}

/// Random values bounded away from zero (kinks of relu/abs).
pub fn randn_away_from_zero(shape: &[usize], rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v = rng.uniform(0.1, 1.5);
        if rng.next_u64() & 1 == 0 {
            v
        } else {
            -v
        }
    })
}

pub fn positive(shape: &[usize], rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::rand_uniform(shape.to_vec(), 0.5, 2.0, rng)
}

/// Weighted sum `sum(x * r)` with a fixed random weight, turning any tensor
/// into a scalar whose gradient exercises every output element.
pub fn weighted_sum<'t>(x: &Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>> {
    let mut rng = SplitMix64::new(seed ^ 0xA5A5);
    let r = x
        .tape()
        .constant(Tensor::rand_uniform(x.shape(), 0.5, 1.5, &mut rng));
    Ok(x.mul(&r)?.sum_all())
}

/// Seeds used by every gradient check.
pub const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

pub type Mat = Vec<Vec<f64>>;

pub fn identity(n: usize) -> Mat {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| {
            (0..m)
                .map(|j| (0..k).map(|t| a[i][t] * b[t][j]).sum())
                .collect()
        })
        .collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut aug: Mat = a
        .iter()
        .zip(identity(n))
        .map(|(r, e)| r.iter().copied().chain(e).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap();
        aug.swap(col, pivot);
        let p = aug[col][col];
        assert!(p.abs() > 1e-300, "singular matrix");
        aug[col].iter_mut().for_each(|v| *v /= p);
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
    }
    aug.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Principal square root by Denman-Beavers iteration.
pub fn sqrtm_denman_beavers(a: &Mat) -> Mat {
    let n = a.len();
    let mut y = a.clone();
    let mut z = identity(n);
    for _ in 0..100 {
        let (yi, zi) = (inverse(&y), inverse(&z));
        let ny: Mat = (0..n)
            .map(|i| (0..n).map(|j| 0.5 * (y[i][j] + zi[i][j])).collect())
            .collect();
        let nz: Mat = (0..n)
            .map(|i| (0..n).map(|j| 0.5 * (z[i][j] + yi[i][j])).collect())
            .collect();
        let delta = ny
            .iter()
            .flatten()
            .zip(y.iter().flatten())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        y = ny;
        z = nz;
        if delta < 1e-15 {
            break;
        }
    }
    y
}

/// Two-pass mean and ddof=1 covariance.
pub fn mean_cov(rows: &[Vec<f64>]) -> (Vec<f64>, Mat) {
    let n = rows.len() as f64;
    let d = rows[0].len();
    let mu: Vec<f64> = (0..d)
        .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let cov = (0..d)
        .map(|a| {
            (0..d)
                .map(|b| {
                    rows.iter()
                        .map(|r| (r[a] - mu[a]) * (r[b] - mu[b]))
                        .sum::<f64>()
                        / (n - 1.0)
                })
                .collect()
        })
        .collect();
    (mu, cov)
}

/// FID with the matrix square root of the (non-symmetric) product taken
/// directly.
pub fn fid_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (ma, ca) = mean_cov(a);
    let (mb, cb) = mean_cov(b);
    let root = sqrtm_denman_beavers(&matmul(&ca, &cb));
    let d = ma.len();
    let diff: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum();
    diff + (0..d)
        .map(|i| ca[i][i] + cb[i][i] - 2.0 * root[i][i])
        .sum::<f64>()
}

/// Unbiased MMD² with the cubic polynomial kernel over whole sets, as
/// explicit kernel sums.
pub fn mmd2_oracle(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let d = x[0].len() as f64;
    let k = |u: &[f64], v: &[f64]| {
        let s: f64 = u.iter().zip(v).map(|(p, q)| p * q).sum();
        (s / d + 1.0) * (s / d + 1.0) * (s / d + 1.0)
    };
    let (m, n) = (x.len() as f64, y.len() as f64);
    let all = |s: &[Vec<f64>]| {
        s.iter()
            .map(|u| s.iter().map(|v| k(u, v)).sum::<f64>())
            .sum::<f64>()
    };
    let diag = |s: &[Vec<f64>]| s.iter().map(|u| k(u, u)).sum::<f64>();
    let cross: f64 = x
        .iter()
        .map(|u| y.iter().map(|v| k(u, v)).sum::<f64>())
        .sum();
    (all(x) - diag(x)) / (m * (m - 1.0)) + (all(y) - diag(y)) / (n * (n - 1.0))
        - 2.0 * cross / (m * n)
}

/// SSIM of two single-channel planes with a direct 2D Gaussian window.
pub fn ssim_oracle(h: usize, w: usize, a: &[f64], b: &[f64]) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut win = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
            total += *v;
        }
    }
    let mut acc = 0.0;
    let mut count = 0.0;
    for r in 0..=h - 11 {
        for c in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let g = win[i][j] / total;
                    let (p, q) = (a[(r + i) * w + c + j], b[(r + i) * w + c + j]);
                    ma += g * p;
                    mb += g * q;
                    saa += g * p * p;
                    sbb += g * q * q;
                    sab += g * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    acc / count
}
