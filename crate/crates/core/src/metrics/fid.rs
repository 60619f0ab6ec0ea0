use nalgebra::{DMatrix, DVector};

use super::canonical_rows;
use crate::error::{Error, Result};

/// Eigenvalues below this are treated as zero when taking square roots.
pub const EIGEN_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Sample mean and unbiased (ddof = 1) covariance of `N × d` feature rows.
pub fn gaussian_stats(features: &[Vec<f64>]) -> Result<GaussianStats> {
    let n = features.len();
    if n < 2 {
        return Err(Error::Contract(format!(
            "gaussian_stats needs at least 2 rows, got {n}"
        )));
    }
    let d = features[0].len();
    if d == 0 || features.iter().any(|r| r.len() != d) {
        return Err(Error::Shape(
            "feature rows must share a positive dimension".into(),
        ));
    }
    let rows = canonical_rows(features);
    let mut mu = DVector::zeros(d);
    for r in &rows {
        for j in 0..d {
            mu[j] += r[j];
        }
    }
    mu /= n as f64;
    let centered = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mu[j]);
    let mut sigma = centered.transpose() * &centered / (n as f64 - 1.0);
    sigma = (&sigma + sigma.transpose()) * 0.5;
    Ok(GaussianStats { mu, sigma })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns the eigenvalues and the matrix whose columns are the matching
/// unit eigenvectors.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Shape(format!(
            "eigen-decomposition of a {}x{} matrix",
            n,
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite covariance entry".into()));
    }
    let mut a = m.clone();
    let mut v = DMatrix::identity(n, n);
    // off-diagonal entries this small are below the rounding floor of the
    // matrix and are treated as already zero
    let negligible = f64::EPSILON * 1e-3 * a.norm();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() <= negligible {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                rotated = true;
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (kp, kq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * kp - s * kq;
                    a[(k, q)] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * pk - s * qk;
                    a[(q, k)] = s * pk + c * qk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for k in 0..n {
                    let (kp, kq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * kp - s * kq;
                    v[(k, q)] = s * kp + c * kq;
                }
            }
        }
        if !rotated {
            return Ok((a.diagonal(), v));
        }
    }
    Err(Error::Numeric("Jacobi eigensolver did not converge".into()))
}

const JACOBI_MAX_SWEEPS: usize = 100;

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, vectors) = symmetric_eigen(m)?;
    let roots = values.map(|l| if l < EIGEN_FLOOR { 0.0 } else { l.sqrt() });
    Ok(&vectors * DMatrix::from_diagonal(&roots) * vectors.transpose())
}

/// Singular values of a square matrix by one-sided Jacobi rotations.
///
/// Columns are orthogonalized in place; their norms are the singular values.
/// Accurate to round-off relative to the largest one, with no square root of
/// a noisy eigenvalue involved.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite matrix entry".into()));
    }
    let mut u = m.clone();
    let n = u.ncols();
    // columns below the round-off level of the whole matrix count as zero
    let null_column = (f64::EPSILON * m.norm()).powi(2);
    // a dot product of n terms carries about n ulps of round-off
    let tol = f64::EPSILON * u.nrows() as f64;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = u.column(p).norm_squared();
                let beta = u.column(q).norm_squared();
                let gamma = u.column(p).dot(&u.column(q));
                if alpha <= null_column
                    || beta <= null_column
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..u.nrows() {
                    let (kp, kq) = (u[(k, p)], u[(k, q)]);
                    u[(k, p)] = c * kp - s * kq;
                    u[(k, q)] = s * kp + c * kq;
                }
            }
        }
        if !rotated {
            return Ok((0..n).map(|j| u.column(j).norm()).collect());
        }
    }
    Err(Error::Numeric("Jacobi SVD did not converge".into()))
}

/// `Tr((Σa Σb)^{1/2})`.
///
/// This is `Tr(C^{1/2})` for the symmetric `C = Σa^{1/2} Σb Σa^{1/2}`.
/// Since `C = MᵀM` with `M = Σb^{1/2} Σa^{1/2}`, the trace is the sum of the
/// singular values of `M`, which avoids square roots of near-zero noisy
/// eigenvalues of `C`. The floor applies to the covariance eigenvalues.
pub fn sqrt_trace_product(sigma_a: &DMatrix<f64>, sigma_b: &DMatrix<f64>) -> Result<f64> {
    let m = psd_sqrt(sigma_b)? * psd_sqrt(sigma_a)?;
    Ok(singular_values(&m)?.iter().sum())
}

/// Fréchet distance between two Gaussian fits.
///
/// Not clamped: tiny negative values reflect eigensolver round-off.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() || a.sigma.shape() != b.sigma.shape() {
        return Err(Error::Shape(format!(
            "fid between dimension {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let diff = (&a.mu - &b.mu).norm_squared();
    let tr = sqrt_trace_product(&a.sigma, &b.sigma)?;
    Ok(diff + a.sigma.trace() + b.sigma.trace() - 2.0 * tr)
}
