use super::canonical_rows;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, SplitMix64};

pub const KID_DEFAULT_SUBSETS: usize = 10;
pub const KID_MAX_SUBSET: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KidEstimate {
    pub mean: f64,
    /// Population variance over subset estimates.
    pub variance: f64,
}

/// `(uᵀv / d + 1)³`
pub fn polynomial_kernel(u: &[f64], v: &[f64]) -> f64 {
    let d = u.len() as f64;
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    (dot / d + 1.0).powi(3)
}

fn unbiased_mmd2(x: &[&[f64]], y: &[&[f64]]) -> f64 {
    let b = x.len();
    let within = |s: &[&[f64]]| {
        let mut acc = 0.0;
        for i in 0..b {
            for j in 0..b {
                if i != j {
                    acc += polynomial_kernel(s[i], s[j]);
                }
            }
        }
        acc / (b * (b - 1)) as f64
    };
    let mut cross = 0.0;
    for u in x {
        for v in y {
            cross += polynomial_kernel(u, v);
        }
    }
    within(x) + within(y) - 2.0 * cross / (b * b) as f64
}

/// Kernel inception distance over `num_subsets` random subsets of
/// `subset_size` rows drawn without replacement from each set.
///
/// Rows are put in canonical order before sampling, so the result depends
/// only on the multiset of rows and the seed.
pub fn kid(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    subset_size: usize,
    num_subsets: usize,
    seed: u64,
) -> Result<KidEstimate> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::Contract(format!(
            "kid needs at least 2 rows per set, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if d == 0 || x.iter().chain(y).any(|r| r.len() != d) {
        return Err(Error::Shape(
            "kid feature rows must share a positive dimension".into(),
        ));
    }
    if subset_size < 2 || subset_size > x.len().min(y.len()) {
        return Err(Error::Contract(format!(
            "kid subset size {subset_size} outside [2, {}]",
            x.len().min(y.len())
        )));
    }
    if num_subsets == 0 {
        return Err(Error::Contract("kid needs at least one subset".into()));
    }
    let xs = canonical_rows(x);
    let ys = canonical_rows(y);
    let estimates: Vec<f64> = (0..num_subsets)
        .map(|s| {
            let mut rng = SplitMix64::new(derive_seed(seed, &[s as u64]));
            let xi = rng.sample_without_replacement(xs.len(), subset_size);
            let yi = rng.sample_without_replacement(ys.len(), subset_size);
            let xb: Vec<&[f64]> = xi.iter().map(|&i| xs[i]).collect();
            let yb: Vec<&[f64]> = yi.iter().map(|&i| ys[i]).collect();
            unbiased_mmd2(&xb, &yb)
        })
        .collect();
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let variance = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    Ok(KidEstimate { mean, variance })
}
