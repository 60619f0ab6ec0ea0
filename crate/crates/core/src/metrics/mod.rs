//! Image-quality metrics: SSIM on paired images, FID and KID on embedded
//! feature sets, and the report that bundles them.

mod embedder;
mod fid;
mod kid;
mod report;
mod ssim;

pub use embedder::{EmbedderDescriptor, FeatureEmbedder, RandomProjectionEmbedder};
pub use fid::{
    fid, gaussian_stats, singular_values, sqrt_trace_product, symmetric_eigen, GaussianStats,
    EIGEN_FLOOR,
};
pub use kid::{kid, polynomial_kernel, KidEstimate, KID_DEFAULT_SUBSETS, KID_MAX_SUBSET};
pub use report::{evaluate_run, EvalConfig, MetricReport, CSV_HEADER};
pub use ssim::{luminance_plane, ssim, to_unit_range, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};

use std::cmp::Ordering;

/// Rows in a canonical (lexicographic, total-order) arrangement, so that
/// statistics built from them do not depend on input order.
pub(crate) fn canonical_rows(rows: &[Vec<f64>]) -> Vec<&[f64]> {
    let mut sorted: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    sorted
}
