//! Trajectory and reconstruction metrics: rigid alignment, ATE, RPE, ICP and
//! cloud-to-cloud distances.

mod align;
mod icp;
mod kdtree;
mod trajectory;

pub use align::{rigid_align, similarity_align, Similarity};
pub use icp::{cloud_to_cloud, icp_align, CloudDistances, IcpOptions, IcpResult};
pub use kdtree::KdTree;
pub use trajectory::{
    associate, ate, parse_tum, read_tum, rpe_pair, rpe_sequence, to_tum_string, tum_line, AteResult, PoseSample, RpeError,
    RpeStats, Trajectory,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("length mismatch: {pred} predicted vs {gt} ground-truth samples")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("timestamps not strictly increasing at sample {0}")]
    NonMonotonicTime(usize),
    #[error("non-finite value in sample {0}")]
    NonFinite(usize),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]), (5.0, 2.0));
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        assert_eq!(mean_std(&[]), (0.0, 0.0));
    }
}
