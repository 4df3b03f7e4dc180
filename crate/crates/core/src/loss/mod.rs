//! Training objective, per-sample foreground weighting and evaluation metrics.

mod metrics;
mod objective;
mod weights;

pub use metrics::{
    accumulate_confusion, binarize, miou, miou_with, pixel_accuracy, ConfusionCounts, MiouConvention,
};
pub use objective::{bce_stable, combined_loss, jaccard_distance_loss, regularizer, LossOutput, ScalarGrad};
pub use weights::{batch_weights, bf_ratio, make_weight_matrix, WeightMatrix};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("target at index {index} is {value}, expected 0 or 1")]
    NonBinaryTarget { index: usize, value: f64 },
    #[error("probability at index {index} is {value}, outside [0, 1]; apply sigmoid first")]
    ProbabilityRange { index: usize, value: f64 },
    #[error("class index {value} at pixel {index} is out of range for {classes} classes")]
    ClassIndex { index: usize, value: u8, classes: usize },
    #[error("masks differ in length: {pred} predicted vs {gt} ground truth")]
    MaskLength { pred: usize, gt: usize },
    #[error("no pixels have been counted")]
    EmptyCounts,
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
}

/// Coefficients of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// L2 coefficient on convolution kernels.
    pub lambda: f64,
    /// Added to both numerator and denominator of the soft Jaccard index.
    pub jaccard_smooth: f64,
    /// Upper limit on the per-patch foreground weight.
    pub weight_cap: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            jaccard_smooth: 1.0,
            weight_cap: 2000.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(LossError::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.jaccard_smooth > 0.0) || !self.jaccard_smooth.is_finite() {
            return Err(LossError::InvalidConfig(format!(
                "jaccard_smooth must be > 0, got {}",
                self.jaccard_smooth
            )));
        }
        if !(self.weight_cap >= 1.0) {
            return Err(LossError::InvalidConfig(format!(
                "weight_cap must be >= 1, got {}",
                self.weight_cap
            )));
        }
        Ok(())
    }
}
