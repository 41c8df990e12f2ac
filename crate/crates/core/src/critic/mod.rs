//! Critics: the implicit quantile critic with distortion risk measures, and
//! a twin-Q critic used by the ablation variants.

mod distortion;
mod loss;
mod normal;
mod quantile;
mod twin;

pub use distortion::{DistortionKind, DistortionMeasure};
pub use loss::{huber, quantile_huber, quantile_huber_rho, quantile_huber_rho_grad};
pub use normal::{std_normal_cdf, std_normal_quantile};
pub use quantile::{
    quantile_regression, sample_levels, QuantileCritic, QuantileNet, QuantileTrace, COS_FEATURES,
};
pub use twin::TwinQCritic;

use thiserror::Error;

use crate::nn::NnError;

#[derive(Debug, Error)]
pub enum CriticError {
    #[error("quantile level {0} outside [0, 1]")]
    TauOutOfRange(f64),
    #[error("invalid distortion parameter for {0}")]
    InvalidDistortion(DistortionMeasure),
    #[error("kappa must be positive, got {0}")]
    InvalidKappa(f64),
    #[error("{what}: expected {expected} values, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Nn(#[from] NnError),
}
