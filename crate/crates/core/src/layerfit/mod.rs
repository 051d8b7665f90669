//! Per-layer latency estimation.
//!
//! For every profiled configuration the processor times are fit to
//! `k/f + b`, the interaction gap is split at a CPU saturation level and fit
//! per regime. Coefficients are then generalized across configurations of a
//! layer type through workload features: a parser maps config-derived raw
//! features to the selected fingerprint, and one regressor per coefficient
//! maps the fingerprint to the coefficient value.

pub mod delta;
mod estimator;
pub mod features;
mod processor;
pub mod regress;

use thiserror::Error;

use crate::types::LayerType;

pub use delta::{detect_breakpoint, fit_delta, BreakpointFit, DeltaSample};
pub use estimator::{
    build_layer_estimator, estimate_layer, fit_coefficient_set, CoefficientSet, EstimatorStore,
    LayerEstimate, LayerTypeEstimator, StoreError, TrainedConfig, COEFFICIENT_NAMES,
    STORE_SCHEMA_VERSION, TRAINING_TOLERANCE,
};
pub use features::{featureize, select_features, FeatureSelector, RawFeatures, WorkloadFeatures};
pub use processor::{fit_processor_model, ProcessorFit};
pub use regress::RegressorKind;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("underdetermined fit: {what}")]
    Underdetermined { what: String },
    #[error(
        "{branch} branch is underdetermined ({samples} samples, {cpu_levels} CPU levels, {gpu_levels} GPU levels)"
    )]
    UnderdeterminedBranch {
        branch: &'static str,
        samples: usize,
        cpu_levels: usize,
        gpu_levels: usize,
    },
    #[error("breakpoint detection needs at least 3 CPU levels, found {cpu_levels}")]
    CannotSplit { cpu_levels: usize },
    #[error("latency has zero variance across configs; correlation is undefined")]
    ZeroVarianceLatency,
    #[error("{layer_type}: need at least 3 distinct configs, found {found}")]
    TooFewConfigs { layer_type: LayerType, found: usize },
    #[error("fit failed for config {config}: {source}")]
    Config {
        config: String,
        #[source]
        source: Box<FitError>,
    },
    #[error("no trained estimator for layer type {0}")]
    UntrainedLayerType(LayerType),
}
