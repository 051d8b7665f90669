//! Full-model latency from per-layer estimates, plus online bias correction.

mod adapt;
mod timeline;

use thiserror::Error;

use crate::layerfit::{EstimatorStore, FitError};
use crate::types::{Frequency, ModelSpec};

pub use adapt::{
    adapt_update, calibrated_estimate, AdaptError, AdaptationState, Calibrated, DEFAULT_ALPHA,
    DEFAULT_CADENCE, DEFAULT_WINDOW,
};
pub use timeline::{reconstruct_timeline, LayerTiming, Timeline, TimelineError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

/// Per-layer estimates of a model at one frequency pair.
pub fn layer_timings(
    store: &EstimatorStore,
    spec: &ModelSpec,
    f_c: Frequency,
    f_g: Frequency,
) -> Result<Vec<LayerTiming>, FitError> {
    spec.layers
        .iter()
        .map(|c| {
            let e = store.estimate_layer(c, f_c, f_g)?;
            Ok(LayerTiming::new(e.cpu_ms, e.gpu_ms, e.delta_ms))
        })
        .collect()
}

/// Estimated end-to-end latency (ms) and the reconstructed timeline.
pub fn estimate_model(
    store: &EstimatorStore,
    spec: &ModelSpec,
    f_c: Frequency,
    f_g: Frequency,
) -> Result<(f64, Timeline), EstimateError> {
    let timeline = reconstruct_timeline(&layer_timings(store, spec, f_c, f_g)?)?;
    Ok((timeline.total, timeline))
}

/// Sum of per-layer totals, ignoring overlap and queueing.
pub fn naive_sum(timings: &[LayerTiming]) -> f64 {
    timings
        .iter()
        .map(|t| t.cpu_ms + t.gpu_ms + t.delta_ms)
        .sum()
}
