//! Frequency-aware latency estimation for layered inference workloads on a
//! CPU-GPU device, with a synthetic device simulator and a deadline-aware
//! frequency governor.
//!
//! Units are fixed throughout: frequencies in GHz, durations in ms, power
//! in W.

pub mod devicesim;
pub mod governor;
pub mod layerfit;
pub mod modelest;
pub mod profiler;
pub mod types;
pub mod workloads;

pub use types::{
    frequency_pair_count, validate_model_spec, CoreError, Frequency, FrequencyGrid, LayerConfig,
    LayerType, ModelSpec, ProfileSample,
};
