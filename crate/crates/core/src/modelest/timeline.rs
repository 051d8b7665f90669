use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devicesim::{spans_to_csv, LayerSpan};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimelineError {
    #[error("timeline needs at least one layer")]
    Empty,
    #[error("layer {layer}: {what} time {value} ms is negative")]
    NegativeTime {
        layer: usize,
        what: &'static str,
        value: f64,
    },
}

/// Per-layer processing times of one inference, ms. `delta_ms` is signed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub cpu_ms: f64,
    pub gpu_ms: f64,
    pub delta_ms: f64,
}

impl LayerTiming {
    pub fn new(cpu_ms: f64, gpu_ms: f64, delta_ms: f64) -> Self {
        Self {
            cpu_ms,
            gpu_ms,
            delta_ms,
        }
    }
}

/// Reconstructed CPU and GPU busy intervals; the first CPU start is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub layers: Vec<LayerSpan>,
    pub total: f64,
}

impl Timeline {
    pub fn to_csv(&self) -> String {
        spans_to_csv(&self.layers)
    }
}

/// Rebuilds the asynchronous schedule from per-layer estimates.
///
/// The CPU prepares layers back to back. A layer's GPU work may start `delta`
/// after its CPU part ends (earlier when `delta < 0`) but never before the
/// GPU finishes the previous layer.
pub fn reconstruct_timeline(layers: &[LayerTiming]) -> Result<Timeline, TimelineError> {
    if layers.is_empty() {
        return Err(TimelineError::Empty);
    }
    let mut spans = Vec::with_capacity(layers.len());
    let mut cpu_end = 0.0_f64;
    let mut gpu_end = f64::NEG_INFINITY;
    for (i, l) in layers.iter().enumerate() {
        for (what, value) in [("cpu", l.cpu_ms), ("gpu", l.gpu_ms)] {
            if value.is_nan() || value < 0.0 {
                return Err(TimelineError::NegativeTime {
                    layer: i,
                    what,
                    value,
                });
            }
        }
        let cpu_start = cpu_end;
        cpu_end = cpu_start + l.cpu_ms;
        let gpu_start = (cpu_end + l.delta_ms).max(gpu_end);
        gpu_end = gpu_start + l.gpu_ms;
        spans.push(LayerSpan {
            cpu_start,
            cpu_end,
            gpu_start,
            gpu_end,
        });
    }
    Ok(Timeline {
        layers: spans,
        total: gpu_end,
    })
}
