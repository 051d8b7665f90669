use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub const TRACE_CSV_HEADER: &str = "layer,cpu_start_ms,cpu_end_ms,gpu_start_ms,gpu_end_ms";

/// CPU and GPU busy intervals of one layer, in ms from the first CPU start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpan {
    pub cpu_start: f64,
    pub cpu_end: f64,
    pub gpu_start: f64,
    pub gpu_end: f64,
}

/// Result of running a model on the simulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub layers: Vec<LayerSpan>,
    pub total_latency: f64,
    pub avg_power: f64,
}

impl SimTrace {
    pub fn to_csv(&self) -> String {
        spans_to_csv(&self.layers)
    }
}

pub(crate) fn spans_to_csv(spans: &[LayerSpan]) -> String {
    let mut out = String::from(TRACE_CSV_HEADER);
    out.push('\n');
    for (i, s) in spans.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{}",
            i, s.cpu_start, s.cpu_end, s.gpu_start, s.gpu_end
        )
        .expect("write to string");
    }
    out
}
