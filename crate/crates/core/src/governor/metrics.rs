use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("series lengths differ ({0} vs {1}) or are empty")]
    Length(usize, usize),
    #[error("ground-truth entry {0} is zero")]
    ZeroTruth(usize),
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
}

/// Mean absolute percentage error of `y_hat` against `y`, percent.
pub fn mape(y: &[f64], y_hat: &[f64]) -> Result<f64, MetricError> {
    if y.is_empty() || y.len() != y_hat.len() {
        return Err(MetricError::Length(y.len(), y_hat.len()));
    }
    let mut sum = 0.0;
    for (i, (a, b)) in y.iter().zip(y_hat).enumerate() {
        if *a == 0.0 {
            return Err(MetricError::ZeroTruth(i));
        }
        sum += ((a - b) / a).abs();
    }
    Ok(sum / y.len() as f64 * 100.0)
}

/// Achieved over required rate, capped at 100 percent.
pub fn qos(r_a: f64, r_d: f64) -> Result<f64, MetricError> {
    if r_d.is_nan() || r_d <= 0.0 {
        return Err(MetricError::NonPositive {
            what: "required rate",
            value: r_d,
        });
    }
    Ok((r_a / r_d).min(1.0) * 100.0)
}

/// QoS per watt, percent/W.
pub fn ppw(qos: f64, p_avg: f64) -> Result<f64, MetricError> {
    if p_avg.is_nan() || p_avg <= 0.0 {
        return Err(MetricError::NonPositive {
            what: "average power",
            value: p_avg,
        });
    }
    Ok(qos / p_avg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// percent
    pub mape: f64,
    /// percent
    pub qos: f64,
    /// percent per watt
    pub ppw: f64,
    /// W
    pub avg_power: f64,
    /// inferences (or tokens) per second
    pub achieved_rate: f64,
    pub required_rate: f64,
    pub steps: usize,
}
