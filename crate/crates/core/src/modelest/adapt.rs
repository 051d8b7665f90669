use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_WINDOW: usize = 9;
pub const DEFAULT_ALPHA: f64 = 0.6;
pub const DEFAULT_CADENCE: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptError {
    #[error("adaptation batch must hold {expected} (estimate, measured) pairs, got {found}")]
    BatchSize { expected: usize, found: usize },
    #[error("alpha must lie in (0, 1], got {0}")]
    Alpha(f64),
    #[error("window and cadence must be at least 1")]
    Window,
}

/// Online bias corrector for full-model estimates.
///
/// Every `cadence` measurements the most recent `window + 1` residuals are
/// averaged into a local bias, which is blended into `delta_t` by an
/// exponentially weighted moving average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationState {
    pub window: usize,
    pub alpha: f64,
    pub cadence: usize,
    pub delta_t: f64,
    /// Pending (estimate, measured) pairs, ms.
    pub history: Vec<(f64, f64)>,
    pub updates: usize,
}

impl Default for AdaptationState {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW, DEFAULT_ALPHA, DEFAULT_CADENCE).expect("valid defaults")
    }
}

impl AdaptationState {
    pub fn new(window: usize, alpha: f64, cadence: usize) -> Result<Self, AdaptError> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(AdaptError::Alpha(alpha));
        }
        if window == 0 || cadence == 0 {
            return Err(AdaptError::Window);
        }
        Ok(Self {
            window,
            alpha,
            cadence,
            delta_t: 0.0,
            history: Vec::new(),
            updates: 0,
        })
    }

    /// Records one pair and recalibrates when the cadence is reached.
    /// Returns true if `delta_t` was updated.
    pub fn observe(&mut self, estimate: f64, measured: f64) -> bool {
        self.history.push((estimate, measured));
        if self.history.len() < self.cadence {
            return false;
        }
        let n = self.history.len().min(self.window + 1);
        let batch: Vec<_> = self.history[self.history.len() - n..].to_vec();
        self.history.clear();
        let sigma = batch.iter().map(|(e, m)| m - e).sum::<f64>() / batch.len() as f64;
        self.blend(sigma);
        true
    }

    fn blend(&mut self, sigma: f64) {
        self.delta_t = self.alpha * sigma + (1.0 - self.alpha) * self.delta_t;
        self.updates += 1;
    }
}

/// Applies one full window of (estimate, measured) pairs.
pub fn adapt_update(
    state: &AdaptationState,
    batch: &[(f64, f64)],
) -> Result<AdaptationState, AdaptError> {
    if batch.len() != state.window + 1 {
        return Err(AdaptError::BatchSize {
            expected: state.window + 1,
            found: batch.len(),
        });
    }
    let sigma = batch.iter().map(|(e, m)| m - e).sum::<f64>() / batch.len() as f64;
    let mut next = state.clone();
    next.blend(sigma);
    Ok(next)
}

/// Calibrated estimate, ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibrated {
    pub value: f64,
    pub clamped: bool,
}

pub fn calibrated_estimate(state: &AdaptationState, raw_total: f64) -> Calibrated {
    let v = raw_total + state.delta_t;
    if v < 0.0 {
        Calibrated {
            value: 0.0,
            clamped: true,
        }
    } else {
        Calibrated {
            value: v,
            clamped: false,
        }
    }
}
