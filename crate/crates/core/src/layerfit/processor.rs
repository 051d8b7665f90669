use serde::{Deserialize, Serialize};

use super::FitError;
use crate::types::Frequency;

/// `t = k / f + b` for one processor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessorFit {
    pub k: f64,
    pub b: f64,
}

impl ProcessorFit {
    #[inline]
    pub fn eval(&self, f: f64) -> f64 {
        self.k / f + self.b
    }
}

/// Least-squares fit of `t = k/f + b` on the regressor `1/f`.
///
/// A negative slope is physically meaningless (slower at higher clocks), so
/// it is clamped to zero and `b` refit as the mean time.
pub fn fit_processor_model(samples: &[(Frequency, f64)]) -> Result<ProcessorFit, FitError> {
    let first = samples.first().ok_or(FitError::Underdetermined {
        what: "processor model: no samples".into(),
    })?;
    if samples.iter().all(|(f, _)| f.ghz() == first.0.ghz()) {
        return Err(FitError::Underdetermined {
            what: "processor model: all samples share one frequency".into(),
        });
    }
    let n = samples.len() as f64;
    let mx = samples.iter().map(|(f, _)| 1.0 / f.ghz()).sum::<f64>() / n;
    let my = samples.iter().map(|(_, t)| t).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (f, t) in samples {
        let dx = 1.0 / f.ghz() - mx;
        sxy += dx * (t - my);
        sxx += dx * dx;
    }
    let k = sxy / sxx;
    if k < 0.0 {
        return Ok(ProcessorFit { k: 0.0, b: my });
    }
    Ok(ProcessorFit { k, b: my - k * mx })
}
