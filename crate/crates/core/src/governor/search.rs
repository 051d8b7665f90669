use serde::{Deserialize, Serialize};

use crate::devicesim::{measure_power, PowerModel};
use crate::types::{Frequency, FrequencyGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GovernorDecision {
    pub f_c: Frequency,
    pub f_g: Frequency,
    /// ms
    pub predicted_latency: f64,
    /// W
    pub predicted_power: f64,
    pub feasible: bool,
    pub estimator_calls: usize,
}

/// Frequency-selection policy used by the governing loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    #[default]
    Greedy,
    Oracle,
    MaxFrequency,
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(Policy::Greedy),
            "oracle" => Ok(Policy::Oracle),
            "max" | "max-frequency" => Ok(Policy::MaxFrequency),
            other => Err(format!(
                "unknown policy \"{other}\" (expected greedy, oracle or max)"
            )),
        }
    }
}

struct Counted<F> {
    f: F,
    calls: usize,
}

impl<F: FnMut(Frequency, Frequency) -> f64> Counted<F> {
    fn call(&mut self, c: Frequency, g: Frequency) -> f64 {
        self.calls += 1;
        (self.f)(c, g)
    }
}

fn decision(
    power: &PowerModel,
    f_c: Frequency,
    f_g: Frequency,
    latency: f64,
    feasible: bool,
    calls: usize,
) -> GovernorDecision {
    GovernorDecision {
        f_c,
        f_g,
        predicted_latency: latency,
        predicted_power: measure_power(power, f_c.ghz(), f_g.ghz()),
        feasible,
        estimator_calls: calls,
    }
}

/// Decoupled two-phase search.
///
/// With the CPU pinned at its maximum, the lowest GPU level meeting the
/// deadline is chosen; then, at that GPU level, the lowest CPU level meeting
/// it. Levels are scanned in ascending order and the first feasible one is
/// taken, so a non-monotone estimate is followed literally.
pub fn greedy_search(
    estimate: impl FnMut(Frequency, Frequency) -> f64,
    grid: &FrequencyGrid,
    power: &PowerModel,
    t_d: f64,
) -> GovernorDecision {
    let mut est = Counted {
        f: estimate,
        calls: 0,
    };
    let c_max = grid.cpu_max();
    let mut chosen_g = None;
    let mut last = f64::NAN;
    for &g in grid.gpu_levels() {
        last = est.call(c_max, g);
        if last <= t_d {
            chosen_g = Some(g);
            break;
        }
    }
    let Some(g) = chosen_g else {
        return decision(power, c_max, grid.gpu_max(), last, false, est.calls);
    };
    let below_max = grid.cpu_levels().iter().copied().filter(|&c| c != c_max);
    for c in below_max {
        let t = est.call(c, g);
        if t <= t_d {
            return decision(power, c, g, t, true, est.calls);
        }
    }
    decision(power, c_max, g, last, true, est.calls)
}

/// Exhaustive minimum-power feasible pair; ties go to lower `f_c`, then
/// lower `f_g`.
pub fn oracle_search(
    estimate: impl FnMut(Frequency, Frequency) -> f64,
    grid: &FrequencyGrid,
    power: &PowerModel,
    t_d: f64,
) -> GovernorDecision {
    let mut est = Counted {
        f: estimate,
        calls: 0,
    };
    let mut best: Option<(f64, Frequency, Frequency, f64)> = None;
    let mut at_max = f64::NAN;
    for (c, g) in grid.pairs() {
        let t = est.call(c, g);
        if c == grid.cpu_max() && g == grid.gpu_max() {
            at_max = t;
        }
        if t <= t_d {
            let p = measure_power(power, c.ghz(), g.ghz());
            if best.is_none_or(|(bp, ..)| p < bp) {
                best = Some((p, c, g, t));
            }
        }
    }
    match best {
        Some((_, c, g, t)) => decision(power, c, g, t, true, est.calls),
        None => decision(
            power,
            grid.cpu_max(),
            grid.gpu_max(),
            at_max,
            false,
            est.calls,
        ),
    }
}

/// Always runs at the highest levels.
pub fn max_frequency(
    mut estimate: impl FnMut(Frequency, Frequency) -> f64,
    grid: &FrequencyGrid,
    power: &PowerModel,
    t_d: f64,
) -> GovernorDecision {
    let t = estimate(grid.cpu_max(), grid.gpu_max());
    decision(power, grid.cpu_max(), grid.gpu_max(), t, t <= t_d, 1)
}

pub fn search(
    policy: Policy,
    estimate: impl FnMut(Frequency, Frequency) -> f64,
    grid: &FrequencyGrid,
    power: &PowerModel,
    t_d: f64,
) -> GovernorDecision {
    match policy {
        Policy::Greedy => greedy_search(estimate, grid, power, t_d),
        Policy::Oracle => oracle_search(estimate, grid, power, t_d),
        Policy::MaxFrequency => max_frequency(estimate, grid, power, t_d),
    }
}
