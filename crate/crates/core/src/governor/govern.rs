use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::metrics::{mape, ppw, qos, EvalReport, MetricError};
use super::search::{search, Policy};
use crate::devicesim::{DeviceSimulator, SimError};
use crate::layerfit::EstimatorStore;
use crate::modelest::{calibrated_estimate, estimate_model, AdaptationState, EstimateError};
use crate::types::{LayerType, ModelSpec};

pub const GOVERN_CSV_HEADER: &str =
    "step,f_c,f_g,pred_ms,meas_ms,power_w,qos_flag,delta_t,deadline_ms";

/// Per-step deadline, ms; changes take effect at the listed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeadlineSchedule {
    pub initial_ms: f64,
    #[serde(default)]
    pub changes: Vec<DeadlineChange>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeadlineChange {
    pub step: usize,
    pub deadline_ms: f64,
}

impl DeadlineSchedule {
    pub fn constant(deadline_ms: f64) -> Self {
        Self {
            initial_ms: deadline_ms,
            changes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let bad = |d: f64| !(d.is_finite() && d > 0.0);
        if bad(self.initial_ms) || self.changes.iter().any(|c| bad(c.deadline_ms)) {
            return Err("deadlines must be finite and positive (ms)".into());
        }
        Ok(())
    }

    pub fn at(&self, step: usize) -> f64 {
        self.changes
            .iter()
            .filter(|c| c.step <= step)
            .max_by_key(|c| c.step)
            .map_or(self.initial_ms, |c| c.deadline_ms)
    }
}

/// Multiplicative slowdown active over `[start, end)` steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub load: f64,
    pub start: usize,
    pub end: Option<usize>,
}

impl Disturbance {
    pub fn active(&self, step: usize) -> bool {
        step >= self.start && self.end.is_none_or(|e| step < e)
    }
}

impl std::str::FromStr for Disturbance {
    type Err = String;

    /// `LOAD@stepN` or `LOAD@stepN-stepM`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err =
            || format!("invalid disturbance \"{s}\" (expected LOAD@stepN or LOAD@stepN-stepM)");
        let (load, range) = s.split_once('@').ok_or_else(err)?;
        let load: f64 = load.parse().map_err(|_| err())?;
        if !(load.is_finite() && load > -1.0) {
            return Err(err());
        }
        let step = |t: &str| t.strip_prefix("step").and_then(|n| n.parse::<usize>().ok());
        let (start, end) = match range.split_once('-') {
            Some((a, b)) => (step(a).ok_or_else(err)?, Some(step(b).ok_or_else(err)?)),
            None => (step(range).ok_or_else(err)?, None),
        };
        if end.is_some_and(|e| e <= start) {
            return Err(err());
        }
        Ok(Self { load, start, end })
    }
}

/// Context growth for per-token governing of transformer models: the
/// context at step `i` is `start + i`, wrapping back to `start` after `max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenContext {
    pub start: u64,
    pub max: u64,
}

impl TokenContext {
    pub fn at(&self, step: usize) -> u64 {
        let span = self.max - self.start + 1;
        self.start + step as u64 % span
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GovernConfig {
    pub deadline: DeadlineSchedule,
    pub steps: usize,
    pub policy: Policy,
    pub adaptation: bool,
    pub disturbance: Option<Disturbance>,
    pub tokens: Option<TokenContext>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GovernStep {
    pub step: usize,
    pub f_c: f64,
    pub f_g: f64,
    pub pred_ms: f64,
    pub meas_ms: f64,
    pub power_w: f64,
    pub qos_flag: bool,
    pub delta_t: f64,
    pub deadline_ms: f64,
    #[serde(default = "yes")]
    pub feasible: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Error)]
pub enum GovernError {
    #[error("invalid govern configuration: {0}")]
    Config(String),
    #[error("step {step}: {source}")]
    Simulator {
        step: usize,
        partial: Vec<GovernStep>,
        #[source]
        source: SimError,
    },
    #[error("step {step}: {source}")]
    Estimate {
        step: usize,
        partial: Vec<GovernStep>,
        #[source]
        source: EstimateError,
    },
}

fn spec_at(spec: &ModelSpec, tokens: Option<TokenContext>, step: usize) -> ModelSpec {
    let Some(t) = tokens else {
        return spec.clone();
    };
    let ctx = t.at(step);
    ModelSpec {
        name: spec.name.clone(),
        layers: spec
            .layers
            .iter()
            .map(|l| {
                if l.layer_type == LayerType::Transformer {
                    l.with_context(ctx)
                } else {
                    l.clone()
                }
            })
            .collect(),
    }
}

/// Runs the closed governing loop on a simulator.
///
/// Each step picks a pair from calibrated estimates, runs one inference (or
/// token) at it, and feeds the raw estimate and the measurement to the
/// adaptation state. Deadline changes apply from the step they are listed at.
pub fn govern_loop(
    store: &EstimatorStore,
    sim: &mut DeviceSimulator,
    spec: &ModelSpec,
    cfg: &GovernConfig,
) -> Result<Vec<GovernStep>, GovernError> {
    cfg.deadline.validate().map_err(GovernError::Config)?;
    if let Some(t) = cfg.tokens {
        if t.start == 0 || t.max < t.start {
            return Err(GovernError::Config(
                "token context needs 1 <= start <= max".into(),
            ));
        }
    }
    let grid = store.grid.clone();
    let power = sim.device.power;
    let mut adapt = AdaptationState::default();
    let mut out: Vec<GovernStep> = Vec::with_capacity(cfg.steps);
    let mut cache: HashMap<(u64, u64, u64), f64> = HashMap::new();
    let mut cached_ctx = None;

    for step in 0..cfg.steps {
        let t_d = cfg.deadline.at(step);
        let spec_now = spec_at(spec, cfg.tokens, step);
        let ctx = cfg.tokens.map(|t| t.at(step));
        if ctx != cached_ctx {
            cache.clear();
            cached_ctx = ctx;
        }
        let mut failure = None;
        let offset = if cfg.adaptation {
            adapt.clone()
        } else {
            AdaptationState::default()
        };
        let mut raw = |c: crate::types::Frequency, g: crate::types::Frequency| -> f64 {
            let key = (c.ghz().to_bits(), g.ghz().to_bits(), 0);
            if let Some(v) = cache.get(&key) {
                return *v;
            }
            match estimate_model(store, &spec_now, c, g) {
                Ok((t, _)) => {
                    cache.insert(key, t);
                    t
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::INFINITY
                }
            }
        };
        let d = search(
            cfg.policy,
            |c, g| calibrated_estimate(&offset, raw(c, g)).value,
            &grid,
            &power,
            t_d,
        );
        let raw_chosen = raw(d.f_c, d.f_g);
        if let Some(source) = failure {
            return Err(GovernError::Estimate {
                step,
                partial: out,
                source,
            });
        }
        let load = cfg.disturbance.filter(|x| x.active(step)).map(|x| x.load);
        let trace = match sim.run_model(&spec_now, d.f_c, d.f_g, load) {
            Ok(t) => t,
            Err(source) => {
                return Err(GovernError::Simulator {
                    step,
                    partial: out,
                    source,
                })
            }
        };
        let meas = trace.total_latency;
        out.push(GovernStep {
            step,
            f_c: d.f_c.ghz(),
            f_g: d.f_g.ghz(),
            pred_ms: calibrated_estimate(&offset, raw_chosen).value,
            meas_ms: meas,
            power_w: trace.avg_power,
            qos_flag: meas <= t_d,
            delta_t: offset.delta_t,
            deadline_ms: t_d,
            feasible: d.feasible,
        });
        if cfg.adaptation {
            adapt.observe(raw_chosen, meas);
        }
    }
    Ok(out)
}

/// Summary metrics of a run. Rates are items per second over the window;
/// power is time-weighted.
pub fn evaluate(steps: &[GovernStep]) -> Result<EvalReport, MetricError> {
    if steps.is_empty() {
        return Err(MetricError::Length(0, 0));
    }
    let n = steps.len() as f64;
    let meas: Vec<f64> = steps.iter().map(|s| s.meas_ms).collect();
    let pred: Vec<f64> = steps.iter().map(|s| s.pred_ms).collect();
    let busy: f64 = meas.iter().sum();
    let achieved_rate = n * 1000.0 / busy;
    let required_rate = n * 1000.0 / steps.iter().map(|s| s.deadline_ms).sum::<f64>();
    let avg_power = steps.iter().map(|s| s.power_w * s.meas_ms).sum::<f64>() / busy;
    let q = qos(achieved_rate, required_rate)?;
    Ok(EvalReport {
        mape: mape(&meas, &pred)?,
        qos: q,
        ppw: ppw(q, avg_power)?,
        avg_power,
        achieved_rate,
        required_rate,
        steps: steps.len(),
    })
}

pub fn steps_to_csv(steps: &[GovernStep]) -> String {
    let mut out = String::from(GOVERN_CSV_HEADER);
    out.push('\n');
    for s in steps {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.step,
            s.f_c,
            s.f_g,
            s.pred_ms,
            s.meas_ms,
            s.power_w,
            u8::from(s.qos_flag),
            s.delta_t,
            s.deadline_ms
        )
        .expect("write to string");
    }
    out
}

pub fn steps_from_csv(text: &str) -> Result<Vec<GovernStep>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == GOVERN_CSV_HEADER => {}
        Some(h) => return Err(format!("unexpected trace header \"{h}\"")),
        None => return Err("empty trace".into()),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = |what: &str| format!("trace line {}: {what}", i + 2);
        if f.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        let num = |j: usize| {
            f[j].trim()
                .parse::<f64>()
                .map_err(|_| bad("malformed number"))
        };
        out.push(GovernStep {
            step: f[0].trim().parse().map_err(|_| bad("malformed step"))?,
            f_c: num(1)?,
            f_g: num(2)?,
            pred_ms: num(3)?,
            meas_ms: num(4)?,
            power_w: num(5)?,
            qos_flag: match f[6].trim() {
                "1" => true,
                "0" => false,
                _ => return Err(bad("qos_flag must be 0 or 1")),
            },
            delta_t: num(7)?,
            deadline_ms: num(8)?,
            feasible: true,
        });
    }
    Ok(out)
}
