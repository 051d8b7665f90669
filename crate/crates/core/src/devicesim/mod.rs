//! Synthetic asynchronous CPU-GPU device.
//!
//! Each layer gets hidden ground-truth coefficients: inverse-frequency
//! processor times and a two-regime interaction gap split at a CPU
//! saturation frequency. The simulator executes layers on a back-to-back CPU
//! stream feeding a single GPU queue, with optional log-normal jitter and a
//! multiplicative slowdown that stands in for co-running workloads.

mod ground_truth;
mod trace;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    CoreError, Frequency, FrequencyGrid, LayerConfig, LayerType, ModelSpec, ProfileSample,
};

pub use ground_truth::{generate_ground_truth, DeltaCoefficients, GroundTruthLayerModel};
pub(crate) use trace::spans_to_csv;
pub use trace::{LayerSpan, SimTrace, TRACE_CSV_HEADER};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    OffGrid(#[from] CoreError),
    #[error("jitter sigma must be finite and non-negative, got {0}")]
    InvalidJitter(f64),
    #[error("disturbance load factor must be finite and > -1, got {0}")]
    InvalidDisturbance(f64),
    #[error("invalid power model: {0}")]
    InvalidPower(String),
}

/// Cubic-in-frequency system power: `p_static + a_c f_c^3 + a_g f_g^3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub p_static_w: f64,
    pub a_c_w_per_ghz3: f64,
    pub a_g_w_per_ghz3: f64,
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.p_static_w) && self.p_static_w > 0.0) {
            return Err(SimError::InvalidPower("p_static_w must be > 0".into()));
        }
        if !ok(self.a_c_w_per_ghz3) || !ok(self.a_g_w_per_ghz3) {
            return Err(SimError::InvalidPower(
                "dynamic coefficients must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Power draw in watts at a frequency pair.
pub fn measure_power(power: &PowerModel, f_c: f64, f_g: f64) -> f64 {
    power.p_static_w + power.a_c_w_per_ghz3 * f_c.powi(3) + power.a_g_w_per_ghz3 * f_g.powi(3)
}

/// Exponents of the power laws `k_c ~ MACs^cpu`, `k_g ~ MACs^gpu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureLaw {
    pub cpu: f64,
    pub gpu: f64,
}

pub fn default_feature_laws() -> BTreeMap<LayerType, FeatureLaw> {
    BTreeMap::from([
        (
            LayerType::Convolution,
            FeatureLaw {
                cpu: 0.35,
                gpu: 0.9,
            },
        ),
        (
            LayerType::Linear,
            FeatureLaw {
                cpu: 0.4,
                gpu: 0.85,
            },
        ),
        (
            LayerType::Transformer,
            FeatureLaw {
                cpu: 0.4,
                gpu: 0.85,
            },
        ),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub grid: FrequencyGrid,
    pub power: PowerModel,
    pub jitter_sigma: f64,
    pub coefficient_seed: u64,
    pub feature_law_exponents: BTreeMap<LayerType, FeatureLaw>,
}

impl DeviceConfig {
    /// A device with the given grid and a power model drawn from `seed`.
    pub fn generate(seed: u64, grid: FrequencyGrid, jitter_sigma: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(ground_truth::mix(seed, 0x90e5));
        let power = PowerModel {
            p_static_w: rng.random_range(3.0..8.0),
            a_c_w_per_ghz3: rng.random_range(0.1..0.3),
            a_g_w_per_ghz3: rng.random_range(4.0..10.0),
        };
        Self {
            grid,
            power,
            jitter_sigma,
            coefficient_seed: seed,
            feature_law_exponents: default_feature_laws(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.jitter_sigma.is_finite() && self.jitter_sigma >= 0.0) {
            return Err(SimError::InvalidJitter(self.jitter_sigma));
        }
        self.power.validate()
    }

    pub fn device_id(&self) -> String {
        format!(
            "sim-{}-{}x{}",
            self.coefficient_seed,
            self.grid.cpu_levels().len(),
            self.grid.gpu_levels().len()
        )
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("device config serializes")
    }
}

fn jitter_factor(sigma: f64, rng: &mut impl Rng) -> f64 {
    if sigma == 0.0 {
        1.0
    } else {
        LogNormal::new(0.0, sigma).expect("valid sigma").sample(rng)
    }
}

/// One noisy measurement of a layer. With `jitter_sigma == 0` the result is
/// exactly the model's value and the RNG is not touched.
pub fn simulate_layer(
    model: &GroundTruthLayerModel,
    device: &DeviceConfig,
    f_c: Frequency,
    f_g: Frequency,
    rng: &mut impl Rng,
) -> Result<ProfileSample, SimError> {
    device.grid.check_on_grid(f_c, f_g)?;
    let sigma = device.jitter_sigma;
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(SimError::InvalidJitter(sigma));
    }
    let cpu = model.cpu_ms(f_c) * jitter_factor(sigma, rng);
    let gpu = model.gpu_ms(f_g) * jitter_factor(sigma, rng);
    let delta = model.delta_ms(f_c, f_g) * jitter_factor(sigma, rng);
    Ok(ProfileSample::record(
        model.layer_config.clone(),
        f_c,
        f_g,
        cpu,
        gpu,
        delta,
    ))
}

/// Runs a model on the simulated device.
///
/// The CPU stream is back-to-back; a layer's GPU kernel becomes ready at
/// `cpu_end + delta` and starts once the GPU has drained the previous one.
pub fn simulate_model(
    spec: &ModelSpec,
    f_c: Frequency,
    f_g: Frequency,
    device: &DeviceConfig,
    disturbance: Option<f64>,
    rng: &mut impl Rng,
) -> Result<SimTrace, SimError> {
    let models: Vec<_> = spec
        .layers
        .iter()
        .map(|c| generate_ground_truth(c, device))
        .collect();
    simulate_models(&models, f_c, f_g, device, disturbance, rng)
}

/// As [`simulate_model`], over pre-generated ground-truth layers.
pub fn simulate_models(
    models: &[GroundTruthLayerModel],
    f_c: Frequency,
    f_g: Frequency,
    device: &DeviceConfig,
    disturbance: Option<f64>,
    rng: &mut impl Rng,
) -> Result<SimTrace, SimError> {
    let slowdown = match disturbance {
        None => 1.0,
        Some(load) if load.is_finite() && load > -1.0 => 1.0 + load,
        Some(load) => return Err(SimError::InvalidDisturbance(load)),
    };
    let mut layers = Vec::with_capacity(models.len());
    let mut cpu_clock = 0.0_f64;
    let mut gpu_free = f64::NEG_INFINITY;
    for model in models {
        let s = simulate_layer(model, device, f_c, f_g, rng)?;
        let cpu_start = cpu_clock;
        let cpu_end = cpu_start + s.cpu_ms * slowdown;
        let ready = cpu_end + s.delta_ms;
        let gpu_start = ready.max(gpu_free);
        let gpu_end = gpu_start + s.gpu_ms * slowdown;
        layers.push(LayerSpan {
            cpu_start,
            cpu_end,
            gpu_start,
            gpu_end,
        });
        cpu_clock = cpu_end;
        gpu_free = gpu_end;
    }
    let total_latency = layers.last().map(|l| l.gpu_end).unwrap_or(0.0);
    Ok(SimTrace {
        layers,
        total_latency,
        avg_power: measure_power(&device.power, f_c.ghz(), f_g.ghz()),
    })
}

/// A simulator instance owning its RNG.
#[derive(Debug, Clone)]
pub struct DeviceSimulator {
    pub device: DeviceConfig,
    rng: ChaCha8Rng,
    cache: BTreeMap<LayerConfig, GroundTruthLayerModel>,
}

impl DeviceSimulator {
    pub fn new(device: DeviceConfig, seed: u64) -> Self {
        Self {
            device,
            rng: ChaCha8Rng::seed_from_u64(seed),
            cache: BTreeMap::new(),
        }
    }

    pub fn ground_truth(&mut self, config: &LayerConfig) -> GroundTruthLayerModel {
        if let Some(m) = self.cache.get(config) {
            return m.clone();
        }
        let m = generate_ground_truth(config, &self.device);
        self.cache.insert(config.clone(), m.clone());
        m
    }

    pub fn measure_layer(
        &mut self,
        config: &LayerConfig,
        f_c: Frequency,
        f_g: Frequency,
    ) -> Result<ProfileSample, SimError> {
        let model = self.ground_truth(config);
        simulate_layer(&model, &self.device, f_c, f_g, &mut self.rng)
    }

    pub fn run_model(
        &mut self,
        spec: &ModelSpec,
        f_c: Frequency,
        f_g: Frequency,
        disturbance: Option<f64>,
    ) -> Result<SimTrace, SimError> {
        let models: Vec<_> = spec.layers.iter().map(|c| self.ground_truth(c)).collect();
        simulate_models(&models, f_c, f_g, &self.device, disturbance, &mut self.rng)
    }

    /// Jitter-free latency at a pair; leaves the RNG untouched.
    pub fn noiseless_latency(
        &mut self,
        spec: &ModelSpec,
        f_c: Frequency,
        f_g: Frequency,
    ) -> Result<f64, SimError> {
        let models: Vec<_> = spec.layers.iter().map(|c| self.ground_truth(c)).collect();
        let mut quiet = self.device.clone();
        quiet.jitter_sigma = 0.0;
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        Ok(simulate_models(&models, f_c, f_g, &quiet, None, &mut unused)?.total_latency)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LayerConfig;

    fn device(jitter: f64) -> DeviceConfig {
        let grid = FrequencyGrid::linear(29, (0.1, 2.2), 11, (0.3, 1.3)).unwrap();
        DeviceConfig::generate(42, grid, jitter)
    }

    fn f(v: f64) -> Frequency {
        Frequency::new(v).unwrap()
    }

    fn fixed_model(cpu: (f64, f64), gpu: (f64, f64), delta: f64) -> GroundTruthLayerModel {
        GroundTruthLayerModel {
            layer_config: LayerConfig::linear(8, 8),
            k_c: cpu.0,
            b_c: cpu.1,
            k_g: gpu.0,
            b_g: gpu.1,
            delta_uns: DeltaCoefficients {
                k_c: 0.0,
                k_g: 0.0,
                b: delta,
            },
            delta_sat: DeltaCoefficients {
                k_c: 0.0,
                k_g: 0.0,
                b: delta,
            },
            breakpoint: f(1.0),
        }
    }

    #[test]
    fn power_arithmetic() {
        let p = PowerModel {
            p_static_w: 5.0,
            a_c_w_per_ghz3: 1.0,
            a_g_w_per_ghz3: 2.0,
        };
        assert_eq!(measure_power(&p, 1.0, 1.0), 8.0);
        assert_eq!(measure_power(&p, 0.0, 1.5), 5.0 + 2.0 * 1.5f64.powi(3));
    }

    #[test]
    fn power_strictly_monotone_over_grid() {
        let d = device(0.0);
        let cpu = d.grid.cpu_levels();
        let gpu = d.grid.gpu_levels();
        for g in gpu {
            for w in cpu.windows(2) {
                assert!(
                    measure_power(&d.power, w[1].ghz(), g.ghz())
                        > measure_power(&d.power, w[0].ghz(), g.ghz())
                );
            }
        }
        for c in cpu {
            for w in gpu.windows(2) {
                assert!(
                    measure_power(&d.power, c.ghz(), w[1].ghz())
                        > measure_power(&d.power, c.ghz(), w[0].ghz())
                );
            }
        }
    }

    #[test]
    fn cpu_time_arithmetic_without_jitter() {
        let grid = FrequencyGrid::from_ghz(&[0.6, 1.2], &[1.0]).unwrap();
        let mut d = device(0.0);
        d.grid = grid;
        let mut m = fixed_model((2.4, 0.3), (1.0, 0.0), 0.0);
        m.breakpoint = f(0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = simulate_layer(&m, &d, f(1.2), f(1.0), &mut rng).unwrap();
        assert!((s.cpu_ms - 2.3).abs() < 1e-12);
    }

    #[test]
    fn below_breakpoint_uses_unsaturated_branch() {
        let d = device(0.0);
        let m = generate_ground_truth(&LayerConfig::conv(56, 56, 64, 64, 3, 1), &d);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f_c = d.grid.cpu_levels()[2];
        assert!(f_c.ghz() < m.breakpoint.ghz());
        let f_g = d.grid.gpu_levels()[5];
        let s = simulate_layer(&m, &d, f_c, f_g, &mut rng).unwrap();
        assert_eq!(s.delta_ms, m.delta_uns.eval(f_c.ghz(), f_g.ghz()));
        // boundary belongs to the unsaturated side
        let s = simulate_layer(&m, &d, m.breakpoint, f_g, &mut rng).unwrap();
        assert_eq!(s.delta_ms, m.delta_uns.eval(m.breakpoint.ghz(), f_g.ghz()));
    }

    #[test]
    fn off_grid_frequency_rejected() {
        let d = device(0.0);
        let m = generate_ground_truth(&LayerConfig::linear(64, 64), &d);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            simulate_layer(&m, &d, f(0.123), d.grid.gpu_max(), &mut rng),
            Err(SimError::OffGrid(_))
        ));
    }

    #[test]
    fn noiseless_simulation_is_bit_identical() {
        let d = device(0.0);
        let m = generate_ground_truth(&LayerConfig::linear(512, 1024), &d);
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        for (c, g) in d.grid.pairs() {
            let a = simulate_layer(&m, &d, c, g, &mut r1).unwrap();
            let b = simulate_layer(&m, &d, c, g, &mut r2).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn jittered_mean_converges() {
        let d = device(0.03);
        let m = generate_ground_truth(&LayerConfig::conv(28, 28, 128, 128, 3, 1), &d);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (fc, fg) = (d.grid.cpu_levels()[10], d.grid.gpu_levels()[4]);
        let n = 400;
        let mean = (0..n)
            .map(|_| simulate_layer(&m, &d, fc, fg, &mut rng).unwrap().cpu_ms)
            .sum::<f64>()
            / n as f64;
        let exact = m.cpu_ms(fc);
        assert!((mean - exact).abs() / exact < 0.01, "{mean} vs {exact}");
    }

    #[test]
    fn one_layer_without_gap_is_serial() {
        let d = device(0.0);
        let mut m = fixed_model((1.0, 0.5), (2.0, 0.25), 0.0);
        m.breakpoint = d.grid.cpu_levels()[5];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (fc, fg) = (d.grid.cpu_max(), d.grid.gpu_max());
        let t = simulate_models(std::slice::from_ref(&m), fc, fg, &d, None, &mut rng).unwrap();
        let expect = m.cpu_ms(fc) + m.gpu_ms(fg);
        assert!((t.total_latency - expect).abs() < 1e-12);
    }

    #[test]
    fn two_layer_gpu_busy_clamp() {
        // L1: cpu 1, gpu 2, delta +0.5; L2: cpu 1, gpu 1, delta -0.3
        let d = device(0.0);
        let (fc, fg) = (d.grid.cpu_max(), d.grid.gpu_max());
        let l1 = fixed_model((0.0, 1.0), (0.0, 2.0), 0.5);
        let l2 = fixed_model((0.0, 1.0), (0.0, 1.0), -0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = simulate_models(&[l1, l2], fc, fg, &d, None, &mut rng).unwrap();
        assert_eq!(t.layers[0].cpu_end, 1.0);
        assert_eq!(t.layers[1].cpu_end, 2.0);
        assert_eq!((t.layers[0].gpu_start, t.layers[0].gpu_end), (1.5, 3.5));
        assert_eq!((t.layers[1].gpu_start, t.layers[1].gpu_end), (3.5, 4.5));
        assert_eq!(t.total_latency, 4.5);
    }

    #[test]
    fn disturbance_slows_the_model_down() {
        let d = device(0.0);
        let spec = ModelSpec {
            name: "m".into(),
            layers: vec![
                LayerConfig::conv(56, 56, 64, 64, 3, 1),
                LayerConfig::linear(2048, 1000),
            ],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (fc, fg) = (d.grid.cpu_levels()[12], d.grid.gpu_levels()[6]);
        let base = simulate_model(&spec, fc, fg, &d, None, &mut rng).unwrap();
        let slow = simulate_model(&spec, fc, fg, &d, Some(0.5), &mut rng).unwrap();
        assert!(slow.total_latency > base.total_latency);
    }
}
