use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DeviceConfig, FeatureLaw};
use crate::layerfit::features::macs;
use crate::types::{keys, Frequency, LayerConfig, LayerType};

/// Coefficients of one interaction-gap branch: `k_c/f_c + k_g/f_g + b` (ms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaCoefficients {
    pub k_c: f64,
    pub k_g: f64,
    pub b: f64,
}

impl DeltaCoefficients {
    #[inline]
    pub fn eval(&self, f_c: f64, f_g: f64) -> f64 {
        self.k_c / f_c + self.k_g / f_g + self.b
    }
}

/// Hidden per-layer coefficients of the simulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLayerModel {
    pub layer_config: LayerConfig,
    pub k_c: f64,
    pub b_c: f64,
    pub k_g: f64,
    pub b_g: f64,
    pub delta_uns: DeltaCoefficients,
    pub delta_sat: DeltaCoefficients,
    pub breakpoint: Frequency,
}

impl GroundTruthLayerModel {
    pub fn cpu_ms(&self, f_c: Frequency) -> f64 {
        self.k_c / f_c.ghz() + self.b_c
    }

    pub fn gpu_ms(&self, f_g: Frequency) -> f64 {
        self.k_g / f_g.ghz() + self.b_g
    }

    /// Interaction gap; `f_c == breakpoint` is on the unsaturated side.
    pub fn delta_ms(&self, f_c: Frequency, f_g: Frequency) -> f64 {
        if f_c.ghz() <= self.breakpoint.ghz() {
            self.delta_uns.eval(f_c.ghz(), f_g.ghz())
        } else {
            self.delta_sat.eval(f_c.ghz(), f_g.ghz())
        }
    }

    pub fn total_ms(&self, f_c: Frequency, f_g: Frequency) -> f64 {
        self.cpu_ms(f_c) + self.gpu_ms(f_g) + self.delta_ms(f_c, f_g)
    }
}

/// splitmix64 finalizer over a combined word.
pub(crate) fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

// Per-type scale ranges for k = theta * (MACs / 1e6)^gamma, in GHz*ms.
fn theta_ranges(t: LayerType) -> ((f64, f64), (f64, f64)) {
    match t {
        LayerType::Convolution => ((0.05, 0.08), (0.006, 0.009)),
        LayerType::Linear => ((0.05, 0.08), (0.02, 0.03)),
        LayerType::Transformer => ((0.02, 0.03), (0.0015, 0.0025)),
    }
}

/// Identity of a layer for draws that do not depend on workload magnitude.
/// Transformer layers of the same shape share dispatch behaviour across
/// context lengths; only their MAC-driven coefficients change.
fn structural_key(config: &LayerConfig) -> String {
    let mut c = config.clone();
    if c.layer_type == LayerType::Transformer {
        c.params.remove(keys::CONTEXT_LENGTH);
    }
    c.canonical_json()
}

/// Derives the hidden coefficients of a layer; deterministic in
/// `(config, device.coefficient_seed)`.
pub fn generate_ground_truth(config: &LayerConfig, device: &DeviceConfig) -> GroundTruthLayerModel {
    let seed = device.coefficient_seed;
    let layer_type = config.layer_type;
    let law = device
        .feature_law_exponents
        .get(&layer_type)
        .copied()
        .unwrap_or(FeatureLaw { cpu: 0.4, gpu: 0.9 });

    let mut type_rng = ChaCha8Rng::seed_from_u64(mix(seed, fnv1a(layer_type.as_str().as_bytes())));
    let ((tc_lo, tc_hi), (tg_lo, tg_hi)) = theta_ranges(layer_type);
    let theta_c = type_rng.random_range(tc_lo..tc_hi);
    let theta_g = type_rng.random_range(tg_lo..tg_hi);

    let mega_macs = macs(config) / 1e6;
    let k_c = theta_c * mega_macs.powf(law.cpu);
    let k_g = theta_g * mega_macs.powf(law.gpu);

    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, fnv1a(structural_key(config).as_bytes())));
    let b_c = rng.random_range(0.01..0.05);
    let b_g = rng.random_range(0.01..0.05);

    let grid = &device.grid;
    let cpu = grid.cpu_levels();
    let gpu = grid.gpu_levels();
    let n = cpu.len();
    // Breakpoint is a CPU level in the middle 60% of the index range.
    let lo = ((0.2 * (n - 1) as f64).ceil() as usize).min(n - 1);
    let hi = ((0.8 * (n - 1) as f64).floor() as usize).max(lo);
    let breakpoint = cpu[rng.random_range(lo..=hi)];

    let rho_u = rng.random_range(0.3..0.6);
    let nu_u = rng.random_range(0.02..0.08);
    let rho_s = rng.random_range(0.01..0.04);
    let nu_s = rng.random_range(0.005..0.02);
    let eta = rng.random_range(0.4..0.8);
    let gap = rng.random_range(-0.05..0.05);

    let f_cmax = grid.cpu_max().ghz();
    let f_gmid = gpu[gpu.len() / 2].ghz();
    let f_hat = breakpoint.ghz();

    let delta_sat = DeltaCoefficients {
        k_c: rho_s * k_c,
        k_g: nu_s * k_c,
        b: -eta * k_c / f_cmax,
    };
    let at_break = delta_sat.eval(f_hat, f_gmid);
    let uns_slope = DeltaCoefficients {
        k_c: rho_u * k_c,
        k_g: nu_u * k_c,
        b: 0.0,
    };
    let delta_uns = DeltaCoefficients {
        b: at_break + gap * at_break.abs() - uns_slope.eval(f_hat, f_gmid),
        ..uns_slope
    };

    GroundTruthLayerModel {
        layer_config: config.clone(),
        k_c,
        b_c,
        k_g,
        b_g,
        delta_uns,
        delta_sat,
        breakpoint,
    }
}
