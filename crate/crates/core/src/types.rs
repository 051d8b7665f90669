//! Shared domain types: frequencies, grids, layer configurations, model specs
//! and profile samples.
//!
//! Units are fixed across the crate: frequencies in GHz, durations in
//! milliseconds, power in watts.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::layerfit::WorkloadFeatures;

/// Tolerance used when checking `total = cpu + gpu + delta` on recorded samples.
pub const RECORD_TOLERANCE_MS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("frequency must be a positive finite value in GHz, got {0}")]
    InvalidFrequency(f64),
    #[error("{axis} frequency levels must be non-empty")]
    EmptyGrid { axis: &'static str },
    #[error("{axis} frequency levels must be strictly ascending (index {index})")]
    UnsortedGrid { axis: &'static str, index: usize },
    #[error("empty model")]
    EmptyModel,
    #[error("layer {layer}: missing required key \"{key}\"")]
    MissingKey { layer: usize, key: String },
    #[error("layer {layer}: key \"{key}\" must be a positive integer")]
    InvalidKey { layer: usize, key: String },
    #[error("layer {layer}: unexpected key \"{key}\" for {layer_type} layer")]
    UnknownKey {
        layer: usize,
        key: String,
        layer_type: LayerType,
    },
    #[error("{axis} frequency {value} GHz is not on the device grid")]
    OffGrid { axis: &'static str, value: f64 },
}

/// An operating frequency in GHz.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Frequency(f64);

impl Frequency {
    pub fn new(ghz: f64) -> Result<Self, CoreError> {
        if ghz.is_finite() && ghz > 0.0 {
            Ok(Self(ghz))
        } else {
            Err(CoreError::InvalidFrequency(ghz))
        }
    }

    #[inline]
    pub fn ghz(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Frequency {
    type Error = CoreError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<Frequency> for f64 {
    fn from(f: Frequency) -> f64 {
        f.0
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} GHz", self.0)
    }
}

/// The discrete CPU and GPU operating points of a device.
///
/// Both axes are strictly ascending and non-empty. Pair iteration is
/// CPU-major: all GPU levels for the lowest CPU level first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct FrequencyGrid {
    cpu_levels: Vec<Frequency>,
    gpu_levels: Vec<Frequency>,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    cpu_levels: Vec<Frequency>,
    gpu_levels: Vec<Frequency>,
}

impl TryFrom<RawGrid> for FrequencyGrid {
    type Error = CoreError;

    fn try_from(raw: RawGrid) -> Result<Self, Self::Error> {
        FrequencyGrid::new(raw.cpu_levels, raw.gpu_levels)
    }
}

impl From<FrequencyGrid> for RawGrid {
    fn from(g: FrequencyGrid) -> Self {
        RawGrid {
            cpu_levels: g.cpu_levels,
            gpu_levels: g.gpu_levels,
        }
    }
}

fn check_axis(axis: &'static str, levels: &[Frequency]) -> Result<(), CoreError> {
    if levels.is_empty() {
        return Err(CoreError::EmptyGrid { axis });
    }
    for (i, w) in levels.windows(2).enumerate() {
        if w[1].ghz() <= w[0].ghz() {
            return Err(CoreError::UnsortedGrid { axis, index: i + 1 });
        }
    }
    Ok(())
}

impl FrequencyGrid {
    pub fn new(cpu_levels: Vec<Frequency>, gpu_levels: Vec<Frequency>) -> Result<Self, CoreError> {
        check_axis("cpu", &cpu_levels)?;
        check_axis("gpu", &gpu_levels)?;
        Ok(Self {
            cpu_levels,
            gpu_levels,
        })
    }

    /// Builds a grid from raw GHz values.
    pub fn from_ghz(cpu: &[f64], gpu: &[f64]) -> Result<Self, CoreError> {
        let cpu = cpu
            .iter()
            .map(|&v| Frequency::new(v))
            .collect::<Result<_, _>>()?;
        let gpu = gpu
            .iter()
            .map(|&v| Frequency::new(v))
            .collect::<Result<_, _>>()?;
        Self::new(cpu, gpu)
    }

    /// Evenly spaced levels over `[cpu_min, cpu_max]` x `[gpu_min, gpu_max]`.
    pub fn linear(
        cpu_count: usize,
        (cpu_min, cpu_max): (f64, f64),
        gpu_count: usize,
        (gpu_min, gpu_max): (f64, f64),
    ) -> Result<Self, CoreError> {
        fn axis(n: usize, lo: f64, hi: f64) -> Vec<f64> {
            match n {
                0 => Vec::new(),
                1 => vec![hi],
                _ => (0..n)
                    .map(|i| round_ghz(lo + (hi - lo) * i as f64 / (n - 1) as f64))
                    .collect(),
            }
        }
        Self::from_ghz(
            &axis(cpu_count, cpu_min, cpu_max),
            &axis(gpu_count, gpu_min, gpu_max),
        )
    }

    pub fn cpu_levels(&self) -> &[Frequency] {
        &self.cpu_levels
    }

    pub fn gpu_levels(&self) -> &[Frequency] {
        &self.gpu_levels
    }

    pub fn cpu_max(&self) -> Frequency {
        *self.cpu_levels.last().expect("non-empty grid")
    }

    pub fn gpu_max(&self) -> Frequency {
        *self.gpu_levels.last().expect("non-empty grid")
    }

    pub fn cpu_min(&self) -> Frequency {
        self.cpu_levels[0]
    }

    pub fn gpu_min(&self) -> Frequency {
        self.gpu_levels[0]
    }

    /// All `(f_c, f_g)` pairs, CPU-major ascending.
    pub fn pairs(&self) -> impl Iterator<Item = (Frequency, Frequency)> + '_ {
        self.cpu_levels
            .iter()
            .flat_map(move |&c| self.gpu_levels.iter().map(move |&g| (c, g)))
    }

    pub fn cpu_index(&self, f: Frequency) -> Option<usize> {
        level_index(&self.cpu_levels, f)
    }

    pub fn gpu_index(&self, f: Frequency) -> Option<usize> {
        level_index(&self.gpu_levels, f)
    }

    pub fn check_on_grid(&self, f_c: Frequency, f_g: Frequency) -> Result<(), CoreError> {
        if self.cpu_index(f_c).is_none() {
            return Err(CoreError::OffGrid {
                axis: "cpu",
                value: f_c.ghz(),
            });
        }
        if self.gpu_index(f_g).is_none() {
            return Err(CoreError::OffGrid {
                axis: "gpu",
                value: f_g.ghz(),
            });
        }
        Ok(())
    }

    /// Nearest CPU level to an arbitrary frequency value; ties go to the lower level.
    pub fn snap_cpu(&self, ghz: f64) -> Frequency {
        let mut best = self.cpu_levels[0];
        for &level in &self.cpu_levels[1..] {
            if (level.ghz() - ghz).abs() < (best.ghz() - ghz).abs() {
                best = level;
            }
        }
        best
    }
}

/// Rounds a GHz value to 1e-9 so that generated grids serialize cleanly.
fn round_ghz(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

fn level_index(levels: &[Frequency], f: Frequency) -> Option<usize> {
    levels
        .iter()
        .position(|l| (l.ghz() - f.ghz()).abs() <= 1e-9 * l.ghz().max(1.0))
}

/// Number of distinct `(f_c, f_g)` operating points.
pub fn frequency_pair_count(grid: &FrequencyGrid) -> usize {
    grid.cpu_levels.len() * grid.gpu_levels.len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerType {
    Convolution,
    Linear,
    Transformer,
}

impl LayerType {
    pub const ALL: [LayerType; 3] = [
        LayerType::Convolution,
        LayerType::Linear,
        LayerType::Transformer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerType::Convolution => "convolution",
            LayerType::Linear => "linear",
            LayerType::Transformer => "transformer",
        }
    }

    /// Hyperparameter keys a config of this type must carry.
    pub fn required_keys(self) -> &'static [&'static str] {
        match self {
            LayerType::Convolution => &[
                keys::INPUT_HEIGHT,
                keys::INPUT_WIDTH,
                keys::INPUT_CHANNELS,
                keys::OUTPUT_CHANNELS,
                keys::KERNEL_SIZE,
                keys::STRIDE,
            ],
            LayerType::Linear => &[keys::INPUT_FEATURES, keys::OUTPUT_FEATURES],
            LayerType::Transformer => &[keys::EMBED_DIM, keys::NUM_HEADS, keys::CONTEXT_LENGTH],
        }
    }
}

impl fmt::Display for LayerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LayerType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "convolution" => Ok(LayerType::Convolution),
            "linear" => Ok(LayerType::Linear),
            "transformer" => Ok(LayerType::Transformer),
            other => Err(format!("unknown layer type \"{other}\"")),
        }
    }
}

/// Parameter key names.
pub mod keys {
    pub const INPUT_HEIGHT: &str = "input_height";
    pub const INPUT_WIDTH: &str = "input_width";
    pub const INPUT_CHANNELS: &str = "input_channels";
    pub const OUTPUT_CHANNELS: &str = "output_channels";
    pub const KERNEL_SIZE: &str = "kernel_size";
    pub const STRIDE: &str = "stride";
    pub const INPUT_FEATURES: &str = "input_features";
    pub const OUTPUT_FEATURES: &str = "output_features";
    pub const EMBED_DIM: &str = "embed_dim";
    pub const NUM_HEADS: &str = "num_heads";
    pub const CONTEXT_LENGTH: &str = "context_length";
}

/// Static hyperparameters of one layer. Keys are kept sorted.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LayerConfig {
    pub layer_type: LayerType,
    pub params: BTreeMap<String, u64>,
}

impl LayerConfig {
    pub fn new<'a>(
        layer_type: LayerType,
        params: impl IntoIterator<Item = (&'a str, u64)>,
    ) -> Self {
        Self {
            layer_type,
            params: params.into_iter().map(|(k, v)| (k.to_owned(), v)).collect(),
        }
    }

    pub fn conv(h: u64, w: u64, cin: u64, cout: u64, k: u64, stride: u64) -> Self {
        Self::new(
            LayerType::Convolution,
            [
                (keys::INPUT_HEIGHT, h),
                (keys::INPUT_WIDTH, w),
                (keys::INPUT_CHANNELS, cin),
                (keys::OUTPUT_CHANNELS, cout),
                (keys::KERNEL_SIZE, k),
                (keys::STRIDE, stride),
            ],
        )
    }

    pub fn linear(input: u64, output: u64) -> Self {
        Self::new(
            LayerType::Linear,
            [
                (keys::INPUT_FEATURES, input),
                (keys::OUTPUT_FEATURES, output),
            ],
        )
    }

    pub fn transformer(embed: u64, heads: u64, context: u64) -> Self {
        Self::new(
            LayerType::Transformer,
            [
                (keys::EMBED_DIM, embed),
                (keys::NUM_HEADS, heads),
                (keys::CONTEXT_LENGTH, context),
            ],
        )
    }

    /// Looks up a parameter. Panics if absent; call on validated configs only.
    pub fn param(&self, key: &str) -> u64 {
        self.params[key]
    }

    /// Context length for transformer layers, 0 otherwise.
    pub fn context(&self) -> u64 {
        match self.layer_type {
            LayerType::Transformer => self.params.get(keys::CONTEXT_LENGTH).copied().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn with_context(&self, context: u64) -> Self {
        let mut c = self.clone();
        c.params.insert(keys::CONTEXT_LENGTH.to_owned(), context);
        c
    }

    pub fn validate(&self, layer: usize) -> Result<(), CoreError> {
        let required = self.layer_type.required_keys();
        for key in required {
            match self.params.get(*key) {
                None => {
                    return Err(CoreError::MissingKey {
                        layer,
                        key: (*key).to_owned(),
                    })
                }
                Some(0) => {
                    return Err(CoreError::InvalidKey {
                        layer,
                        key: (*key).to_owned(),
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.params.keys().find(|k| !required.contains(&k.as_str())) {
            return Err(CoreError::UnknownKey {
                layer,
                key: extra.clone(),
                layer_type: self.layer_type,
            });
        }
        Ok(())
    }

    /// Canonical single-line JSON used as a stable identity for the config.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("layer config serializes")
    }
}

/// A network as an ordered list of layers in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub layers: Vec<LayerConfig>,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }

    /// Distinct layer configs in first-appearance order.
    pub fn unique_configs(&self) -> Vec<LayerConfig> {
        let mut seen = std::collections::BTreeSet::new();
        self.layers
            .iter()
            .filter(|c| seen.insert((*c).clone()))
            .cloned()
            .collect()
    }
}

/// Checks every layer and returns the spec with normalized key ordering.
pub fn validate_model_spec(spec: ModelSpec) -> Result<ModelSpec, CoreError> {
    if spec.layers.is_empty() {
        return Err(CoreError::EmptyModel);
    }
    for (i, layer) in spec.layers.iter().enumerate() {
        layer.validate(i)?;
    }
    // BTreeMap already keeps params sorted.
    Ok(spec)
}

/// One averaged measurement of a layer at a frequency pair.
///
/// `delta_ms` is signed: negative when the GPU starts before the CPU finishes
/// preparing the layer, non-negative when the GPU idles waiting for dispatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSample {
    pub layer_config: LayerConfig,
    pub f_c: Frequency,
    pub f_g: Frequency,
    pub cpu_ms: f64,
    pub gpu_ms: f64,
    pub delta_ms: f64,
    pub total_ms: f64,
    pub features: Option<WorkloadFeatures>,
}

impl ProfileSample {
    /// Records a sample; the total is derived so the decomposition holds exactly.
    pub fn record(
        layer_config: LayerConfig,
        f_c: Frequency,
        f_g: Frequency,
        cpu_ms: f64,
        gpu_ms: f64,
        delta_ms: f64,
    ) -> Self {
        Self {
            layer_config,
            f_c,
            f_g,
            cpu_ms,
            gpu_ms,
            delta_ms,
            total_ms: cpu_ms + gpu_ms + delta_ms,
            features: None,
        }
    }

    pub fn is_consistent(&self) -> bool {
        (self.total_ms - (self.cpu_ms + self.gpu_ms + self.delta_ms)).abs() <= RECORD_TOLERANCE_MS
            && self.cpu_ms >= 0.0
            && self.gpu_ms >= 0.0
    }
}
