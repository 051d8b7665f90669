//! Sparse profiling campaigns.
//!
//! A campaign visits a strided subset of the frequency grid (always including
//! both ends of each axis), repeats each measurement, and stores the
//! per-field mean as one [`ProfileSample`]. Transformer layers are also swept
//! over context lengths.

mod dataset;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::devicesim::{DeviceSimulator, SimError};
use crate::layerfit::features::fingerprint;
use crate::types::{Frequency, FrequencyGrid, LayerConfig, LayerType, ProfileSample};

pub use dataset::{
    load_dataset, save_dataset, sidecar_path, DatasetError, ProfileDataset, DATASET_SCHEMA_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub cpu_stride: usize,
    pub gpu_stride: usize,
    pub context_stride: usize,
    pub iterations: usize,
    pub context_max: u64,
}

impl SamplingPlan {
    /// Stride 4 on both frequency axes, context stride 90 up to 1024.
    pub fn sparse(iterations: usize) -> Self {
        Self {
            cpu_stride: 4,
            gpu_stride: 4,
            context_stride: 90,
            iterations,
            context_max: 1024,
        }
    }

    pub fn dense(iterations: usize) -> Self {
        Self {
            cpu_stride: 1,
            gpu_stride: 1,
            context_stride: 1,
            iterations,
            context_max: 1024,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.cpu_stride == 0 || self.gpu_stride == 0 || self.context_stride == 0 {
            return Err("strides must be >= 1".into());
        }
        if self.iterations == 0 {
            return Err("iterations must be >= 1".into());
        }
        if self.context_max == 0 {
            return Err("context_max must be >= 1".into());
        }
        Ok(())
    }
}

fn axis_indices(len: usize, stride: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).step_by(stride.max(1)).collect();
    if idx.last() != Some(&(len - 1)) {
        idx.push(len - 1);
    }
    idx
}

/// Strided frequency pairs, CPU-major; both axis endpoints are always kept.
pub fn plan_points(grid: &FrequencyGrid, plan: &SamplingPlan) -> Vec<(Frequency, Frequency)> {
    let cpu = grid.cpu_levels();
    let gpu = grid.gpu_levels();
    let ci = axis_indices(cpu.len(), plan.cpu_stride);
    let gi = axis_indices(gpu.len(), plan.gpu_stride);
    ci.iter()
        .flat_map(|&c| gi.iter().map(move |&g| (cpu[c], gpu[g])))
        .collect()
}

/// Context lengths `1, 1 + s, 1 + 2s, ...` plus `context_max`.
pub fn context_points(plan: &SamplingPlan) -> Vec<u64> {
    let mut pts: Vec<u64> = (1..=plan.context_max)
        .step_by(plan.context_stride.max(1))
        .collect();
    if pts.last() != Some(&plan.context_max) {
        pts.push(plan.context_max);
    }
    pts
}

/// Expands transformer configs over the plan's context lengths; other
/// configs pass through. Duplicates are dropped, order is preserved.
pub fn expand_configs(configs: &[LayerConfig], plan: &SamplingPlan) -> Vec<LayerConfig> {
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for c in configs {
        let expanded = if c.layer_type == LayerType::Transformer {
            context_points(plan)
                .into_iter()
                .map(|n| c.with_context(n))
                .collect()
        } else {
            vec![c.clone()]
        };
        for e in expanded {
            if seen.insert(e.clone()) {
                out.push(e);
            }
        }
    }
    out
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("profile source failed: {0}")]
pub struct SourceError(pub String);

impl From<SimError> for SourceError {
    fn from(e: SimError) -> Self {
        SourceError(e.to_string())
    }
}

/// Anything that can time a layer at a frequency pair.
pub trait ProfileSource {
    fn device_id(&self) -> String;

    fn measure(
        &mut self,
        config: &LayerConfig,
        f_c: Frequency,
        f_g: Frequency,
    ) -> Result<ProfileSample, SourceError>;
}

impl ProfileSource for DeviceSimulator {
    fn device_id(&self) -> String {
        self.device.device_id()
    }

    fn measure(
        &mut self,
        config: &LayerConfig,
        f_c: Frequency,
        f_g: Frequency,
    ) -> Result<ProfileSample, SourceError> {
        Ok(self.measure_layer(config, f_c, f_g)?)
    }
}

/// Replays previously recorded samples, e.g. an imported trace file.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    id: String,
    samples: Vec<ProfileSample>,
}

impl ReplaySource {
    pub fn new(id: impl Into<String>, samples: Vec<ProfileSample>) -> Self {
        Self {
            id: id.into(),
            samples,
        }
    }
}

impl ProfileSource for ReplaySource {
    fn device_id(&self) -> String {
        self.id.clone()
    }

    fn measure(
        &mut self,
        config: &LayerConfig,
        f_c: Frequency,
        f_g: Frequency,
    ) -> Result<ProfileSample, SourceError> {
        self.samples
            .iter()
            .find(|s| &s.layer_config == config && s.f_c == f_c && s.f_g == f_g)
            .cloned()
            .ok_or_else(|| {
                SourceError(format!(
                    "no recorded sample for {} at ({}, {})",
                    config.canonical_json(),
                    f_c,
                    f_g
                ))
            })
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid sampling plan: {0}")]
    InvalidPlan(String),
    #[error("campaign aborted after {} samples: {source}", partial.samples.len())]
    Aborted {
        partial: Box<ProfileDataset>,
        source: SourceError,
    },
}

/// Profiles every config at every planned point, averaging `iterations` repeats.
pub fn run_campaign(
    source: &mut dyn ProfileSource,
    configs: &[LayerConfig],
    grid: &FrequencyGrid,
    plan: &SamplingPlan,
) -> Result<ProfileDataset, CampaignError> {
    plan.validate().map_err(CampaignError::InvalidPlan)?;
    let points = plan_points(grid, plan);
    let mut ds = ProfileDataset {
        device_id: source.device_id(),
        grid: grid.clone(),
        plan: *plan,
        created_at: dataset::now_unix(),
        complete: false,
        samples: Vec::new(),
    };
    for config in expand_configs(configs, plan) {
        let features = fingerprint(&config);
        for &(f_c, f_g) in &points {
            let (mut cpu, mut gpu, mut delta) = (0.0, 0.0, 0.0);
            for _ in 0..plan.iterations {
                match source.measure(&config, f_c, f_g) {
                    Ok(s) => {
                        cpu += s.cpu_ms;
                        gpu += s.gpu_ms;
                        delta += s.delta_ms;
                    }
                    Err(e) => {
                        return Err(CampaignError::Aborted {
                            partial: Box::new(ds),
                            source: e,
                        })
                    }
                }
            }
            let n = plan.iterations as f64;
            let mut sample =
                ProfileSample::record(config.clone(), f_c, f_g, cpu / n, gpu / n, delta / n);
            sample.features = Some(features.clone());
            ds.samples.push(sample);
        }
    }
    ds.complete = true;
    Ok(ds)
}
