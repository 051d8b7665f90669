use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::delta::{detect_breakpoint, fit_delta, BreakpointFit, DeltaSample};
use super::features::{featureize, select_features, FeatureSelector, SELECTED_FEATURES};
use super::processor::fit_processor_model;
use super::regress::{log_inputs, RegressorKind, TargetModel};
use super::FitError;
use crate::devicesim::DeltaCoefficients;
use crate::profiler::ProfileDataset;
use crate::types::{Frequency, FrequencyGrid, LayerConfig, LayerType, ProfileSample};

/// Coefficient order used by the regressor and by [`CoefficientSet::to_array`].
pub const COEFFICIENT_NAMES: [&str; 11] = [
    "k_c",
    "b_c",
    "k_g",
    "b_g",
    "k_uc",
    "k_ug",
    "b_u",
    "k_sc",
    "k_sg",
    "b_s",
    "breakpoint",
];

pub const STORE_SCHEMA_VERSION: u32 = 1;

/// Relative error allowed when reproducing a training config's coefficients.
pub const TRAINING_TOLERANCE: f64 = 0.15;

#[cfg(test)]
const ABS_FLOOR: f64 = 1e-3;

/// Fitted per-layer estimator coefficients (GHz·ms and ms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub k_c: f64,
    pub b_c: f64,
    pub k_g: f64,
    pub b_g: f64,
    pub delta_uns: DeltaCoefficients,
    pub delta_sat: DeltaCoefficients,
    pub breakpoint: Frequency,
    /// RMS error of the fitted total over the training samples, ms.
    pub fit_residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<BreakpointFit>,
}

/// Per-layer estimate at one frequency pair, ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerEstimate {
    pub cpu_ms: f64,
    pub gpu_ms: f64,
    pub delta_ms: f64,
    pub total_ms: f64,
}

impl CoefficientSet {
    pub fn to_array(&self) -> [f64; 11] {
        [
            self.k_c,
            self.b_c,
            self.k_g,
            self.b_g,
            self.delta_uns.k_c,
            self.delta_uns.k_g,
            self.delta_uns.b,
            self.delta_sat.k_c,
            self.delta_sat.k_g,
            self.delta_sat.b,
            self.breakpoint.ghz(),
        ]
    }

    pub fn estimate(&self, f_c: Frequency, f_g: Frequency) -> LayerEstimate {
        let (c, g) = (f_c.ghz(), f_g.ghz());
        let cpu_ms = self.k_c / c + self.b_c;
        let gpu_ms = self.k_g / g + self.b_g;
        let branch = if c <= self.breakpoint.ghz() {
            &self.delta_uns
        } else {
            &self.delta_sat
        };
        let delta_ms = branch.eval(c, g);
        LayerEstimate {
            cpu_ms,
            gpu_ms,
            delta_ms,
            total_ms: cpu_ms + gpu_ms + delta_ms,
        }
    }
}

/// Fits processor models, the breakpoint and both gap branches for the
/// samples of a single configuration.
pub fn fit_coefficient_set(samples: &[&ProfileSample]) -> Result<CoefficientSet, FitError> {
    let cpu: Vec<_> = samples.iter().map(|s| (s.f_c, s.cpu_ms)).collect();
    let gpu: Vec<_> = samples.iter().map(|s| (s.f_g, s.gpu_ms)).collect();
    let cpu_fit = fit_processor_model(&cpu)?;
    let gpu_fit = fit_processor_model(&gpu)?;
    let deltas: Vec<DeltaSample> = samples
        .iter()
        .map(|s| DeltaSample {
            f_c: s.f_c.ghz(),
            f_g: s.f_g.ghz(),
            delta: s.delta_ms,
        })
        .collect();
    let bp = detect_breakpoint(&deltas)?;
    let (delta_uns, delta_sat) = fit_delta(&deltas, bp.breakpoint)?;
    let mut set = CoefficientSet {
        k_c: cpu_fit.k,
        b_c: cpu_fit.b,
        k_g: gpu_fit.k,
        b_g: gpu_fit.b,
        delta_uns,
        delta_sat,
        breakpoint: bp.breakpoint,
        fit_residual: 0.0,
        diagnostics: Some(bp),
    };
    let sq: f64 = samples
        .iter()
        .map(|s| (set.estimate(s.f_c, s.f_g).total_ms - s.total_ms).powi(2))
        .sum();
    set.fit_residual = (sq / samples.len() as f64).sqrt();
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedConfig {
    pub config: LayerConfig,
    pub coefficients: CoefficientSet,
}

/// Estimator for every configuration of one layer type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTypeEstimator {
    pub layer_type: LayerType,
    pub regressor_kind: RegressorKind,
    pub grid: FrequencyGrid,
    pub feature_selector: FeatureSelector,
    /// One model per selected feature, over log raw features.
    pub config_parser: Vec<TargetModel>,
    /// One model per entry of [`COEFFICIENT_NAMES`], over log selected features.
    pub coeff_regressor: Vec<TargetModel>,
    pub training: Vec<TrainedConfig>,
}

#[cfg(test)]
fn within_tolerance(pred: f64, want: f64) -> bool {
    (pred - want).abs() <= TRAINING_TOLERANCE * want.abs() + ABS_FLOOR
}

fn fit_targets(
    kind: RegressorKind,
    x: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<Vec<TargetModel>, FitError> {
    targets
        .iter()
        .map(|y| TargetModel::fit(kind, x, y))
        .collect()
}

fn transpose(rows: &[Vec<f64>], width: usize) -> Vec<Vec<f64>> {
    (0..width)
        .map(|j| rows.iter().map(|r| r[j]).collect())
        .collect()
}

impl LayerTypeEstimator {
    /// Workload fingerprint the parser predicts for a configuration.
    pub fn parse_features(&self, config: &LayerConfig) -> Vec<f64> {
        let x = log_inputs(&featureize(config).values);
        self.config_parser
            .iter()
            .map(|m| m.predict(&x).max(0.0))
            .collect()
    }

    /// Coefficients from the config parser and coefficient regressor,
    /// ignoring any directly fitted set.
    pub fn predict_coefficients(&self, config: &LayerConfig) -> CoefficientSet {
        let x = log_inputs(&self.parse_features(config));
        let v: Vec<f64> = self.coeff_regressor.iter().map(|m| m.predict(&x)).collect();
        let residual = self
            .training
            .iter()
            .map(|t| t.coefficients.fit_residual)
            .sum::<f64>()
            / self.training.len().max(1) as f64;
        CoefficientSet {
            k_c: v[0].max(0.0),
            b_c: v[1],
            k_g: v[2].max(0.0),
            b_g: v[3],
            delta_uns: DeltaCoefficients {
                k_c: v[4],
                k_g: v[5],
                b: v[6],
            },
            delta_sat: DeltaCoefficients {
                k_c: v[7],
                k_g: v[8],
                b: v[9],
            },
            breakpoint: self.grid.snap_cpu(v[10]),
            fit_residual: residual,
            diagnostics: None,
        }
    }

    /// Directly fitted coefficients for a profiled configuration, otherwise
    /// the regressed ones.
    pub fn coefficients_for(&self, config: &LayerConfig) -> CoefficientSet {
        self.training
            .iter()
            .find(|t| &t.config == config)
            .map(|t| t.coefficients.clone())
            .unwrap_or_else(|| self.predict_coefficients(config))
    }
}

/// Fits every configuration of `layer_type` in the dataset and trains the
/// parser and coefficient regressors across them.
pub fn build_layer_estimator(
    dataset: &ProfileDataset,
    layer_type: LayerType,
    kind: RegressorKind,
) -> Result<LayerTypeEstimator, FitError> {
    let mut groups: BTreeMap<&LayerConfig, Vec<&ProfileSample>> = BTreeMap::new();
    for s in dataset
        .samples
        .iter()
        .filter(|s| s.layer_config.layer_type == layer_type)
    {
        groups.entry(&s.layer_config).or_default().push(s);
    }
    if groups.len() < 3 {
        return Err(FitError::TooFewConfigs {
            layer_type,
            found: groups.len(),
        });
    }
    let mut training = Vec::with_capacity(groups.len());
    for (config, samples) in &groups {
        let coefficients = fit_coefficient_set(samples).map_err(|e| FitError::Config {
            config: config.canonical_json(),
            source: Box::new(e),
        })?;
        training.push(TrainedConfig {
            config: (*config).clone(),
            coefficients,
        });
    }
    let feature_selector = select_features(dataset, layer_type)?;

    let raw: Vec<Vec<f64>> = training
        .iter()
        .map(|t| featureize(&t.config).values)
        .collect();
    let raw_log: Vec<Vec<f64>> = raw.iter().map(|r| log_inputs(r)).collect();
    let selected: Vec<Vec<f64>> = raw
        .iter()
        .map(|r| feature_selector.indices.iter().map(|&i| r[i]).collect())
        .collect();
    let config_parser = fit_targets(
        kind,
        &raw_log,
        &transpose(&selected, feature_selector.indices.len()),
    )?;

    let sel_log: Vec<Vec<f64>> = selected.iter().map(|r| log_inputs(r)).collect();
    let coeffs: Vec<Vec<f64>> = training
        .iter()
        .map(|t| t.coefficients.to_array().to_vec())
        .collect();
    let coeff_regressor =
        fit_targets(kind, &sel_log, &transpose(&coeffs, COEFFICIENT_NAMES.len()))?;
    debug_assert!(feature_selector.indices.len() <= SELECTED_FEATURES);

    Ok(LayerTypeEstimator {
        layer_type,
        regressor_kind: kind,
        grid: dataset.grid.clone(),
        feature_selector,
        config_parser,
        coeff_regressor,
        training,
    })
}

/// Per-layer estimate; the unsaturated branch applies at `f_c == breakpoint`.
pub fn estimate_layer(
    est: &LayerTypeEstimator,
    config: &LayerConfig,
    f_c: Frequency,
    f_g: Frequency,
) -> Result<LayerEstimate, FitError> {
    if est.layer_type != config.layer_type {
        return Err(FitError::UntrainedLayerType(config.layer_type));
    }
    Ok(est.coefficients_for(config).estimate(f_c, f_g))
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed coefficient store: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("coefficient store schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
}

/// Trained estimators for every layer type of a device, as persisted JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStore {
    pub schema_version: u32,
    pub device_id: String,
    pub grid: FrequencyGrid,
    pub estimators: BTreeMap<LayerType, LayerTypeEstimator>,
}

impl EstimatorStore {
    /// Trains one estimator per layer type present in the dataset.
    pub fn build(dataset: &ProfileDataset, kind: RegressorKind) -> Result<Self, FitError> {
        let mut estimators = BTreeMap::new();
        for t in LayerType::ALL {
            if dataset
                .samples
                .iter()
                .any(|s| s.layer_config.layer_type == t)
            {
                estimators.insert(t, build_layer_estimator(dataset, t, kind)?);
            }
        }
        Ok(Self {
            schema_version: STORE_SCHEMA_VERSION,
            device_id: dataset.device_id.clone(),
            grid: dataset.grid.clone(),
            estimators,
        })
    }

    pub fn estimator(&self, layer_type: LayerType) -> Result<&LayerTypeEstimator, FitError> {
        self.estimators
            .get(&layer_type)
            .ok_or(FitError::UntrainedLayerType(layer_type))
    }

    pub fn estimate_layer(
        &self,
        config: &LayerConfig,
        f_c: Frequency,
        f_g: Frequency,
    ) -> Result<LayerEstimate, FitError> {
        estimate_layer(self.estimator(config.layer_type)?, config, f_c, f_g)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("store serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        #[derive(Deserialize)]
        struct Header {
            schema_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.schema_version != STORE_SCHEMA_VERSION {
            return Err(StoreError::SchemaVersion {
                found: header.schema_version,
                expected: STORE_SCHEMA_VERSION,
            });
        }
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devicesim::{DeviceConfig, DeviceSimulator};
    use crate::profiler::{run_campaign, SamplingPlan};

    fn grid() -> FrequencyGrid {
        FrequencyGrid::linear(12, (0.2, 2.2), 5, (0.3, 1.3)).unwrap()
    }

    fn conv_configs() -> Vec<LayerConfig> {
        vec![
            LayerConfig::conv(56, 56, 64, 64, 3, 1),
            LayerConfig::conv(28, 28, 128, 128, 3, 1),
            LayerConfig::conv(14, 14, 256, 256, 3, 1),
            LayerConfig::conv(112, 112, 32, 64, 3, 2),
        ]
    }

    fn dataset(jitter: f64, plan: SamplingPlan) -> (ProfileDataset, DeviceSimulator) {
        let device = DeviceConfig::generate(11, grid(), jitter);
        let mut sim = DeviceSimulator::new(device, 5);
        let ds = run_campaign(&mut sim, &conv_configs(), &grid(), &plan).unwrap();
        (ds, sim)
    }

    #[test]
    fn estimate_sums_parts() {
        let mut set = CoefficientSet {
            k_c: 2.0,
            b_c: 0.0,
            k_g: 3.0,
            b_g: 0.0,
            delta_uns: DeltaCoefficients {
                k_c: 0.0,
                k_g: 0.0,
                b: -1.2,
            },
            delta_sat: DeltaCoefficients {
                k_c: 0.0,
                k_g: 0.0,
                b: 7.0,
            },
            breakpoint: Frequency::new(1.0).unwrap(),
            fit_residual: 0.0,
            diagnostics: None,
        };
        let one = Frequency::new(1.0).unwrap();
        let e = set.estimate(one, one);
        assert_eq!((e.cpu_ms, e.gpu_ms, e.delta_ms), (2.0, 3.0, -1.2));
        assert!((e.total_ms - 3.8).abs() < 1e-12);
        set.breakpoint = Frequency::new(0.9).unwrap();
        assert_eq!(set.estimate(one, one).delta_ms, 7.0);
    }

    #[test]
    fn noiseless_dense_fit_is_exact() {
        let (ds, mut sim) = dataset(0.0, SamplingPlan::dense(1));
        let est = build_layer_estimator(&ds, LayerType::Convolution, RegressorKind::Ridge).unwrap();
        for t in &est.training {
            let gt = sim.ground_truth(&t.config);
            let c = &t.coefficients;
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
            assert!(rel(c.k_c, gt.k_c) < 1e-9 && rel(c.b_c, gt.b_c) < 1e-9);
            assert!(rel(c.k_g, gt.k_g) < 1e-9 && rel(c.b_g, gt.b_g) < 1e-9);
            assert_eq!(c.breakpoint, gt.breakpoint);
            let d = c.diagnostics.unwrap();
            assert!(d.sse_two_branch <= d.sse_single_branch);
        }
    }

    #[test]
    fn training_configs_are_reproduced() {
        let (ds, _) = dataset(0.03, SamplingPlan::sparse(20));
        let est = build_layer_estimator(&ds, LayerType::Convolution, RegressorKind::Ridge).unwrap();
        for t in &est.training {
            let got = est.coefficients_for(&t.config).to_array();
            let want = t.coefficients.to_array();
            for (i, (g, w)) in got.iter().zip(&want).enumerate() {
                assert!(
                    within_tolerance(*g, *w),
                    "{}: {g} vs {w}",
                    COEFFICIENT_NAMES[i]
                );
            }
            // the workload-driven slopes are also recovered through the regressor
            let p = est.predict_coefficients(&t.config);
            assert!(
                within_tolerance(p.k_c, t.coefficients.k_c),
                "{} vs {}",
                p.k_c,
                t.coefficients.k_c
            );
            assert!(
                within_tolerance(p.k_g, t.coefficients.k_g),
                "{} vs {}",
                p.k_g,
                t.coefficients.k_g
            );
        }
    }

    #[test]
    fn too_few_configs() {
        let device = DeviceConfig::generate(1, grid(), 0.0);
        let mut sim = DeviceSimulator::new(device, 1);
        let ds = run_campaign(
            &mut sim,
            &conv_configs()[..2],
            &grid(),
            &SamplingPlan::dense(1),
        )
        .unwrap();
        assert!(matches!(
            build_layer_estimator(&ds, LayerType::Convolution, RegressorKind::Ridge),
            Err(FitError::TooFewConfigs { found: 2, .. })
        ));
    }

    #[test]
    fn wrong_layer_type_is_untrained() {
        let (ds, _) = dataset(0.0, SamplingPlan::sparse(1));
        let store = EstimatorStore::build(&ds, RegressorKind::Ridge).unwrap();
        let one = Frequency::new(grid().cpu_max().ghz()).unwrap();
        assert!(matches!(
            store.estimate_layer(&LayerConfig::linear(4, 4), one, grid().gpu_max()),
            Err(FitError::UntrainedLayerType(LayerType::Linear))
        ));
    }

    #[test]
    fn store_round_trips_and_checks_version() {
        let (ds, _) = dataset(0.03, SamplingPlan::sparse(2));
        let store = EstimatorStore::build(&ds, RegressorKind::Ridge).unwrap();
        let text = store.to_json();
        let back = EstimatorStore::from_json(&text).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.to_json(), text);
        let bumped = text.replacen("\"schema_version\": 1", "\"schema_version\": 9", 1);
        assert!(matches!(
            EstimatorStore::from_json(&bumped),
            Err(StoreError::SchemaVersion { found: 9, .. })
        ));
    }
}
