//! Workload descriptors standing in for hardware performance counters.
//!
//! Real counters (instructions, cache misses, memory transactions) are not
//! available off-device, so each layer is fingerprinted with analytic
//! quantities derived from its hyperparameters: MAC count, bytes moved,
//! arithmetic intensity and a few type-specific products. Every raw vector
//! starts with the same ten generic descriptors, followed by four
//! type-specific ones.

use serde::{Deserialize, Serialize};

use crate::layerfit::FitError;
use crate::profiler::ProfileDataset;
use crate::types::{keys, LayerConfig, LayerType};

/// Number of features retained after correlation ranking.
pub const SELECTED_FEATURES: usize = 10;
/// Length of every raw feature vector.
pub const RAW_FEATURES: usize = 14;

const BYTES_PER_ELEMENT: f64 = 4.0;

const COMMON_NAMES: [&str; 10] = [
    "macs",
    "params",
    "input_bytes",
    "output_bytes",
    "weight_bytes",
    "total_bytes",
    "arithmetic_intensity",
    "flops",
    "output_elements",
    "input_elements",
];

const CONV_NAMES: [&str; 4] = [
    "kernel_area_x_cin",
    "kernel_area_x_cin_x_cout",
    "output_spatial",
    "kernel_area",
];
const LINEAR_NAMES: [&str; 4] = [
    "input_features",
    "output_features",
    "in_x_out",
    "in_plus_out",
];
const TRANSFORMER_NAMES: [&str; 4] = [
    "context_sq_x_heads",
    "context_x_embed",
    "attention_score_macs",
    "embed_sq",
];

/// Full descriptor vector for one layer configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatures {
    pub values: Vec<f64>,
    pub names: Vec<&'static str>,
}

/// Names of the raw features for a layer type, in vector order.
pub fn raw_feature_names(layer_type: LayerType) -> Vec<&'static str> {
    let extra = match layer_type {
        LayerType::Convolution => CONV_NAMES,
        LayerType::Linear => LINEAR_NAMES,
        LayerType::Transformer => TRANSFORMER_NAMES,
    };
    COMMON_NAMES.iter().chain(extra.iter()).copied().collect()
}

struct Shape {
    macs: f64,
    params: f64,
    weights: f64,
    input_elems: f64,
    output_elems: f64,
    extra: [f64; 4],
}

fn shape(config: &LayerConfig) -> Shape {
    let p = |k: &str| config.param(k) as f64;
    match config.layer_type {
        LayerType::Convolution => {
            let (h, w) = (p(keys::INPUT_HEIGHT), p(keys::INPUT_WIDTH));
            let (cin, cout) = (p(keys::INPUT_CHANNELS), p(keys::OUTPUT_CHANNELS));
            let (k, s) = (p(keys::KERNEL_SIZE), p(keys::STRIDE));
            // "same" padding
            let (oh, ow) = ((h / s).ceil(), (w / s).ceil());
            let weights = k * k * cin * cout;
            Shape {
                macs: weights * oh * ow,
                params: weights + cout,
                weights,
                input_elems: h * w * cin,
                output_elems: oh * ow * cout,
                extra: [k * k * cin, weights, oh * ow, k * k],
            }
        }
        LayerType::Linear => {
            let (i, o) = (p(keys::INPUT_FEATURES), p(keys::OUTPUT_FEATURES));
            Shape {
                macs: i * o,
                params: i * o + o,
                weights: i * o,
                input_elems: i,
                output_elems: o,
                extra: [i, o, i * o, i + o],
            }
        }
        LayerType::Transformer => {
            let (d, h, c) = (
                p(keys::EMBED_DIM),
                p(keys::NUM_HEADS),
                p(keys::CONTEXT_LENGTH),
            );
            // QKV + output projection (4 d^2) and a 4x MLP (8 d^2) per position,
            // plus attention scores and the weighted value sum (c^2 d each).
            let scores = c * c * d;
            Shape {
                macs: 12.0 * c * d * d + 2.0 * scores,
                params: 12.0 * d * d + 13.0 * d,
                weights: 12.0 * d * d,
                input_elems: c * d,
                output_elems: c * d,
                extra: [c * c * h, c * d, scores, d * d],
            }
        }
    }
}

/// Multiply-accumulate count of one forward pass of the layer.
pub fn macs(config: &LayerConfig) -> f64 {
    shape(config).macs
}

/// Deterministic workload descriptors for a validated config.
pub fn featureize(config: &LayerConfig) -> RawFeatures {
    let s = shape(config);
    let input_bytes = s.input_elems * BYTES_PER_ELEMENT;
    let output_bytes = s.output_elems * BYTES_PER_ELEMENT;
    let weight_bytes = s.weights * BYTES_PER_ELEMENT;
    let total_bytes = input_bytes + output_bytes + weight_bytes;
    let mut values = vec![
        s.macs,
        s.params,
        input_bytes,
        output_bytes,
        weight_bytes,
        total_bytes,
        s.macs / total_bytes,
        2.0 * s.macs,
        s.output_elems,
        s.input_elems,
    ];
    values.extend_from_slice(&s.extra);
    RawFeatures {
        values,
        names: raw_feature_names(config.layer_type),
    }
}

/// The ten generic descriptors recorded alongside every profile sample.
pub fn fingerprint(config: &LayerConfig) -> WorkloadFeatures {
    let raw = featureize(config);
    WorkloadFeatures {
        values: raw.values[..SELECTED_FEATURES].to_vec(),
        names: raw.names[..SELECTED_FEATURES]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    }
}

/// A fixed-length workload fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWorkload")]
pub struct WorkloadFeatures {
    pub values: Vec<f64>,
    pub names: Vec<String>,
}

#[derive(Deserialize)]
struct RawWorkload {
    values: Vec<f64>,
    names: Vec<String>,
}

impl TryFrom<RawWorkload> for WorkloadFeatures {
    type Error = String;

    fn try_from(raw: RawWorkload) -> Result<Self, Self::Error> {
        WorkloadFeatures::new(raw.values, raw.names)
    }
}

impl WorkloadFeatures {
    pub fn new(values: Vec<f64>, names: Vec<String>) -> Result<Self, String> {
        if values.len() != SELECTED_FEATURES || names.len() != SELECTED_FEATURES {
            return Err(format!(
                "workload features must have exactly {SELECTED_FEATURES} entries, got {}",
                values.len()
            ));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(format!(
                "workload feature {v} is not a finite non-negative value"
            ));
        }
        Ok(Self { values, names })
    }
}

/// Retained feature indices into the raw vector, with their Pearson scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelector {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub names: Vec<String>,
}

impl FeatureSelector {
    pub fn select(&self, raw: &RawFeatures) -> WorkloadFeatures {
        WorkloadFeatures {
            values: self.indices.iter().map(|&i| raw.values[i]).collect(),
            names: self.names.clone(),
        }
    }
}

/// Pearson correlation; a zero-variance input yields 0.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

/// Ranks raw features by |r| against per-config latency and keeps the top ten.
///
/// `rows` holds one (raw features, latency) pair per distinct config.
pub fn rank_features(
    names: &[&'static str],
    rows: &[(Vec<f64>, f64)],
) -> Result<FeatureSelector, FitError> {
    let latency: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let mean = latency.iter().sum::<f64>() / latency.len() as f64;
    if latency
        .iter()
        .all(|l| (l - mean).abs() <= f64::EPSILON * mean.abs().max(1.0))
    {
        return Err(FitError::ZeroVarianceLatency);
    }
    let mut scored: Vec<(usize, f64)> = (0..names.len())
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r.0[j]).collect();
            (j, pearson(&col, &latency))
        })
        .collect();
    scored.sort_by(|a, b| {
        b.1.abs()
            .partial_cmp(&a.1.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.0.cmp(&b.0))
    });
    scored.truncate(SELECTED_FEATURES.min(names.len()));
    Ok(FeatureSelector {
        indices: scored.iter().map(|s| s.0).collect(),
        scores: scored.iter().map(|s| s.1).collect(),
        names: scored.iter().map(|s| names[s.0].to_owned()).collect(),
    })
}

/// Pearson-ranks the raw features of `layer_type` against total latency at
/// the highest sampled frequency pair.
pub fn select_features(
    dataset: &ProfileDataset,
    layer_type: LayerType,
) -> Result<FeatureSelector, FitError> {
    let samples: Vec<_> = dataset
        .samples
        .iter()
        .filter(|s| s.layer_config.layer_type == layer_type)
        .collect();
    let f_c_max = samples.iter().map(|s| s.f_c.ghz()).fold(f64::MIN, f64::max);
    let f_g_max = samples.iter().map(|s| s.f_g.ghz()).fold(f64::MIN, f64::max);
    let mut rows = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for s in &samples {
        if s.f_c.ghz() == f_c_max && s.f_g.ghz() == f_g_max && seen.insert(&s.layer_config) {
            rows.push((featureize(&s.layer_config).values, s.total_ms));
        }
    }
    if rows.len() < 3 {
        return Err(FitError::TooFewConfigs {
            layer_type,
            found: rows.len(),
        });
    }
    rank_features(&raw_feature_names(layer_type), &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_counts() {
        let f = featureize(&LayerConfig::linear(512, 1024));
        assert_eq!(f.values[0], 524_288.0);
        assert_eq!(f.values[1], 524_288.0 + 1024.0);
        assert_eq!(f.values.len(), RAW_FEATURES);
    }

    #[test]
    fn conv_macs() {
        let f = featureize(&LayerConfig::conv(56, 56, 64, 64, 3, 1));
        assert_eq!(f.values[0], 115_605_504.0);
        assert_eq!(f.values[0], 3.0 * 3.0 * 64.0 * 64.0 * 56.0 * 56.0);
    }

    #[test]
    fn transformer_includes_attention_scores() {
        let f = featureize(&LayerConfig::transformer(768, 12, 128));
        let scores = 128.0 * 128.0 * 768.0;
        assert_eq!(f.values[12], scores);
        assert_eq!(f.values[0], 12.0 * 128.0 * 768.0 * 768.0 + 2.0 * scores);
    }

    #[test]
    fn every_type_has_at_least_twelve_positive_features() {
        for c in [
            LayerConfig::conv(7, 9, 3, 5, 3, 2),
            LayerConfig::linear(1, 1),
            LayerConfig::transformer(64, 4, 1),
        ] {
            let f = featureize(&c);
            assert!(f.values.len() >= 12);
            assert_eq!(f.values.len(), f.names.len());
            assert!(f.values.iter().all(|v| v.is_finite() && *v > 0.0));
        }
    }

    #[test]
    fn perfectly_correlated_feature_ranks_first() {
        let names = ["a", "b", "c"];
        let rows = vec![
            (vec![1.0, 5.0, 2.0], 3.0),
            (vec![2.0, 1.0, 4.0], 1.0),
            (vec![3.0, 4.0, 6.0], 4.0),
        ];
        // feature b is 5/3 * latency
        let rows: Vec<_> = rows
            .into_iter()
            .map(|(mut v, l)| {
                v[1] = l * 5.0 / 3.0;
                (v, l)
            })
            .collect();
        let sel = rank_features(&names, &rows).unwrap();
        assert_eq!(sel.indices[0], 1);
        assert!((sel.scores[0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_ranks_last_with_zero_score() {
        let names = ["const", "x", "y"];
        let rows = vec![
            (vec![7.0, 1.0, 3.0], 1.0),
            (vec![7.0, 2.0, 1.0], 2.0),
            (vec![7.0, 3.0, 2.0], 3.5),
        ];
        let sel = rank_features(&names, &rows).unwrap();
        assert_eq!(*sel.indices.last().unwrap(), 0);
        assert_eq!(*sel.scores.last().unwrap(), 0.0);
    }

    #[test]
    fn zero_variance_latency_is_an_error() {
        let names = ["x"];
        let rows = vec![(vec![1.0], 2.0), (vec![2.0], 2.0), (vec![3.0], 2.0)];
        assert!(matches!(
            rank_features(&names, &rows),
            Err(FitError::ZeroVarianceLatency)
        ));
    }

    #[test]
    fn workload_features_length_enforced() {
        assert!(WorkloadFeatures::new(vec![1.0; 9], vec!["x".into(); 9]).is_err());
        assert!(WorkloadFeatures::new(vec![1.0; 10], vec!["x".into(); 10]).is_ok());
        assert!(WorkloadFeatures::new(vec![-1.0; 10], vec!["x".into(); 10]).is_err());
    }
}
