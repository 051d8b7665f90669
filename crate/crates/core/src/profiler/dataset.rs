//! On-disk profile datasets: one CSV row per averaged sample, plus a JSON
//! sidecar (`<csv>.meta.json`) carrying the grid, plan and metadata.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::SamplingPlan;
use crate::layerfit::features::{WorkloadFeatures, SELECTED_FEATURES};
use crate::types::{Frequency, FrequencyGrid, LayerConfig, LayerType, ProfileSample};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

const FIXED_COLUMNS: [&str; 9] = [
    "layer_type",
    "config_json",
    "f_c_ghz",
    "f_g_ghz",
    "context",
    "cpu_ms",
    "gpu_ms",
    "delta_ms",
    "total_ms",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileDataset {
    pub device_id: String,
    pub grid: FrequencyGrid,
    pub plan: SamplingPlan,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
    /// False when a campaign aborted part way.
    pub complete: bool,
    pub samples: Vec<ProfileSample>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error at byte {byte_offset} (line {line}): {message}")]
    Parse {
        byte_offset: u64,
        line: u64,
        message: String,
    },
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("dataset schema version {found} is not supported (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
    #[error("sample {index}: {reason}")]
    Invalid { index: usize, reason: String },
    #[error("expected {expected} samples, found {found}")]
    Truncated { expected: usize, found: usize },
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    schema_version: u32,
    device_id: String,
    grid: FrequencyGrid,
    plan: SamplingPlan,
    created_at: u64,
    complete: bool,
    sample_count: usize,
    units: Units,
}

#[derive(Serialize, Deserialize)]
struct Units {
    frequency: String,
    duration: String,
}

pub(crate) fn now_unix() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Path of the metadata sidecar for a dataset CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    let mut name = csv_path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

fn header() -> Vec<String> {
    FIXED_COLUMNS
        .iter()
        .map(|s| s.to_string())
        .chain((0..SELECTED_FEATURES).map(|i| format!("feature_{i}")))
        .collect()
}

impl ProfileDataset {
    /// Checks grid membership, duplicate keys and the latency decomposition.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut keys = BTreeSet::new();
        for (index, s) in self.samples.iter().enumerate() {
            let invalid = |reason: String| DatasetError::Invalid { index, reason };
            self.grid
                .check_on_grid(s.f_c, s.f_g)
                .map_err(|e| invalid(e.to_string()))?;
            s.layer_config
                .validate(0)
                .map_err(|e| invalid(e.to_string()))?;
            if !s.is_consistent() {
                return Err(invalid(format!(
                    "total {} ms != cpu {} + gpu {} + delta {}",
                    s.total_ms, s.cpu_ms, s.gpu_ms, s.delta_ms
                )));
            }
            let key = (
                s.layer_config.clone(),
                s.f_c.ghz().to_bits(),
                s.f_g.ghz().to_bits(),
            );
            if !keys.insert(key) {
                return Err(invalid("duplicate (config, f_c, f_g, context) key".into()));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(header()).expect("write header");
        for s in &self.samples {
            let mut row = vec![
                s.layer_config.layer_type.as_str().to_owned(),
                s.layer_config.canonical_json(),
                s.f_c.ghz().to_string(),
                s.f_g.ghz().to_string(),
                s.layer_config.context().to_string(),
                s.cpu_ms.to_string(),
                s.gpu_ms.to_string(),
                s.delta_ms.to_string(),
                s.total_ms.to_string(),
            ];
            match &s.features {
                Some(f) => row.extend(f.values.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), SELECTED_FEATURES)),
            }
            w.write_record(&row).expect("write row");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
    }

    fn sidecar_json(&self) -> String {
        let meta = Sidecar {
            schema_version: DATASET_SCHEMA_VERSION,
            device_id: self.device_id.clone(),
            grid: self.grid.clone(),
            plan: self.plan,
            created_at: self.created_at,
            complete: self.complete,
            sample_count: self.samples.len(),
            units: Units {
                frequency: "GHz".into(),
                duration: "ms".into(),
            },
        };
        serde_json::to_string_pretty(&meta).expect("sidecar serializes")
    }

    /// Parses CSV text against metadata from a sidecar JSON document.
    pub fn from_parts(csv_text: &str, sidecar_json: &str) -> Result<Self, DatasetError> {
        let version: serde_json::Value = serde_json::from_str(sidecar_json)
            .map_err(|e| DatasetError::Metadata(e.to_string()))?;
        let found = version
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| DatasetError::Metadata("missing schema_version".into()))?
            as u32;
        if found != DATASET_SCHEMA_VERSION {
            return Err(DatasetError::SchemaVersion {
                found,
                expected: DATASET_SCHEMA_VERSION,
            });
        }
        let meta: Sidecar =
            serde_json::from_value(version).map_err(|e| DatasetError::Metadata(e.to_string()))?;
        let samples = parse_samples(csv_text)?;
        if samples.len() != meta.sample_count {
            return Err(DatasetError::Truncated {
                expected: meta.sample_count,
                found: samples.len(),
            });
        }
        let ds = ProfileDataset {
            device_id: meta.device_id,
            grid: meta.grid,
            plan: meta.plan,
            created_at: meta.created_at,
            complete: meta.complete,
            samples,
        };
        ds.validate()?;
        Ok(ds)
    }
}

fn parse_error(pos: Option<&csv::Position>, message: impl Into<String>) -> DatasetError {
    DatasetError::Parse {
        byte_offset: pos.map(|p| p.byte()).unwrap_or(0),
        line: pos.map(|p| p.line()).unwrap_or(0),
        message: message.into(),
    }
}

fn parse_samples(text: &str) -> Result<Vec<ProfileSample>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(false)
        .from_reader(text.as_bytes());
    let hdr = rdr
        .headers()
        .map_err(|e| parse_error(e.position(), e.to_string()))?
        .clone();
    let expected = header();
    if hdr.iter().ne(expected.iter().map(|s| s.as_str())) {
        return Err(parse_error(None, "unexpected CSV header"));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_error(e.position(), e.to_string()))?;
        let pos = rec.position().cloned();
        let field = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| -> Result<f64, DatasetError> {
            field(i)
                .parse::<f64>()
                .map_err(|e| parse_error(pos.as_ref(), format!("column {}: {e}", expected[i])))
        };
        let layer_type: LayerType = field(0)
            .parse()
            .map_err(|e: String| parse_error(pos.as_ref(), e))?;
        let config: LayerConfig = serde_json::from_str(field(1))
            .map_err(|e| parse_error(pos.as_ref(), format!("config_json: {e}")))?;
        if config.layer_type != layer_type {
            return Err(parse_error(
                pos.as_ref(),
                "layer_type column disagrees with config_json",
            ));
        }
        let freq = |i: usize| -> Result<Frequency, DatasetError> {
            Frequency::new(num(i)?).map_err(|e| parse_error(pos.as_ref(), e.to_string()))
        };
        let features = if field(FIXED_COLUMNS.len()).is_empty() {
            None
        } else {
            let vals = (0..SELECTED_FEATURES)
                .map(|j| num(FIXED_COLUMNS.len() + j))
                .collect::<Result<Vec<_>, _>>()?;
            let names = crate::layerfit::features::raw_feature_names(layer_type)
                [..SELECTED_FEATURES]
                .iter()
                .map(|s| s.to_string())
                .collect();
            Some(WorkloadFeatures::new(vals, names).map_err(|e| parse_error(pos.as_ref(), e))?)
        };
        out.push(ProfileSample {
            layer_config: config,
            f_c: freq(2)?,
            f_g: freq(3)?,
            cpu_ms: num(5)?,
            gpu_ms: num(6)?,
            delta_ms: num(7)?,
            total_ms: num(8)?,
            features,
        });
    }
    Ok(out)
}

/// Writes `path` (CSV) and its sidecar.
pub fn save_dataset(ds: &ProfileDataset, path: &Path) -> Result<(), DatasetError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| DatasetError::Io { path: p, source }
    };
    fs::write(path, ds.to_csv()).map_err(io(path))?;
    let side = sidecar_path(path);
    fs::write(&side, ds.sidecar_json()).map_err(io(&side))?;
    Ok(())
}

/// Reads and validates a dataset written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<ProfileDataset, DatasetError> {
    let read = |p: &Path| {
        fs::read_to_string(p).map_err(|source| DatasetError::Io {
            path: p.to_path_buf(),
            source,
        })
    };
    let csv_text = read(path)?;
    let side = read(&sidecar_path(path))?;
    ProfileDataset::from_parts(&csv_text, &side)
}

impl ProfileDataset {
    /// Sidecar document, for callers that write files themselves.
    pub fn metadata_json(&self) -> String {
        self.sidecar_json()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devicesim::{DeviceConfig, DeviceSimulator};
    use crate::profiler::{run_campaign, SamplingPlan};

    fn small_dataset() -> ProfileDataset {
        let grid = FrequencyGrid::linear(9, (0.2, 2.0), 5, (0.3, 1.3)).unwrap();
        let mut sim = DeviceSimulator::new(DeviceConfig::generate(1, grid.clone(), 0.03), 4);
        run_campaign(
            &mut sim,
            &[
                LayerConfig::linear(256, 512),
                LayerConfig::transformer(64, 2, 1),
            ],
            &grid,
            &SamplingPlan {
                context_stride: 300,
                ..SamplingPlan::sparse(3)
            },
        )
        .unwrap()
    }

    #[test]
    fn save_load_round_trip() {
        let ds = small_dataset();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.csv");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn truncated_file_reports_byte_offset() {
        let ds = small_dataset();
        let text = ds.to_csv();
        let cut = &text[..text.len() - 40];
        let err = ProfileDataset::from_parts(cut, &ds.sidecar_json()).unwrap_err();
        match err {
            DatasetError::Parse { byte_offset, .. } => assert!(byte_offset > 0),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn off_grid_sample_is_rejected_with_index() {
        let mut ds = small_dataset();
        ds.samples[3].f_c = Frequency::new(0.777).unwrap();
        let err = ProfileDataset::from_parts(&ds.to_csv(), &ds.sidecar_json()).unwrap_err();
        match err {
            DatasetError::Invalid { index, reason } => {
                assert_eq!(index, 3);
                assert!(reason.contains("not on the device grid"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_version_mismatch() {
        let ds = small_dataset();
        let side = ds
            .sidecar_json()
            .replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(matches!(
            ProfileDataset::from_parts(&ds.to_csv(), &side),
            Err(DatasetError::SchemaVersion { found: 9, .. })
        ));
    }

    #[test]
    fn duplicate_keys_rejected() {
        let mut ds = small_dataset();
        let dup = ds.samples[0].clone();
        ds.samples.push(dup);
        assert!(matches!(ds.validate(), Err(DatasetError::Invalid { .. })));
    }
}
