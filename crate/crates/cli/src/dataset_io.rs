//! Datasets on disk: `manifest.json` plus `data.bin`, little-endian `f64`
//! laid out `[trajectory][time][x then u]`.

use std::path::Path;

use copert_core::plants::{Dataset, PlantKind, Trajectory, Trim};
use copert_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::{sha256_hex, write_file};
use crate::numfmt::{decode_vec, encode_vec, fmt17, parse_f64};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const DATASET_MANIFEST: &str = "manifest.json";
pub const DATASET_BINARY: &str = "data.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub plant: PlantKind,
    pub dt: String,
    pub trim_x: Vec<String>,
    pub trim_u: Vec<String>,
    pub trim_drift: Vec<String>,
    pub seed: u64,
    pub config_hash: String,
    pub trajectories: usize,
    /// Samples per trajectory (`horizon + 1`).
    pub samples: usize,
    pub state_dim: usize,
    pub input_dim: usize,
    /// Indices of trajectories that left the operating envelope.
    pub envelope_violations: Vec<usize>,
    pub data_file: String,
    pub data_sha256: String,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(DATASET_MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| CliError::malformed(&path, e.to_string()))?;
        if m.format_version != DATASET_FORMAT_VERSION {
            return Err(CliError::Version {
                path,
                found: m.format_version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        Ok(m)
    }
}

fn encode_binary(ds: &Dataset) -> Vec<u8> {
    let n = ds.state_dim();
    let m = ds.input_dim();
    let samples = ds.trajectories.first().map_or(0, |t| t.x.cols());
    let mut out = Vec::with_capacity(ds.len() * samples * (n + m) * 8);
    for t in &ds.trajectories {
        for k in 0..samples {
            for i in 0..n {
                out.extend_from_slice(&t.x.get(i, k).to_le_bytes());
            }
            for i in 0..m {
                out.extend_from_slice(&t.u.get(i, k).to_le_bytes());
            }
        }
    }
    out
}

/// Writes the dataset into `dir`; residuals are not stored.
pub fn save_dataset(ds: &Dataset, dir: &Path, config_hash: &str) -> CliResult<DatasetManifest> {
    ds.check_consistent()?;
    let bytes = encode_binary(ds);
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        plant: ds.plant,
        dt: fmt17(ds.dt),
        trim_x: encode_vec(&ds.trim.x),
        trim_u: encode_vec(&ds.trim.u),
        trim_drift: encode_vec(&ds.trim.drift),
        seed: ds.seed,
        config_hash: config_hash.to_string(),
        trajectories: ds.len(),
        samples: ds.trajectories.first().map_or(0, |t| t.x.cols()),
        state_dim: ds.state_dim(),
        input_dim: ds.input_dim(),
        envelope_violations: ds
            .trajectories
            .iter()
            .enumerate()
            .filter(|(_, t)| t.envelope_violation)
            .map(|(i, _)| i)
            .collect(),
        data_file: DATASET_BINARY.into(),
        data_sha256: sha256_hex(&bytes),
    };
    write_file(&dir.join(DATASET_BINARY), &bytes)?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(&dir.join(DATASET_MANIFEST), text.as_bytes())?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> CliResult<(Dataset, DatasetManifest)> {
    let manifest = DatasetManifest::load(dir)?;
    let path = dir.join(&manifest.data_file);
    let bytes = std::fs::read(&path).map_err(|e| CliError::io(&path, e))?;
    let (n, m, samples) = (manifest.state_dim, manifest.input_dim, manifest.samples);
    let expected = manifest.trajectories * samples * (n + m) * 8;
    if bytes.len() != expected || sha256_hex(&bytes) != manifest.data_sha256 {
        return Err(CliError::Checksum { path });
    }
    let mpath = dir.join(DATASET_MANIFEST);
    let bad = |e: String| CliError::malformed(&mpath, e);
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut trajectories = Vec::with_capacity(manifest.trajectories);
    for idx in 0..manifest.trajectories {
        let mut x = Matrix::zeros(n, samples);
        let mut u = Matrix::zeros(m, samples);
        for k in 0..samples {
            for i in 0..n {
                x.set(i, k, values.next().expect("length checked"));
            }
            for i in 0..m {
                u.set(i, k, values.next().expect("length checked"));
            }
        }
        let envelope_violation = manifest.envelope_violations.binary_search(&idx).is_ok();
        trajectories.push(Trajectory {
            x,
            u,
            residual: None,
            envelope_violation,
        });
    }
    let ds = Dataset {
        plant: manifest.plant,
        dt: parse_f64(&manifest.dt).map_err(bad)?,
        trim: Trim {
            x: decode_vec(&manifest.trim_x).map_err(bad)?,
            u: decode_vec(&manifest.trim_u).map_err(bad)?,
            drift: decode_vec(&manifest.trim_drift).map_err(bad)?,
        },
        seed: manifest.seed,
        trajectories,
    };
    ds.check_consistent().map_err(|e| bad(e.to_string()))?;
    Ok((ds, manifest))
}
