//! Model checkpoints: JSON with a format version, a SHA-256 over the payload
//! and every float stored as a 17-digit decimal string.

use std::path::Path;

use copert_core::discrepancy::{DiscrepancyModel, LiftingNet, Mode};
use copert_core::lti::StateSpace;
use copert_core::normbounded::{Dims, NormBoundedTheta};
use copert_core::numkernel::Activation;
use copert_core::plants::Trim;
use copert_core::training::AdamState;
use copert_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{sha256_hex, write_file};
use crate::numfmt::{decode_vec, encode_vec, fmt17, parse_f64, MatrixText};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub epoch: usize,
    pub model: DiscrepancyModel,
    pub adam: Option<AdamState>,
    /// File name of the metric history that led to this state.
    pub history: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope {
    format_version: u32,
    sha256: String,
    payload: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Payload {
    config: ExperimentConfig,
    epoch: usize,
    mode: Mode,
    nominal: NominalText,
    theta: ThetaText,
    lifting: LiftingText,
    adam: Option<AdamText>,
    history: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NominalText {
    a: MatrixText,
    b: MatrixText,
    dt: String,
    gain: MatrixText,
    trim_x: Vec<String>,
    trim_u: Vec<String>,
    trim_drift: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ThetaText {
    dims: Dims,
    epsilon: String,
    d: MatrixText,
    v: MatrixText,
    x: MatrixText,
    y: MatrixText,
    z: MatrixText,
    alpha: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LiftingText {
    activation: Activation,
    weights: Vec<MatrixText>,
    input_scale: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamText {
    lr: String,
    beta1: String,
    beta2: String,
    eps: String,
    step: u64,
    m: Vec<MatrixText>,
    v: Vec<MatrixText>,
}

fn encode_all(ms: &[Matrix]) -> Vec<MatrixText> {
    ms.iter().map(MatrixText::encode).collect()
}

fn decode_all(ms: &[MatrixText]) -> Result<Vec<Matrix>, String> {
    ms.iter().map(MatrixText::decode).collect()
}

impl Payload {
    fn encode(ck: &Checkpoint) -> Self {
        let m = &ck.model;
        let th = &m.theta;
        Payload {
            config: ck.config.clone(),
            epoch: ck.epoch,
            mode: m.mode,
            nominal: NominalText {
                a: MatrixText::encode(&m.nominal.a),
                b: MatrixText::encode(&m.nominal.b),
                dt: fmt17(m.nominal.dt),
                gain: MatrixText::encode(&m.gain),
                trim_x: encode_vec(&m.trim.x),
                trim_u: encode_vec(&m.trim.u),
                trim_drift: encode_vec(&m.trim.drift),
            },
            theta: ThetaText {
                dims: th.dims,
                epsilon: fmt17(th.epsilon),
                d: MatrixText::encode(&th.d),
                v: MatrixText::encode(&th.v),
                x: MatrixText::encode(&th.x),
                y: MatrixText::encode(&th.y),
                z: MatrixText::encode(&th.z),
                alpha: fmt17(th.alpha),
            },
            lifting: LiftingText {
                activation: m.net.activation,
                weights: encode_all(&m.net.weights),
                input_scale: m.net.input_scale.as_deref().map(encode_vec),
            },
            adam: ck.adam.as_ref().map(|a| AdamText {
                lr: fmt17(a.lr),
                beta1: fmt17(a.beta1),
                beta2: fmt17(a.beta2),
                eps: fmt17(a.eps),
                step: a.step,
                m: encode_all(&a.m),
                v: encode_all(&a.v),
            }),
            history: ck.history.clone(),
        }
    }

    fn decode(self) -> Result<Checkpoint, String> {
        let n = &self.nominal;
        let nominal =
            StateSpace::full_state(n.a.decode()?, n.b.decode()?, parse_f64(&n.dt)?).map_err(|e| e.to_string())?;
        let trim = Trim {
            x: decode_vec(&n.trim_x)?,
            u: decode_vec(&n.trim_u)?,
            drift: decode_vec(&n.trim_drift)?,
        };
        let t = &self.theta;
        let theta = NormBoundedTheta {
            d: t.d.decode()?,
            v: t.v.decode()?,
            x: t.x.decode()?,
            y: t.y.decode()?,
            z: t.z.decode()?,
            alpha: parse_f64(&t.alpha)?,
            epsilon: parse_f64(&t.epsilon)?,
            dims: t.dims,
        };
        let net = LiftingNet {
            weights: decode_all(&self.lifting.weights)?,
            activation: self.lifting.activation,
            input_scale: self.lifting.input_scale.as_deref().map(decode_vec).transpose()?,
        };
        let model =
            DiscrepancyModel::new(nominal, n.gain.decode()?, theta, net, trim, self.mode).map_err(|e| e.to_string())?;
        let adam = match &self.adam {
            None => None,
            Some(a) => {
                let state = AdamState {
                    lr: parse_f64(&a.lr)?,
                    beta1: parse_f64(&a.beta1)?,
                    beta2: parse_f64(&a.beta2)?,
                    eps: parse_f64(&a.eps)?,
                    step: a.step,
                    m: decode_all(&a.m)?,
                    v: decode_all(&a.v)?,
                };
                let shapes: Vec<_> = model.params().iter().map(Matrix::shape).collect();
                let ok = |ms: &[Matrix]| ms.iter().map(Matrix::shape).eq(shapes.iter().copied());
                if !ok(&state.m) || !ok(&state.v) {
                    return Err("optimizer moments do not match the parameter shapes".into());
                }
                Some(state)
            }
        };
        Ok(Checkpoint {
            config: self.config,
            epoch: self.epoch,
            model,
            adam,
            history: self.history,
        })
    }
}

fn payload_digest(value: &serde_json::Value) -> String {
    sha256_hex(serde_json::to_string(value).expect("value serializes").as_bytes())
}

/// Encoded file contents; identical checkpoints give identical bytes.
pub fn checkpoint_bytes(ck: &Checkpoint) -> Vec<u8> {
    let payload = serde_json::to_value(Payload::encode(ck)).expect("payload serializes");
    let env = Envelope {
        format_version: CHECKPOINT_FORMAT_VERSION,
        sha256: payload_digest(&payload),
        payload,
    };
    let mut text = serde_json::to_string_pretty(&env).expect("envelope serializes");
    text.push('\n');
    text.into_bytes()
}

pub fn save_model(ck: &Checkpoint, path: &Path) -> CliResult<()> {
    write_file(path, &checkpoint_bytes(ck))
}

pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> CliResult<Checkpoint> {
    // Anything that is not a complete envelope is treated as corruption.
    let env: Envelope = serde_json::from_slice(bytes).map_err(|_| CliError::Checksum {
        path: path.to_path_buf(),
    })?;
    if env.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(CliError::Version {
            path: path.to_path_buf(),
            found: env.format_version,
            expected: CHECKPOINT_FORMAT_VERSION,
        });
    }
    if payload_digest(&env.payload) != env.sha256 {
        return Err(CliError::Checksum {
            path: path.to_path_buf(),
        });
    }
    let payload: Payload = serde_json::from_value(env.payload).map_err(|e| CliError::malformed(path, e.to_string()))?;
    payload.decode().map_err(|e| CliError::malformed(path, e))
}

pub fn load_model(path: &Path) -> CliResult<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    parse_checkpoint(&bytes, path)
}

/// Loads a checkpoint and insists on its training mode.
pub fn load_model_for(path: &Path, mode: Mode) -> CliResult<Checkpoint> {
    let ck = load_model(path)?;
    ck.model.require_mode(mode)?;
    Ok(ck)
}
