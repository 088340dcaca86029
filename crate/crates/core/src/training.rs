//! Adam, the epoch/batch loop and held-out evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discrepancy::{
    forward, loss_and_gradients, nominal_residual_mse, Batch, DiscrepancyModel, ForwardOptions, LossReport,
    LossWeights, Mode,
};
use crate::lti::{hinf_norm, matrix_norms};
use crate::numkernel::{Matrix, Tape};
use crate::parallel::map_ordered;
use crate::plants::{Dataset, Trajectory};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub fn new(params: &[Matrix], lr: f64) -> Self {
        let zeros: Vec<Matrix> = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [Matrix], grads: &[Matrix], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension(format!(
            "{} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Dimension(format!(
                "parameter {:?} with gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let (p, m, v) = (p.as_mut_slice(), m.as_mut_slice(), v.as_mut_slice());
        for (i, gi) in g.as_slice().iter().enumerate() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * gi;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * gi * gi;
            let mhat = m[i] / c1;
            let vhat = v[i] / c2;
            p[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint Frobenius norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Matrix], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.as_slice().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub horizon: usize,
    pub weights: LossWeights,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    pub seed: u64,
    #[serde(default = "default_split")]
    pub validation_fraction: f64,
    pub mode: Mode,
    #[serde(default)]
    pub detach_lift_target: bool,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_clip() -> f64 {
    10.0
}
fn default_split() -> f64 {
    0.2
}
fn default_checkpoint_every() -> usize {
    50
}

impl TrainConfig {
    /// Full-scale benchmark settings.
    pub fn benchmark(mode: Mode) -> Self {
        Self {
            epochs: 5000,
            batch_size: 256,
            horizon: 100,
            weights: LossWeights::default(),
            learning_rate: default_lr(),
            clip_norm: default_clip(),
            seed: 0,
            validation_fraction: default_split(),
            mode,
            detach_lift_target: false,
            checkpoint_every: default_checkpoint_every(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie strictly between 0 and 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        self.weights.validate()
    }
}

/// Trajectory-level split: a seeded shuffle, then the last
/// `round(fraction * n)` indices (at least one, at most `n - 1`) validate.
pub fn split_indices(count: usize, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if count < 2 {
        return Err(Error::Config(format!(
            "need at least two trajectories to split, got {count}"
        )));
    }
    let mut idx: Vec<usize> = (0..count).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((fraction * count as f64).round() as usize).clamp(1, count - 1);
    let val = idx.split_off(count - n_val);
    Ok((idx, val))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_pred: f64,
    pub train_dyn: f64,
    pub val_pred: f64,
    pub val_dyn: f64,
    pub gamma: f64,
    pub d_frob: f64,
}

/// Called at the checkpoint cadence and whenever validation improves.
pub struct CheckpointEvent<'a> {
    pub epoch: usize,
    pub model: &'a DiscrepancyModel,
    pub adam: &'a AdamState,
    pub is_best: bool,
    pub history: &'a [EpochRecord],
}

pub struct TrainOutcome {
    /// Parameters with the lowest validation `L_pred` (epoch 0 included).
    pub best: DiscrepancyModel,
    pub best_epoch: usize,
    pub last: DiscrepancyModel,
    pub adam: AdamState,
    /// One row per epoch, starting with the untrained model at epoch 0.
    pub history: Vec<EpochRecord>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

/// Mean losses over `trajectories`, evaluated in batch-sized chunks.
pub fn dataset_loss(
    model: &DiscrepancyModel,
    trajectories: &[&Trajectory],
    horizon: usize,
    weights: &LossWeights,
    chunk: usize,
    workers: usize,
) -> Result<LossReport> {
    if trajectories.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let chunks: Vec<&[&Trajectory]> = trajectories.chunks(chunk.max(1)).collect();
    let parts = map_ordered(&chunks, workers, |_, c| -> Result<(usize, LossReport)> {
        let batch = Batch::new(c, horizon, model.mode)?;
        let mut tape = Tape::new();
        let nodes = model.record(&mut tape, false);
        let l = forward(&mut tape, model, &nodes, &batch, weights, ForwardOptions::default())?;
        Ok((
            c.len(),
            LossReport {
                total: tape.scalar(l.total),
                pred: tape.scalar(l.pred),
                dyn_: tape.scalar(l.dyn_),
                gamma: tape.scalar(l.gamma),
                d_frob: tape.scalar(l.d_frob),
            },
        ))
    });
    let total = trajectories.len() as f64;
    let mut out = LossReport::default();
    for part in parts {
        let (n, r) = part?;
        let w = n as f64 / total;
        out.pred += w * r.pred;
        out.dyn_ += w * r.dyn_;
        out.gamma = r.gamma;
        out.d_frob = r.d_frob;
    }
    out.total = out.pred + weights.beta1 * out.dyn_ + weights.beta2 * out.gamma + weights.beta3 * out.d_frob;
    Ok(out)
}

/// Trajectories per gradient work unit, independent of `workers`.
pub const GRADIENT_CHUNK: usize = 8;

fn batch_gradients(
    model: &DiscrepancyModel,
    batch: &[&Trajectory],
    config: &TrainConfig,
    workers: usize,
) -> Result<(f64, Vec<Matrix>)> {
    let chunks: Vec<&[&Trajectory]> = batch.chunks(GRADIENT_CHUNK).collect();
    let size = batch.len() as f64;
    let parts = map_ordered(&chunks, workers, |i, c| {
        let b = Batch::new(c, config.horizon, model.mode)?;
        let opts = ForwardOptions {
            data_weight: c.len() as f64 / size,
            include_regularizers: i == 0,
            detach_lift_target: config.detach_lift_target,
        };
        loss_and_gradients(model, &b, &config.weights, opts)
    });
    let mut loss = 0.0;
    let mut grads: Option<Vec<Matrix>> = None;
    for part in parts {
        let (rep, g) = part?;
        loss += rep.total;
        grads = Some(match grads {
            None => g,
            Some(mut acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.axpy(1.0, b);
                }
                acc
            }
        });
    }
    Ok((loss, grads.expect("at least one chunk")))
}

fn params_norm(p: &[Matrix]) -> f64 {
    p.iter()
        .map(|m| m.as_slice().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Trains `model` on `dataset`. The dataset must carry residuals in
/// perturbation mode. `on_checkpoint` sees every checkpoint-worthy state.
pub fn train(
    model: &DiscrepancyModel,
    dataset: &Dataset,
    config: &TrainConfig,
    workers: usize,
    on_checkpoint: &mut dyn FnMut(CheckpointEvent<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.require_mode(config.mode)?;
    if config.mode == Mode::Perturbation && !dataset.has_residuals() {
        return Err(Error::Config("dataset residuals are missing".into()));
    }
    if dataset.trajectories.iter().any(|t| t.horizon() < config.horizon) {
        return Err(Error::Config(format!(
            "training horizon {} exceeds the data horizon",
            config.horizon
        )));
    }
    let (train_idx, val_idx) = split_indices(dataset.len(), config.validation_fraction, config.seed)?;
    let train_set: Vec<&Trajectory> = train_idx.iter().map(|&i| &dataset.trajectories[i]).collect();
    let val_set: Vec<&Trajectory> = val_idx.iter().map(|&i| &dataset.trajectories[i]).collect();

    let mut current = model.clone();
    let mut params = current.params();
    let mut adam = AdamState::new(&params, config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let record = |m: &DiscrepancyModel, epoch: usize| -> Result<EpochRecord> {
        let tr = dataset_loss(
            m,
            &train_set,
            config.horizon,
            &config.weights,
            config.batch_size,
            workers,
        )?;
        let va = dataset_loss(m, &val_set, config.horizon, &config.weights, config.batch_size, workers)?;
        Ok(EpochRecord {
            epoch,
            train_pred: tr.pred,
            train_dyn: tr.dyn_,
            val_pred: va.pred,
            val_dyn: va.dyn_,
            gamma: tr.gamma,
            d_frob: tr.d_frob,
        })
    };

    let mut history = vec![record(&current, 0)?];
    let mut best = current.clone();
    let mut best_epoch = 0;
    let mut best_val = history[0].val_pred;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for (bi, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Trajectory> = idx.iter().map(|&i| train_set[i]).collect();
            let (loss, mut grads) = batch_gradients(&current, &batch, config, workers)?;
            let finite = loss.is_finite() && grads.iter().all(Matrix::is_finite);
            if !finite {
                return Err(Error::NanLoss {
                    epoch,
                    batch: bi,
                    param_norm: params_norm(&params),
                });
            }
            clip_global_norm(&mut grads, config.clip_norm);
            adam_step(&mut params, &grads, &mut adam)?;
            if !params.iter().all(Matrix::is_finite) {
                return Err(Error::NanLoss {
                    epoch,
                    batch: bi,
                    param_norm: params_norm(&params),
                });
            }
            current.set_params(&params)?;
        }
        let rec = record(&current, epoch)?;
        if !(rec.train_pred.is_finite() && rec.val_pred.is_finite()) {
            return Err(Error::NanLoss {
                epoch,
                batch: 0,
                param_norm: params_norm(&params),
            });
        }
        history.push(rec);
        let improved = rec.val_pred < best_val;
        if improved {
            best_val = rec.val_pred;
            best = current.clone();
            best_epoch = epoch;
        }
        if improved || epoch % config.checkpoint_every.max(1) == 0 {
            on_checkpoint(CheckpointEvent {
                epoch,
                model: &current,
                adam: &adam,
                is_best: improved,
                history: &history,
            })?;
        }
    }
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: current,
        adam,
        history,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}

/// Performance metrics of a trained model on a set of trajectories.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pred: f64,
    pub dyn_: f64,
    pub gamma: f64,
    pub d_frob: f64,
    /// `||D_θ||_2`
    pub d_spectral: f64,
    /// H∞ norm of `(A_θ, B_θ, C_θ, 0)`, i.e. of `[Δ_N  -Δ_M]`.
    pub hinf: f64,
    /// `γ + ||D_θ||_2`
    pub audit_bound: f64,
    /// Mean squared residual of the nominal model (perturbation mode only).
    pub nominal_mse: Option<f64>,
}

pub const EVAL_HINF_TOL: f64 = 1e-10;

pub fn evaluate(
    model: &DiscrepancyModel,
    trajectories: &[&Trajectory],
    horizon: usize,
    workers: usize,
) -> Result<Metrics> {
    let weights = LossWeights::new(0.0, 0.0, 0.0)?;
    let rep = dataset_loss(model, trajectories, horizon, &weights, 256, workers)?;
    let stripped = model.stripped()?;
    let hinf = hinf_norm(&stripped.state_space(model.dt())?, EVAL_HINF_TOL)?.norm;
    let d_spectral = matrix_norms(&stripped.retained_d).0;
    let nominal_mse = match model.mode {
        Mode::Perturbation => Some(nominal_residual_mse(trajectories, horizon)?),
        Mode::Direct => None,
    };
    Ok(Metrics {
        pred: rep.pred,
        dyn_: rep.dyn_,
        gamma: stripped.gamma,
        d_frob: stripped.d_frobenius(),
        d_spectral,
        hinf,
        audit_bound: stripped.audit_bound(),
        nominal_mse,
    })
}
