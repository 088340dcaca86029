//! Lifting network, coprime-factor perturbation rollouts, training losses and
//! recovery of the improved lifted model `G`.
//!
//! In perturbation mode the learned system `[Δ_N  -Δ_M]` is driven by the
//! measured `(u, x)` and must reproduce the nominal factorization's residual.
//! In direct mode the learned system plus the static map `[0 I]` is itself a
//! left coprime factorization of `G`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::lti::{left_coprime, spectral_radius, CoprimeFactorization, StateSpace};
use crate::normbounded::{
    realize, realize_on_tape, strip_feedthrough, Dims, NormBoundedTheta, StrippedSystem, ThetaNodes, DEFAULT_EPSILON,
    DEFAULT_INIT_STD,
};
use crate::numkernel::{mse, Activation, Matrix, NodeId, Tape};
use crate::plants::{Trajectory, Trim};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Perturbation,
    Direct,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Perturbation => "perturbation",
            Mode::Direct => "direct",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perturbation" => Ok(Mode::Perturbation),
            "direct" => Ok(Mode::Direct),
            other => Err(Error::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Hidden layer widths and activation of the lifting network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftingArchitecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for LiftingArchitecture {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            activation: Activation::Elu,
        }
    }
}

/// Bias-free MLP `Ψ(x) = W_L σ(... σ(W_1 S x))`, linear output layer, with an
/// optional fixed per-channel input scaling `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftingNet {
    pub weights: Vec<Matrix>,
    pub activation: Activation,
    pub input_scale: Option<Vec<f64>>,
}

impl LiftingNet {
    /// Weights drawn from `N(0, 1/fan_in)`.
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, arch: &LiftingArchitecture, rng: &mut R) -> Self {
        let mut widths = vec![input];
        widths.extend(&arch.hidden);
        widths.push(output);
        let weights = widths
            .windows(2)
            .map(|w| {
                let normal = Normal::new(0.0, 1.0 / (w[0] as f64).sqrt()).expect("positive fan-in");
                Matrix::from_fn(w[1], w[0], |_, _| normal.sample(rng))
            })
            .collect();
        Self {
            weights,
            activation: arch.activation,
            input_scale: None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights[self.weights.len() - 1].rows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::Config("lifting network needs at least one layer".into()));
        }
        for (i, pair) in self.weights.windows(2).enumerate() {
            if pair[1].cols() != pair[0].rows() {
                return Err(Error::Dimension(format!(
                    "lifting layer {} is {:?} but layer {} outputs {}",
                    i + 1,
                    pair[1].shape(),
                    i,
                    pair[0].rows()
                )));
            }
        }
        if let Some(s) = &self.input_scale {
            if s.len() != self.input_dim() || s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config("input scale must have one finite entry per state".into()));
            }
        }
        Ok(())
    }

    /// Applies `Ψ` to every column of `x`.
    pub fn lift_columns(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let nodes = self.record(&mut tape, false);
        let input = tape.constant(x.clone());
        let out = lift_on_tape(&mut tape, &nodes, self.activation, self.input_scale.as_deref(), input)?;
        Ok(tape.value(out).clone())
    }

    pub fn record(&self, tape: &mut Tape, trainable: bool) -> Vec<NodeId> {
        self.weights
            .iter()
            .map(|w| {
                if trainable {
                    tape.param(w.clone())
                } else {
                    tape.constant(w.clone())
                }
            })
            .collect()
    }
}

/// `Ψ(x)` for a single state vector.
pub fn lift(net: &LiftingNet, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != net.input_dim() {
        return Err(Error::Dimension(format!(
            "lifting network expects {} states, got {}",
            net.input_dim(),
            x.len()
        )));
    }
    Ok(net.lift_columns(&Matrix::column(x))?.col(0))
}

/// Records `Ψ` applied column-wise to the node `x`.
pub fn lift_on_tape(
    tape: &mut Tape,
    weights: &[NodeId],
    activation: Activation,
    input_scale: Option<&[f64]>,
    x: NodeId,
) -> Result<NodeId> {
    let mut h = match input_scale {
        Some(s) => {
            let scale = tape.constant(Matrix::diag(s));
            tape.matmul(scale, x)?
        }
        None => x,
    };
    for (i, w) in weights.iter().enumerate() {
        h = tape.matmul(*w, h)?;
        if i + 1 < weights.len() {
            h = tape.activation(h, activation)?;
        }
    }
    Ok(h)
}

/// Weights of the norm-regularized loss
/// `L_pred + β1 L_dyn + β2 γ + β3 ‖D_θ‖_F`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
}

impl LossWeights {
    pub fn new(beta1: f64, beta2: f64, beta3: f64) -> Result<Self> {
        let w = Self { beta1, beta2, beta3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.beta1, self.beta2, self.beta3]
            .iter()
            .all(|b| b.is_finite() && *b >= 0.0)
        {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "loss weights must be finite and nonnegative, got {self:?}"
            )))
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            beta1: 0.1,
            beta2: 1e-5,
            beta3: 1e-5,
        }
    }
}

/// Shape and random initialization of a fresh model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelInit {
    /// Lifted dimension `N`.
    pub lifted_dim: usize,
    #[serde(default)]
    pub lifting: LiftingArchitecture,
    pub epsilon: f64,
    /// Standard deviation of the `θ` draws.
    pub init_std: f64,
    /// Start from `D_θ = 0` (see [`NormBoundedTheta::zero_feedthrough`]).
    #[serde(default)]
    pub zero_feedthrough: bool,
}

impl ModelInit {
    pub fn new(lifted_dim: usize) -> Self {
        Self {
            lifted_dim,
            lifting: LiftingArchitecture::default(),
            epsilon: DEFAULT_EPSILON,
            init_std: DEFAULT_INIT_STD,
            zero_feedthrough: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lifted_dim == 0 {
            return Err(Error::Config("lifted dimension must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!(
                "init_std must be positive, got {}",
                self.init_std
            )));
        }
        if self.lifting.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must have positive width".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscrepancyModel {
    /// `(A_P, B_P, I, 0, dt)`
    pub nominal: StateSpace,
    /// Observer gain `L_P` with `ρ(A_P + L_P) < 1`.
    pub gain: Matrix,
    pub theta: NormBoundedTheta,
    pub net: LiftingNet,
    pub trim: Trim,
    pub mode: Mode,
}

/// Tape handles of every trainable block, in [`DiscrepancyModel::params`] order.
#[derive(Clone, Debug)]
pub struct ModelNodes {
    pub theta: ThetaNodes,
    pub net: Vec<NodeId>,
}

impl ModelNodes {
    pub fn ids(&self) -> Vec<NodeId> {
        let mut ids = self.theta.ids().to_vec();
        ids.extend(&self.net);
        ids
    }

    /// Inverse of [`ModelNodes::ids`].
    pub fn from_ids(ids: &[NodeId]) -> Self {
        ModelNodes {
            theta: ThetaNodes {
                d: ids[0],
                v: ids[1],
                x: ids[2],
                y: ids[3],
                z: ids[4],
                alpha: ids[5],
            },
            net: ids[6..].to_vec(),
        }
    }
}

impl DiscrepancyModel {
    pub fn new(
        nominal: StateSpace,
        gain: Matrix,
        theta: NormBoundedTheta,
        net: LiftingNet,
        trim: Trim,
        mode: Mode,
    ) -> Result<Self> {
        let model = Self {
            nominal,
            gain,
            theta,
            net,
            trim,
            mode,
        };
        model.validate()?;
        Ok(model)
    }

    /// Fresh model with random `θ` and lifting weights.
    pub fn initialize<R: Rng + ?Sized>(
        nominal: StateSpace,
        gain: Matrix,
        trim: Trim,
        mode: Mode,
        init: &ModelInit,
        rng: &mut R,
    ) -> Result<Self> {
        init.validate()?;
        let n = nominal.nx();
        let m = nominal.nu();
        let mut theta =
            NormBoundedTheta::random(Dims::new(init.lifted_dim, m + n, n), init.epsilon, init.init_std, rng);
        if init.zero_feedthrough {
            theta.zero_feedthrough();
        }
        let net = LiftingNet::random(n, init.lifted_dim, &init.lifting, rng);
        Self::new(nominal, gain, theta, net, trim, mode)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let m = self.input_dim();
        if self.nominal.c != Matrix::identity(n) || !self.nominal.is_strictly_proper() || !self.nominal.is_discrete() {
            return Err(Error::Config(
                "nominal model must be discrete with full-state output".into(),
            ));
        }
        if self.gain.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "gain is {:?}, expected {:?}",
                self.gain.shape(),
                (n, n)
            )));
        }
        self.theta.validate()?;
        self.net.validate()?;
        let dims = self.theta.dims;
        if dims.nu != m + n || dims.ny != n {
            return Err(Error::Dimension(format!(
                "theta maps {} inputs to {} outputs, expected {} to {}",
                dims.nu,
                dims.ny,
                m + n,
                n
            )));
        }
        if self.net.input_dim() != n || self.net.output_dim() != dims.nx {
            return Err(Error::Dimension(format!(
                "lifting network maps {} to {}, expected {} to {}",
                self.net.input_dim(),
                self.net.output_dim(),
                n,
                dims.nx
            )));
        }
        let rho = spectral_radius(&self.nominal.a.try_add(&self.gain)?)?;
        if rho >= 1.0 {
            return Err(Error::Unstable { rho });
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.nominal.nx()
    }

    pub fn input_dim(&self) -> usize {
        self.nominal.nu()
    }

    pub fn lifted_dim(&self) -> usize {
        self.theta.dims.nx
    }

    pub fn dt(&self) -> f64 {
        self.nominal.dt
    }

    pub fn coprime(&self) -> Result<CoprimeFactorization> {
        left_coprime(&self.nominal, &self.gain)
    }

    pub fn require_mode(&self, mode: Mode) -> Result<()> {
        if self.mode == mode {
            Ok(())
        } else {
            Err(Error::ModeMismatch {
                expected: mode.name(),
                found: self.mode.name(),
            })
        }
    }

    /// Trainable blocks: `θ` then the lifting weights.
    pub fn params(&self) -> Vec<Matrix> {
        let mut p = self.theta.params();
        p.extend(self.net.weights.iter().cloned());
        p
    }

    pub fn set_params(&mut self, p: &[Matrix]) -> Result<()> {
        let expected = NormBoundedTheta::PARAM_COUNT + self.net.weights.len();
        if p.len() != expected {
            return Err(Error::Dimension(format!(
                "expected {expected} parameter blocks, got {}",
                p.len()
            )));
        }
        for (cur, new) in self.params().iter().zip(p) {
            if cur.shape() != new.shape() {
                return Err(Error::Dimension(format!(
                    "parameter block {:?} replaced by {:?}",
                    cur.shape(),
                    new.shape()
                )));
            }
        }
        let (t, w) = p.split_at(NormBoundedTheta::PARAM_COUNT);
        self.theta.set_params(t);
        self.net.weights = w.to_vec();
        Ok(())
    }

    pub fn record(&self, tape: &mut Tape, trainable: bool) -> ModelNodes {
        ModelNodes {
            theta: self.theta.record(tape, trainable),
            net: self.net.record(tape, trainable),
        }
    }

    /// The realized perturbation `(A_θ, B_θ, C_θ, D_θ)`.
    pub fn realized(&self) -> Result<crate::normbounded::RealizedSystem> {
        realize(&self.theta)
    }

    /// `(A_θ, B_θ, C_θ, 0)`, the system actually used in rollouts.
    pub fn stripped(&self) -> Result<StrippedSystem> {
        Ok(strip_feedthrough(&self.realized()?))
    }

    pub fn lift(&self, x: &[f64]) -> Result<Vec<f64>> {
        lift(&self.net, x)
    }
}

/// Trajectories stacked time-major: column `k * size + b` holds sample `k`
/// of trajectory `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub size: usize,
    /// Samples per trajectory, `T + 1`.
    pub steps: usize,
    pub x: Matrix,
    /// Stacked rollout input `[u; x]`.
    pub ux: Matrix,
    /// Residual `r` (perturbation mode) or the state itself (direct mode).
    pub target: Matrix,
}

impl Batch {
    /// Uses the first `horizon + 1` samples of each trajectory.
    pub fn new(trajectories: &[&Trajectory], horizon: usize, mode: Mode) -> Result<Self> {
        let size = trajectories.len();
        if size == 0 {
            return Err(Error::EmptyBatch);
        }
        let steps = horizon + 1;
        let n = trajectories[0].x.rows();
        let m = trajectories[0].u.rows();
        let mut x = Matrix::zeros(n, steps * size);
        let mut ux = Matrix::zeros(m + n, steps * size);
        let mut target = Matrix::zeros(n, steps * size);
        for (b, t) in trajectories.iter().enumerate() {
            if t.x.cols() < steps || t.u.cols() < steps || t.x.rows() != n || t.u.rows() != m {
                return Err(Error::Dimension(format!(
                    "trajectory {b} has states {:?} and inputs {:?}; need {n} and {m} rows with {steps} samples",
                    t.x.shape(),
                    t.u.shape()
                )));
            }
            let r = match mode {
                Mode::Perturbation => Some(t.residual.as_ref().ok_or_else(|| {
                    Error::Config("residuals must be attached to the dataset before training".into())
                })?),
                Mode::Direct => None,
            };
            for k in 0..steps {
                let col = k * size + b;
                for i in 0..m {
                    ux.set(i, col, t.u.get(i, k));
                }
                for i in 0..n {
                    let xi = t.x.get(i, k);
                    x.set(i, col, xi);
                    ux.set(m + i, col, xi);
                    target.set(i, col, r.map_or(xi, |r| r.get(i, k)));
                }
            }
        }
        Ok(Self {
            size,
            steps,
            x,
            ux,
            target,
        })
    }

    pub fn horizon(&self) -> usize {
        self.steps - 1
    }
}

/// Loss node handles together with their evaluated values.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub pred: NodeId,
    pub dyn_: NodeId,
    pub gamma: NodeId,
    pub d_frob: NodeId,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossReport {
    pub total: f64,
    pub pred: f64,
    pub dyn_: f64,
    pub gamma: f64,
    pub d_frob: f64,
}

impl LossReport {
    fn from_tape(tape: &Tape, n: &LossNodes) -> Self {
        Self {
            total: tape.scalar(n.total),
            pred: tape.scalar(n.pred),
            dyn_: tape.scalar(n.dyn_),
            gamma: tape.scalar(n.gamma),
            d_frob: tape.scalar(n.d_frob),
        }
    }
}

/// Options for [`forward`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    /// Factor applied to `L_pred + β1 L_dyn`, so that chunks of a batch can
    /// be evaluated on separate tapes and summed.
    pub data_weight: f64,
    /// Adds `β2 γ + β3 ‖D_θ‖_F` to the total.
    pub include_regularizers: bool,
    /// Evaluates the `Ψ(x(k))` target of `L_dyn` with constant weights.
    pub detach_lift_target: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            data_weight: 1.0,
            include_regularizers: true,
            detach_lift_target: false,
        }
    }
}

/// Records the rollout and loss of `batch` on `tape`.
pub fn forward(
    tape: &mut Tape,
    model: &DiscrepancyModel,
    nodes: &ModelNodes,
    batch: &Batch,
    weights: &LossWeights,
    opts: ForwardOptions,
) -> Result<LossNodes> {
    let (bsz, steps) = (batch.size, batch.steps);
    let n = model.state_dim();
    if batch.x.rows() != n || batch.ux.rows() != n + model.input_dim() {
        return Err(Error::Dimension(format!(
            "batch has {} states and {} rollout inputs for a model with n = {n}, m = {}",
            batch.x.rows(),
            batch.ux.rows(),
            model.input_dim()
        )));
    }
    let sys = realize_on_tape(tape, &nodes.theta, model.theta.dims, model.theta.epsilon)?;
    let act = model.net.activation;
    let scale = model.net.input_scale.as_deref();

    let x_all = tape.constant(batch.x.clone());
    let lifted = lift_on_tape(tape, &nodes.net, act, scale, x_all)?;
    let width = bsz * steps;

    let ux = tape.constant(batch.ux.clone());
    let drive = tape.matmul(sys.b, ux)?;
    let mut z = tape.slice(lifted, 0..model.lifted_dim(), 0..bsz)?;
    let mut states = Vec::with_capacity(steps);
    states.push(z);
    for k in 0..batch.horizon() {
        let az = tape.matmul(sys.a, z)?;
        let bw = tape.slice(drive, 0..model.lifted_dim(), k * bsz..(k + 1) * bsz)?;
        z = tape.add(az, bw)?;
        states.push(z);
    }
    let z_all = tape.concat_cols(&states)?;
    let out = tape.matmul(sys.c, z_all)?;
    let pred_out = match model.mode {
        Mode::Perturbation => out,
        Mode::Direct => tape.negate(out)?,
    };
    let target = tape.constant(batch.target.clone());
    let pred = tape.mse(pred_out, target)?;

    let lift_target = if opts.detach_lift_target {
        let frozen = model.net.record(tape, false);
        lift_on_tape(tape, &frozen, act, scale, x_all)?
    } else {
        lifted
    };
    let dyn_ = if batch.horizon() == 0 {
        tape.constant(Matrix::zeros(1, 1))
    } else {
        let zs = tape.slice(z_all, 0..model.lifted_dim(), bsz..width)?;
        let psi = tape.slice(lift_target, 0..model.lifted_dim(), bsz..width)?;
        tape.mse(zs, psi)?
    };

    let d_frob = tape.frobenius_norm(sys.d)?;
    let data = {
        let weighted_dyn = tape.scale(dyn_, weights.beta1)?;
        let s = tape.add(pred, weighted_dyn)?;
        tape.scale(s, opts.data_weight)?
    };
    let total = if opts.include_regularizers {
        let g = tape.scale(sys.gamma, weights.beta2)?;
        let f = tape.scale(d_frob, weights.beta3)?;
        let s = tape.add(data, g)?;
        tape.add(s, f)?
    } else {
        data
    };
    Ok(LossNodes {
        total,
        pred,
        dyn_,
        gamma: sys.gamma,
        d_frob,
    })
}

/// Loss and metrics without gradients.
pub fn loss(model: &DiscrepancyModel, batch: &Batch, weights: &LossWeights) -> Result<LossReport> {
    let mut tape = Tape::new();
    let nodes = model.record(&mut tape, false);
    let l = forward(&mut tape, model, &nodes, batch, weights, ForwardOptions::default())?;
    Ok(LossReport::from_tape(&tape, &l))
}

/// Loss, metrics and gradients in [`DiscrepancyModel::params`] order.
pub fn loss_and_gradients(
    model: &DiscrepancyModel,
    batch: &Batch,
    weights: &LossWeights,
    opts: ForwardOptions,
) -> Result<(LossReport, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let nodes = model.record(&mut tape, true);
    let l = forward(&mut tape, model, &nodes, batch, weights, opts)?;
    let grads = tape.backward(l.total)?;
    Ok((LossReport::from_tape(&tape, &l), grads.take_ordered(&nodes.ids())))
}

fn check_sequences(model: &DiscrepancyModel, u_seq: &Matrix, x_seq: &Matrix, x0: &[f64]) -> Result<()> {
    let (n, m) = (model.state_dim(), model.input_dim());
    if u_seq.rows() != m || x_seq.rows() != n || u_seq.cols() != x_seq.cols() || x0.len() != n || u_seq.cols() == 0 {
        return Err(Error::Dimension(format!(
            "rollout got inputs {:?}, states {:?}, x0 of length {}; model has n = {n}, m = {m}",
            u_seq.shape(),
            x_seq.shape(),
            x0.len()
        )));
    }
    Ok(())
}

/// Drives `(A_θ, B_θ, C_θ)` with `[u; x]` from lifted state `z0`; returns
/// the lifted states and `C_θ z`.
pub fn rollout_from(model: &DiscrepancyModel, z0: &[f64], u_seq: &Matrix, x_seq: &Matrix) -> Result<(Matrix, Matrix)> {
    let rs = model.realized()?;
    let steps = u_seq.cols();
    let big_n = model.lifted_dim();
    if z0.len() != big_n {
        return Err(Error::Dimension(format!(
            "lifted state has {} entries, expected {big_n}",
            z0.len()
        )));
    }
    let ux = Matrix::vstack(&[u_seq, x_seq])?;
    let mut zs = Matrix::zeros(big_n, steps);
    let mut z = z0.to_vec();
    for k in 0..steps {
        zs.set_col(k, &z);
        if k + 1 < steps {
            let az = rs.a.mat_vec(&z)?;
            let bw = rs.b.mat_vec(&ux.col(k))?;
            z = az.iter().zip(&bw).map(|(a, b)| a + b).collect();
        }
    }
    let out = rs.c.matmul(&zs)?;
    Ok((zs, out))
}

/// `z̃_Δ(0) = Ψ(x0)`, `z̃_Δ(k+1) = A_θ z̃_Δ(k) + B_θ [u(k); x(k)]`,
/// `r̂(k) = C_θ z̃_Δ(k)`.
pub fn perturbation_rollout(
    model: &DiscrepancyModel,
    u_seq: &Matrix,
    x_seq: &Matrix,
    x0: &[f64],
) -> Result<(Matrix, Matrix)> {
    model.require_mode(Mode::Perturbation)?;
    check_sequences(model, u_seq, x_seq, x0)?;
    rollout_from(model, &model.lift(x0)?, u_seq, x_seq)
}

/// Same recursion as the perturbation rollout, read out as `x̂ = -C_θ z̃`.
pub fn direct_rollout(
    model: &DiscrepancyModel,
    u_seq: &Matrix,
    x_seq: &Matrix,
    x0: &[f64],
) -> Result<(Matrix, Matrix)> {
    model.require_mode(Mode::Direct)?;
    check_sequences(model, u_seq, x_seq, x0)?;
    let (zs, out) = rollout_from(model, &model.lift(x0)?, u_seq, x_seq)?;
    Ok((zs, out.scale(-1.0)))
}

/// A recovered lifted model together with its initial-state rule.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedModel {
    pub system: StateSpace,
    pub mode: Mode,
}

impl LiftedModel {
    /// `[x0; -Ψ(x0)]` in perturbation mode, `-Ψ(x0)` in direct mode.
    pub fn initial_state(&self, model: &DiscrepancyModel, x0: &[f64]) -> Result<Vec<f64>> {
        let neg_psi: Vec<f64> = model.lift(x0)?.iter().map(|v| -v).collect();
        Ok(match self.mode {
            Mode::Perturbation => x0.iter().copied().chain(neg_psi).collect(),
            Mode::Direct => neg_psi,
        })
    }
}

/// `A_G = [[A_P, L_P C_θ], [-B_θ2, A_θ + B_θ2 C_θ]]`, `B_G = [B_P; -B_θ1]`,
/// `C_G = [I, -C_θ]`, `D_G = 0`.
pub fn assemble_g(model: &DiscrepancyModel) -> Result<LiftedModel> {
    model.require_mode(Mode::Perturbation)?;
    let rs = model.realized()?;
    let (n, m, big_n) = (model.state_dim(), model.input_dim(), model.lifted_dim());
    let b1 = rs.b.slice(0, big_n, 0, m)?;
    let b2 = rs.b.slice(0, big_n, m, m + n)?;
    let ap = &model.nominal.a;
    let a = Matrix::block(&[
        &[ap, &model.gain.matmul(&rs.c)?],
        &[&b2.scale(-1.0), &rs.a.try_add(&b2.matmul(&rs.c)?)?],
    ])?;
    let b = Matrix::vstack(&[&model.nominal.b, &b1.scale(-1.0)])?;
    let c = Matrix::hstack(&[&Matrix::identity(n), &rs.c.scale(-1.0)])?;
    let system = StateSpace::new(a, b, c, Matrix::zeros(n, m), model.dt())?;
    Ok(LiftedModel {
        system,
        mode: Mode::Perturbation,
    })
}

/// `(A_θ - B_θ2 C_θ, -B_θ1, C_θ)` with `D_G = 0`.
pub fn recover_g_direct(model: &DiscrepancyModel) -> Result<LiftedModel> {
    model.require_mode(Mode::Direct)?;
    let rs = model.realized()?;
    let (n, m, big_n) = (model.state_dim(), model.input_dim(), model.lifted_dim());
    let b1 = rs.b.slice(0, big_n, 0, m)?;
    let b2 = rs.b.slice(0, big_n, m, m + n)?;
    let a = rs.a.try_sub(&b2.matmul(&rs.c)?)?;
    let system = StateSpace::new(a, b1.scale(-1.0), rs.c.clone(), Matrix::zeros(n, m), model.dt())?;
    Ok(LiftedModel {
        system,
        mode: Mode::Direct,
    })
}

/// The improved model for either mode.
pub fn lifted_model(model: &DiscrepancyModel) -> Result<LiftedModel> {
    match model.mode {
        Mode::Perturbation => assemble_g(model),
        Mode::Direct => recover_g_direct(model),
    }
}

/// Perturbed factorization driven by `(u, y)`: state matrix
/// `blockdiag(A_P + L_P, A_θ)`, input `[[-B_P, L_P], [B_θ1, B_θ2]]`, output
/// `[I, -C_θ]`, feedthrough `[0, I]`.
pub fn perturbed_factorization(model: &DiscrepancyModel) -> Result<StateSpace> {
    model.require_mode(Mode::Perturbation)?;
    let rs = model.realized()?;
    let (n, m, big_n) = (model.state_dim(), model.input_dim(), model.lifted_dim());
    let a = Matrix::block(&[
        &[&model.nominal.a.try_add(&model.gain)?, &Matrix::zeros(n, big_n)],
        &[&Matrix::zeros(big_n, n), &rs.a],
    ])?;
    let b = Matrix::block(&[
        &[&model.nominal.b.scale(-1.0), &model.gain],
        &[&rs.b.slice(0, big_n, 0, m)?, &rs.b.slice(0, big_n, m, m + n)?],
    ])?;
    let c = Matrix::hstack(&[&Matrix::identity(n), &rs.c.scale(-1.0)])?;
    let d = Matrix::hstack(&[&Matrix::zeros(n, m), &Matrix::identity(n)])?;
    StateSpace::new(a, b, c, d, model.dt())
}

/// Learned factorization of direct mode, `(A_θ, B_θ, C_θ, [0 I])`; its
/// output is `C_θ z̃ + x`.
pub fn direct_factorization(model: &DiscrepancyModel) -> Result<StateSpace> {
    model.require_mode(Mode::Direct)?;
    let rs = model.realized()?;
    let (n, m) = (model.state_dim(), model.input_dim());
    let d = Matrix::hstack(&[&Matrix::zeros(n, m), &Matrix::identity(n)])?;
    StateSpace::new(rs.a, rs.b, rs.c, d, model.dt())
}

/// Mean squared residual of the nominal model alone, `mean r(k)^2`.
pub fn nominal_residual_mse(trajectories: &[&Trajectory], horizon: usize) -> Result<f64> {
    let batch = Batch::new(trajectories, horizon, Mode::Perturbation)?;
    Ok(mse(
        &batch.target,
        &Matrix::zeros(batch.target.rows(), batch.target.cols()),
    ))
}
