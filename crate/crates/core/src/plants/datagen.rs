use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    integrate_with, lqr_controller, uas_default_lqr_weights, IntegratorOptions, Plant, PlantKind, StateFeedback, Trim,
};
use crate::lti::{residual_rollout, CoprimeFactorization, LqrWeights};
use crate::numkernel::Matrix;
use crate::parallel::map_ordered;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataGenConfig {
    pub trajectories: usize,
    /// Number of sample steps; each trajectory has `horizon + 1` samples.
    pub horizon: usize,
    pub dt: f64,
    /// Half-widths of the initial-state box, in deviation coordinates.
    pub initial_box: Vec<f64>,
    /// Open-loop inputs are i.i.d. uniform on `[-input_bound, input_bound]`.
    pub input_bound: f64,
    pub closed_loop: bool,
    /// Start from every corner of the initial box instead of sampling it.
    #[serde(default)]
    pub corners: bool,
    #[serde(default)]
    pub measurement_noise_std: Vec<f64>,
    #[serde(default)]
    pub process_noise_bound: Vec<f64>,
    #[serde(default)]
    pub lqr: Option<LqrWeights>,
    /// Half-widths of the operating envelope used for the violation flag.
    #[serde(default)]
    pub envelope: Option<Vec<f64>>,
    #[serde(default)]
    pub integrator: IntegratorOptions,
    pub seed: u64,
}

impl DataGenConfig {
    /// Full-scale settings of the benchmark experiments.
    pub fn benchmark(kind: PlantKind) -> Self {
        let plant = Plant::new(kind);
        match kind {
            PlantKind::Pendulum | PlantKind::Vdp => Self {
                trajectories: 5000,
                horizon: 100,
                dt: 0.1,
                initial_box: plant.default_initial_box(),
                input_bound: 0.5,
                closed_loop: false,
                corners: false,
                measurement_noise_std: vec![],
                process_noise_bound: vec![],
                lqr: None,
                envelope: None,
                integrator: IntegratorOptions::default(),
                seed: 0,
            },
            PlantKind::Uas => Self {
                trajectories: 10_000,
                horizon: 100,
                dt: 0.02,
                initial_box: plant.default_initial_box(),
                input_bound: 0.0,
                closed_loop: true,
                corners: false,
                measurement_noise_std: vec![0.15, 2.0, 2.0, 0.15, 2.0, 2.0],
                process_noise_bound: vec![5.0, 10.0, 2.0],
                lqr: Some(uas_default_lqr_weights()),
                envelope: None,
                integrator: IntegratorOptions::default(),
                seed: 0,
            },
        }
    }

    /// 64 closed-loop UAS runs of 5 s from the corners of the initial box.
    pub fn uas_limited() -> Self {
        Self {
            trajectories: 64,
            horizon: 250,
            corners: true,
            ..Self::benchmark(PlantKind::Uas)
        }
    }

    pub fn validate(&self, plant: &Plant) -> Result<()> {
        let n = plant.state_dim();
        let m = plant.input_dim();
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if self.initial_box.len() != n {
            return bad(format!("initial_box needs {n} entries, got {}", self.initial_box.len()));
        }
        let nonneg = |v: &[f64]| v.iter().all(|x| *x >= 0.0 && x.is_finite());
        if !nonneg(&self.initial_box) || !(self.input_bound >= 0.0) {
            return bad("bounds must be nonnegative".into());
        }
        if !self.measurement_noise_std.is_empty()
            && (self.measurement_noise_std.len() != n || !nonneg(&self.measurement_noise_std))
        {
            return bad(format!("measurement_noise_std needs {n} nonnegative entries"));
        }
        if !self.process_noise_bound.is_empty()
            && (self.process_noise_bound.len() != m || !nonneg(&self.process_noise_bound))
        {
            return bad(format!("process_noise_bound needs {m} nonnegative entries"));
        }
        if let Some(env) = &self.envelope {
            if env.len() != n || !nonneg(env) {
                return bad(format!("envelope needs {n} nonnegative entries"));
            }
        }
        if let Some(w) = &self.lqr {
            if w.q.len() != n || w.r.len() != m {
                return bad(format!("lqr weights need {n} state and {m} input entries"));
            }
        }
        if self.corners {
            let expected = 1usize << n;
            if self.trajectories != expected {
                return bad(format!(
                    "corner mode produces {expected} trajectories, config asks for {}",
                    self.trajectories
                ));
            }
        } else if self.trajectories == 0 {
            return bad("at least one trajectory is required".into());
        }
        Ok(())
    }
}

/// One recorded run, in deviation coordinates when the trim is nonzero.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// `n × (T+1)`
    pub x: Matrix,
    /// `m × (T+1)`
    pub u: Matrix,
    /// Output of the nominal factorization driven by `(u, x)`, once attached.
    pub residual: Option<Matrix>,
    pub envelope_violation: bool,
}

impl Trajectory {
    pub fn x0(&self) -> Vec<f64> {
        self.x.col(0)
    }

    pub fn horizon(&self) -> usize {
        self.x.cols() - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub plant: PlantKind,
    pub dt: f64,
    pub trim: Trim,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.x.rows())
    }

    pub fn input_dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.u.rows())
    }

    pub fn has_residuals(&self) -> bool {
        !self.trajectories.is_empty() && self.trajectories.iter().all(|t| t.residual.is_some())
    }

    /// Precomputes residuals with `-x0` as the factorization's initial state.
    pub fn attach_residuals(&mut self, cf: &CoprimeFactorization) -> Result<()> {
        for t in &mut self.trajectories {
            let x0 = t.x.col(0);
            t.residual = Some(residual_rollout(cf, &t.u, &t.x, &x0)?);
        }
        Ok(())
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            plant: self.plant,
            dt: self.dt,
            trim: self.trim.clone(),
            seed: self.seed,
            trajectories: indices.iter().map(|&i| self.trajectories[i].clone()).collect(),
        }
    }

    pub fn check_consistent(&self) -> Result<()> {
        let (n, m) = (self.state_dim(), self.input_dim());
        for (i, t) in self.trajectories.iter().enumerate() {
            let cols = t.x.cols();
            let ok = t.x.rows() == n
                && t.u.rows() == m
                && t.u.cols() == cols
                && cols >= 2
                && t.residual.as_ref().is_none_or(|r| r.shape() == (n, cols));
            if !ok {
                return Err(Error::Dimension(format!(
                    "trajectory {i} is inconsistent with the dataset"
                )));
            }
        }
        Ok(())
    }
}

/// Trajectory-local RNG: stream `index` of the master seed.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn corner(index: usize, half: &[f64]) -> Vec<f64> {
    half.iter()
        .enumerate()
        .map(|(i, w)| if index >> i & 1 == 1 { *w } else { -*w })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Closed-loop inputs: `ū = -K (x̄ + v) + w`, `v ~ N(0, σ²)`, `w ~ U(-b, b)`.
pub struct DisturbedFeedback<'a> {
    pub feedback: &'a StateFeedback,
    pub noise_std: &'a [f64],
    pub process_bound: &'a [f64],
}

impl DisturbedFeedback<'_> {
    pub fn command(&self, xbar: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let meas: Vec<f64> = xbar
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let s = self.noise_std.get(i).copied().unwrap_or(0.0);
                if s > 0.0 {
                    x + Normal::new(0.0, s).expect("finite std").sample(rng)
                } else {
                    *x
                }
            })
            .collect();
        let mut u = self.feedback.control(&meas);
        for (i, ui) in u.iter_mut().enumerate() {
            *ui += uniform(rng, self.process_bound.get(i).copied().unwrap_or(0.0));
        }
        u
    }
}

fn simulate_one(
    plant: &Plant,
    trim: &Trim,
    config: &DataGenConfig,
    controller: Option<&StateFeedback>,
    index: usize,
) -> Result<Trajectory> {
    let n = plant.state_dim();
    let m = plant.input_dim();
    let steps = config.horizon + 1;
    let mut rng = trajectory_rng(config.seed, index);
    let x0 = if config.corners {
        corner(index, &config.initial_box)
    } else {
        config.initial_box.iter().map(|w| uniform(&mut rng, *w)).collect()
    };
    let mut xs = Matrix::zeros(n, steps);
    let mut us = Matrix::zeros(m, steps);
    let mut x = x0;
    let loop_law = controller.map(|feedback| DisturbedFeedback {
        feedback,
        noise_std: &config.measurement_noise_std,
        process_bound: &config.process_noise_bound,
    });
    for k in 0..steps {
        let u: Vec<f64> = match &loop_law {
            Some(law) => law.command(&x, &mut rng),
            None => (0..m).map(|_| uniform(&mut rng, config.input_bound)).collect(),
        };
        xs.set_col(k, &x);
        us.set_col(k, &u);
        if k + 1 < steps {
            x = integrate_with(
                |t, y| plant.deviation_rhs(trim, t, y, &u),
                k as f64 * config.dt,
                &x,
                config.dt,
                config.integrator,
            )?;
        }
    }
    let envelope_violation = match &config.envelope {
        Some(env) => (0..steps).any(|k| (0..n).any(|i| xs.get(i, k).abs() > env[i])),
        None => false,
    };
    Ok(Trajectory {
        x: xs,
        u: us,
        residual: None,
        envelope_violation,
    })
}

/// Synthesizes a dataset; each trajectory draws from its own RNG stream so
/// the result does not depend on `workers`.
pub fn generate_dataset(plant: &Plant, config: &DataGenConfig, workers: usize) -> Result<Dataset> {
    config.validate(plant)?;
    let trim = plant.trim();
    let controller = if config.closed_loop {
        let weights = config.lqr.clone().unwrap_or_else(|| match plant.kind {
            PlantKind::Uas => uas_default_lqr_weights(),
            _ => LqrWeights::identity(plant.state_dim(), plant.input_dim()),
        });
        Some(lqr_controller(&plant.nominal_model(config.dt)?, &weights)?)
    } else {
        None
    };
    let indices: Vec<usize> = (0..config.trajectories).collect();
    let runs = map_ordered(&indices, workers, |_, &i| {
        simulate_one(plant, &trim, config, controller.as_ref(), i)
    });
    let trajectories = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        plant: plant.kind,
        dt: config.dt,
        trim,
        seed: config.seed,
        trajectories,
    })
}
