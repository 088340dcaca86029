//! Nonlinear benchmark plants: a lightly destabilized pendulum, the Van der
//! Pol oscillator and a 3-DOF longitudinal UAS model.

mod datagen;
mod integrate;

pub use datagen::{generate_dataset, trajectory_rng, DataGenConfig, Dataset, DisturbedFeedback, Trajectory};
pub use integrate::{integrate, integrate_deviation, integrate_with, IntegratorOptions};

use serde::{Deserialize, Serialize};

use crate::lti::{dlqr, spectral_radius, zoh_discretize, LqrWeights, StateSpace};
use crate::numkernel::Matrix;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    Pendulum,
    Vdp,
    Uas,
}

impl PlantKind {
    pub fn name(self) -> &'static str {
        match self {
            PlantKind::Pendulum => "pendulum",
            PlantKind::Vdp => "vdp",
            PlantKind::Uas => "uas",
        }
    }
}

impl std::str::FromStr for PlantKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum" => Ok(PlantKind::Pendulum),
            "vdp" | "vanderpol" => Ok(PlantKind::Vdp),
            "uas" => Ok(PlantKind::Uas),
            other => Err(Error::Config(format!("unknown plant '{other}'"))),
        }
    }
}

/// Physical constants of the UAS model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UasParams {
    /// kg
    pub mass: f64,
    /// kg m^2
    pub inertia: f64,
    /// m/s^2
    pub gravity: f64,
    /// Trim airspeed, m/s.
    pub airspeed: f64,
}

impl Default for UasParams {
    fn default() -> Self {
        Self {
            mass: 5.71,
            inertia: 1.57,
            gravity: 9.81,
            airspeed: 15.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub kind: PlantKind,
    #[serde(default)]
    pub uas: UasParams,
}

/// Operating point `x*(t) = x + drift * t`, `u* = u`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Trim {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub drift: Vec<f64>,
}

impl Trim {
    pub fn origin(n: usize, m: usize) -> Self {
        Self {
            x: vec![0.0; n],
            u: vec![0.0; m],
            drift: vec![0.0; n],
        }
    }

    pub fn state_at(&self, t: f64) -> Vec<f64> {
        self.x.iter().zip(&self.drift).map(|(x, v)| x + v * t).collect()
    }

    pub fn is_origin(&self) -> bool {
        self.x.iter().chain(&self.u).chain(&self.drift).all(|v| *v == 0.0)
    }
}

/// UAS state ordering.
pub mod uas_index {
    pub const Q: usize = 0;
    pub const VX: usize = 1;
    pub const VZ: usize = 2;
    pub const THETA: usize = 3;
    pub const XC: usize = 4;
    pub const H: usize = 5;
}

impl Plant {
    pub fn new(kind: PlantKind) -> Self {
        Self {
            kind,
            uas: UasParams::default(),
        }
    }

    pub fn state_dim(&self) -> usize {
        match self.kind {
            PlantKind::Pendulum | PlantKind::Vdp => 2,
            PlantKind::Uas => 6,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            PlantKind::Pendulum | PlantKind::Vdp => 1,
            PlantKind::Uas => 3,
        }
    }

    pub fn state_names(&self) -> &'static [&'static str] {
        match self.kind {
            PlantKind::Pendulum | PlantKind::Vdp => &["x1", "x2"],
            PlantKind::Uas => &["q", "vx", "vz", "theta", "xc", "h"],
        }
    }

    /// Continuous-time vector field `ẋ = f(x, u)`.
    pub fn eval_dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.state_dim() || u.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "{} expects state {} and input {}, got {} and {}",
                self.kind.name(),
                self.state_dim(),
                self.input_dim(),
                x.len(),
                u.len()
            )));
        }
        Ok(self.rhs(x, u))
    }

    fn rhs(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match self.kind {
            PlantKind::Pendulum => vec![x[1], 0.01 * x[1] - x[0].sin() + u[0]],
            PlantKind::Vdp => vec![x[1], (1.0 - x[0] * x[0]) * x[1] - x[0] + u[0]],
            PlantKind::Uas => {
                let UasParams {
                    mass, inertia, gravity, ..
                } = self.uas;
                let [q, vx, vz, th, _xc, _h] = [x[0], x[1], x[2], x[3], x[4], x[5]];
                let [fx, fz, tau] = [u[0], u[1], u[2]];
                let (s, c) = th.sin_cos();
                vec![
                    tau / inertia,
                    -q * vz + fx / mass - gravity * s,
                    q * vx + fz / mass + gravity * c,
                    q,
                    vx * c + vz * s,
                    vx * s - vz * c,
                ]
            }
        }
    }

    /// Analytic Jacobians `(∂f/∂x, ∂f/∂u)`.
    pub fn linearize(&self, x: &[f64], u: &[f64]) -> Result<(Matrix, Matrix)> {
        self.eval_dynamics(x, u)?;
        Ok(match self.kind {
            PlantKind::Pendulum => (
                Matrix::from_rows(&[[0.0, 1.0], [-x[0].cos(), 0.01]]),
                Matrix::from_rows(&[[0.0], [1.0]]),
            ),
            PlantKind::Vdp => (
                Matrix::from_rows(&[[0.0, 1.0], [-2.0 * x[0] * x[1] - 1.0, 1.0 - x[0] * x[0]]]),
                Matrix::from_rows(&[[0.0], [1.0]]),
            ),
            PlantKind::Uas => {
                let UasParams {
                    mass, inertia, gravity, ..
                } = self.uas;
                let [q, vx, vz, th] = [x[0], x[1], x[2], x[3]];
                let (s, c) = th.sin_cos();
                let a = Matrix::from_rows(&[
                    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                    [-vz, 0.0, -q, -gravity * c, 0.0, 0.0],
                    [vx, q, 0.0, -gravity * s, 0.0, 0.0],
                    [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                    [0.0, c, s, -vx * s + vz * c, 0.0, 0.0],
                    [0.0, s, -c, vx * c + vz * s, 0.0, 0.0],
                ]);
                let b = Matrix::from_rows(&[
                    [0.0, 0.0, 1.0 / inertia],
                    [1.0 / mass, 0.0, 0.0],
                    [0.0, 1.0 / mass, 0.0],
                    [0.0, 0.0, 0.0],
                    [0.0, 0.0, 0.0],
                    [0.0, 0.0, 0.0],
                ]);
                (a, b)
            }
        })
    }

    /// Equilibrium of interest: the origin for pendulum and Van der Pol,
    /// level flight at the configured airspeed for the UAS.
    pub fn trim(&self) -> Trim {
        match self.kind {
            PlantKind::Uas => uas_trim(&self.uas, self.uas.airspeed),
            _ => Trim::origin(self.state_dim(), self.input_dim()),
        }
    }

    /// Vector field in deviation coordinates `x̄ = x - x*(t)`, `ū = u - u*`.
    pub fn deviation_rhs(&self, trim: &Trim, t: f64, xbar: &[f64], ubar: &[f64]) -> Vec<f64> {
        let xs = trim.state_at(t);
        let x: Vec<f64> = xbar.iter().zip(&xs).map(|(a, b)| a + b).collect();
        let u: Vec<f64> = ubar.iter().zip(&trim.u).map(|(a, b)| a + b).collect();
        self.rhs(&x, &u).iter().zip(&trim.drift).map(|(f, v)| f - v).collect()
    }

    /// ZOH-discretized linearization at the trim, with full-state output.
    pub fn nominal_model(&self, dt: f64) -> Result<StateSpace> {
        let trim = self.trim();
        let (ac, bc) = self.linearize(&trim.x, &trim.u)?;
        let (ad, bd) = zoh_discretize(&ac, &bc, dt)?;
        StateSpace::full_state(ad, bd, dt)
    }

    /// Default half-widths of the initial-state box.
    pub fn default_initial_box(&self) -> Vec<f64> {
        let third = std::f64::consts::FRAC_PI_3;
        match self.kind {
            PlantKind::Pendulum => vec![third, third],
            PlantKind::Vdp => vec![2.0, 2.0],
            PlantKind::Uas => vec![third, 5.0, 5.0, third, 5.0, 5.0],
        }
    }
}

/// Level-flight trim: `x* = (0, V, 0, 0, V t, 0)`, `u* = (0, -m g, 0)`.
pub fn uas_trim(params: &UasParams, airspeed: f64) -> Trim {
    let mut drift = vec![0.0; 6];
    drift[uas_index::XC] = airspeed;
    Trim {
        x: vec![0.0, airspeed, 0.0, 0.0, 0.0, 0.0],
        u: vec![0.0, -params.mass * params.gravity, 0.0],
        drift,
    }
}

/// Discrete state feedback about a trim: `u = u* - K (x_meas - x*(t))`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateFeedback {
    pub gain: Matrix,
}

impl StateFeedback {
    /// Deviation-coordinate control `ū = -K x̄_meas`.
    pub fn control(&self, xbar_meas: &[f64]) -> Vec<f64> {
        self.gain
            .mat_vec(xbar_meas)
            .expect("gain dimensions")
            .iter()
            .map(|v| -v)
            .collect()
    }
}

pub fn lqr_controller(nominal: &StateSpace, weights: &LqrWeights) -> Result<StateFeedback> {
    let gain = dlqr(&nominal.a, &nominal.b, &weights.q_matrix(), &weights.r_matrix())?.gain;
    let closed = nominal.a.try_sub(&nominal.b.matmul(&gain)?)?;
    let rho = spectral_radius(&closed)?;
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }
    Ok(StateFeedback { gain })
}

/// Data-generation controller weights for the UAS.
pub fn uas_default_lqr_weights() -> LqrWeights {
    LqrWeights {
        q: vec![10.0, 1.0, 1.0, 10.0, 0.1, 1.0],
        r: vec![0.1, 0.1, 1.0],
    }
}
