//! Side-by-side simulation of the nonlinear plant, the nominal model `P` and
//! the learned lifted model `G` under identical inputs and disturbances.

use copert_core::discrepancy::{lifted_model, DiscrepancyModel};
use copert_core::lti::{simulate, StateSpace};
use copert_core::plants::{
    integrate_deviation, integrate_with, trajectory_rng, DisturbedFeedback, IntegratorOptions, Plant, StateFeedback,
};
use copert_core::{Matrix, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::numfmt::fmt17;

/// Per-step outputs (one column per sample) of the three systems.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub nonlinear: Matrix,
    pub nominal: Matrix,
    pub learned: Matrix,
}

fn channel_mse(a: &Matrix, b: &Matrix, i: usize) -> f64 {
    (0..a.cols()).map(|k| (a.get(i, k) - b.get(i, k)).powi(2)).sum::<f64>() / a.cols() as f64
}

impl Trace {
    /// Per-channel MSE against the nonlinear plant: `(nominal, learned)`.
    pub fn channel_mse(&self) -> Vec<(f64, f64)> {
        (0..self.nonlinear.rows())
            .map(|i| {
                (
                    channel_mse(&self.nominal, &self.nonlinear, i),
                    channel_mse(&self.learned, &self.nonlinear, i),
                )
            })
            .collect()
    }

    /// MSE over all channels and samples: `(nominal, learned)`.
    pub fn mse(&self) -> (f64, f64) {
        let per = self.channel_mse();
        let n = per.len() as f64;
        (
            per.iter().map(|p| p.0).sum::<f64>() / n,
            per.iter().map(|p| p.1).sum::<f64>() / n,
        )
    }

    /// Rows `k,t,channel,nonlinear,nominal,learned`.
    pub fn to_csv(&self, names: &[&str], dt: f64) -> String {
        let mut out = String::from("k,t,channel,nonlinear,nominal,learned\n");
        for k in 0..self.nonlinear.cols() {
            for (i, name) in names.iter().enumerate() {
                out.push_str(&format!(
                    "{k},{},{name},{},{},{}\n",
                    fmt17(k as f64 * dt),
                    fmt17(self.nonlinear.get(i, k)),
                    fmt17(self.nominal.get(i, k)),
                    fmt17(self.learned.get(i, k)),
                ));
            }
        }
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}

/// Initial state uniform in the box and i.i.d. uniform inputs held over
/// each sample, both from stream `index` of `seed`.
pub fn open_loop_scenario(
    initial_box: &[f64],
    input_bound: f64,
    inputs: usize,
    samples: usize,
    seed: u64,
    index: usize,
) -> (Vec<f64>, Matrix) {
    let mut rng = trajectory_rng(seed, index);
    let x0: Vec<f64> = initial_box.iter().map(|w| uniform(&mut rng, *w)).collect();
    let mut u = Matrix::zeros(inputs, samples);
    for k in 0..samples {
        for i in 0..inputs {
            u.set(i, k, uniform(&mut rng, input_bound));
        }
    }
    (x0, u)
}

/// Initial state uniform in the box, from stream `index` of `seed`.
pub fn closed_loop_initial_state(initial_box: &[f64], seed: u64, index: usize) -> Vec<f64> {
    let mut rng = trajectory_rng(seed, index);
    initial_box.iter().map(|w| uniform(&mut rng, *w)).collect()
}

pub fn run_open_loop(
    plant: &Plant,
    model: &DiscrepancyModel,
    x0: &[f64],
    inputs: &Matrix,
    integrator: IntegratorOptions,
) -> Result<Trace> {
    let nonlinear = integrate_deviation(plant, &model.trim, x0, inputs, model.dt(), integrator)?;
    let (_, nominal) = simulate(&model.nominal, x0, inputs)?;
    let g = lifted_model(model)?;
    let (_, learned) = simulate(&g.system, &g.initial_state(model, x0)?, inputs)?;
    Ok(Trace {
        nonlinear,
        nominal,
        learned,
    })
}

/// Output and next state of a strictly proper system.
fn linear_step(ss: &StateSpace, z: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let y = ss.c.mat_vec(z)?;
    let next =
        ss.a.mat_vec(z)?
            .iter()
            .zip(ss.b.mat_vec(u)?)
            .map(|(a, b)| a + b)
            .collect();
    Ok((y, next))
}

fn linear_closed_loop(
    ss: &StateSpace,
    z0: Vec<f64>,
    law: &DisturbedFeedback<'_>,
    samples: usize,
    seed: u64,
    index: usize,
) -> Result<Matrix> {
    let mut rng = trajectory_rng(seed, index);
    let mut out = Matrix::zeros(ss.ny(), samples);
    let mut z = z0;
    for k in 0..samples {
        let y = ss.c.mat_vec(&z)?;
        let u = law.command(&y, &mut rng);
        out.set_col(k, &y);
        z = linear_step(ss, &z, &u)?.1;
    }
    Ok(out)
}

/// Each system is regulated by the same feedback law acting on its own
/// output. Measurement and process noise come from stream `index` of `seed`,
/// restarted for each system so all three see the same disturbance sequence.
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    plant: &Plant,
    model: &DiscrepancyModel,
    feedback: &StateFeedback,
    noise_std: &[f64],
    process_bound: &[f64],
    x0: &[f64],
    samples: usize,
    seed: u64,
    index: usize,
    integrator: IntegratorOptions,
) -> Result<Trace> {
    let law = DisturbedFeedback {
        feedback,
        noise_std,
        process_bound,
    };
    let dt = model.dt();

    let mut rng = trajectory_rng(seed, index);
    let mut nonlinear = Matrix::zeros(x0.len(), samples);
    let mut x = x0.to_vec();
    for k in 0..samples {
        let u = law.command(&x, &mut rng);
        nonlinear.set_col(k, &x);
        if k + 1 < samples {
            x = integrate_with(
                |t, y| plant.deviation_rhs(&model.trim, t, y, &u),
                k as f64 * dt,
                &x,
                dt,
                integrator,
            )?;
        }
    }

    let nominal = linear_closed_loop(&model.nominal, x0.to_vec(), &law, samples, seed, index)?;
    let g = lifted_model(model)?;
    let learned = linear_closed_loop(&g.system, g.initial_state(model, x0)?, &law, samples, seed, index)?;
    Ok(Trace {
        nonlinear,
        nominal,
        learned,
    })
}
