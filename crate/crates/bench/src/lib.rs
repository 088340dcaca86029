//! Fixtures shared by the criterion benches.

use copert_core::discrepancy::{Batch, DiscrepancyModel, LiftingArchitecture, Mode, ModelInit};
use copert_core::lti::observer_gain;
use copert_core::plants::{generate_dataset, DataGenConfig, Dataset, Plant, PlantKind, Trajectory};
use copert_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Pendulum model with the benchmark lifting network and `lifted_dim` N.
pub fn pendulum_model(lifted_dim: usize, mode: Mode) -> DiscrepancyModel {
    let plant = Plant::new(PlantKind::Pendulum);
    let nominal = plant.nominal_model(0.1).expect("nominal model");
    let gain = observer_gain(&nominal.a, &nominal.c, &Matrix::identity(2), &Matrix::identity(2)).expect("gain");
    let init = ModelInit {
        lifting: LiftingArchitecture::default(),
        zero_feedthrough: false,
        ..ModelInit::new(lifted_dim)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    DiscrepancyModel::initialize(nominal, gain, plant.trim(), mode, &init, &mut rng).expect("model")
}

/// `count` pendulum trajectories of `horizon` steps with residuals for `model`.
pub fn pendulum_data(model: &DiscrepancyModel, count: usize, horizon: usize) -> Dataset {
    let plant = Plant::new(PlantKind::Pendulum);
    let cfg = DataGenConfig {
        trajectories: count,
        horizon,
        seed: 2,
        ..DataGenConfig::benchmark(PlantKind::Pendulum)
    };
    let mut ds = generate_dataset(&plant, &cfg, 1).expect("dataset");
    ds.attach_residuals(&model.coprime().expect("coprime factors"))
        .expect("residuals");
    ds
}

pub fn batch(ds: &Dataset, horizon: usize, mode: Mode) -> Batch {
    let refs: Vec<&Trajectory> = ds.trajectories.iter().collect();
    Batch::new(&refs, horizon, mode).expect("batch")
}
