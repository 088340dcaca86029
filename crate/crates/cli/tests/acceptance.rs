//! Acceptance criteria 1-10, one PASS/FAIL line each.
//!
//! Set `COPERT_ACCEPTANCE=1,5,8` to run a subset.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use copert_cli::commands::{certify, compare_traces};
use copert_cli::{load_model, save_model, Checkpoint, ExperimentConfig};
use copert_core::discrepancy::{
    assemble_g, direct_factorization, forward, lifted_model, perturbed_factorization, recover_g_direct, Batch,
    DiscrepancyModel, ForwardOptions, LiftingArchitecture, LossWeights, Mode, ModelInit, ModelNodes,
};
use copert_core::lti::{
    dlqr, hinf_norm, left_coprime, observer_gain, residual_rollout, simulate, spectral_radius, zoh_discretize,
    StateSpace,
};
use copert_core::normbounded::Dims;
use copert_core::numkernel::grad_check;
use copert_core::plants::{
    generate_dataset, integrate_with, trajectory_rng, DataGenConfig, Dataset, IntegratorOptions, Plant, PlantKind,
    Trajectory,
};
use copert_core::training::{evaluate, train, TrainOutcome};
use copert_core::{Error, Matrix};
use rand::Rng;

// Tolerances and budgets of the criteria.
const C1_DRAWS: usize = 500;
const C1_REL_TOL: f64 = 1e-6;
const C1_BUDGET_S: f64 = 120.0;
const C2_PLANTS: usize = 50;
const C2_HORIZON: usize = 200;
const C2_TOL: f64 = 1e-9;
const C3_HORIZON: usize = 100;
const C3_TOL: f64 = 1e-9;
const C3_ZERO_TOL: f64 = 1e-12;
const C4_SEEDS: u64 = 20;
const C4_TOL: f64 = 1e-4;
const C4_BUDGET_S: f64 = 60.0;
const C5_PRED: f64 = 1e-3;
const C5_RATIO: f64 = 10.0;
const C5_D_FROB: f64 = 1e-2;
const C5_BUDGET_S: f64 = 45.0 * 60.0;
const C6_SCENARIOS: usize = 20;
const C6_DURATION: f64 = 10.0;
const C6_FRACTION: f64 = 0.9;
const C8_TOL: f64 = 1e-9;
const C9_ZOH_TOL: f64 = 1e-9;
const C9_DLQR_TOL: f64 = 1e-8;
const C9_HINF_TOL: f64 = 1e-6;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Dataset and trained model of criterion 5, shared with 3, 6 and 8.
struct Pendulum {
    config: ExperimentConfig,
    data: Dataset,
    outcome: TrainOutcome,
    seconds: f64,
}

#[derive(Default)]
struct Shared {
    pendulum: Option<Pendulum>,
}

impl Shared {
    fn pendulum(&mut self) -> &Pendulum {
        self.pendulum.get_or_insert_with(train_pendulum)
    }
}

fn reduced_pendulum(mode: Mode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(PlantKind::Pendulum);
    cfg.data.trajectories = 500;
    cfg.data.horizon = 50;
    cfg.data.dt = 0.1;
    cfg.data.seed = 11;
    cfg.train.epochs = 300;
    cfg.train.batch_size = 64;
    cfg.train.horizon = 50;
    cfg.train.weights = LossWeights::new(0.1, 1e-5, 1e-5).unwrap();
    cfg.train.learning_rate = 1e-3;
    cfg.train.mode = mode;
    cfg.model.lifted_dim = 10;
    cfg
}

fn train_on(cfg: &ExperimentConfig, data: &Dataset) -> (Dataset, DiscrepancyModel, TrainOutcome) {
    let model = cfg.build_model(cfg.train.seed).expect("model builds");
    let mut ds = data.clone();
    if model.mode == Mode::Perturbation {
        ds.attach_residuals(&model.coprime().unwrap()).unwrap();
    }
    let out = train(&model, &ds, &cfg.train, 1, &mut |_| Ok(())).expect("training runs");
    (ds, model, out)
}

fn train_pendulum() -> Pendulum {
    let config = reduced_pendulum(Mode::Perturbation);
    let plant = Plant::new(PlantKind::Pendulum);
    let t = Instant::now();
    let raw = generate_dataset(&plant, &config.data, 1).unwrap();
    let (data, _, outcome) = train_on(&config, &raw);
    Pendulum {
        config,
        data,
        outcome,
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn checkpoint(config: &ExperimentConfig, model: &DiscrepancyModel, epoch: usize) -> Checkpoint {
    Checkpoint {
        config: config.clone(),
        epoch,
        model: model.clone(),
        adam: None,
        history: None,
    }
}

fn uniform_matrix(rng: &mut impl Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
}

fn val_set<'a>(ds: &'a Dataset, out: &TrainOutcome) -> Vec<&'a Trajectory> {
    out.val_indices.iter().map(|&i| &ds.trajectories[i]).collect()
}

fn c1(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let all = [(3, 1, 1), (4, 2, 3), (10, 3, 2), (20, 9, 6)];
    let per = C1_DRAWS / all.len();
    let mut worst_ratio = 0.0f64;
    let mut worst_rho = 0.0f64;
    for (i, &(nx, nu, ny)) in all.iter().enumerate() {
        let c = certify(Dims::new(nx, nu, ny), per, 100 + i as u64, 1e-3, 1.0).unwrap();
        worst_ratio = worst_ratio.max(c.max_ratio);
        worst_rho = worst_rho.max(c.max_spectral_radius);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst_rho < 1.0 && worst_ratio <= 1.0 + C1_REL_TOL && secs < C1_BUDGET_S,
        format!("{C1_DRAWS} draws: max rho(A) {worst_rho:.6}, max hinf/gamma {worst_ratio:.9}, {secs:.1} s"),
    )
}

fn c2(_: &mut Shared) -> Outcome {
    let mut worst = 0.0f64;
    let mut unstable = 0;
    for i in 0..C2_PLANTS {
        let mut rng = trajectory_rng(2, i);
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        let p = rng.random_range(1..=n);
        // Every other plant is open-loop unstable.
        let target = if i % 2 == 0 {
            rng.random_range(1.0..1.05)
        } else {
            rng.random_range(0.2..0.99)
        };
        let a = uniform_matrix(&mut rng, n, n, 1.0);
        let rho = spectral_radius(&a).unwrap();
        let a = if rho > 0.0 {
            a.scale(target / rho)
        } else {
            Matrix::identity(n).scale(target)
        };
        if spectral_radius(&a).unwrap() > 1.0 {
            unstable += 1;
        }
        let b = uniform_matrix(&mut rng, n, m, 1.0);
        let c = uniform_matrix(&mut rng, p, n, 1.0);
        let ss = StateSpace::new(a.clone(), b, c.clone(), Matrix::zeros(p, m), 0.1).unwrap();
        let gain = observer_gain(&a, &c, &Matrix::identity(n), &Matrix::identity(p)).unwrap();
        let cf = left_coprime(&ss, &gain).unwrap();
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let u = uniform_matrix(&mut rng, m, C2_HORIZON + 1, 1.0);
        let (_, y) = simulate(&ss, &x0, &u).unwrap();
        let r = residual_rollout(&cf, &u, &y, &x0).unwrap();
        worst = worst.max(r.max_abs());
    }
    outcome(
        worst < C2_TOL && unstable > 0,
        format!("{C2_PLANTS} plants ({unstable} unstable), T={C2_HORIZON}: max |r| {worst:.3e}"),
    )
}

/// Max residual of the factorization driven by G's own output, and max
/// output gap between G with zeroed perturbation blocks and P.
fn assembled_consistency(model: &DiscrepancyModel, seed: u64) -> (f64, f64) {
    let mut rng = trajectory_rng(seed, 0);
    let (n, m) = (model.state_dim(), model.input_dim());
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..=0.5)).collect();
    let u = uniform_matrix(&mut rng, m, C3_HORIZON + 1, 0.5);
    let g = assemble_g(model).unwrap();
    let z0 = g.initial_state(model, &x0).unwrap();
    let (_, y) = simulate(&g.system, &z0, &u).unwrap();
    let f = perturbed_factorization(model).unwrap();
    let neg: Vec<f64> = z0.iter().map(|v| -v).collect();
    let (_, r) = simulate(&f, &neg, &Matrix::vstack(&[&u, &y]).unwrap()).unwrap();

    let mut zero = model.clone();
    zero.theta.x = Matrix::zeros(zero.theta.x.rows(), zero.theta.x.cols());
    zero.theta.y = Matrix::zeros(zero.theta.y.rows(), zero.theta.y.cols());
    zero.theta.z = Matrix::zeros(zero.theta.z.rows(), zero.theta.z.cols());
    let g0 = assemble_g(&zero).unwrap();
    let (_, y0) = simulate(&g0.system, &g0.initial_state(&zero, &x0).unwrap(), &u).unwrap();
    let (_, yp) = simulate(&zero.nominal, &x0, &u).unwrap();
    (r.max_abs(), (&y0 - &yp).max_abs())
}

fn c3(shared: &mut Shared) -> Outcome {
    let pend = shared.pendulum();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.json");
    save_model(
        &checkpoint(&pend.config, &pend.outcome.best, pend.outcome.best_epoch),
        &path,
    )
    .unwrap();
    let mut models = vec![("trained pendulum", load_model(&path).unwrap().model)];
    for kind in [PlantKind::Vdp, PlantKind::Uas] {
        let mut cfg = ExperimentConfig::preset(kind);
        cfg.model.zero_feedthrough = false;
        cfg.model.init_std = 0.5;
        models.push((kind.name(), cfg.build_model(3).unwrap()));
    }
    let mut worst = (0.0f64, 0.0f64);
    for (i, (_, m)) in models.iter().enumerate() {
        let (r, z) = assembled_consistency(m, 30 + i as u64);
        worst = (worst.0.max(r), worst.1.max(z));
    }
    outcome(
        worst.0 < C3_TOL && worst.1 < C3_ZERO_TOL,
        format!(
            "{} checkpoints, T={C3_HORIZON}: max residual {:.3e}, zero-perturbation |G - P| {:.3e}",
            models.len(),
            worst.0,
            worst.1
        ),
    )
}

fn c4(_: &mut Shared) -> Outcome {
    let t = Instant::now();
    let plant = Plant::new(PlantKind::Pendulum);
    let nominal = plant.nominal_model(0.1).unwrap();
    let gain = observer_gain(&nominal.a, &nominal.c, &Matrix::identity(2), &Matrix::identity(2)).unwrap();
    let weights = LossWeights::default();
    let mut worst = 0.0f64;
    for seed in 0..C4_SEEDS {
        let init = ModelInit {
            lifting: LiftingArchitecture {
                hidden: vec![8],
                ..LiftingArchitecture::default()
            },
            init_std: 0.3,
            zero_feedthrough: false,
            ..ModelInit::new(3)
        };
        let mut rng = trajectory_rng(4, seed as usize);
        let model = DiscrepancyModel::initialize(
            nominal.clone(),
            gain.clone(),
            plant.trim(),
            Mode::Perturbation,
            &init,
            &mut rng,
        )
        .unwrap();
        let data = DataGenConfig {
            trajectories: 1,
            horizon: 5,
            seed,
            ..DataGenConfig::benchmark(PlantKind::Pendulum)
        };
        let mut ds = generate_dataset(&plant, &data, 1).unwrap();
        ds.attach_residuals(&model.coprime().unwrap()).unwrap();
        let refs: Vec<&Trajectory> = ds.trajectories.iter().collect();
        let batch = Batch::new(&refs, 5, Mode::Perturbation).unwrap();
        let err = grad_check(
            |tape, leaves| {
                let nodes = ModelNodes::from_ids(leaves);
                match forward(tape, &model, &nodes, &batch, &weights, ForwardOptions::default()) {
                    Ok(n) => Ok(n.total),
                    Err(Error::Kernel(k)) => Err(k),
                    Err(e) => panic!("{e}"),
                }
            },
            &model.params(),
            1e-6,
        )
        .unwrap();
        worst = worst.max(err);
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < C4_TOL && secs < C4_BUDGET_S,
        format!("{C4_SEEDS} seeds, n=2 m=1 N=3 T=5: max relative error {worst:.3e}, {secs:.1} s"),
    )
}

fn c5(shared: &mut Shared) -> Outcome {
    let pend = shared.pendulum();
    let out = &pend.outcome;
    let val = val_set(&pend.data, out);
    let m = evaluate(&out.best, &val, pend.config.train.horizon, 1).unwrap();
    let nominal = m.nominal_mse.expect("perturbation mode reports the nominal residual");
    let pass = m.pred < C5_PRED
        && m.pred * C5_RATIO <= nominal
        && m.d_frob < C5_D_FROB
        && m.audit_bound > m.hinf
        && pend.seconds < C5_BUDGET_S;
    outcome(
        pass,
        format!(
            "best epoch {}: val L_pred {:.3e} vs nominal {:.3e} ({:.1}x), ||D||_F {:.3e}, hinf {:.4} < gamma + ||D||_2 {:.4}, {:.1} s",
            out.best_epoch,
            m.pred,
            nominal,
            nominal / m.pred,
            m.d_frob,
            m.hinf,
            m.audit_bound,
            pend.seconds
        ),
    )
}

fn c6(shared: &mut Shared) -> Outcome {
    let pend = shared.pendulum();
    let ck = checkpoint(&pend.config, &pend.outcome.best, pend.outcome.best_epoch);
    // Seed distinct from the training data's.
    let traces = compare_traces(&ck, false, None, C6_SCENARIOS, C6_DURATION, 6006).unwrap();
    let mut mse: Vec<(f64, f64)> = traces.iter().map(|t| t.mse()).collect();
    let wins = mse.iter().filter(|(nom, learned)| learned < nom).count();
    let mean = |f: fn(&(f64, f64)) -> f64| mse.iter().map(f).sum::<f64>() / mse.len() as f64;
    let (mean_nom, mean_learned) = (mean(|p| p.0), mean(|p| p.1));
    // Wins split by how far the nominal model is from the plant.
    mse.sort_by(|a, b| a.0.total_cmp(&b.0));
    let half = mse.len() / 2;
    let count = |s: &[(f64, f64)]| s.iter().filter(|(nom, learned)| learned < nom).count();
    outcome(
        wins as f64 >= C6_FRACTION * C6_SCENARIOS as f64,
        format!(
            "G beats P in {wins}/{C6_SCENARIOS} scenarios of {C6_DURATION} s ({}/{half} where P is closer to the plant, {}/{} where it is farther); mean MSE nominal {mean_nom:.3e}, learned {mean_learned:.3e}",
            count(&mse[..half]),
            count(&mse[half..]),
            mse.len() - half
        ),
    )
}

fn c7(_: &mut Shared) -> Outcome {
    let mut cfg = ExperimentConfig::preset(PlantKind::Vdp);
    cfg.data.trajectories = 200;
    cfg.data.horizon = 50;
    cfg.data.seed = 13;
    cfg.train.epochs = 60;
    cfg.train.batch_size = 64;
    cfg.train.horizon = 50;
    let plant = Plant::new(PlantKind::Vdp);
    let raw = generate_dataset(&plant, &cfg.data, 1).unwrap();
    let model = cfg.build_model(cfg.train.seed).unwrap();
    let rho_p = spectral_radius(&model.nominal.a).unwrap();
    let rho_f = spectral_radius(&model.coprime().unwrap().realization.a).unwrap();
    let mut ds = raw;
    ds.attach_residuals(&model.coprime().unwrap()).unwrap();
    let result = train(&model, &ds, &cfg.train, 1, &mut |_| Ok(()));
    let out = match result {
        Ok(o) => o,
        Err(e) => return outcome(false, format!("training aborted: {e}")),
    };
    let finite = out
        .history
        .iter()
        .all(|r| r.train_pred.is_finite() && r.val_pred.is_finite());
    let rho_t = spectral_radius(&out.best.realized().unwrap().a).unwrap();
    let first = out.history[0].val_pred;
    let best = out.history[out.best_epoch].val_pred;
    outcome(
        rho_p > 1.0 && rho_f < 1.0 && rho_t < 1.0 && finite,
        format!(
            "rho(A_P) {rho_p:.4}, factor {rho_f:.4}, trained perturbation {rho_t:.4}; {} epochs at T=50 without NaN, val L_pred {first:.3e} -> {best:.3e}",
            cfg.train.epochs
        ),
    )
}

fn closed_loop_mse(ck: &Checkpoint, scenarios: usize) -> (f64, f64) {
    let traces = compare_traces(ck, true, None, scenarios, 5.0, 8008).unwrap();
    let n = traces.len() as f64;
    let nominal = traces.iter().map(|t| t.mse().0).sum::<f64>() / n;
    let learned = traces.iter().map(|t| t.mse().1).sum::<f64>() / n;
    (nominal, learned)
}

fn uas_limited(mode: Mode) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(PlantKind::Uas);
    cfg.data = DataGenConfig::uas_limited();
    cfg.train.epochs = 150;
    cfg.train.batch_size = 16;
    cfg.train.horizon = 250;
    cfg.train.mode = mode;
    cfg
}

fn c8(shared: &mut Shared) -> Outcome {
    // Direct mode on the reduced pendulum data.
    let pend = shared.pendulum();
    let cfg = reduced_pendulum(Mode::Direct);
    let (_, _, out) = train_on(&cfg, &pend.data);
    let first = out.history[0].val_pred;
    let best = out.history[out.best_epoch].val_pred;
    let converged = best.is_finite() && best < 0.1 * first;
    let model = &out.best;
    let g = recover_g_direct(model).unwrap();
    let mut rng = trajectory_rng(88, 0);
    let x0 = [rng.random_range(-0.5..=0.5), rng.random_range(-0.5..=0.5)];
    let u = uniform_matrix(&mut rng, 1, C3_HORIZON + 1, 0.5);
    let z0 = g.initial_state(model, &x0).unwrap();
    let (_, x) = simulate(&g.system, &z0, &u).unwrap();
    let neg: Vec<f64> = z0.iter().map(|v| -v).collect();
    let (_, r) = simulate(
        &direct_factorization(model).unwrap(),
        &neg,
        &Matrix::vstack(&[&u, &x]).unwrap(),
    )
    .unwrap();
    let identity = r.max_abs();

    // Limited UAS data: both modes, same closed-loop scenarios.
    let uas = Plant::new(PlantKind::Uas);
    let raw = generate_dataset(&uas, &DataGenConfig::uas_limited(), 1).unwrap();
    let mut mse = Vec::new();
    for mode in [Mode::Perturbation, Mode::Direct] {
        let cfg = uas_limited(mode);
        let (_, _, out) = train_on(&cfg, &raw);
        assert_eq!(lifted_model(&out.best).unwrap().mode, mode);
        mse.push(closed_loop_mse(&checkpoint(&cfg, &out.best, out.best_epoch), 16));
    }
    let (nominal, pert) = mse[0];
    let direct = mse[1].1;
    outcome(
        converged && identity < C8_TOL && pert < direct,
        format!(
            "pendulum direct: val L_pred {first:.3e} -> {best:.3e}, identity residual {identity:.3e}; UAS closed-loop MSE perturbation {pert:.3e} < direct {direct:.3e} (nominal {nominal:.3e})"
        ),
    )
}

fn c9(_: &mut Shared) -> Outcome {
    let mut zoh = 0.0f64;
    for (a, b, dt) in [(-0.5, 2.0, 0.1), (0.3, -1.0, 0.02), (-4.0, 0.7, 0.5)] {
        let (ad, bd) = zoh_discretize(&Matrix::filled(1, 1, a), &Matrix::filled(1, 1, b), dt).unwrap();
        let e = (a * dt).exp();
        zoh = zoh
            .max((ad.get(0, 0) - e).abs())
            .max((bd.get(0, 0) - (e - 1.0) / a * b).abs());
    }
    let dt = 0.1;
    let (ad, bd) = zoh_discretize(
        &Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]),
        &Matrix::from_rows(&[[0.0], [1.0]]),
        dt,
    )
    .unwrap();
    zoh = zoh.max((&ad - &Matrix::from_rows(&[[1.0, dt], [0.0, 1.0]])).max_abs());
    zoh = zoh.max((&bd - &Matrix::from_rows(&[[dt * dt / 2.0], [dt]])).max_abs());

    let one = Matrix::identity(1);
    let lqr = (dlqr(&one, &one, &one, &one).unwrap().cost.get(0, 0) - (1.0 + 5f64.sqrt()) / 2.0).abs();

    let scalar = |a: f64, b: f64, c: f64, d: f64| {
        let m = |v: f64| Matrix::filled(1, 1, v);
        hinf_norm(&StateSpace::new(m(a), m(b), m(c), m(d), 1.0).unwrap(), 1e-10)
            .unwrap()
            .norm
    };
    let mut hinf = 0.0f64;
    for (a, b, c, d) in [
        (0.5f64, 1.0f64, 1.0f64, 0.0f64),
        (-0.8, 2.0, 0.5, 0.0),
        (0.9, -1.0, 3.0, 0.0),
        (0.4, 1.0, 1.0, 0.3),
    ] {
        // First-order gains peak at ω = 0 or ω = π.
        let exact = (d + b * c / (1.0 - a)).abs().max((d - b * c / (1.0 + a)).abs());
        hinf = hinf.max((scalar(a, b, c, d) - exact).abs());
    }
    let allpass = 0.6;
    hinf = hinf.max((scalar(allpass, 1.0 - allpass * allpass, 1.0, -allpass) - 1.0).abs());

    let opts = IntegratorOptions::default();
    let mut integ_ok = true;
    let mut integ = 0.0f64;
    for (lambda, dt) in [(-1.0, 0.1), (-3.0, 0.05), (0.5, 0.2)] {
        let mut y = vec![1.0];
        for k in 0..20 {
            y = integrate_with(|_, y| vec![lambda * y[0]], k as f64 * dt, &y, dt, opts).unwrap();
        }
        let exact = (lambda * 20.0 * dt).exp();
        let err = (y[0] - exact).abs();
        integ = integ.max(err / exact.max(1.0));
        integ_ok &= err < 20.0 * opts.rtol * exact.max(1.0);
    }
    outcome(
        zoh < C9_ZOH_TOL && lqr < C9_DLQR_TOL && hinf < C9_HINF_TOL && integ_ok,
        format!(
            "ZOH {zoh:.2e}, dlqr {lqr:.2e}, H-inf {hinf:.2e}, integrator relative {integ:.2e} (rtol {})",
            opts.rtol
        ),
    )
}

fn run_cli(args: &[&str]) -> (i32, Vec<u8>) {
    let o = Command::new(env!("CARGO_BIN_EXE_copert"))
        .args(args)
        .output()
        .expect("binary runs");
    (o.status.code().unwrap_or(-1), o.stdout)
}

fn files(dir: &Path) -> Files {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

type Files = Vec<(String, Vec<u8>)>;

/// One command's name, exit code, standard output and files.
type Record = (String, i32, Vec<u8>, Files);

fn cli_session(root: &Path) -> Vec<Record> {
    let mut cfg = ExperimentConfig::preset(PlantKind::Pendulum);
    cfg.data.trajectories = 30;
    cfg.data.horizon = 20;
    cfg.train.epochs = 15;
    cfg.train.batch_size = 10;
    cfg.train.horizon = 20;
    cfg.train.checkpoint_every = 5;
    cfg.model.lifted_dim = 4;
    cfg.model.lifting.hidden = vec![8];
    let config = root.join("config.json");
    std::fs::write(&config, cfg.to_json()).unwrap();
    let s = |p: &Path| p.display().to_string();
    let (data, run, ol, cl, metrics) = (
        root.join("data"),
        root.join("run"),
        root.join("ol"),
        root.join("cl"),
        root.join("metrics.json"),
    );
    let best = run.join("best.json");
    let w = ["--workers", "1"];
    let commands: Vec<(&str, Vec<String>, Option<&Path>)> = vec![
        (
            "generate",
            vec![
                "generate",
                "--plant",
                "pendulum",
                "--config",
                &s(&config),
                "--out",
                &s(&data),
                "--seed",
                "9",
            ]
            .into_iter()
            .map(String::from)
            .chain(w.iter().map(|x| x.to_string()))
            .collect(),
            Some(&data),
        ),
        (
            "train",
            vec![
                "train",
                "--data",
                &s(&data),
                "--config",
                &s(&config),
                "--out",
                &s(&run),
                "--workers",
                "1",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            Some(&run),
        ),
        (
            "evaluate",
            vec![
                "evaluate",
                "--model",
                &s(&best),
                "--data",
                &s(&data),
                "--out",
                &s(&metrics),
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            None,
        ),
        (
            "compare-openloop",
            vec![
                "compare-openloop",
                "--model",
                &s(&best),
                "--out",
                &s(&ol),
                "--scenarios",
                "3",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            Some(&ol),
        ),
        (
            "compare-closedloop",
            vec![
                "compare-closedloop",
                "--model",
                &s(&best),
                "--out",
                &s(&cl),
                "--scenarios",
                "3",
            ]
            .into_iter()
            .map(String::from)
            .collect(),
            Some(&cl),
        ),
        (
            "hinf-check",
            vec!["hinf-check".into(), "--model".into(), s(&best)],
            None,
        ),
        (
            "certify-param",
            ["certify-param", "--draws", "20", "--seed", "7"]
                .map(String::from)
                .to_vec(),
            None,
        ),
    ];
    commands
        .into_iter()
        .map(|(name, args, dir)| {
            let refs: Vec<&str> = args.iter().map(String::as_str).collect();
            let (code, stdout) = run_cli(&refs);
            let mut produced = dir.map(files).unwrap_or_default();
            if name == "evaluate" {
                produced.push(("metrics.json".into(), std::fs::read(&metrics).unwrap_or_default()));
            }
            (name.to_string(), code, stdout, produced)
        })
        .collect()
}

fn c10(_: &mut Shared) -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = cli_session(a.path());
    let second = cli_session(b.path());
    let mut failed = Vec::new();
    let mut compared = 0;
    for (x, y) in first.iter().zip(&second) {
        compared += x.3.len();
        if x.1 != 0 || x.1 != y.1 || x.2 != y.2 || x.3 != y.3 {
            failed.push(x.0.clone());
        }
    }
    outcome(
        failed.is_empty(),
        if failed.is_empty() {
            format!(
                "{} commands re-run at --workers 1: {compared} files and all stdout identical",
                first.len()
            )
        } else {
            format!("differences or failures in: {}", failed.join(", "))
        },
    )
}

fn main() {
    type Check = fn(&mut Shared) -> Outcome;
    let checks: [(u32, &str, Check); 10] = [
        (1, "parametrization certification", c1),
        (2, "coprime identity", c2),
        (3, "assembled-G consistency", c3),
        (4, "gradient correctness", c4),
        (5, "reduced-scale pendulum training", c5),
        (6, "open-loop improvement", c6),
        (7, "unstable-plant handling", c7),
        (8, "direct mode", c8),
        (9, "numerics oracles", c9),
        (10, "determinism", c10),
    ];
    let selected: Option<Vec<u32>> = std::env::var("COPERT_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let mut shared = Shared::default();
    let mut failures = 0;
    let mut ran = 0;
    for (id, name, check) in checks {
        if selected.as_ref().is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let t = Instant::now();
        let o = check(&mut shared);
        ran += 1;
        if !o.pass {
            failures += 1;
        }
        println!(
            "{} criterion {id:>2} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} criteria passed", ran - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
