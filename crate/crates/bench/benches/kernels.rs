use copert_bench::{batch, pendulum_data, pendulum_model, random_matrix};
use copert_core::discrepancy::{loss, loss_and_gradients, ForwardOptions, LossWeights, Mode};
use copert_core::lti::{hinf_norm, StateSpace};
use copert_core::normbounded::{realize, realize_on_tape, Dims, NormBoundedTheta};
use copert_core::numkernel::{expm, Tape};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn matmul(c: &mut Criterion) {
    let mut g = c.benchmark_group("matmul");
    for n in [8, 32, 128] {
        let (a, b) = (random_matrix(n, n, 1), random_matrix(n, n, 2));
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| {
            bch.iter(|| a.matmul(black_box(&b)).unwrap())
        });
    }
    g.finish();
}

fn matrix_exponential(c: &mut Criterion) {
    let mut g = c.benchmark_group("expm");
    for n in [2, 8, 26] {
        let a = random_matrix(n, n, 3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bch, _| {
            bch.iter(|| expm(black_box(&a)).unwrap())
        });
    }
    g.finish();
}

fn theta(dims: Dims) -> NormBoundedTheta {
    NormBoundedTheta::random(dims, 1e-3, 0.5, &mut ChaCha8Rng::seed_from_u64(4))
}

fn hinf(c: &mut Criterion) {
    let mut g = c.benchmark_group("hinf_norm");
    g.sample_size(20);
    for dims in [Dims::new(4, 2, 3), Dims::new(20, 9, 6)] {
        let ss: StateSpace = realize(&theta(dims)).unwrap().state_space(1.0).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(dims.nx), &ss, |bch, ss| {
            bch.iter(|| hinf_norm(black_box(ss), 1e-10).unwrap())
        });
    }
    g.finish();
}

fn realize_backward(c: &mut Criterion) {
    let mut g = c.benchmark_group("realize_backward");
    for dims in [Dims::new(10, 1, 2), Dims::new(20, 3, 6)] {
        let th = theta(dims);
        g.bench_with_input(BenchmarkId::from_parameter(dims.nx), &th, |bch, th| {
            bch.iter(|| {
                let mut tape = Tape::new();
                let nodes = th.record(&mut tape, true);
                let rs = realize_on_tape(&mut tape, &nodes, th.dims, th.epsilon).unwrap();
                let s = tape.frobenius_norm(rs.a).unwrap();
                tape.backward(s).unwrap()
            })
        });
    }
    g.finish();
}

fn rollout_loss(c: &mut Criterion) {
    let mut g = c.benchmark_group("rollout_loss");
    g.sample_size(10);
    let weights = LossWeights::default();
    for mode in [Mode::Perturbation, Mode::Direct] {
        let model = pendulum_model(10, mode);
        let ds = pendulum_data(&model, 64, 50);
        let b = batch(&ds, 50, mode);
        g.bench_function(format!("forward/{}", mode.name()), |bch| {
            bch.iter(|| loss(&model, &b, &weights).unwrap())
        });
        g.bench_function(format!("forward_backward/{}", mode.name()), |bch| {
            bch.iter(|| loss_and_gradients(&model, &b, &weights, ForwardOptions::default()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(
    benches,
    matmul,
    matrix_exponential,
    hinf,
    realize_backward,
    rollout_loss
);
criterion_main!(benches);
