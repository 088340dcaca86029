//! Discrete-time LTI algebra: simulation, ZOH discretization, LQR and observer
//! gains, left coprime factorization, residual generation and norms.

use serde::{Deserialize, Serialize};

use crate::numkernel::{eigenvalues, expm, is_positive_definite, symmetric_eigenvalues, Lu, Matrix};
use crate::{Error, Result};

/// `x(k+1) = A x(k) + B u(k)`, `y(k) = C x(k) + D u(k)`.
///
/// `dt == 0` marks a continuous-time pair that has not been discretized.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpace {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub dt: f64,
}

impl StateSpace {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix, dt: f64) -> Result<Self> {
        let nx = a.rows();
        if !a.is_square() || b.rows() != nx || c.cols() != nx || d.rows() != c.rows() || d.cols() != b.cols() {
            return Err(Error::Dimension(format!(
                "A {:?}, B {:?}, C {:?}, D {:?}",
                a.shape(),
                b.shape(),
                c.shape(),
                d.shape()
            )));
        }
        if !a.is_finite() {
            return Err(crate::KernelError::NonFinite.into());
        }
        Ok(Self { a, b, c, d, dt })
    }

    /// Full-state output (`C = I`, `D = 0`).
    pub fn full_state(a: Matrix, b: Matrix, dt: f64) -> Result<Self> {
        let nx = a.rows();
        let nu = b.cols();
        Self::new(a, b, Matrix::identity(nx), Matrix::zeros(nx, nu), dt)
    }

    pub fn nx(&self) -> usize {
        self.a.rows()
    }

    pub fn nu(&self) -> usize {
        self.b.cols()
    }

    pub fn ny(&self) -> usize {
        self.c.rows()
    }

    pub fn is_discrete(&self) -> bool {
        self.dt > 0.0
    }

    pub fn is_strictly_proper(&self) -> bool {
        self.d.as_slice().iter().all(|v| *v == 0.0)
    }
}

/// Simulates a discrete system. `u_seq` holds one input per column for
/// `k = 0..=T`; the last input only enters `y(T)`. Returns `(states, outputs)`
/// with `T + 1` columns each.
pub fn simulate(ss: &StateSpace, x0: &[f64], u_seq: &Matrix) -> Result<(Matrix, Matrix)> {
    if !ss.is_discrete() {
        return Err(Error::Dimension(
            "simulate requires a discrete-time system (dt > 0)".into(),
        ));
    }
    if x0.len() != ss.nx() || u_seq.rows() != ss.nu() || u_seq.cols() == 0 {
        return Err(Error::Dimension(format!(
            "x0 has {} entries and inputs are {:?} for a system with nx = {}, nu = {}",
            x0.len(),
            u_seq.shape(),
            ss.nx(),
            ss.nu()
        )));
    }
    let steps = u_seq.cols();
    let mut states = Matrix::zeros(ss.nx(), steps);
    let mut outputs = Matrix::zeros(ss.ny(), steps);
    let mut x = x0.to_vec();
    for k in 0..steps {
        let u = u_seq.col(k);
        let y: Vec<f64> =
            ss.c.mat_vec(&x)?
                .iter()
                .zip(ss.d.mat_vec(&u)?)
                .map(|(a, b)| a + b)
                .collect();
        states.set_col(k, &x);
        outputs.set_col(k, &y);
        if k + 1 < steps {
            x =
                ss.a.mat_vec(&x)?
                    .iter()
                    .zip(ss.b.mat_vec(&u)?)
                    .map(|(a, b)| a + b)
                    .collect();
        }
    }
    Ok((states, outputs))
}

/// Zero-order-hold discretization from the exponential of the augmented
/// block matrix `[[Ac, Bc], [0, 0]] dt`.
pub fn zoh_discretize(ac: &Matrix, bc: &Matrix, dt: f64) -> Result<(Matrix, Matrix)> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("sample time must be positive, got {dt}")));
    }
    let n = ac.rows();
    let m = bc.cols();
    if !ac.is_square() || bc.rows() != n {
        return Err(Error::Dimension(format!("Ac {:?}, Bc {:?}", ac.shape(), bc.shape())));
    }
    let mut aug = Matrix::zeros(n + m, n + m);
    aug.set_block(0, 0, &ac.scale(dt));
    aug.set_block(0, n, &bc.scale(dt));
    let e = expm(&aug)?;
    Ok((e.slice(0, n, 0, n)?, e.slice(0, n, n, n + m)?))
}

/// Result of the discrete LQR design.
#[derive(Clone, Debug)]
pub struct LqrSolution {
    /// State-feedback gain `K` for `u = -K x`.
    pub gain: Matrix,
    /// Stabilizing Riccati solution.
    pub cost: Matrix,
    pub iterations: usize,
}

pub const RICCATI_TOL: f64 = 1e-10;
pub const RICCATI_MAX_ITER: usize = 10_000;

/// Discrete LQR by fixed-point iteration on the Riccati equation.
///
/// Iterates `P <- Q + A'PA - A'PB (R + B'PB)^{-1} B'PA` from `P = Q` until
/// `||P_{k+1} - P_k||_F < 1e-10 max(1, ||P||_F)`.
pub fn dlqr(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix) -> Result<LqrSolution> {
    let n = a.rows();
    let m = b.cols();
    if !a.is_square() || b.rows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    if !is_positive_definite(r) {
        return Err(Error::IndefiniteR);
    }
    let mut p = q.clone();
    let mut delta = f64::INFINITY;
    for it in 1..=RICCATI_MAX_ITER {
        let pa = p.matmul(a)?;
        let pb = p.matmul(b)?;
        let s = r.try_add(&b.matmul_tn(&pb)?)?;
        let bpa = b.matmul_tn(&pa)?;
        let k = Lu::factor(&s)?.solve(&bpa)?;
        let next = q.try_add(&a.matmul_tn(&pa)?)?.try_sub(&bpa.matmul_tn(&k)?)?;
        let next = symmetrize(&next);
        delta = next.try_sub(&p)?.frobenius_norm();
        if !delta.is_finite() {
            break;
        }
        p = next;
        if delta < RICCATI_TOL * p.frobenius_norm().max(1.0) {
            let gain = riccati_gain(a, b, r, &p)?;
            return Ok(LqrSolution {
                gain,
                cost: p,
                iterations: it,
            });
        }
    }
    Err(Error::RiccatiNoConvergence {
        iterations: RICCATI_MAX_ITER,
        delta,
    })
}

fn riccati_gain(a: &Matrix, b: &Matrix, r: &Matrix, p: &Matrix) -> Result<Matrix> {
    let pb = p.matmul(b)?;
    let s = r.try_add(&b.matmul_tn(&pb)?)?;
    let bpa = b.matmul_tn(&p.matmul(a)?)?;
    Ok(Lu::factor(&s)?.solve(&bpa)?)
}

fn symmetrize(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| 0.5 * (m.get(i, j) + m.get(j, i)))
}

/// Frobenius norm of the discrete Riccati residual for `P`.
pub fn riccati_residual(a: &Matrix, b: &Matrix, q: &Matrix, r: &Matrix, p: &Matrix) -> Result<f64> {
    let pa = p.matmul(a)?;
    let bpa = b.matmul_tn(&pa)?;
    let s = r.try_add(&b.matmul_tn(&p.matmul(b)?)?)?;
    let k = Lu::factor(&s)?.solve(&bpa)?;
    let res = a.matmul_tn(&pa)?.try_sub(p)?.try_sub(&bpa.matmul_tn(&k)?)?.try_add(q)?;
    Ok(res.frobenius_norm())
}

/// Output-injection gain `L` with `A + L C` stable, by LQR duality:
/// `L = -K^T` for `K = dlqr(A^T, C^T, Q, R)`.
pub fn observer_gain(a: &Matrix, c: &Matrix, q: &Matrix, r: &Matrix) -> Result<Matrix> {
    let k = dlqr(&a.transpose(), &c.transpose(), q, r)?.gain;
    let l = k.transpose().scale(-1.0);
    let rho = spectral_radius(&a.try_add(&l.matmul(c)?)?)?;
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }
    Ok(l)
}

/// Realization of the stacked left coprime factors `[-N~ M~]` of a plant,
/// driven by the stacked input `(u, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoprimeFactorization {
    pub realization: StateSpace,
    pub gain: Matrix,
}

/// Left coprime factorization with state matrix `A + L C`, input matrix
/// `[-B, L]`, output matrix `C` and feedthrough `[0, I]`.
pub fn left_coprime(ss: &StateSpace, gain: &Matrix) -> Result<CoprimeFactorization> {
    if gain.shape() != (ss.nx(), ss.ny()) {
        return Err(Error::Dimension(format!(
            "observer gain is {:?}, expected {:?}",
            gain.shape(),
            (ss.nx(), ss.ny())
        )));
    }
    if !ss.is_strictly_proper() {
        return Err(Error::Dimension(
            "left_coprime expects a strictly proper plant (D = 0)".into(),
        ));
    }
    let a = ss.a.try_add(&gain.matmul(&ss.c)?)?;
    let rho = spectral_radius(&a)?;
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }
    let b = Matrix::hstack(&[&ss.b.scale(-1.0), gain])?;
    let d = Matrix::hstack(&[&Matrix::zeros(ss.ny(), ss.nu()), &Matrix::identity(ss.ny())])?;
    let realization = StateSpace::new(a, b, ss.c.clone(), d, ss.dt)?;
    Ok(CoprimeFactorization {
        realization,
        gain: gain.clone(),
    })
}

/// Drives the factorization with measured `(u, y)`, starting from `-z0`.
/// The residual vanishes identically when the data come from the factored
/// plant itself started at `z0`.
pub fn residual_rollout(cf: &CoprimeFactorization, u_seq: &Matrix, y_seq: &Matrix, z0: &[f64]) -> Result<Matrix> {
    if u_seq.cols() != y_seq.cols() {
        return Err(Error::Dimension(format!(
            "input and output sequences differ in length: {} vs {}",
            u_seq.cols(),
            y_seq.cols()
        )));
    }
    let stacked = Matrix::vstack(&[u_seq, y_seq]).map_err(|_| {
        Error::Dimension(format!(
            "inputs {:?} and outputs {:?} cannot be stacked",
            u_seq.shape(),
            y_seq.shape()
        ))
    })?;
    let init: Vec<f64> = z0.iter().map(|v| -v).collect();
    let (_, r) = simulate(&cf.realization, &init, &stacked)?;
    Ok(r)
}

/// H∞-norm estimate and the frequency where it is attained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HinfNorm {
    pub norm: f64,
    pub omega: f64,
}

pub const HINF_GRID_POINTS: usize = 2048;

/// `sup_ω σ_max(C (e^{jω} I - A)^{-1} B + D)` over `ω ∈ [0, π]`, by a uniform
/// grid followed by golden-section refinement of the largest local peaks
/// until the bracket is narrower than `tol`.
pub fn hinf_norm(ss: &StateSpace, tol: f64) -> Result<HinfNorm> {
    hinf_norm_with_grid(ss, tol, HINF_GRID_POINTS)
}

pub fn hinf_norm_with_grid(ss: &StateSpace, tol: f64, grid_points: usize) -> Result<HinfNorm> {
    let rho = spectral_radius(&ss.a)?;
    if rho >= 1.0 {
        return Err(Error::Unstable { rho });
    }
    if ss.nx() == 0 || ss.nu() == 0 || ss.ny() == 0 {
        let norm = if ss.nu() == 0 || ss.ny() == 0 {
            0.0
        } else {
            matrix_norms(&ss.d).0
        };
        return Ok(HinfNorm { norm, omega: 0.0 });
    }
    let grid_points = grid_points.max(3);
    let step = std::f64::consts::PI / (grid_points - 1) as f64;
    let values: Vec<f64> = (0..grid_points)
        .map(|i| sigma_max_at(ss, i as f64 * step))
        .collect::<Result<_>>()?;

    let mut peaks: Vec<usize> = (0..grid_points)
        .filter(|&i| {
            let left = if i == 0 { f64::NEG_INFINITY } else { values[i - 1] };
            let right = if i + 1 == grid_points {
                f64::NEG_INFINITY
            } else {
                values[i + 1]
            };
            values[i] >= left && values[i] >= right
        })
        .collect();
    peaks.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    peaks.truncate(8);

    let mut best = HinfNorm {
        norm: values[peaks[0]],
        omega: peaks[0] as f64 * step,
    };
    for &i in &peaks {
        let lo = if i == 0 { 0.0 } else { (i - 1) as f64 * step };
        let hi = if i + 1 == grid_points {
            std::f64::consts::PI
        } else {
            (i + 1) as f64 * step
        };
        let (omega, norm) = golden_section_max(|w| sigma_max_at(ss, w), lo, hi, tol)?;
        for (w, v) in [(omega, norm), (lo, sigma_max_at(ss, lo)?), (hi, sigma_max_at(ss, hi)?)] {
            if v > best.norm {
                best = HinfNorm { norm: v, omega: w };
            }
        }
    }
    Ok(best)
}

fn golden_section_max<F: Fn(f64) -> Result<f64>>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<(f64, f64)> {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let tol = tol.max(1e-15);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
        }
    }
    Ok(if f1 > f2 { (x1, f1) } else { (x2, f2) })
}

/// Largest singular value of the frequency response at `omega`, using a
/// real `2n` augmented solve for `(e^{jω} I - A) X = B`.
pub fn sigma_max_at(ss: &StateSpace, omega: f64) -> Result<f64> {
    let n = ss.nx();
    let (s, c) = omega.sin_cos();
    let shifted = Matrix::identity(n).scale(c).try_sub(&ss.a)?;
    let eye_s = Matrix::identity(n).scale(s);
    let aug = Matrix::block(&[&[&shifted, &eye_s.scale(-1.0)], &[&eye_s, &shifted]])?;
    let rhs = Matrix::vstack(&[&ss.b, &Matrix::zeros(n, ss.nu())])?;
    let x = Lu::factor(&aug)?.solve(&rhs)?;
    let hr = ss.c.matmul(&x.slice(0, n, 0, ss.nu())?)?.try_add(&ss.d)?;
    let hi = ss.c.matmul(&x.slice(n, 2 * n, 0, ss.nu())?)?;
    complex_sigma_max(&hr, &hi)
}

/// `σ_max(Hr + j Hi)` from the real embedding `[[Hr, -Hi], [Hi, Hr]]`.
pub fn complex_sigma_max(hr: &Matrix, hi: &Matrix) -> Result<f64> {
    let emb = Matrix::block(&[&[hr, &hi.scale(-1.0)], &[hi, hr]])?;
    let gram = if emb.rows() < emb.cols() {
        emb.matmul_nt(&emb)?
    } else {
        emb.matmul_tn(&emb)?
    };
    let ev = symmetric_eigenvalues(&gram)?;
    Ok(ev.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// `(operator 2-norm, Frobenius norm)`. The 2-norm comes from power
/// iteration on `D^T D`.
pub fn matrix_norms(d: &Matrix) -> (f64, f64) {
    let fro = d.frobenius_norm();
    if fro == 0.0 {
        return (0.0, 0.0);
    }
    let gram = d.matmul_tn(d).expect("gram shape");
    let n = gram.rows();
    // deterministic start with components in every direction
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * ((i * 7919) % 13) as f64).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..100_000 {
        let mut w = gram.mat_vec(&v).expect("gram times vector");
        let next = dot(&v, &w);
        let norm = normalize(&mut w);
        if norm == 0.0 {
            break;
        }
        let converged = (next - lambda).abs() <= 1e-12 * next.abs().max(1e-300)
            && v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) < 1e-9;
        v = w;
        lambda = next;
        if converged {
            break;
        }
    }
    let op = lambda.max(0.0).sqrt().min(fro);
    (op, fro)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?.iter().map(|(re, im)| re.hypot(*im)).fold(0.0, f64::max))
}

/// Weights for LQR-type designs, serialized as diagonals or full matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrWeights {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
}

impl LqrWeights {
    pub fn identity(n: usize, m: usize) -> Self {
        Self {
            q: vec![1.0; n],
            r: vec![1.0; m],
        }
    }

    pub fn q_matrix(&self) -> Matrix {
        Matrix::diag(&self.q)
    }

    pub fn r_matrix(&self) -> Matrix {
        Matrix::diag(&self.r)
    }
}
