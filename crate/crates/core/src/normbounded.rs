//! Direct parametrization of stable LTI systems with an H∞ bound `γ = e^α`.
//!
//! Free parameters `(d, V, X, Y, Z, α)` map to a realization
//!
//! ```text
//! [A B; C D] = [Q Λ^{-1} 0; 0 I] · M · [Λ Q^T 0; 0 γ I]
//! ```
//!
//! with `Q` the Cayley transform of `V`, `Λ = diag(e^d)` and `M` a strict
//! contraction built from `(X, Y, Z, ε)`. Every parameter value yields a
//! stable system whose H∞ norm is at most `γ`; no constraint is ever checked
//! or enforced during optimization.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::lti::{matrix_norms, StateSpace};
use crate::numkernel::{Matrix, NodeId, Tape};
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_INIT_STD: f64 = 0.1;
/// `d` is clamped to this range before exponentiation.
pub const LOG_SCALE_LIMIT: f64 = 30.0;

/// State, input and output dimensions of a parametrized system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub nu: usize,
    pub ny: usize,
}

impl Dims {
    pub fn new(nx: usize, nu: usize, ny: usize) -> Self {
        Self { nx, nu, ny }
    }

    /// `nx + min(ny, nu)`
    pub fn n_bar(&self) -> usize {
        self.nx + self.ny.min(self.nu)
    }

    /// `|ny - nu|`
    pub fn n_tilde(&self) -> usize {
        self.ny.abs_diff(self.nu)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormBoundedTheta {
    pub d: Matrix,
    pub v: Matrix,
    pub x: Matrix,
    pub y: Matrix,
    pub z: Matrix,
    pub alpha: f64,
    pub epsilon: f64,
    pub dims: Dims,
}

impl NormBoundedTheta {
    pub fn zeros(dims: Dims, epsilon: f64) -> Self {
        let nb = dims.n_bar();
        Self {
            d: Matrix::zeros(dims.nx, 1),
            v: Matrix::zeros(dims.nx, dims.nx),
            x: Matrix::zeros(nb, nb),
            y: Matrix::zeros(nb, nb),
            z: Matrix::zeros(dims.n_tilde(), nb),
            alpha: 0.0,
            epsilon,
            dims,
        }
    }

    /// `d, V, X, Y, Z` i.i.d. normal with standard deviation `std`; `α = 0`.
    pub fn random<R: Rng + ?Sized>(dims: Dims, epsilon: f64, std: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std).expect("valid standard deviation");
        let mut draw = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| normal.sample(rng));
        let nb = dims.n_bar();
        Self {
            d: draw(dims.nx, 1),
            v: draw(dims.nx, dims.nx),
            x: draw(nb, nb),
            y: draw(nb, nb),
            z: draw(dims.n_tilde(), nb),
            alpha: 0.0,
            epsilon,
            dims,
        }
    }

    /// Rewrites `X, Y, Z` so that `N = blockdiag(N11, I)`, which makes the
    /// realized feedthrough exactly zero. The state block is left as drawn.
    pub fn zero_feedthrough(&mut self) {
        let nx = self.dims.nx;
        let nb = self.dims.n_bar();
        let diag = (1.0 - self.epsilon).max(0.0).sqrt();
        for i in 0..nb {
            for j in 0..nb {
                if i >= nx || j >= nx {
                    self.x.set(i, j, if i == j { diag } else { 0.0 });
                    self.y.set(i, j, 0.0);
                }
            }
        }
        for i in 0..self.z.rows() {
            for j in nx..nb {
                self.z.set(i, j, 0.0);
            }
        }
    }

    pub fn gamma(&self) -> f64 {
        self.alpha.exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        let nb = self.dims.n_bar();
        let expected = [
            (self.dims.nx, 1),
            (self.dims.nx, self.dims.nx),
            (nb, nb),
            (nb, nb),
            (self.dims.n_tilde(), nb),
        ];
        let actual = [
            self.d.shape(),
            self.v.shape(),
            self.x.shape(),
            self.y.shape(),
            self.z.shape(),
        ];
        if expected != actual {
            return Err(Error::Dimension(format!(
                "theta blocks {actual:?} do not match dims {:?} (expected {expected:?})",
                self.dims
            )));
        }
        if !self.alpha.is_finite() {
            return Err(crate::KernelError::NonFinite.into());
        }
        Ok(())
    }

    /// Trainable blocks in the order `d, V, X, Y, Z, α`.
    pub fn params(&self) -> Vec<Matrix> {
        vec![
            self.d.clone(),
            self.v.clone(),
            self.x.clone(),
            self.y.clone(),
            self.z.clone(),
            Matrix::filled(1, 1, self.alpha),
        ]
    }

    pub const PARAM_COUNT: usize = 6;

    pub fn set_params(&mut self, p: &[Matrix]) {
        assert_eq!(p.len(), Self::PARAM_COUNT);
        self.d = p[0].clone();
        self.v = p[1].clone();
        self.x = p[2].clone();
        self.y = p[3].clone();
        self.z = p[4].clone();
        self.alpha = p[5].get(0, 0);
    }

    pub fn record(&self, tape: &mut Tape, trainable: bool) -> ThetaNodes {
        let mut leaf = |m: Matrix| {
            if trainable {
                tape.param(m)
            } else {
                tape.constant(m)
            }
        };
        ThetaNodes {
            d: leaf(self.d.clone()),
            v: leaf(self.v.clone()),
            x: leaf(self.x.clone()),
            y: leaf(self.y.clone()),
            z: leaf(self.z.clone()),
            alpha: leaf(Matrix::filled(1, 1, self.alpha)),
        }
    }
}

/// Tape handles of the parameter blocks.
#[derive(Clone, Copy, Debug)]
pub struct ThetaNodes {
    pub d: NodeId,
    pub v: NodeId,
    pub x: NodeId,
    pub y: NodeId,
    pub z: NodeId,
    pub alpha: NodeId,
}

impl ThetaNodes {
    pub fn ids(&self) -> [NodeId; 6] {
        [self.d, self.v, self.x, self.y, self.z, self.alpha]
    }
}

/// Tape handles of a realized system.
#[derive(Clone, Copy, Debug)]
pub struct RealizedNodes {
    pub a: NodeId,
    pub b: NodeId,
    pub c: NodeId,
    pub d: NodeId,
    pub gamma: NodeId,
}

/// `Q = (I - V + V^T)(I + V - V^T)^{-1}`, computed as a solve. Both factors
/// are functions of the same skew matrix and commute.
pub fn cayley_on_tape(tape: &mut Tape, v: NodeId) -> Result<NodeId> {
    let n = tape.value(v).rows();
    let eye = tape.constant(Matrix::identity(n));
    let vt = tape.transpose(v)?;
    let skew = tape.sub(v, vt)?;
    let plus = tape.add(eye, skew)?;
    let minus = tape.sub(eye, skew)?;
    Ok(tape.linear_solve(plus, minus)?)
}

/// The contraction `M` (`M̄` or its transpose, by the output/input count).
pub fn contraction_on_tape(
    tape: &mut Tape,
    x: NodeId,
    y: NodeId,
    z: NodeId,
    epsilon: f64,
    dims: Dims,
) -> Result<NodeId> {
    let nb = dims.n_bar();
    let xtx = {
        let xt = tape.transpose(x)?;
        tape.matmul(xt, x)?
    };
    let ztz = {
        let zt = tape.transpose(z)?;
        tape.matmul(zt, z)?
    };
    let yt = tape.transpose(y)?;
    let yskew = tape.sub(y, yt)?;
    let eps_i = tape.constant(Matrix::identity(nb).scale(epsilon));
    let eye = tape.constant(Matrix::identity(nb));
    let n = {
        let s = tape.add(xtx, ztz)?;
        let s = tape.add(s, yskew)?;
        tape.add(s, eps_i)?
    };
    let i_plus_n = tape.add(eye, n)?;
    let i_minus_n = tape.sub(eye, n)?;
    let neg2z = tape.scale(z, -2.0)?;
    let stacked = tape.concat_rows(&[i_minus_n, neg2z])?;
    // stacked * (I + N)^{-1} = ((I + N)^{-T} stacked^T)^T
    let lhs = tape.transpose(i_plus_n)?;
    let rhs = tape.transpose(stacked)?;
    let m_bar_t = tape.linear_solve(lhs, rhs)?;
    if dims.ny >= dims.nu {
        Ok(tape.transpose(m_bar_t)?)
    } else {
        Ok(m_bar_t)
    }
}

/// Records the full realization.
pub fn realize_on_tape(tape: &mut Tape, theta: &ThetaNodes, dims: Dims, epsilon: f64) -> Result<RealizedNodes> {
    let Dims { nx, nu, ny } = dims;
    let q = cayley_on_tape(tape, theta.v)?;
    let qt = tape.transpose(q)?;
    let m = contraction_on_tape(tape, theta.x, theta.y, theta.z, epsilon, dims)?;

    let d_clamped = tape.clamp(theta.d, -LOG_SCALE_LIMIT, LOG_SCALE_LIMIT)?;
    let lam = {
        let e = tape.exp(d_clamped)?;
        tape.diag(e)?
    };
    let lam_inv = {
        let neg = tape.negate(d_clamped)?;
        let e = tape.exp(neg)?;
        tape.diag(e)?
    };
    let gamma = tape.exp(theta.alpha)?;

    let left = tape.matmul(q, lam_inv)?; // Q Λ^{-1}
    let right = tape.matmul(lam, qt)?; // Λ Q^T

    let m11 = tape.slice(m, 0..nx, 0..nx)?;
    let m12 = tape.slice(m, 0..nx, nx..nx + nu)?;
    let m21 = tape.slice(m, nx..nx + ny, 0..nx)?;
    let m22 = tape.slice(m, nx..nx + ny, nx..nx + nu)?;

    let a = {
        let t = tape.matmul(left, m11)?;
        tape.matmul(t, right)?
    };
    let b = {
        let t = tape.matmul(left, m12)?;
        tape.scale_by(t, gamma)?
    };
    let c = tape.matmul(m21, right)?;
    let d = tape.scale_by(m22, gamma)?;
    Ok(RealizedNodes { a, b, c, d, gamma })
}

/// A realized `(A, B, C, D)` with its certified bound.
#[derive(Clone, Debug, PartialEq)]
pub struct RealizedSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub gamma: f64,
}

impl RealizedSystem {
    pub fn state_space(&self, dt: f64) -> Result<StateSpace> {
        StateSpace::new(self.a.clone(), self.b.clone(), self.c.clone(), self.d.clone(), dt)
    }
}

pub fn cayley(v: &Matrix) -> Result<Matrix> {
    if !v.is_square() {
        return Err(crate::KernelError::NotSquare {
            op: "cayley",
            shape: v.shape(),
        }
        .into());
    }
    let mut tape = Tape::new();
    let vn = tape.constant(v.clone());
    let q = cayley_on_tape(&mut tape, vn)?;
    Ok(tape.value(q).clone())
}

pub fn contraction_m(x: &Matrix, y: &Matrix, z: &Matrix, epsilon: f64, dims: Dims) -> Result<Matrix> {
    let mut theta = NormBoundedTheta::zeros(dims, epsilon);
    theta.x = x.clone();
    theta.y = y.clone();
    theta.z = z.clone();
    theta.validate()?;
    let mut tape = Tape::new();
    let nodes = theta.record(&mut tape, false);
    let m = contraction_on_tape(&mut tape, nodes.x, nodes.y, nodes.z, epsilon, dims)?;
    Ok(tape.value(m).clone())
}

pub fn realize(theta: &NormBoundedTheta) -> Result<RealizedSystem> {
    theta.validate()?;
    let mut tape = Tape::new();
    let nodes = theta.record(&mut tape, false);
    let r = realize_on_tape(&mut tape, &nodes, theta.dims, theta.epsilon)?;
    Ok(RealizedSystem {
        a: tape.value(r.a).clone(),
        b: tape.value(r.b).clone(),
        c: tape.value(r.c).clone(),
        d: tape.value(r.d).clone(),
        gamma: tape.scalar(r.gamma),
    })
}

/// Perturbation model `(A, B, C)` with the feedthrough dropped from the
/// dynamics; `D` is kept for its penalty and for the audit bound.
#[derive(Clone, Debug, PartialEq)]
pub struct StrippedSystem {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub retained_d: Matrix,
    pub gamma: f64,
}

impl StrippedSystem {
    /// `γ + ||D||_2`, an upper bound on the H∞ norm of `(A, B, C, 0)`.
    pub fn audit_bound(&self) -> f64 {
        self.gamma + matrix_norms(&self.retained_d).0
    }

    pub fn d_frobenius(&self) -> f64 {
        self.retained_d.frobenius_norm()
    }

    pub fn state_space(&self, dt: f64) -> Result<StateSpace> {
        let d = Matrix::zeros(self.c.rows(), self.b.cols());
        StateSpace::new(self.a.clone(), self.b.clone(), self.c.clone(), d, dt)
    }
}

pub fn strip_feedthrough(rs: &RealizedSystem) -> StrippedSystem {
    StrippedSystem {
        a: rs.a.clone(),
        b: rs.b.clone(),
        c: rs.c.clone(),
        retained_d: rs.d.clone(),
        gamma: rs.gamma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::{hinf_norm, spectral_radius};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cayley_trivial_cases() {
        assert_eq!(cayley(&Matrix::zeros(3, 3)).unwrap(), Matrix::identity(3));
        assert_eq!(cayley(&Matrix::filled(1, 1, 4.2)).unwrap(), Matrix::identity(1));
    }

    #[test]
    fn cayley_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let v = Matrix::from_fn(5, 5, |_, _| normal.sample(&mut rng));
        let q = cayley(&v).unwrap();
        let err = q
            .matmul_tn(&q)
            .unwrap()
            .try_sub(&Matrix::identity(5))
            .unwrap()
            .frobenius_norm();
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn zero_parameters_give_scaled_identity() {
        let dims = Dims::new(1, 1, 1);
        let eps = 1e-3;
        let z = Matrix::zeros(0, 2);
        let m = contraction_m(&Matrix::zeros(2, 2), &Matrix::zeros(2, 2), &z, eps, dims).unwrap();
        let s = (1.0 - eps) / (1.0 + eps);
        assert!((&m - &Matrix::identity(2).scale(s)).max_abs() < 1e-15);
        assert!((s - 0.998001998).abs() < 1e-9);

        let rs = realize(&NormBoundedTheta::zeros(dims, eps)).unwrap();
        assert!((rs.a.get(0, 0) - s).abs() < 1e-15);
        assert_eq!(rs.b.get(0, 0), 0.0);
        assert_eq!(rs.c.get(0, 0), 0.0);
        assert!((rs.d.get(0, 0) - s).abs() < 1e-15);
        let h = hinf_norm(&rs.state_space(1.0).unwrap(), 1e-8).unwrap().norm;
        assert!((h - s).abs() < 1e-9 && h <= 1.0);

        let stripped = strip_feedthrough(&rs);
        assert_eq!(stripped.c, Matrix::zeros(1, 1));
    }

    #[test]
    fn transposed_branch_shape() {
        let dims = Dims::new(10, 3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let th = NormBoundedTheta::random(dims, 1e-3, 0.1, &mut rng);
        let m = contraction_m(&th.x, &th.y, &th.z, 1e-3, dims).unwrap();
        assert_eq!(m.shape(), (12, 13));
        let rs = realize(&th).unwrap();
        assert_eq!(rs.a.shape(), (10, 10));
        assert_eq!(rs.b.shape(), (10, 3));
        assert_eq!(rs.c.shape(), (2, 10));
        assert_eq!(rs.d.shape(), (2, 3));
    }

    #[test]
    fn alpha_shift_scales_bound_by_e() {
        let dims = Dims::new(3, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let th = NormBoundedTheta::random(dims, 1e-3, 0.5, &mut rng);
        let mut th2 = th.clone();
        th2.alpha += 1.0;
        let r1 = realize(&th).unwrap();
        let r2 = realize(&th2).unwrap();
        assert!((r2.gamma / r1.gamma - std::f64::consts::E).abs() < 1e-12);
        assert!((&r2.b - &r1.b.scale(std::f64::consts::E)).max_abs() < 1e-12);
        assert!((&r2.d - &r1.d.scale(std::f64::consts::E)).max_abs() < 1e-12);
        assert_eq!(r1.a, r2.a);
        assert_eq!(r1.c, r2.c);
    }

    #[test]
    fn realized_systems_are_stable() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let th = NormBoundedTheta::random(Dims::new(4, 2, 3), 1e-3, 1.0, &mut rng);
            let rs = realize(&th).unwrap();
            assert!(spectral_radius(&rs.a).unwrap() < 1.0);
        }
    }

    #[test]
    fn zero_feedthrough_init_realizes_zero_d() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for dims in [Dims::new(10, 3, 2), Dims::new(4, 2, 3), Dims::new(3, 1, 1)] {
            let mut th = NormBoundedTheta::random(dims, 1e-3, 0.3, &mut rng);
            th.zero_feedthrough();
            let rs = realize(&th).unwrap();
            assert!(rs.d.max_abs() < 1e-15, "{dims:?}: {}", rs.d.max_abs());
            assert!(spectral_radius(&rs.a).unwrap() < 1.0);
        }
    }

    #[test]
    fn zero_feedthrough_audit_bound_is_gamma() {
        let s = StrippedSystem {
            a: Matrix::zeros(1, 1),
            b: Matrix::zeros(1, 1),
            c: Matrix::zeros(1, 1),
            retained_d: Matrix::zeros(1, 1),
            gamma: 0.7,
        };
        assert_eq!(s.audit_bound(), 0.7);
    }

    #[test]
    fn shape_validation() {
        let mut th = NormBoundedTheta::zeros(Dims::new(2, 1, 1), 1e-3);
        th.x = Matrix::zeros(2, 2);
        assert!(matches!(realize(&th), Err(Error::Dimension(_))));
        let mut th = NormBoundedTheta::zeros(Dims::new(2, 1, 1), 1e-3);
        th.epsilon = 0.0;
        assert!(matches!(realize(&th), Err(Error::Config(_))));
    }
}
