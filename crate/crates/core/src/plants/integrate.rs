use serde::{Deserialize, Serialize};

use super::{Plant, Trim};
use crate::numkernel::Matrix;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorOptions {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self { rtol: 1e-3, atol: 1e-6 }
    }
}

const MIN_STEP_FRACTION: f64 = 1e-12;
const SAFETY: f64 = 0.9;
/// Largest step as a fraction of the sample interval.
const MAX_STEP_FRACTION: f64 = 0.1;

/// Advances `ẏ = f(t, y)` from `t0` to `t0 + dt` with the Bogacki–Shampine
/// 3(2) pair. Steps never exceed `dt / 10`.
pub fn integrate_with<F>(mut f: F, t0: f64, y0: &[f64], dt: f64, opts: IntegratorOptions) -> Result<Vec<f64>>
where
    F: FnMut(f64, &[f64]) -> Vec<f64>,
{
    let n = y0.len();
    let t_end = t0 + dt;
    let mut t = t0;
    let mut y = y0.to_vec();
    let h_max = MAX_STEP_FRACTION * dt;
    let mut h = h_max;
    let mut tmp = vec![0.0; n];
    let mut k1 = f(t, &y);
    while t_end - t > 1e-14 * dt.max(t_end.abs()) {
        h = h.min(t_end - t);
        if h < MIN_STEP_FRACTION * dt {
            return Err(Error::StepUnderflow { t, h });
        }
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        let k2 = f(t + 0.5 * h, &tmp);
        for i in 0..n {
            tmp[i] = y[i] + 0.75 * h * k2[i];
        }
        let k3 = f(t + 0.75 * h, &tmp);
        let ynew: Vec<f64> = (0..n)
            .map(|i| y[i] + h * (2.0 / 9.0 * k1[i] + 1.0 / 3.0 * k2[i] + 4.0 / 9.0 * k3[i]))
            .collect();
        let k4 = f(t + h, &ynew);
        let mut err = 0.0f64;
        for i in 0..n {
            let e = h * (-5.0 / 72.0 * k1[i] + 1.0 / 12.0 * k2[i] + 1.0 / 9.0 * k3[i] - 0.125 * k4[i]);
            let scale = (opts.rtol * y[i].abs().max(ynew[i].abs())).max(opts.atol);
            err = err.max(e.abs() / scale);
        }
        if !err.is_finite() {
            h *= 0.2;
            continue;
        }
        if err <= 1.0 {
            t += h;
            y = ynew;
            k1 = k4;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (SAFETY * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0)
        };
        h = (h * factor).min(h_max);
    }
    Ok(y)
}

fn check_dims(plant: &Plant, x0: &[f64], u_seq: &Matrix) -> Result<()> {
    if x0.len() != plant.state_dim() || u_seq.rows() != plant.input_dim() {
        return Err(Error::Dimension(format!(
            "{} expects state {} and input {}, got {} and {} rows",
            plant.kind.name(),
            plant.state_dim(),
            plant.input_dim(),
            x0.len(),
            u_seq.rows()
        )));
    }
    Ok(())
}

/// Simulates the plant under inputs held over each sample interval. Column
/// `k` of `u_seq` acts on `[k dt, (k+1) dt)`; the result has `u_seq.cols()`
/// columns starting with `x0`.
pub fn integrate(plant: &Plant, x0: &[f64], u_seq: &Matrix, dt: f64, opts: IntegratorOptions) -> Result<Matrix> {
    check_dims(plant, x0, u_seq)?;
    let steps = u_seq.cols();
    let mut out = Matrix::zeros(x0.len(), steps);
    let mut x = x0.to_vec();
    for k in 0..steps {
        out.set_col(k, &x);
        if k + 1 < steps {
            let u = u_seq.col(k);
            x = integrate_with(|_, y| plant.rhs(y, &u), k as f64 * dt, &x, dt, opts)?;
        }
    }
    Ok(out)
}

/// As [`integrate`], in deviation coordinates about a (possibly drifting) trim.
pub fn integrate_deviation(
    plant: &Plant,
    trim: &Trim,
    x0bar: &[f64],
    ubar_seq: &Matrix,
    dt: f64,
    opts: IntegratorOptions,
) -> Result<Matrix> {
    check_dims(plant, x0bar, ubar_seq)?;
    let steps = ubar_seq.cols();
    let mut out = Matrix::zeros(x0bar.len(), steps);
    let mut x = x0bar.to_vec();
    for k in 0..steps {
        out.set_col(k, &x);
        if k + 1 < steps {
            let u = ubar_seq.col(k);
            x = integrate_with(|t, y| plant.deviation_rhs(trim, t, y, &u), k as f64 * dt, &x, dt, opts)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plants::PlantKind;

    #[test]
    fn exponential_decay_single_step() {
        let y = integrate_with(|_, y| vec![-y[0]], 0.0, &[1.0], 0.1, IntegratorOptions::default()).unwrap();
        assert!((y[0] - 0.904837418).abs() < 1e-5);
    }

    #[test]
    fn error_tracks_tolerance() {
        let exact = (-1.0f64).exp();
        let mut errs = Vec::new();
        for tol in [1e-3, 1e-4, 1e-5, 1e-6] {
            let opts = IntegratorOptions {
                rtol: tol,
                atol: tol * 1e-3,
            };
            let y = integrate_with(|_, y| vec![-y[0]], 0.0, &[1.0], 1.0, opts).unwrap();
            let e = (y[0] - exact).abs();
            assert!(e < 10.0 * tol, "tol {tol}: error {e}");
            errs.push(e);
        }
        assert!(errs[3] < errs[0]);
    }

    #[test]
    fn origin_is_fixed() {
        let p = Plant::new(PlantKind::Pendulum);
        let xs = integrate(
            &p,
            &[0.0, 0.0],
            &Matrix::zeros(1, 11),
            0.1,
            IntegratorOptions::default(),
        )
        .unwrap();
        assert!(xs.as_slice().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tighter_tolerance_barely_moves_pendulum_endpoint() {
        let p = Plant::new(PlantKind::Pendulum);
        let x0 = [std::f64::consts::FRAC_PI_3, 0.0];
        let u = Matrix::zeros(1, 101);
        let a = integrate(&p, &x0, &u, 0.1, IntegratorOptions::default()).unwrap();
        let b = integrate(&p, &x0, &u, 0.1, IntegratorOptions { rtol: 5e-4, atol: 5e-7 }).unwrap();
        let diff = (&a.slice(0, 2, 100, 101).unwrap() - &b.slice(0, 2, 100, 101).unwrap()).max_abs();
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn uas_trim_is_stationary_in_deviation_coordinates() {
        let p = Plant::new(PlantKind::Uas);
        let trim = p.trim();
        let xs = integrate_deviation(
            &p,
            &trim,
            &[0.0; 6],
            &Matrix::zeros(3, 51),
            0.02,
            IntegratorOptions::default(),
        )
        .unwrap();
        assert!(xs.max_abs() < 1e-12);
    }
}
