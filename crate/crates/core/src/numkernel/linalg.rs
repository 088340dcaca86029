//! Factorizations and matrix functions used off and on the tape.

use super::{KernelError, Matrix};

/// Pivots below this magnitude are treated as singular.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// LU factorization with partial pivoting, `P A = L U`, packed in one matrix.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self, KernelError> {
        if !a.is_square() {
            return Err(KernelError::NotSquare {
                op: "lu",
                shape: a.shape(),
            });
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, lu.get(i, k).abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(pivot >= PIVOT_TOLERANCE) {
                return Err(KernelError::Singular { pivot, index: k });
            }
            if p != k {
                perm.swap(p, k);
                let data = lu.as_mut_slice();
                for j in 0..n {
                    data.swap(p * n + j, k * n + j);
                }
            }
            let akk = lu.get(k, k);
            for i in k + 1..n {
                let f = lu.get(i, k) / akk;
                lu.set(i, k, f);
                if f != 0.0 {
                    let data = lu.as_mut_slice();
                    for j in k + 1..n {
                        data[i * n + j] -= f * data[k * n + j];
                    }
                }
            }
        }
        Ok(Self { lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.lu.rows()
    }

    /// Solves `A X = B`.
    pub fn solve(&self, b: &Matrix) -> Result<Matrix, KernelError> {
        let n = self.dim();
        if b.rows() != n {
            return Err(KernelError::ShapeMismatch {
                op: "linear_solve",
                left: (n, n),
                right: b.shape(),
            });
        }
        let m = b.cols();
        let mut x = Matrix::zeros(n, m);
        for (i, &p) in self.perm.iter().enumerate() {
            x.set_block(i, 0, &b.slice(p, p + 1, 0, m)?);
        }
        let lu = self.lu.as_slice();
        let xs = x.as_mut_slice();
        // forward: L y = P b (unit diagonal)
        for i in 0..n {
            for k in 0..i {
                let f = lu[i * n + k];
                if f != 0.0 {
                    for j in 0..m {
                        xs[i * m + j] -= f * xs[k * m + j];
                    }
                }
            }
        }
        // backward: U x = y
        for i in (0..n).rev() {
            for k in i + 1..n {
                let f = lu[i * n + k];
                if f != 0.0 {
                    for j in 0..m {
                        xs[i * m + j] -= f * xs[k * m + j];
                    }
                }
            }
            let d = lu[i * n + i];
            for j in 0..m {
                xs[i * m + j] /= d;
            }
        }
        Ok(x)
    }

    /// Solves `A^T X = B` with the same factorization.
    pub fn solve_transpose(&self, b: &Matrix) -> Result<Matrix, KernelError> {
        let n = self.dim();
        if b.rows() != n {
            return Err(KernelError::ShapeMismatch {
                op: "linear_solve_t",
                left: (n, n),
                right: b.shape(),
            });
        }
        let m = b.cols();
        let lu = self.lu.as_slice();
        let mut y = b.clone();
        let ys = y.as_mut_slice();
        // U^T w = b
        for i in 0..n {
            for k in 0..i {
                let f = lu[k * n + i];
                if f != 0.0 {
                    for j in 0..m {
                        ys[i * m + j] -= f * ys[k * m + j];
                    }
                }
            }
            let d = lu[i * n + i];
            for j in 0..m {
                ys[i * m + j] /= d;
            }
        }
        // L^T v = w
        for i in (0..n).rev() {
            for k in i + 1..n {
                let f = lu[k * n + i];
                if f != 0.0 {
                    for j in 0..m {
                        ys[i * m + j] -= f * ys[k * m + j];
                    }
                }
            }
        }
        // x = P^T v
        let mut x = Matrix::zeros(n, m);
        for (i, &p) in self.perm.iter().enumerate() {
            x.set_block(p, 0, &y.slice(i, i + 1, 0, m)?);
        }
        Ok(x)
    }
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn linear_solve(a: &Matrix, b: &Matrix) -> Result<Matrix, KernelError> {
    if b.rows() != a.rows() {
        return Err(KernelError::ShapeMismatch {
            op: "linear_solve",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Lu::factor(a)?.solve(b)
}

/// Matrix exponential by scaling and squaring with a degree-13 Taylor series.
pub fn expm(a: &Matrix) -> Result<Matrix, KernelError> {
    if !a.is_square() {
        return Err(KernelError::NotSquare {
            op: "expm",
            shape: a.shape(),
        });
    }
    let n = a.rows();
    let norm = a.norm_1();
    let squarings = if norm > 1.0 { norm.log2().ceil() as i32 } else { 0 };
    let scaled = a.scale(0.5f64.powi(squarings));

    // Horner form: I + A(I + A/2(I + A/3(... (I + A/13))))
    let eye = Matrix::identity(n);
    let mut acc = eye.clone();
    for k in (1..=13).rev() {
        acc = &eye + &scaled.matmul(&acc)?.scale(1.0 / k as f64);
    }
    for _ in 0..squarings {
        acc = acc.matmul(&acc)?;
    }
    Ok(acc)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(s: &Matrix) -> Result<Vec<f64>, KernelError> {
    if !s.is_square() {
        return Err(KernelError::NotSquare {
            op: "symmetric_eigenvalues",
            shape: s.shape(),
        });
    }
    let n = s.rows();
    let mut a = s.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum();
        let diag: f64 = (0..n).map(|i| a.get(i, i).powi(2)).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - sn * akq);
                    a.set(k, q, sn * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - sn * aqk);
                    a.set(q, k, sn * apk + c * aqk);
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    Ok(ev)
}

/// Eigenvalues `(re, im)` of a general real matrix via Hessenberg reduction
/// and Francis double-shift QR.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<(f64, f64)>, KernelError> {
    if !m.is_square() {
        return Err(KernelError::NotSquare {
            op: "eigenvalues",
            shape: m.shape(),
        });
    }
    let n = m.rows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    hessenberg(&mut a);
    hqr(&mut a)
}

fn hessenberg(a: &mut [Vec<f64>]) {
    let n = a.len();
    for m in 1..n.saturating_sub(1) {
        let mut x = 0.0f64;
        let mut i = m;
        for j in m..n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                i = j;
            }
        }
        if i != m {
            a.swap(i, m);
            for row in a.iter_mut() {
                row.swap(i, m);
            }
        }
        if x != 0.0 {
            for i in m + 1..n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut() {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
    for i in 2..n {
        for j in 0..i - 1 {
            a[i][j] = 0.0;
        }
    }
}

fn hqr(a: &mut [Vec<f64>]) -> Result<Vec<(f64, f64)>, KernelError> {
    let n = a.len();
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    while nn >= 0 {
        let mut its = 0;
        loop {
            let nu = nn as usize;
            let mut l = nu;
            while l >= 1 {
                let s = a[l - 1][l - 1].abs() + a[l][l].abs();
                let s = if s == 0.0 { anorm } else { s };
                if a[l][l - 1].abs() <= f64::EPSILON * s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            let x = a[nu][nu];
            if l == nu {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
                break;
            }
            let y = a[nu - 1][nu - 1];
            let w = a[nu][nu - 1] * a[nu - 1][nu];
            if l == nu - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                let z = q.abs().sqrt();
                let xx = x + t;
                if q >= 0.0 {
                    let z = p + z.copysign(p);
                    wr[nu - 1] = xx + z;
                    wr[nu] = if z != 0.0 { xx - w / z } else { xx + z };
                    wi[nu - 1] = 0.0;
                    wi[nu] = 0.0;
                } else {
                    wr[nu - 1] = xx + p;
                    wr[nu] = xx + p;
                    wi[nu - 1] = -z;
                    wi[nu] = z;
                }
                nn -= 2;
                break;
            }
            if its == 60 {
                return Err(KernelError::NoConvergence {
                    op: "eigenvalues",
                    iterations: its,
                });
            }
            let (mut x, mut y, mut w) = (x, y, w);
            if its == 10 || its == 20 {
                t += x;
                for i in 0..=nu {
                    a[i][i] -= x;
                }
                let s = a[nu][nu - 1].abs() + a[nu - 1][nu - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let mut m = nu - 2;
            loop {
                let z = a[m][m];
                r = x - z;
                let s = y - z;
                p = (r * s - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - r - s;
                r = a[m + 2][m + 1];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u <= f64::EPSILON * v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                a[i][i - 2] = 0.0;
                if i != m + 2 {
                    a[i][i - 3] = 0.0;
                }
            }
            let mut k = m;
            while k < nu {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = 0.0;
                    if k + 1 != nu {
                        r = a[k + 2][k - 1];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[k][j] + q * a[k + 1][j];
                        if k + 1 != nu {
                            pp += r * a[k + 2][j];
                            a[k + 2][j] -= pp * z;
                        }
                        a[k + 1][j] -= pp * y;
                        a[k][j] -= pp * x;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for i in l..=mmin {
                        let mut pp = x * a[i][k] + y * a[i][k + 1];
                        if k + 1 != nu {
                            pp += z * a[i][k + 2];
                            a[i][k + 2] -= pp * r;
                        }
                        a[i][k + 1] -= pp * q;
                        a[i][k] -= pp;
                    }
                }
                k += 1;
            }
            if nn < 0 {
                break;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).collect())
}

/// Cholesky factor check: true when `s` is symmetric positive definite.
pub fn is_positive_definite(s: &Matrix) -> bool {
    if !s.is_square() {
        return false;
    }
    let n = s.rows();
    let sym_tol = 1e-12 * (1.0 + s.max_abs());
    for i in 0..n {
        for j in 0..i {
            if (s.get(i, j) - s.get(j, i)).abs() > sym_tol {
                return false;
            }
        }
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = s.get(j, j);
        for k in 0..j {
            d -= l.get(j, k).powi(2);
        }
        if !(d > 0.0) {
            return false;
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut v = s.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, v / d);
        }
    }
    true
}
