//! Eigenvalues of real unsymmetric matrices.
//!
//! Pipeline: diagonal balancing, Householder reduction to upper Hessenberg
//! form, then Francis double-shift QR iterations with deflation. Only
//! eigenvalues are produced; no Schur vectors are accumulated. Arithmetic is
//! always `f64` regardless of the input scalar type.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numeric::{Real, Tensor};

/// Eigenvalues of a real square matrix, one entry per dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum {
    pub eigenvalues: Vec<Complex64>,
}

impl ComplexSpectrum {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn sum(&self) -> Complex64 {
        self.eigenvalues.iter().sum()
    }

    pub fn sum_abs(&self) -> f64 {
        self.eigenvalues.iter().map(|z| z.norm()).sum()
    }

    /// `Σλ / Σ|λ|` using the real part of the numerator (the imaginary part
    /// cancels across conjugate pairs). An all-zero spectrum gives 0.
    pub fn positivity(&self) -> f64 {
        let denom = self.sum_abs();
        if denom == 0.0 {
            0.0
        } else {
            (self.sum().re / denom).clamp(-1.0, 1.0)
        }
    }
}

/// QR sweeps allowed per matrix dimension before giving up.
pub const SWEEPS_PER_DIM: usize = 100;

pub fn eig_unsymmetric<T: Real>(m: &Tensor<T>) -> Result<ComplexSpectrum> {
    let (rows, cols) = m.dims2()?;
    if rows != cols || rows == 0 {
        return Err(Error::Shape(format!(
            "eigenvalues need a non-empty square matrix, got {rows}x{cols}"
        )));
    }
    if !m.all_finite() {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let n = rows;
    let mut a: Vec<f64> = m.data().iter().map(|v| v.as_f64()).collect();
    balance(&mut a, n);
    hessenberg(&mut a, n);
    hqr(&mut a, n)
}

fn balance(a: &mut [f64], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    loop {
        let mut done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[j * n + i].abs();
                    r += a[i * n + j].abs();
                }
            }
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= sqrdx;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= sqrdx;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for j in 0..n {
                    a[i * n + j] *= g;
                }
                for j in 0..n {
                    a[j * n + i] *= f;
                }
            }
        }
        if done {
            break;
        }
    }
}

fn hessenberg(a: &mut [f64], n: usize) {
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    for k in 0..n - 2 {
        let len = n - k - 1;
        let mut norm = 0.0;
        for i in 0..len {
            v[i] = a[(k + 1 + i) * n + k];
            norm += v[i] * v[i];
        }
        let norm = norm.sqrt();
        if norm == 0.0 {
            continue;
        }
        let alpha = if v[0] > 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vv: f64 = v[..len].iter().map(|x| x * x).sum();
        if vv == 0.0 {
            continue;
        }
        let scale = 2.0 / vv;
        // A ← H A
        for j in k..n {
            let mut s = 0.0;
            for i in 0..len {
                s += v[i] * a[(k + 1 + i) * n + j];
            }
            s *= scale;
            for i in 0..len {
                a[(k + 1 + i) * n + j] -= s * v[i];
            }
        }
        // A ← A H
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..len {
                s += a[i * n + k + 1 + j] * v[j];
            }
            s *= scale;
            for j in 0..len {
                a[i * n + k + 1 + j] -= s * v[j];
            }
        }
        a[(k + 1) * n + k] = alpha;
        for i in k + 2..n {
            a[i * n + k] = 0.0;
        }
    }
}

#[inline]
fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

fn hqr(a: &mut [f64], n: usize) -> Result<ComplexSpectrum> {
    let idx = |i: usize, j: usize| i * n + j;
    let eps = f64::EPSILON;
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[idx(i, j)].abs();
        }
    }
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    let cap = SWEEPS_PER_DIM * n;
    let mut sweeps = 0usize;
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let nu = nn as usize;
        let mut its = 0;
        loop {
            // Look for a negligible subdiagonal element.
            let mut l = nu;
            while l > 0 {
                let mut s = a[idx(l - 1, l - 1)].abs() + a[idx(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[idx(l, l - 1)].abs() <= eps * s {
                    a[idx(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[idx(nu, nu)];
            if l == nu {
                out[nu] = Complex64::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            let mut y = a[idx(nu - 1, nu - 1)];
            let mut w = a[idx(nu, nu - 1)] * a[idx(nu - 1, nu)];
            if l == nu - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    let z = p + sign(z, p);
                    out[nu - 1] = Complex64::new(x + z, 0.0);
                    out[nu] = if z != 0.0 {
                        Complex64::new(x - w / z, 0.0)
                    } else {
                        Complex64::new(x + z, 0.0)
                    };
                } else {
                    out[nu] = Complex64::new(x + p, -z);
                    out[nu - 1] = Complex64::new(x + p, z);
                }
                nn -= 2;
                break;
            }
            if sweeps >= cap {
                return Err(Error::Numerical(format!(
                    "QR iteration did not converge within {cap} sweeps"
                )));
            }
            if its == 10 || its == 20 {
                // Exceptional shift.
                t += x;
                for i in 0..=nu {
                    a[idx(i, i)] -= x;
                }
                let s = a[idx(nu, nu - 1)].abs() + a[idx(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            sweeps += 1;

            // Two consecutive small subdiagonal elements.
            let mut m = nu - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[idx(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[idx(m + 1, m)] + a[idx(m, m + 1)];
                q = a[idx(m + 1, m + 1)] - z - rr - ss;
                r = a[idx(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[idx(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs()
                    * (a[idx(m - 1, m - 1)].abs() + z.abs() + a[idx(m + 1, m + 1)].abs());
                if u <= eps * v {
                    break;
                }
                m -= 1;
            }
            for i in m..nu - 1 {
                a[idx(i + 2, i)] = 0.0;
                if i != m {
                    a[idx(i + 2, i - 1)] = 0.0;
                }
            }
            // Double-shift QR step on rows l..=nu and columns m..=nu.
            for k in m..nu {
                if k != m {
                    p = a[idx(k, k - 1)];
                    q = a[idx(k + 1, k - 1)];
                    r = if k + 1 != nu { a[idx(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s == 0.0 {
                    continue;
                }
                if k == m {
                    if l != m {
                        a[idx(k, k - 1)] = -a[idx(k, k - 1)];
                    }
                } else {
                    a[idx(k, k - 1)] = -s * x;
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in k..=nu {
                    let mut pp = a[idx(k, j)] + q * a[idx(k + 1, j)];
                    if k + 1 != nu {
                        pp += r * a[idx(k + 2, j)];
                        a[idx(k + 2, j)] -= pp * z;
                    }
                    a[idx(k + 1, j)] -= pp * y;
                    a[idx(k, j)] -= pp * x;
                }
                let mmin = if nu < k + 3 { nu } else { k + 3 };
                for i in l..=mmin {
                    let mut pp = x * a[idx(i, k)] + y * a[idx(i, k + 1)];
                    if k + 1 != nu {
                        pp += z * a[idx(i, k + 2)];
                        a[idx(i, k + 2)] -= pp * r;
                    }
                    a[idx(i, k + 1)] -= pp * q;
                    a[idx(i, k)] -= pp;
                }
            }
        }
    }
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Numerical("eigenvalues are not finite".into()));
    }
    Ok(ComplexSpectrum { eigenvalues: out })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted(mut v: Vec<Complex64>) -> Vec<Complex64> {
        v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        v
    }

    #[test]
    fn triangular() {
        let m = Tensor::from_rows(&[&[2.0f64, 1.0], &[0.0, 3.0]]).unwrap();
        let ev = sorted(eig_unsymmetric(&m).unwrap().eigenvalues);
        assert!((ev[0] - Complex64::new(2.0, 0.0)).norm() < 1e-12);
        assert!((ev[1] - Complex64::new(3.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rotation() {
        let m = Tensor::from_rows(&[&[0.0f64, -1.0], &[1.0, 0.0]]).unwrap();
        let ev = sorted(eig_unsymmetric(&m).unwrap().eigenvalues);
        assert!((ev[0] - Complex64::new(0.0, -1.0)).norm() < 1e-12);
        assert!((ev[1] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn one_by_one_and_zero_matrix() {
        let m = Tensor::from_rows(&[&[-4.5f64]]).unwrap();
        assert_eq!(eig_unsymmetric(&m).unwrap().eigenvalues, vec![Complex64::new(-4.5, 0.0)]);
        let z = Tensor::<f64>::zeros(&[5, 5]);
        let s = eig_unsymmetric(&z).unwrap();
        assert_eq!(s.len(), 5);
        assert_eq!(s.positivity(), 0.0);
    }

    #[test]
    fn companion_matrix_roots() {
        // x^3 - 6x^2 + 11x - 6 = (x-1)(x-2)(x-3)
        let m = Tensor::from_rows(&[&[6.0f64, -11.0, 6.0], &[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]])
            .unwrap();
        let ev = sorted(eig_unsymmetric(&m).unwrap().eigenvalues);
        for (z, want) in ev.iter().zip([1.0, 2.0, 3.0]) {
            assert!((z - Complex64::new(want, 0.0)).norm() < 1e-9, "{z}");
        }
    }

    #[test]
    fn rejects_non_square_and_non_finite() {
        assert!(eig_unsymmetric(&Tensor::<f64>::zeros(&[2, 3])).is_err());
        let mut m = Tensor::<f64>::eye(3);
        m.set(1, 2, f64::NAN);
        assert!(matches!(eig_unsymmetric(&m), Err(Error::Numerical(_))));
    }

    #[test]
    fn positivity_of_signed_identities() {
        let pos = eig_unsymmetric(&Tensor::<f64>::eye(4)).unwrap();
        assert_eq!(pos.positivity(), 1.0);
        let neg = eig_unsymmetric(&Tensor::<f64>::eye(4).map(|v| -v)).unwrap();
        assert_eq!(neg.positivity(), -1.0);
    }
}
