//! Small dense kernels on column-major slices.
//!
//! Matrices are stored column-major: entry `(i, j)` of a matrix with `rows`
//! rows lives at `j * rows + i`. Column `k` of a Jacobian is therefore the
//! contiguous slice `k * d .. (k + 1) * d`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::math;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    math::sqrt(dot(a, a))
}

pub fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// `out = m v` for a `rows × cols` matrix.
pub fn mat_vec(m: &[f64], rows: usize, v: &[f64], out: &mut [f64]) {
    out[..rows].fill(0.0);
    for (j, &vj) in v.iter().enumerate() {
        let col = &m[j * rows..(j + 1) * rows];
        for i in 0..rows {
            out[i] += col[i] * vj;
        }
    }
}

/// `out = mᵀ v` for a `rows × cols` matrix.
pub fn mat_t_vec(m: &[f64], rows: usize, v: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = dot(&m[j * rows..(j + 1) * rows], v);
    }
}

/// `out = a b` with `a` of shape `rows × inner` and `b` of shape `inner × cols`.
pub fn mat_mul(a: &[f64], b: &[f64], rows: usize, inner: usize, cols: usize, out: &mut [f64]) {
    for j in 0..cols {
        mat_vec(
            a,
            rows,
            &b[j * inner..(j + 1) * inner],
            &mut out[j * rows..(j + 1) * rows],
        );
    }
}

pub fn transpose(m: &[f64], d: usize) -> Vec<f64> {
    let mut t = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            t[i * d + j] = m[j * d + i];
        }
    }
    t
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| math::abs(x - y))
        .fold(0.0, f64::max)
}

/// Inverse of a square matrix by Gaussian elimination with partial pivoting.
pub fn inverse(m: &[f64], d: usize) -> Result<Vec<f64>> {
    let mut a = m.to_vec();
    let mut inv = identity(d);
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&r, &s| math::abs(a[col * d + r]).total_cmp(&math::abs(a[col * d + s])))
            .unwrap_or(col);
        let p = a[col * d + pivot];
        if p == 0.0 || !p.is_finite() {
            bail!(Numerical, "singular matrix in inverse (column {col})");
        }
        if pivot != col {
            for k in 0..d {
                a.swap(k * d + col, k * d + pivot);
                inv.swap(k * d + col, k * d + pivot);
            }
        }
        for k in 0..d {
            a[k * d + col] /= p;
            inv[k * d + col] /= p;
        }
        for r in 0..d {
            if r == col {
                continue;
            }
            let factor = a[col * d + r];
            if factor == 0.0 {
                continue;
            }
            for k in 0..d {
                a[k * d + r] -= factor * a[k * d + col];
                inv[k * d + r] -= factor * inv[k * d + col];
            }
        }
    }
    Ok(inv)
}

/// Solves `a x = rhs` in place by Gaussian elimination with partial
/// pivoting. `a` (column-major, `d × d`) is overwritten. Allocation-free.
pub fn solve_in_place(a: &mut [f64], d: usize, rhs: &mut [f64]) -> Result<()> {
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&r, &s| math::abs(a[col * d + r]).total_cmp(&math::abs(a[col * d + s])))
            .unwrap_or(col);
        let p = a[col * d + pivot];
        if p == 0.0 || !p.is_finite() {
            bail!(Numerical, "singular matrix in linear solve (column {col})");
        }
        if pivot != col {
            for k in 0..d {
                a.swap(k * d + col, k * d + pivot);
            }
            rhs.swap(col, pivot);
        }
        for r in col + 1..d {
            let factor = a[col * d + r] / p;
            if factor == 0.0 {
                continue;
            }
            for k in col..d {
                a[k * d + r] -= factor * a[k * d + col];
            }
            rhs[r] -= factor * rhs[col];
        }
    }
    for r in (0..d).rev() {
        let mut acc = rhs[r];
        for k in r + 1..d {
            acc -= a[k * d + r] * rhs[k];
        }
        rhs[r] = acc / a[r * d + r];
    }
    Ok(())
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The matrix is scaled by `2^-s` until its 1-norm is at most 1/2, where 24
/// Taylor terms leave a truncation error far below `1e-16` relative.
pub fn expm(m: &[f64], d: usize) -> Vec<f64> {
    let norm1 = (0..d)
        .map(|j| {
            m[j * d..(j + 1) * d]
                .iter()
                .map(|v| math::abs(*v))
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm1 * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let a: Vec<f64> = m.iter().map(|v| v * scale).collect();
    let mut result = identity(d);
    let mut term = identity(d);
    let mut next = vec![0.0; d * d];
    for k in 1..=24 {
        mat_mul(&a, &term, d, d, d, &mut next);
        let inv_k = 1.0 / k as f64;
        for (t, n) in term.iter_mut().zip(&next) {
            *t = n * inv_k;
        }
        for (r, t) in result.iter_mut().zip(&term) {
            *r += t;
        }
    }
    for _ in 0..squarings {
        mat_mul(&result, &result, d, d, d, &mut next);
        result.copy_from_slice(&next);
    }
    result
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: &[f64], d: usize) -> Vec<f64> {
    let mut a = m.to_vec();
    for _sweep in 0..64 {
        let off: f64 = (0..d)
            .flat_map(|j| (0..d).filter(move |&i| i != j).map(move |i| (i, j)))
            .map(|(i, j)| a[j * d + i] * a[j * d + i])
            .sum();
        if off <= 1e-30 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                let apq = a[q * d + p];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * d + p];
                let aqq = a[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (math::abs(theta) + math::sqrt(theta * theta + 1.0));
                let c = 1.0 / math::sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..d {
                    let akp = a[p * d + k];
                    let akq = a[q * d + k];
                    a[p * d + k] = c * akp - s * akq;
                    a[q * d + k] = s * akp + c * akq;
                }
                for k in 0..d {
                    let apk = a[k * d + p];
                    let aqk = a[k * d + q];
                    a[k * d + p] = c * apk - s * aqk;
                    a[k * d + q] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}

/// Solve a tridiagonal system with the Thomas algorithm.
///
/// `lower[0]` and `upper[n-1]` are ignored. Fails when a pivot vanishes,
/// which cannot happen for diagonally dominant systems.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
) -> Result<()> {
    let n = diag.len();
    let mut c_prime = vec![0.0; n];
    let mut denom = diag[0];
    if denom == 0.0 || !denom.is_finite() {
        bail!(Numerical, "zero pivot in tridiagonal solve at row 0");
    }
    c_prime[0] = upper[0] / denom;
    rhs[0] /= denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c_prime[i - 1];
        if denom == 0.0 || !denom.is_finite() {
            bail!(Numerical, "zero pivot in tridiagonal solve at row {i}");
        }
        c_prime[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c_prime[i] * rhs[i + 1];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn inverse_roundtrip() {
        let m = [2.0, 1.0, 0.5, 3.0];
        let inv = inverse(&m, 2).unwrap();
        let mut prod = [0.0; 4];
        mat_mul(&m, &inv, 2, 2, 2, &mut prod);
        assert!(max_abs_diff(&prod, &identity(2)) < 1e-15);
    }

    #[test]
    fn inverse_rejects_singular() {
        assert!(inverse(&[1.0, 2.0, 2.0, 4.0], 2).is_err());
    }

    #[test]
    fn expm_diagonal_and_nilpotent() {
        let e = expm(&[-1.0, 0.0, 0.0, -1.0], 2);
        assert_abs_diff_eq!(e[0], (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(e[3], (-1.0f64).exp(), epsilon = 1e-15);
        // [[0, 1], [0, 0]] in column-major order.
        let e = expm(&[0.0, 0.0, 3.0, 0.0], 2);
        assert_eq!(e, vec![1.0, 0.0, 3.0, 1.0]);
    }

    #[test]
    fn jacobi_eigenvalues() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
        let e = symmetric_eigenvalues(&[2.0, 1.0, 1.0, 2.0], 2);
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn thomas_matches_dense() {
        let lower = [0.0, -1.0, -1.0];
        let diag = [4.0, 4.0, 4.0];
        let upper = [-1.0, -1.0, 0.0];
        let mut rhs = [1.0, 2.0, 3.0];
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs).unwrap();
        assert_abs_diff_eq!(4.0 * rhs[0] - rhs[1], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(-rhs[0] + 4.0 * rhs[1] - rhs[2], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(-rhs[1] + 4.0 * rhs[2], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn solve_matches_inverse() {
        let m = [2.0, 1.0, 0.5, 1.0, 3.0, -1.0, 0.0, 0.25, 4.0];
        let b = [1.0, -2.0, 0.5];
        let inv = inverse(&m, 3).unwrap();
        let mut want = [0.0; 3];
        mat_vec(&inv, 3, &b, &mut want);
        let mut a = m;
        let mut x = b;
        solve_in_place(&mut a, 3, &mut x).unwrap();
        assert!(max_abs_diff(&x, &want) < 1e-14);
    }
}
