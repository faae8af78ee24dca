//! Small dense symmetric positive-definite solvers.
//!
//! The row subproblems of the alternating least-squares sweeps are `R x R`
//! (rank-sized) normal equations, and the Holt-Winters fit solves systems of
//! size `m + 2`. Both are tiny, so an unblocked Cholesky factorization is
//! all that is needed.

use crate::scalar::{fl, Scalar};

/// In-place lower Cholesky factorization of a row-major `n x n` matrix.
/// Returns `false` when a pivot is non-positive or non-finite.
fn cholesky_in_place<T: Scalar>(a: &mut [T], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            let l = a[j * n + k];
            d -= l * l;
        }
        if !(d > T::zero()) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// Solve `L L^T x = b` given the lower factor from `cholesky_in_place`.
fn cholesky_solve<T: Scalar>(l: &[T], n: usize, b: &mut [T]) {
    // forward substitution: L y = b
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    // back substitution: L^T x = y
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// One Cholesky attempt on a copy of `a`; `None` when not positive definite.
pub(crate) fn try_solve_spd<T: Scalar>(a: &[T], b: &[T], n: usize) -> Option<Vec<T>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut l = a.to_vec();
    if !cholesky_in_place(&mut l, n) {
        return None;
    }
    let mut x = b.to_vec();
    cholesky_solve(&l, n, &mut x);
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Solve a (nominally) SPD system with a ridge fallback: on failure add
/// `scale * trace(a)/n` to the diagonal and retry, escalating once more
/// before giving up.
pub(crate) fn solve_spd_ridge<T: Scalar>(
    a: &[T],
    b: &[T],
    n: usize,
    ridge_scale: f64,
) -> Option<Vec<T>> {
    if let Some(x) = try_solve_spd(a, b, n) {
        return Some(x);
    }
    let mut trace = T::zero();
    for i in 0..n {
        trace += a[i * n + i];
    }
    let mut ridge = fl::<T>(ridge_scale) * trace / fl::<T>(n as f64);
    if !(ridge > T::zero()) {
        ridge = fl::<T>(ridge_scale);
    }
    for _ in 0..2 {
        let mut shifted = a.to_vec();
        for i in 0..n {
            shifted[i * n + i] += ridge;
        }
        if let Some(x) = try_solve_spd(&shifted, b, n) {
            return Some(x);
        }
        ridge *= fl::<T>(1e6);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_known_system() {
        // A = [[4,2],[2,3]], b = [8, 7] -> x = [1, 2]... check: 4+4=8, 2+6=8? no.
        // Solve explicitly: x = A^{-1} b with A^{-1} = 1/8 [[3,-2],[-2,4]]
        // x0 = (3*8 - 2*7)/8 = 10/8 = 1.25, x1 = (-2*8 + 4*7)/8 = 12/8 = 1.5
        let a = [4.0, 2.0, 2.0, 3.0];
        let b = [8.0, 7.0];
        let x = try_solve_spd(&a, &b, 2).unwrap();
        assert!((x[0] - 1.25).abs() < 1e-14);
        assert!((x[1] - 1.5).abs() < 1e-14);
    }

    #[test]
    fn ridge_rescues_singular_matrix() {
        // rank-1 matrix; plain Cholesky fails, ridge version returns something finite
        let a = [1.0, 1.0, 1.0, 1.0];
        let b = [2.0, 2.0];
        assert!(try_solve_spd(&a, &b, 2).is_none());
        let x = solve_spd_ridge(&a, &b, 2, 1e-9).unwrap();
        // least-norm-ish solution of the regularized system: close to [1, 1]
        assert!((x[0] - 1.0).abs() < 1e-3);
        assert!((x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn larger_system_roundtrip() {
        // random SPD: A = M^T M + I
        let n = 6;
        let mut m = vec![0.0f64; n * n];
        let mut s = 1u64;
        for v in m.iter_mut() {
            // tiny LCG; quality is irrelevant here
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            *v = (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
        }
        let mut a = vec![0.0f64; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = if i == j { 1.0 } else { 0.0 };
                for k in 0..n {
                    acc += m[k * n + i] * m[k * n + j];
                }
                a[i * n + j] = acc;
            }
        }
        let xtrue: Vec<f64> = (0..n).map(|i| i as f64 - 2.0).collect();
        let mut b = vec![0.0f64; n];
        for i in 0..n {
            for j in 0..n {
                b[i] += a[i * n + j] * xtrue[j];
            }
        }
        let x = try_solve_spd(&a, &b, n).unwrap();
        for i in 0..n {
            assert!((x[i] - xtrue[i]).abs() < 1e-10);
        }
    }
}
