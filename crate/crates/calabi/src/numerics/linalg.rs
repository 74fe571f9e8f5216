//! Small dense linear algebra on row-major `&[f64]` buffers.
//!
//! Everything here targets the tiny systems that show up in this crate
//! (polytope dimensions n <= ~6). Routines are allocation-free where the
//! caller supplies scratch, which matters in the flow hot path.

use crate::error::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
/// `a` is n*n row-major and is destroyed; `b` becomes the solution.
pub fn solve_in_place(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    for k in 0..n {
        let mut piv = k;
        let mut best = a[k * n + k].abs();
        for i in k + 1..n {
            let v = a[i * n + k].abs();
            if v > best {
                best = v;
                piv = i;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(Error::SingularSystem);
        }
        if piv != k {
            for j in 0..n {
                a.swap(k * n + j, piv * n + j);
            }
            b.swap(k, piv);
        }
        let akk = a[k * n + k];
        for i in k + 1..n {
            let l = a[i * n + k] / akk;
            if l != 0.0 {
                for j in k..n {
                    a[i * n + j] -= l * a[k * n + j];
                }
                b[i] -= l * b[k];
            }
        }
    }
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= a[k * n + j] * b[j];
        }
        b[k] = s / a[k * n + k];
    }
    Ok(())
}

/// Cholesky factorization of a symmetric matrix; returns the lower factor in
/// `l` (row-major). Fails iff the matrix is not positive definite.
pub fn cholesky(a: &[f64], l: &mut [f64], n: usize) -> Option<()> {
    debug_assert_eq!(a.len(), n * n);
    l.copy_from_slice(a);
    for j in 0..n {
        let mut d = l[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        for i in j + 1..n {
            let mut s = l[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / dj;
        }
        for i in 0..j {
            l[i * n + j] = 0.0;
        }
    }
    Some(())
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
/// Returns the determinant. `l` is scratch for the factor.
pub fn spd_invert(a: &[f64], inv: &mut [f64], l: &mut [f64], n: usize) -> Option<f64> {
    cholesky(a, l, n)?;
    let mut det = 1.0;
    for j in 0..n {
        det *= l[j * n + j] * l[j * n + j];
    }
    // Invert L in place into inv (lower triangular inverse), then inv = L^{-T} L^{-1}.
    for i in 0..n * n {
        inv[i] = 0.0;
    }
    for j in 0..n {
        inv[j * n + j] = 1.0 / l[j * n + j];
        for i in j + 1..n {
            let mut s = 0.0;
            for k in j..i {
                s -= l[i * n + k] * inv[k * n + j];
            }
            inv[i * n + j] = s / l[i * n + i];
        }
    }
    // inv currently holds M = L^{-1} (lower). Replace with M^T M, symmetric.
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += inv[k * n + i] * inv[k * n + j];
            }
            l[i * n + j] = s;
            l[j * n + i] = s;
        }
    }
    inv.copy_from_slice(l);
    Some(det)
}

/// `out = a * b` for n*n row-major matrices.
#[inline]
pub fn matmul(a: &[f64], b: &[f64], out: &mut [f64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += a[i * n + k] * b[k * n + j];
            }
            out[i * n + j] = s;
        }
    }
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi method,
/// returned in ascending order. Deterministic sweep order.
pub fn sym_eigenvalues(a: &[f64], n: usize, work: &mut Vec<f64>) -> Vec<f64> {
    work.clear();
    work.extend_from_slice(a);
    let m = work;
    for _sweep in 0..50 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

/// Smallest eigenvalue of a symmetric matrix. Closed forms for n <= 2.
pub fn sym_min_eigenvalue(a: &[f64], n: usize) -> f64 {
    match n {
        1 => a[0],
        2 => {
            let tr = a[0] + a[3];
            let det = a[0] * a[3] - a[1] * a[2];
            let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
            0.5 * (tr - disc)
        }
        _ => {
            let mut work = Vec::new();
            sym_eigenvalues(a, n, &mut work)[0]
        }
    }
}

/// Symmetric positive definite inverse square root, `out = a^{-1/2}`.
pub fn spd_inv_sqrt(a: &[f64], out: &mut [f64], n: usize) -> Result<()> {
    // Jacobi with eigenvector accumulation; small n only, not a hot path.
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..60 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    1.0 / (theta - (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    for i in 0..n {
        let ev = m[i * n + i];
        if !(ev > 0.0) {
            return Err(Error::SingularSystem);
        }
    }
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for k in 0..n {
                s += v[i * n + k] * v[j * n + k] / m[k * n + k].sqrt();
            }
            out[i * n + j] = s;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_matches_hand_computed() {
        let mut a = vec![2.0, 1.0, 1.0, 3.0];
        let mut b = vec![5.0, 10.0];
        solve_in_place(&mut a, &mut b, 2).unwrap();
        assert!((b[0] - 1.0).abs() < 1e-12);
        assert!((b[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn spd_invert_roundtrip() {
        let a = vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let mut inv = vec![0.0; 9];
        let mut l = vec![0.0; 9];
        let det = spd_invert(&a, &mut inv, &mut l, 3).unwrap();
        assert!(det > 0.0);
        let mut prod = vec![0.0; 9];
        matmul(&a, &inv, &mut prod, 3);
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[i * 3 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = vec![1.0, 2.0, 2.0, 1.0];
        let mut l = vec![0.0; 4];
        assert!(cholesky(&a, &mut l, 2).is_none());
    }

    #[test]
    fn eigenvalues_of_diagonalizable() {
        let a = vec![2.0, 1.0, 1.0, 2.0];
        let ev = sym_eigenvalues(&a, 2, &mut Vec::new());
        assert!((ev[0] - 1.0).abs() < 1e-12);
        assert!((ev[1] - 3.0).abs() < 1e-12);
        assert!((sym_min_eigenvalue(&a, 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inv_sqrt_squares_to_inverse() {
        let a = vec![4.0, 0.0, 0.0, 9.0];
        let mut s = vec![0.0; 4];
        spd_inv_sqrt(&a, &mut s, 2).unwrap();
        assert!((s[0] - 0.5).abs() < 1e-12);
        assert!((s[3] - 1.0 / 3.0).abs() < 1e-12);
    }
}
