//! Banded LU factorization with partial pivoting.
//!
//! Column-oriented band storage in the LAPACK `gbtrf` layout: the factor of
//! an n x n matrix with `kl` subdiagonals and `ku` superdiagonals needs
//! `2*kl + ku + 1` rows per column to leave room for pivot fill-in.
//! The spline collocation systems are refactored once per grid shape and the
//! factors reused for every solve, so only the substitution cost shows up in
//! the flow loop.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    ldab: usize,
    /// data[j * ldab + (kl + ku + i - j)] = entry (i, j)
    data: Vec<f64>,
    ipiv: Vec<usize>,
}

impl BandedLu {
    /// Factor a banded matrix given by `entry(i, j)` for |i - j| within band.
    pub fn factor(
        n: usize,
        kl: usize,
        ku: usize,
        entry: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let ldab = 2 * kl + ku + 1;
        let mut data = vec![0.0; ldab * n];
        let kll = kl as isize;
        let kuu = ku as isize;
        for j in 0..n {
            let lo = (j as isize - kuu).max(0) as usize;
            let hi = (j as isize + kll).min(n as isize - 1) as usize;
            for i in lo..=hi {
                data[j * ldab + (kl + ku + i - j)] = entry(i, j);
            }
        }
        let mut ipiv = vec![0usize; n];
        let idx = |i: usize, j: usize| -> usize { j * ldab + (kl + ku + i - j) };
        for k in 0..n {
            // Pivot among rows k..=min(n-1, k+kl).
            let imax = (k + kl).min(n - 1);
            let mut piv = k;
            let mut best = data[idx(k, k)].abs();
            for i in k + 1..=imax {
                let v = data[idx(i, k)].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::SingularSystem);
            }
            ipiv[k] = piv;
            let jmax = (k + ku + kl).min(n - 1);
            if piv != k {
                for j in k..=jmax {
                    data.swap(idx(k, j), idx(piv, j));
                }
            }
            let pivval = data[idx(k, k)];
            for i in k + 1..=imax {
                let l = data[idx(i, k)] / pivval;
                data[idx(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..=jmax {
                        let u = data[idx(k, j)];
                        if u != 0.0 {
                            data[idx(i, j)] -= l * u;
                        }
                    }
                }
            }
        }
        Ok(Self { n, kl, ku, ldab, data, ipiv })
    }

    /// Solve in place using the stored factorization.
    pub fn solve(&self, b: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        let n = self.n;
        let idx = |i: usize, j: usize| -> usize { j * self.ldab + (self.kl + self.ku + i - j) };
        for k in 0..n {
            let piv = self.ipiv[k];
            if piv != k {
                b.swap(k, piv);
            }
            let imax = (k + self.kl).min(n - 1);
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=imax {
                    b[i] -= self.data[idx(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let jmax = (k + self.ku + self.kl).min(n - 1);
            let mut s = b[k];
            for j in k + 1..=jmax {
                s -= self.data[idx(k, j)] * b[j];
            }
            b[k] = s / self.data[idx(k, k)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::linalg::solve_in_place;
    use rand::{Rng, SeedableRng};

    #[test]
    fn banded_matches_dense_on_random_systems() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for trial in 0..40 {
            let n = 5 + (trial % 30);
            let kl = 4.min(n - 1);
            let ku = 4.min(n - 1);
            let mut dense = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let d = j as isize - i as isize;
                    if d >= -(kl as isize) && d <= ku as isize {
                        dense[i * n + j] = rng.gen_range(-1.0..1.0);
                    }
                }
                dense[i * n + i] += 3.0; // keep well conditioned
            }
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let lu = BandedLu::factor(n, kl, ku, |i, j| dense[i * n + j]).unwrap();
            let mut x = b.clone();
            lu.solve(&mut x);

            let mut dense2 = dense.clone();
            let mut y = b.clone();
            solve_in_place(&mut dense2, &mut y, n).unwrap();

            for i in 0..n {
                assert!(
                    (x[i] - y[i]).abs() < 1e-9,
                    "n={n} i={i} banded={} dense={}",
                    x[i],
                    y[i]
                );
            }
        }
    }

    #[test]
    fn banded_handles_pivot_rows() {
        // Small diagonal first entry forces a row interchange.
        let entries = [
            [1e-14, 2.0, 0.0, 0.0],
            [1.0, 1.0, 1.0, 0.0],
            [0.0, 1.0, 3.0, 1.0],
            [0.0, 0.0, 1.0, 2.0],
        ];
        let lu = BandedLu::factor(4, 1, 1, |i, j| entries[i][j]).unwrap();
        let mut b = vec![1.0, 2.0, 3.0, 4.0];
        lu.solve(&mut b);
        // Verify residual against the original matrix.
        for i in 0..4 {
            let mut s = 0.0;
            for j in 0..4 {
                s += entries[i][j] * b[j];
            }
            let rhs = [1.0, 2.0, 3.0, 4.0][i];
            assert!((s - rhs).abs() < 1e-9);
        }
    }
}
