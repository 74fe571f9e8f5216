//! Finite-difference weight generation (Fornberg's recurrence).

/// Weights for derivatives 0..=m of a function at `z` from samples at `x`.
/// Returns `w` with `w[k][j]` the weight of sample j in the k-th derivative.
///
/// Exact for polynomials of degree < x.len(), which is what the spline end
/// conditions rely on.
pub fn fd_weights(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let nd = x.len();
    assert!(nd > m, "need more than m+1 nodes");
    let mut c = vec![vec![0.0; nd]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..nd {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_second_difference() {
        let w = fd_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[2][0] - 1.0).abs() < 1e-12);
        assert!((w[2][1] + 2.0).abs() < 1e-12);
        assert!((w[2][2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_sided_weights_exact_on_polynomials() {
        let nodes: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let w = fd_weights(0.0, &nodes, 4);
        // p(x) = x^5: p''(0) = 0, p''''(0) = 0.
        let p = |x: f64| x.powi(5);
        let d2: f64 = nodes.iter().zip(&w[2]).map(|(x, wj)| wj * p(*x)).sum();
        let d4: f64 = nodes.iter().zip(&w[4]).map(|(x, wj)| wj * p(*x)).sum();
        assert!(d2.abs() < 1e-8, "d2 = {d2}");
        assert!(d4.abs() < 1e-7, "d4 = {d4}");
        // q(x) = x^4: q''(0) = 0, q''''(0) = 24.
        let q = |x: f64| x.powi(4);
        let qd2: f64 = nodes.iter().zip(&w[2]).map(|(x, wj)| wj * q(*x)).sum();
        let qd4: f64 = nodes.iter().zip(&w[4]).map(|(x, wj)| wj * q(*x)).sum();
        assert!(qd2.abs() < 1e-8);
        assert!((qd4 - 24.0).abs() < 1e-7);
    }
}
