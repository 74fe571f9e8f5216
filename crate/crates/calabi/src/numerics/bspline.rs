//! Centered quintic cardinal B-spline and its derivatives.
//!
//! Support is |t| < 3 and the spline is C^4, which is exactly enough
//! continuous derivatives for the fourth-order curvature operator.

/// Piecewise polynomial coefficients (ascending powers of t), common
/// denominator 120, for t in [0,1] and [1,2]; the [2,3] piece is handled in
/// closed form as (3-t)^5 / 120.
const P0: [[f64; 6]; 5] = [
    [66.0, 0.0, -60.0, 0.0, 30.0, -10.0],
    [0.0, -120.0, 0.0, 120.0, -50.0, 0.0],
    [-120.0, 0.0, 360.0, -200.0, 0.0, 0.0],
    [0.0, 720.0, -600.0, 0.0, 0.0, 0.0],
    [720.0, -1200.0, 0.0, 0.0, 0.0, 0.0],
];
const P1: [[f64; 6]; 5] = [
    [51.0, 75.0, -210.0, 150.0, -45.0, 5.0],
    [75.0, -420.0, 450.0, -180.0, 25.0, 0.0],
    [-420.0, 900.0, -540.0, 100.0, 0.0, 0.0],
    [900.0, -1080.0, 300.0, 0.0, 0.0, 0.0],
    [-1080.0, 600.0, 0.0, 0.0, 0.0, 0.0],
];

/// d-th derivative (d <= 4) of the quintic cardinal B-spline at t.
pub fn b5(d: usize, t: f64) -> f64 {
    debug_assert!(d <= 4);
    let at = t.abs();
    let sign = if t < 0.0 && d % 2 == 1 { -1.0 } else { 1.0 };
    let v = if at < 1.0 {
        horner(&P0[d], at) / 120.0
    } else if at < 2.0 {
        horner(&P1[d], at) / 120.0
    } else if at < 3.0 {
        let s = 3.0 - at;
        match d {
            0 => s * s * s * s * s / 120.0,
            1 => -s * s * s * s / 24.0,
            2 => s * s * s / 6.0,
            3 => -s * s / 2.0,
            _ => s,
        }
    } else {
        0.0
    };
    sign * v
}

#[inline]
fn horner(c: &[f64; 6], t: f64) -> f64 {
    let mut v = c[5];
    for k in (0..5).rev() {
        v = v * t + c[k];
    }
    v
}

/// Basis values for all derivative orders 0..=4 at the six support offsets of
/// a point with fractional position `s` in its cell: offsets s+2, s+1, s,
/// s-1, s-2, s-3.
pub fn support_row(s: f64) -> [[f64; 6]; 5] {
    let mut w = [[0.0; 6]; 5];
    for (m, wcol) in (0..6).zip(0..6) {
        let t = s + 2.0 - m as f64;
        for d in 0..5 {
            w[d][wcol] = b5(d, t);
        }
        let _ = m;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn values_at_integers() {
        assert!((b5(0, 0.0) - 66.0 / 120.0).abs() < 1e-15);
        assert!((b5(0, 1.0) - 26.0 / 120.0).abs() < 1e-15);
        assert!((b5(0, 2.0) - 1.0 / 120.0).abs() < 1e-15);
        assert_eq!(b5(0, 3.0), 0.0);
        assert!((b5(2, 0.0) + 1.0).abs() < 1e-15);
        assert!((b5(2, 1.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((b5(4, 0.0) - 6.0).abs() < 1e-15);
        assert!((b5(4, 1.0) + 4.0).abs() < 1e-15);
        assert!((b5(4, 2.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn continuity_across_knots() {
        for d in 0..=4 {
            for knot in [1.0, 2.0, 3.0] {
                let below = b5(d, knot - 1e-9);
                let above = b5(d, knot + 1e-9);
                assert!(
                    (below - above).abs() < 1e-5,
                    "d={d} knot={knot}: {below} vs {above}"
                );
            }
        }
    }

    #[test]
    fn partition_of_unity_and_derivative_sums() {
        for step in 0..50 {
            let t = -3.0 + 6.0 * step as f64 / 49.0;
            let mut sums = [0.0; 5];
            for j in -5..=5 {
                for (d, s) in sums.iter_mut().enumerate() {
                    *s += b5(d, t - j as f64);
                }
            }
            assert!((sums[0] - 1.0).abs() < 1e-13, "t={t}");
            for (d, s) in sums.iter().enumerate().skip(1) {
                assert!(s.abs() < 1e-12, "d={d} t={t} sum={s}");
            }
        }
    }

    #[test]
    fn fd_check_of_derivatives() {
        // Central differences of b5(d,·) match b5(d+1,·) away from knots.
        let h = 1e-6;
        for d in 0..4 {
            for &t in &[0.31, 0.82, 1.44, 2.33, -0.62, -1.71] {
                let fd = (b5(d, t + h) - b5(d, t - h)) / (2.0 * h);
                assert!(
                    (fd - b5(d + 1, t)).abs() < 1e-5,
                    "d={d} t={t}: fd={fd} exact={}",
                    b5(d + 1, t)
                );
            }
        }
    }
}
