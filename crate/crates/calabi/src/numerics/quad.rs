//! Adaptive Simpson quadrature.

/// Integrate `f` over [a, b] to the requested relative tolerance.
pub fn adaptive_simpson(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let scale = whole.abs().max(1e-30);
    simpson_rec(f, a, b, fa, fm, fb, whole, rel_tol * scale, 40)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &mut impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    abs_tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * abs_tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, abs_tol / 2.0, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, abs_tol / 2.0, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_smooth_functions() {
        let v = adaptive_simpson(&mut |x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn integrates_arcsine_kernel() {
        // ∫_{1/4}^{1/2} 1/sqrt(2x(1-x)) dx = (1/sqrt 2)(asin(0) - asin(-1/2))
        let v = adaptive_simpson(
            &mut |x: f64| 1.0 / (2.0 * x * (1.0 - x)).sqrt(),
            0.25,
            0.5,
            1e-12,
        );
        let expect = std::f64::consts::FRAC_PI_6 / std::f64::consts::SQRT_2;
        assert!((v - expect).abs() < 1e-10, "{v} vs {expect}");
    }
}
