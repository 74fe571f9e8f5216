//! Interpolating quintic tensor-product B-splines on uniform grids.
//!
//! The smooth part f of a symplectic potential lives here. Quintic order
//! buys C^4 smoothness, so fourth derivatives of f are continuous and the
//! curvature operator can be assembled pointwise without finite differencing.
//!
//! Interpolation solves a banded collocation system per axis. The four extra
//! conditions per axis pin S'' and S'''' at both ends to one-sided
//! finite-difference estimates that are exact on quintic polynomials, so the
//! spline reproduces polynomials of degree <= 5 globally.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::numerics::banded::BandedLu;
use crate::numerics::bspline::{b5, support_row};
use crate::numerics::fd::fd_weights;
use crate::potential::DerivativeBundle;

pub const MAX_DIM: usize = 4;

/// Uniform node lattice: node i along axis a sits at lo[a] + i * h.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub h: f64,
    pub shape: Vec<usize>,
}

impl GridSpec {
    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .zip(&self.lo)
            .map(|(&i, &l)| l + i as f64 * self.h)
            .collect()
    }

    pub fn hi(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.shape)
            .map(|(&l, &s)| l + (s - 1) as f64 * self.h)
            .collect()
    }

    /// Row-major flat index.
    pub fn flat(&self, idx: &[usize]) -> usize {
        let mut f = 0;
        for (a, &i) in idx.iter().enumerate() {
            f = f * self.shape[a] + i;
        }
        f
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let n = self.dim();
        let mut idx = vec![0; n];
        for a in (0..n).rev() {
            idx[a] = flat % self.shape[a];
            flat /= self.shape[a];
        }
        idx
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisOffset {
    /// Evaluation point coincides with a node (fractional offset 0).
    Node,
    /// Evaluation point is a cell center (fractional offset 1/2).
    Half,
}

fn node_rows() -> &'static [[f64; 6]; 5] {
    static ROWS: OnceLock<[[f64; 6]; 5]> = OnceLock::new();
    ROWS.get_or_init(|| support_row(0.0))
}

fn half_rows() -> &'static [[f64; 6]; 5] {
    static ROWS: OnceLock<[[f64; 6]; 5]> = OnceLock::new();
    ROWS.get_or_init(|| support_row(0.5))
}

/// One-sided 7-point weights for the 2nd and 4th derivative at the end node,
/// in grid units.
fn end_weights() -> &'static (Vec<f64>, Vec<f64>) {
    static W: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    W.get_or_init(|| {
        let nodes: Vec<f64> = (0..7).map(|i| i as f64).collect();
        let w = fd_weights(0.0, &nodes, 4);
        (w[2].clone(), w[4].clone())
    })
}

/// Collocation factor for an axis with N samples (system size N + 4),
/// cached per N because the matrix does not depend on h or the data.
fn axis_factor(n_samples: usize) -> Arc<BandedLu> {
    static CACHE: OnceLock<Mutex<BTreeMap<usize, Arc<BandedLu>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(BTreeMap::new()));
    let mut guard = cache.lock().expect("factor cache poisoned");
    guard
        .entry(n_samples)
        .or_insert_with(|| {
            let m = n_samples + 4;
            let interp = [
                1.0 / 120.0,
                26.0 / 120.0,
                66.0 / 120.0,
                26.0 / 120.0,
                1.0 / 120.0,
            ];
            let d2 = [1.0 / 6.0, 1.0 / 3.0, -1.0, 1.0 / 3.0, 1.0 / 6.0];
            let d4 = [1.0, -4.0, 6.0, -4.0, 1.0];
            let lu = BandedLu::factor(m, 4, 4, |r, c| {
                if r == 0 {
                    if c < 5 { d2[c] } else { 0.0 }
                } else if r == 1 {
                    if c < 5 { d4[c] } else { 0.0 }
                } else if r == m - 2 {
                    if c + 5 >= m { d2[c + 5 - m] } else { 0.0 }
                } else if r == m - 1 {
                    if c + 5 >= m { d4[c + 5 - m] } else { 0.0 }
                } else {
                    let i = r - 2;
                    if c >= i && c <= i + 4 { interp[c - i] } else { 0.0 }
                }
            })
            .expect("collocation system is nonsingular");
            Arc::new(lu)
        })
        .clone()
}

/// Tensor-product quintic spline interpolating samples on a [`GridSpec`].
#[derive(Debug, Clone)]
pub struct TensorSpline {
    spec: GridSpec,
    cshape: Vec<usize>,
    coeffs: Vec<f64>,
}

impl TensorSpline {
    /// Fit the interpolating spline. Samples are row-major over `spec.shape`.
    pub fn fit(spec: GridSpec, samples: &[f64]) -> Result<Self> {
        let n = spec.dim();
        if n == 0 || n > MAX_DIM {
            return Err(Error::DimensionMismatch { expected: MAX_DIM, got: n });
        }
        if samples.len() != spec.len() {
            return Err(Error::DimensionMismatch {
                expected: spec.len(),
                got: samples.len(),
            });
        }
        for &s in &spec.shape {
            if s < 7 {
                return Err(Error::GridTooCoarse { need: 7, got: s });
            }
        }
        let (w2, w4) = end_weights();
        let mut data = samples.to_vec();
        let mut cur_shape = spec.shape.clone();
        for axis in 0..n {
            let nn = spec.shape[axis];
            let m = nn + 4;
            let lu = axis_factor(nn);
            let outer: usize = cur_shape[..axis].iter().product();
            let inner: usize = cur_shape[axis + 1..].iter().product();
            let mut out = vec![0.0; outer * m * inner];
            let mut line = vec![0.0; nn];
            let mut rhs = vec![0.0; m];
            for o in 0..outer {
                for i in 0..inner {
                    for j in 0..nn {
                        line[j] = data[(o * nn + j) * inner + i];
                    }
                    rhs[0] = (0..7).map(|j| w2[j] * line[j]).sum();
                    rhs[1] = (0..7).map(|j| w4[j] * line[j]).sum();
                    rhs[2..2 + nn].copy_from_slice(&line);
                    rhs[m - 2] = (0..7).map(|j| w2[j] * line[nn - 1 - j]).sum();
                    rhs[m - 1] = (0..7).map(|j| w4[j] * line[nn - 1 - j]).sum();
                    lu.solve(&mut rhs);
                    for (k, &v) in rhs.iter().enumerate() {
                        out[(o * m + k) * inner + i] = v;
                    }
                }
            }
            data = out;
            cur_shape[axis] = m;
        }
        Ok(Self { spec, cshape: cur_shape, coeffs: data })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    /// Cell index and fractional offset per axis; None when outside the span.
    fn locate(&self, x: &[f64]) -> Option<([usize; MAX_DIM], [f64; MAX_DIM])> {
        let n = self.spec.dim();
        let mut cells = [0usize; MAX_DIM];
        let mut fracs = [0.0; MAX_DIM];
        for a in 0..n {
            let u = (x[a] - self.spec.lo[a]) / self.spec.h;
            if u < -1e-9 || u > (self.spec.shape[a] - 1) as f64 + 1e-9 {
                return None;
            }
            let cell = (u.floor() as isize)
                .clamp(0, self.spec.shape[a] as isize - 2) as usize;
            cells[a] = cell;
            fracs[a] = u - cell as f64;
        }
        Some((cells, fracs))
    }

    /// Detect node/half-cell alignment of a point, for the fast field paths.
    pub fn locate_aligned(&self, x: &[f64]) -> Option<([usize; MAX_DIM], [AxisOffset; MAX_DIM])> {
        let n = self.spec.dim();
        let mut cells = [0usize; MAX_DIM];
        let mut kinds = [AxisOffset::Node; MAX_DIM];
        for a in 0..n {
            let u = (x[a] - self.spec.lo[a]) / self.spec.h;
            let r = u.round();
            let rh = (u - 0.5).round();
            if (u - r).abs() < 1e-9 {
                if r < 0.0 || r > (self.spec.shape[a] - 1) as f64 {
                    return None;
                }
                cells[a] = (r as usize).min(self.spec.shape[a] - 2);
                // A node at index i evaluated in cell i has offset 0; the top
                // node evaluated in the last cell has offset 1, which the
                // generic path handles but the table path does not.
                if (r as usize) == self.spec.shape[a] - 1 {
                    return None;
                }
                kinds[a] = AxisOffset::Node;
            } else if (u - 0.5 - rh).abs() < 1e-9 {
                if rh < 0.0 || rh > (self.spec.shape[a] - 2) as f64 {
                    return None;
                }
                cells[a] = rh as usize;
                kinds[a] = AxisOffset::Half;
            } else {
                return None;
            }
        }
        Some((cells, kinds))
    }

    /// Evaluate value and derivatives to order 4 at an arbitrary point.
    pub fn eval_bundle_into(&self, x: &[f64], out: &mut DerivativeBundle) -> Result<()> {
        let (cells, fracs) = self
            .locate(x)
            .ok_or_else(|| Error::OutsideMargin(x.to_vec()))?;
        let n = self.spec.dim();
        let mut rows = [[[0.0; 6]; 5]; MAX_DIM];
        for a in 0..n {
            rows[a] = support_row(fracs[a]);
        }
        let row_refs: [&[[f64; 6]; 5]; MAX_DIM] = [&rows[0], &rows[1], &rows[2], &rows[3]];
        self.accumulate_bundle(&cells, &row_refs, out);
        Ok(())
    }

    /// Evaluate at a lattice-aligned point using precomputed basis tables.
    pub fn eval_bundle_aligned_into(
        &self,
        cells: &[usize; MAX_DIM],
        kinds: &[AxisOffset; MAX_DIM],
        out: &mut DerivativeBundle,
    ) {
        let mut row_refs: [&[[f64; 6]; 5]; MAX_DIM] = [node_rows(); MAX_DIM];
        for a in 0..self.spec.dim() {
            row_refs[a] = match kinds[a] {
                AxisOffset::Node => node_rows(),
                AxisOffset::Half => half_rows(),
            };
        }
        self.accumulate_bundle(cells, &row_refs, out);
    }

    fn accumulate_bundle(
        &self,
        cells: &[usize; MAX_DIM],
        rows: &[&[[f64; 6]; 5]; MAX_DIM],
        out: &mut DerivativeBundle,
    ) {
        let n = self.spec.dim();
        let h = self.spec.h;
        debug_assert_eq!(out.n, n);
        let inv_h = 1.0 / h;
        let inv = [1.0, inv_h, inv_h * inv_h, inv_h * inv_h * inv_h, inv_h * inv_h * inv_h * inv_h];

        let mut orders = [0usize; MAX_DIM];
        out.value = self.accumulate_one(cells, rows, &orders, n) * inv[0];
        for i in 0..n {
            orders.fill(0);
            orders[i] += 1;
            out.grad[i] = self.accumulate_one(cells, rows, &orders, n) * inv[1];
        }
        for i in 0..n {
            for j in i..n {
                orders.fill(0);
                orders[i] += 1;
                orders[j] += 1;
                let v = self.accumulate_one(cells, rows, &orders, n) * inv[2];
                out.hess[i * n + j] = v;
                out.hess[j * n + i] = v;
            }
        }
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    orders.fill(0);
                    orders[i] += 1;
                    orders[j] += 1;
                    orders[k] += 1;
                    let v = self.accumulate_one(cells, rows, &orders, n) * inv[3];
                    out.set_third_sym(i, j, k, v);
                }
            }
        }
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    for l in k..n {
                        orders.fill(0);
                        orders[i] += 1;
                        orders[j] += 1;
                        orders[k] += 1;
                        orders[l] += 1;
                        let v = self.accumulate_one(cells, rows, &orders, n) * inv[4];
                        out.set_fourth_sym(i, j, k, l, v);
                    }
                }
            }
        }
    }

    #[inline]
    fn accumulate_one(
        &self,
        cells: &[usize; MAX_DIM],
        rows: &[&[[f64; 6]; 5]; MAX_DIM],
        orders: &[usize; MAX_DIM],
        n: usize,
    ) -> f64 {
        // Window of 6^n coefficients starting at cells[a] per axis.
        match n {
            1 => {
                let base = cells[0];
                let w = &rows[0][orders[0]];
                let c = &self.coeffs[base..base + 6];
                c[0] * w[0] + c[1] * w[1] + c[2] * w[2] + c[3] * w[3] + c[4] * w[4] + c[5] * w[5]
            }
            2 => {
                let w0 = &rows[0][orders[0]];
                let w1 = &rows[1][orders[1]];
                let stride = self.cshape[1];
                let mut s = 0.0;
                for m0 in 0..6 {
                    let row = (cells[0] + m0) * stride + cells[1];
                    let c = &self.coeffs[row..row + 6];
                    let partial = c[0] * w1[0]
                        + c[1] * w1[1]
                        + c[2] * w1[2]
                        + c[3] * w1[3]
                        + c[4] * w1[4]
                        + c[5] * w1[5];
                    s += w0[m0] * partial;
                }
                s
            }
            _ => {
                let mut s = 0.0;
                let mut m = [0usize; MAX_DIM];
                loop {
                    let mut flat = 0;
                    let mut wprod = 1.0;
                    for a in 0..n {
                        flat = flat * self.cshape[a] + (cells[a] + m[a]);
                        wprod *= rows[a][orders[a]][m[a]];
                    }
                    s += wprod * self.coeffs[flat];
                    let mut a = 0;
                    loop {
                        if a == n {
                            break;
                        }
                        m[a] += 1;
                        if m[a] < 6 {
                            break;
                        }
                        m[a] = 0;
                        a += 1;
                    }
                    if a == n {
                        break;
                    }
                }
                s
            }
        }
    }

    /// Plain value evaluation.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let (cells, fracs) = self
            .locate(x)
            .ok_or_else(|| Error::OutsideMargin(x.to_vec()))?;
        let n = self.spec.dim();
        let mut s = 0.0;
        let mut m = [0usize; MAX_DIM];
        loop {
            let mut flat = 0;
            let mut wprod = 1.0;
            for a in 0..n {
                flat = flat * self.cshape[a] + (cells[a] + m[a]);
                wprod *= b5(0, fracs[a] + 2.0 - m[a] as f64);
            }
            s += wprod * self.coeffs[flat];
            let mut a = 0;
            loop {
                if a == n {
                    break;
                }
                m[a] += 1;
                if m[a] < 6 {
                    break;
                }
                m[a] = 0;
                a += 1;
            }
            if a == n {
                break;
            }
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_1d(n: usize, lo: f64, h: f64) -> GridSpec {
        GridSpec { lo: vec![lo], h, shape: vec![n] }
    }

    fn sample_1d(spec: &GridSpec, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..spec.shape[0])
            .map(|i| f(spec.lo[0] + i as f64 * spec.h))
            .collect()
    }

    #[test]
    fn interpolates_samples_exactly() {
        let spec = spec_1d(12, 0.0, 0.25);
        let samples = sample_1d(&spec, |x| (1.3 * x).sin() + 0.2 * x);
        let sp = TensorSpline::fit(spec.clone(), &samples).unwrap();
        for i in 0..12 {
            let x = spec.lo[0] + i as f64 * spec.h;
            let v = sp.value(&[x]).unwrap();
            assert!((v - samples[i]).abs() < 1e-12, "node {i}");
        }
    }

    #[test]
    fn reproduces_quintic_polynomials() {
        let spec = spec_1d(14, -0.5, 0.2);
        let p = |x: f64| 1.0 - 2.0 * x + 0.5 * x.powi(2) + x.powi(3) - 0.25 * x.powi(4) + 0.1 * x.powi(5);
        let samples = sample_1d(&spec, p);
        let sp = TensorSpline::fit(spec, &samples).unwrap();
        let mut b = DerivativeBundle::zeros(1);
        for step in 0..40 {
            let x = -0.5 + 2.6 * step as f64 / 39.0;
            sp.eval_bundle_into(&[x], &mut b).unwrap();
            let exact0 = p(x);
            let exact1 = -2.0 + x + 3.0 * x.powi(2) - x.powi(3) + 0.5 * x.powi(4);
            let exact2 = 1.0 + 6.0 * x - 3.0 * x.powi(2) + 2.0 * x.powi(3);
            let exact3 = 6.0 - 6.0 * x + 6.0 * x.powi(2);
            let exact4 = -6.0 + 12.0 * x;
            assert!((b.value - exact0).abs() < 1e-9, "v at {x}: {} vs {exact0}", b.value);
            assert!((b.grad[0] - exact1).abs() < 1e-8, "d1 at {x}");
            assert!((b.hess[0] - exact2).abs() < 1e-7, "d2 at {x}");
            assert!((b.third[0] - exact3).abs() < 1e-6, "d3 at {x}");
            assert!((b.fourth[0] - exact4).abs() < 1e-5, "d4 at {x}");
        }
    }

    #[test]
    fn derivatives_match_fd_of_samples_at_order_h2() {
        // Spline second derivative vs central differences of the samples:
        // the difference is the FD truncation error, which is O(h^2).
        let f = |x: f64| (2.0 * x).sin();
        let err_at = |h: f64| -> f64 {
            let n = (2.0 / h) as usize + 1;
            let spec = spec_1d(n, -1.0, h);
            let samples = sample_1d(&spec, f);
            let sp = TensorSpline::fit(spec.clone(), &samples).unwrap();
            let mut worst = 0.0f64;
            let mut b = DerivativeBundle::zeros(1);
            for i in 4..n - 4 {
                let x = spec.lo[0] + i as f64 * h;
                sp.eval_bundle_into(&[x], &mut b).unwrap();
                let fd = (samples[i + 1] - 2.0 * samples[i] + samples[i - 1]) / (h * h);
                worst = worst.max((b.hess[0] - fd).abs());
            }
            worst
        };
        let e1 = err_at(0.02);
        let e2 = err_at(0.01);
        let ratio = e1 / e2;
        assert!(
            (3.5..=4.5).contains(&ratio),
            "expected O(h^2) ratio ~4, got {ratio} ({e1} vs {e2})"
        );
    }

    #[test]
    fn tensor_2d_reproduces_mixed_polynomial() {
        let spec = GridSpec { lo: vec![0.0, -0.3], h: 0.15, shape: vec![10, 11] };
        let p = |x: f64, y: f64| 0.3 + x * y + x.powi(2) * y - 0.2 * y.powi(3) + 0.05 * x.powi(4);
        let mut samples = vec![0.0; spec.len()];
        for i in 0..10 {
            for j in 0..11 {
                let x = spec.lo[0] + i as f64 * spec.h;
                let y = spec.lo[1] + j as f64 * spec.h;
                samples[i * 11 + j] = p(x, y);
            }
        }
        let sp = TensorSpline::fit(spec, &samples).unwrap();
        let mut b = DerivativeBundle::zeros(2);
        for (x, y) in [(0.31, 0.21), (1.0, -0.29), (0.77, 0.9)] {
            sp.eval_bundle_into(&[x, y], &mut b).unwrap();
            assert!((b.value - p(x, y)).abs() < 1e-9);
            // d/dx = y + 2xy + 0.2 x^3 ; d/dy = x + x^2 - 0.6 y^2
            assert!((b.grad[0] - (y + 2.0 * x * y + 0.2 * x.powi(3))).abs() < 1e-8);
            assert!((b.grad[1] - (x + x.powi(2) - 0.6 * y.powi(2))).abs() < 1e-8);
            // d2/dxdy = 1 + 2x
            assert!((b.hess[1] - (1.0 + 2.0 * x)).abs() < 1e-7);
            // d3/dx2dy = 2
            assert!((b.third_at(0, 0, 1) - 2.0).abs() < 1e-6);
            // d4/dx4 = 1.2
            assert!((b.fourth_at(0, 0, 0, 0) - 1.2).abs() < 1e-5);
            // d4/dx2dy2 = 0
            assert!(b.fourth_at(0, 0, 1, 1).abs() < 1e-5);
        }
    }

    #[test]
    fn aligned_paths_match_generic() {
        let spec = GridSpec { lo: vec![0.0, 0.0], h: 0.125, shape: vec![12, 12] };
        let mut samples = vec![0.0; spec.len()];
        for i in 0..12 {
            for j in 0..12 {
                let x = i as f64 * 0.125;
                let y = j as f64 * 0.125;
                samples[i * 12 + j] = (x * 1.7).cos() * (0.9 * y).sin() + x * x;
            }
        }
        let sp = TensorSpline::fit(spec, &samples).unwrap();
        let mut generic = DerivativeBundle::zeros(2);
        let mut fast = DerivativeBundle::zeros(2);
        // Node-aligned point.
        let xn = [0.5, 0.875];
        sp.eval_bundle_into(&xn, &mut generic).unwrap();
        let (cells, kinds) = sp.locate_aligned(&xn).unwrap();
        assert_eq!(kinds[0], AxisOffset::Node);
        sp.eval_bundle_aligned_into(&cells, &kinds, &mut fast);
        assert!((generic.value - fast.value).abs() < 1e-13);
        assert!((generic.fourth[0] - fast.fourth[0]).abs() < 1e-8);
        // Half-aligned point.
        let xh = [0.5625, 0.6875];
        sp.eval_bundle_into(&xh, &mut generic).unwrap();
        let (cells, kinds) = sp.locate_aligned(&xh).unwrap();
        assert_eq!(kinds[0], AxisOffset::Half);
        sp.eval_bundle_aligned_into(&cells, &kinds, &mut fast);
        assert!((generic.value - fast.value).abs() < 1e-13);
        assert!((generic.hess[0] - fast.hess[0]).abs() < 1e-10);
        // Unaligned point is rejected.
        assert!(sp.locate_aligned(&[0.51, 0.6875]).is_none());
    }

    #[test]
    fn rejects_out_of_span_and_coarse_grids() {
        let spec = spec_1d(8, 0.0, 0.1);
        let sp = TensorSpline::fit(spec, &vec![0.0; 8]).unwrap();
        assert!(sp.value(&[0.9]).is_err());
        assert!(TensorSpline::fit(spec_1d(5, 0.0, 0.1), &vec![0.0; 5]).is_err());
    }
}
