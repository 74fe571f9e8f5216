//! Metric and curvature of the Hessian metric g = u_{,ij} dx_i dx_j on the
//! polytope, in symplectic coordinates.
//!
//! The curvature tensor is F^{ab}_{kl} = -u^{ab}_{,kl}, assembled from
//! derivatives of u through the exact chain rule for second derivatives of
//! the inverse Hessian:
//!
//!   d_d d_c H^{-1} = P_d Q_c + P_c Q_d - H^{-1} (d_c d_d H) H^{-1},
//!   Q_c = (d_c H) H^{-1},  P_c = H^{-1} Q_c.
//!
//! Scalar curvature comes out two independent ways: directly as
//! A = -Σ u^{ij}_{,ij}, and through the cofactor form
//! A = -U^{ij} (1/det Hess u)_{,ij}.

use crate::error::{Error, Result};
use crate::numerics::linalg;
use crate::numerics::quad::adaptive_simpson;
use crate::polytope::DelzantPolytope;
use crate::potential::{ConvexPotential, DerivativeBundle};

/// Pointwise curvature data.
#[derive(Debug, Clone)]
pub struct CurvatureReport {
    pub point: Vec<f64>,
    /// u_{ij}
    pub hess: Vec<f64>,
    /// u^{ij}
    pub inv_hess: Vec<f64>,
    /// F^{ab}_{kl} = -u^{ab}_{,kl}, dense n^4, layout ((a n + b) n + k) n + l.
    pub f_tensor: Vec<f64>,
    /// |F| = sqrt(u^{ab}_{cd} u^{cd}_{ab})
    pub f_norm: f64,
    /// A = -Σ u^{ij}_{,ij}
    pub scalar: f64,
    /// det(u_{ij})
    pub det_hess: f64,
}

/// Reusable buffers for curvature assembly in field sweeps.
#[derive(Debug, Clone)]
pub struct CurvatureScratch {
    n: usize,
    pub bundle: DerivativeBundle,
    hi: Vec<f64>,
    chol: Vec<f64>,
    s_mats: Vec<f64>,
    q_mats: Vec<f64>,
    p_mats: Vec<f64>,
    t4: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
    /// G[c][d][a][b] = u^{ab}_{,cd}
    g: Vec<f64>,
}

impl CurvatureScratch {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            bundle: DerivativeBundle::zeros(n),
            hi: vec![0.0; n * n],
            chol: vec![0.0; n * n],
            s_mats: vec![0.0; n * n * n],
            q_mats: vec![0.0; n * n * n],
            p_mats: vec![0.0; n * n * n],
            t4: vec![0.0; n * n],
            m1: vec![0.0; n * n],
            m2: vec![0.0; n * n],
            g: vec![0.0; n * n * n * n],
        }
    }

    pub fn inv_hess(&self) -> &[f64] {
        &self.hi
    }
}

/// Scalar outputs of one curvature evaluation.
#[derive(Debug, Clone, Copy)]
pub struct CurvatureCore {
    pub scalar: f64,
    pub f_norm: f64,
    pub det_hess: f64,
    pub min_hess_eig: f64,
}

/// Assemble curvature from the bundle already loaded in `sc.bundle`.
/// Returns None when the Hessian is not positive definite. The full tensor
/// G = u^{ab}_{,cd} stays in scratch for callers that need it.
pub fn curvature_from_bundle(sc: &mut CurvatureScratch) -> Option<CurvatureCore> {
    let n = sc.n;
    let det = linalg::spd_invert(&sc.bundle.hess, &mut sc.hi, &mut sc.chol, n)?;
    for c in 0..n {
        let s = &mut sc.s_mats[c * n * n..(c + 1) * n * n];
        for i in 0..n {
            for j in 0..n {
                s[i * n + j] = sc.bundle.third[(i * n + j) * n + c];
            }
        }
    }
    for c in 0..n {
        let (s_all, q_all) = (&sc.s_mats, &mut sc.q_mats);
        let s = &s_all[c * n * n..(c + 1) * n * n];
        let q = &mut q_all[c * n * n..(c + 1) * n * n];
        linalg::matmul(s, &sc.hi, q, n);
    }
    for c in 0..n {
        let (q_all, p_all) = (&sc.q_mats, &mut sc.p_mats);
        let q = &q_all[c * n * n..(c + 1) * n * n];
        let p = &mut p_all[c * n * n..(c + 1) * n * n];
        linalg::matmul(&sc.hi, q, p, n);
    }
    for c in 0..n {
        for d in c..n {
            for i in 0..n {
                for j in 0..n {
                    sc.t4[i * n + j] = sc.bundle.fourth[((i * n + j) * n + c) * n + d];
                }
            }
            linalg::matmul(&sc.t4, &sc.hi, &mut sc.m1, n);
            linalg::matmul(&sc.hi, &sc.m1, &mut sc.m2, n);
            let pc = &sc.p_mats[c * n * n..(c + 1) * n * n];
            let qd = &sc.q_mats[d * n * n..(d + 1) * n * n];
            let pd = &sc.p_mats[d * n * n..(d + 1) * n * n];
            let qc = &sc.q_mats[c * n * n..(c + 1) * n * n];
            for a in 0..n {
                for b in 0..n {
                    let mut v = -sc.m2[a * n + b];
                    for k in 0..n {
                        v += pd[a * n + k] * qc[k * n + b] + pc[a * n + k] * qd[k * n + b];
                    }
                    sc.g[((c * n + d) * n + a) * n + b] = v;
                    sc.g[((d * n + c) * n + a) * n + b] = v;
                }
            }
        }
    }
    let mut scalar = 0.0;
    for i in 0..n {
        for j in 0..n {
            scalar -= sc.g[((i * n + j) * n + i) * n + j];
        }
    }
    let mut fnorm2 = 0.0;
    for a in 0..n {
        for b in 0..n {
            for c in 0..n {
                for d in 0..n {
                    fnorm2 +=
                        sc.g[((c * n + d) * n + a) * n + b] * sc.g[((a * n + b) * n + c) * n + d];
                }
            }
        }
    }
    let min_hess_eig = linalg::sym_min_eigenvalue(&sc.bundle.hess, n);
    Some(CurvatureCore {
        scalar,
        f_norm: fnorm2.max(0.0).sqrt(),
        det_hess: det,
        min_hess_eig,
    })
}

/// Full curvature report at a point.
pub fn curvature_at<P: ConvexPotential + ?Sized>(u: &P, x: &[f64]) -> Result<CurvatureReport> {
    let n = u.dim();
    let mut sc = CurvatureScratch::new(n);
    u.derivs_into(x, &mut sc.bundle)?;
    let core =
        curvature_from_bundle(&mut sc).ok_or_else(|| Error::NotPositiveDefinite(x.to_vec()))?;
    let mut f_tensor = vec![0.0; n * n * n * n];
    for a in 0..n {
        for b in 0..n {
            for k in 0..n {
                for l in 0..n {
                    f_tensor[((a * n + b) * n + k) * n + l] = -sc.g[((k * n + l) * n + a) * n + b];
                }
            }
        }
    }
    Ok(CurvatureReport {
        point: x.to_vec(),
        hess: sc.bundle.hess.clone(),
        inv_hess: sc.hi.clone(),
        f_tensor,
        f_norm: core.f_norm,
        scalar: core.scalar,
        det_hess: core.det_hess,
    })
}

/// Scalar curvature via the cofactor form A = -U^{ij} (1/det u_{kl})_{,ij},
/// an algebraically independent route used to cross-check `curvature_at`.
pub fn scalar_curvature_cofactor<P: ConvexPotential + ?Sized>(u: &P, x: &[f64]) -> Result<f64> {
    let n = u.dim();
    let b = u.derivs(x)?;
    let mut hi = vec![0.0; n * n];
    let mut chol = vec![0.0; n * n];
    let det = linalg::spd_invert(&b.hess, &mut hi, &mut chol, n)
        .ok_or_else(|| Error::NotPositiveDefinite(x.to_vec()))?;
    let s_mat = |c: usize, buf: &mut Vec<f64>| {
        buf.clear();
        for i in 0..n {
            for j in 0..n {
                buf.push(b.third[(i * n + j) * n + c]);
            }
        }
    };
    // d_c D = D tr(Hi S_c); cache Hi S_c for each c.
    let mut his: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut d1 = vec![0.0; n];
    let mut sc = Vec::new();
    for c in 0..n {
        s_mat(c, &mut sc);
        let mut m = vec![0.0; n * n];
        linalg::matmul(&hi, &sc, &mut m, n);
        d1[c] = det * trace(&m, n);
        his.push(m);
    }
    let mut a_cof = 0.0;
    for i in 0..n {
        for j in 0..n {
            let tr_i = trace(&his[i], n);
            let tr_j = trace(&his[j], n);
            let mut cross = 0.0;
            for a in 0..n {
                for bb in 0..n {
                    cross += his[j][a * n + bb] * his[i][bb * n + a];
                }
            }
            let mut tr_t4 = 0.0;
            for a in 0..n {
                for bb in 0..n {
                    tr_t4 += hi[a * n + bb] * b.fourth[((bb * n + a) * n + i) * n + j];
                }
            }
            // d_i d_j D and then (1/D)_{,ij}
            let d2 = det * (tr_j * tr_i - cross + tr_t4);
            let g2 = 2.0 * d1[i] * d1[j] / (det * det * det) - d2 / (det * det);
            let ucof = det * hi[i * n + j];
            a_cof -= ucof * g2;
        }
    }
    Ok(a_cof)
}

fn trace(m: &[f64], n: usize) -> f64 {
    (0..n).map(|i| m[i * n + i]).sum()
}

// ---------------------------------------------------------------------------
// Riemannian lengths
// ---------------------------------------------------------------------------

/// Length of a polyline in the metric u_{,ij}, by adaptive quadrature of
/// sqrt(v^T H v) on each segment. All points must lie in the margin region.
pub fn riemannian_length<P: ConvexPotential + ?Sized>(
    u: &P,
    polyline: &[Vec<f64>],
    rel_tol: f64,
) -> Result<f64> {
    if polyline.len() < 2 {
        return Ok(0.0);
    }
    let n = u.dim();
    let mut bundle = DerivativeBundle::zeros(n);
    let mut total = 0.0;
    for w in polyline.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let v: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        let mut x = vec![0.0; n];
        let mut err: Option<Error> = None;
        let val = adaptive_simpson(
            &mut |t: f64| {
                for i in 0..n {
                    x[i] = a[i] + t * v[i];
                }
                match u.derivs_into(&x, &mut bundle) {
                    Ok(()) => bundle.hess_quadratic(&v).max(0.0).sqrt(),
                    Err(e) => {
                        err = Some(e);
                        0.0
                    }
                }
            },
            0.0,
            1.0,
            rel_tol,
        );
        if let Some(e) = err {
            return Err(e);
        }
        total += val;
    }
    Ok(total)
}

/// Length of the straight segment from an interior point to a boundary
/// point. The inner stretch is integrated under t = 1 - (1 - t0) s^2, which
/// removes the 1/sqrt(l) singularity of the Guillemin metric at the
/// boundary; the clamped tail below s_min enters as a rectangle of the
/// limiting integrand.
pub fn segment_length_to_boundary<P: ConvexPotential + ?Sized>(
    u: &P,
    from: &[f64],
    boundary_point: &[f64],
    rel_tol: f64,
) -> Result<f64> {
    let n = u.dim();
    let v: Vec<f64> = boundary_point.iter().zip(from).map(|(b, a)| b - a).collect();
    let mut bundle = DerivativeBundle::zeros(n);
    let mut x = vec![0.0; n];
    let mut failed = false;
    let mut speed = |t: f64, bundle: &mut DerivativeBundle, failed: &mut bool| -> f64 {
        for i in 0..n {
            x[i] = from[i] + t * v[i];
        }
        match u.derivs_unchecked_into(&x, bundle) {
            Ok(()) => bundle.hess_quadratic(&v).max(0.0).sqrt(),
            Err(_) => {
                *failed = true;
                0.0
            }
        }
    };
    let t0 = 0.7;
    let regular = adaptive_simpson(&mut |t| speed(t, &mut bundle, &mut failed), 0.0, t0, rel_tol);
    const S_MIN: f64 = 1e-5;
    let body = adaptive_simpson(
        &mut |s: f64| {
            let s = s.max(S_MIN);
            let t = 1.0 - (1.0 - t0) * s * s;
            speed(t, &mut bundle, &mut failed) * 2.0 * (1.0 - t0) * s
        },
        S_MIN,
        1.0,
        rel_tol,
    );
    let tail = {
        let t = 1.0 - (1.0 - t0) * S_MIN * S_MIN;
        speed(t, &mut bundle, &mut failed) * 2.0 * (1.0 - t0) * S_MIN * S_MIN
    };
    if failed {
        return Err(Error::NotInterior(boundary_point.to_vec()));
    }
    Ok(regular + body + tail)
}

// ---------------------------------------------------------------------------
// Geodesics of the Hessian metric, restricted to the x-slice
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeodesicEnd {
    TimeReached,
    HitMargin,
    StepUnderflow,
}

#[derive(Debug, Clone)]
pub struct GeodesicSample {
    /// Arc-length parameter.
    pub t: f64,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GeodesicPath {
    pub samples: Vec<GeodesicSample>,
    pub reason: GeodesicEnd,
}

impl GeodesicPath {
    pub fn arc_length(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }
}

struct GeodesicWork {
    bundle: DerivativeBundle,
    hi: Vec<f64>,
    chol: Vec<f64>,
}

fn geodesic_accel<P: ConvexPotential + ?Sized>(
    u: &P,
    x: &[f64],
    v: &[f64],
    w: &mut GeodesicWork,
) -> Option<Vec<f64>> {
    let n = x.len();
    u.derivs_into(x, &mut w.bundle).ok()?;
    linalg::spd_invert(&w.bundle.hess, &mut w.hi, &mut w.chol, n)?;
    let mut tvv = vec![0.0; n];
    for l in 0..n {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += w.bundle.third[(i * n + j) * n + l] * v[i] * v[j];
            }
        }
        tvv[l] = s;
    }
    let mut a = vec![0.0; n];
    for k in 0..n {
        let mut s = 0.0;
        for l in 0..n {
            s += w.hi[k * n + l] * tvv[l];
        }
        a[k] = -0.5 * s;
    }
    Some(a)
}

#[allow(clippy::type_complexity)]
fn geodesic_rk4<P: ConvexPotential + ?Sized>(
    u: &P,
    x: &[f64],
    v: &[f64],
    dt: f64,
    w: &mut GeodesicWork,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = x.len();
    let a1 = geodesic_accel(u, x, v, w)?;
    let x2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * v[i]).collect();
    let v2: Vec<f64> = (0..n).map(|i| v[i] + 0.5 * dt * a1[i]).collect();
    let a2 = geodesic_accel(u, &x2, &v2, w)?;
    let x3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * dt * v2[i]).collect();
    let v3: Vec<f64> = (0..n).map(|i| v[i] + 0.5 * dt * a2[i]).collect();
    let a3 = geodesic_accel(u, &x3, &v3, w)?;
    let x4: Vec<f64> = (0..n).map(|i| x[i] + dt * v3[i]).collect();
    let v4: Vec<f64> = (0..n).map(|i| v[i] + dt * a3[i]).collect();
    let a4 = geodesic_accel(u, &x4, &v4, w)?;
    let xn: Vec<f64> = (0..n)
        .map(|i| x[i] + dt / 6.0 * (v[i] + 2.0 * v2[i] + 2.0 * v3[i] + v4[i]))
        .collect();
    let vn: Vec<f64> = (0..n)
        .map(|i| v[i] + dt / 6.0 * (a1[i] + 2.0 * a2[i] + 2.0 * a3[i] + a4[i]))
        .collect();
    Some((xn, vn))
}

/// Shoot a geodesic from x0 with initial velocity v0 (normalized to unit
/// Riemannian speed) until t_max or the margin boundary. The arc-length
/// parameter is the time variable; unit-speed drift is kept below 1e-6 by
/// step-doubling control and renormalization.
pub fn geodesic_shoot<P: ConvexPotential + ?Sized>(
    u: &P,
    x0: &[f64],
    v0: &[f64],
    t_max: f64,
) -> Result<GeodesicPath> {
    let n = u.dim();
    let mut w = GeodesicWork {
        bundle: DerivativeBundle::zeros(n),
        hi: vec![0.0; n * n],
        chol: vec![0.0; n * n],
    };
    u.derivs_into(x0, &mut w.bundle)?;
    let speed2 = w.bundle.hess_quadratic(v0);
    if !(speed2 > 0.0) {
        return Err(Error::NotPositiveDefinite(x0.to_vec()));
    }
    let mut x = x0.to_vec();
    let mut v: Vec<f64> = v0.iter().map(|c| c / speed2.sqrt()).collect();
    let mut t = 0.0;
    let mut dt: f64 = (t_max / 16.0).min(0.05);
    let mut samples = vec![GeodesicSample { t, x: x.clone(), v: v.clone() }];

    while t < t_max - 1e-12 {
        let step = dt.min(t_max - t);
        let attempt = geodesic_rk4(u, &x, &v, step, &mut w).and_then(|big| {
            let half = geodesic_rk4(u, &x, &v, 0.5 * step, &mut w)?;
            let fine = geodesic_rk4(u, &half.0, &half.1, 0.5 * step, &mut w)?;
            let err = fine
                .0
                .iter()
                .zip(&big.0)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            Some((fine, err))
        });
        match attempt {
            Some(((xn, vn), err)) if err < 1e-10 * (1.0 + linalg::norm2(&x)) => {
                x = xn;
                v = vn;
                if u.derivs_into(&x, &mut w.bundle).is_err() {
                    return Ok(GeodesicPath { samples, reason: GeodesicEnd::HitMargin });
                }
                let sp = w.bundle.hess_quadratic(&v);
                t += step;
                if (sp - 1.0).abs() > 1e-8 {
                    let c = sp.sqrt();
                    for vi in v.iter_mut() {
                        *vi /= c;
                    }
                }
                samples.push(GeodesicSample { t, x: x.clone(), v: v.clone() });
                if err < 1e-13 {
                    dt *= 1.5;
                }
            }
            _ => {
                dt *= 0.5;
                if dt < 1e-12 {
                    let reason = if u.in_domain(&x) {
                        GeodesicEnd::HitMargin
                    } else {
                        GeodesicEnd::StepUnderflow
                    };
                    return Ok(GeodesicPath { samples, reason });
                }
            }
        }
    }
    Ok(GeodesicPath { samples, reason: GeodesicEnd::TimeReached })
}

// ---------------------------------------------------------------------------
// Boundary distance upper bound
// ---------------------------------------------------------------------------

/// Upper bound on the Riemannian distance from x to facet `k` (or to the
/// whole boundary when `facet` is None): the minimum length over a fan of
/// straight segments from x to boundary targets. Targets per facet are the
/// facet's vertices, centroid, vertex-centroid midpoints, the Euclidean
/// projection when it lands inside the facet, and the exit points of 2n+1
/// ray directions around the inward facet normal. Segments to facet points
/// stay in the closed polytope by convexity, so each length upper-bounds the
/// true distance.
pub fn dist_boundary_riemannian<P: ConvexPotential + ?Sized>(
    u: &P,
    poly: &DelzantPolytope,
    facet: Option<usize>,
    x: &[f64],
    rel_tol: f64,
) -> Result<f64> {
    let mut best = f64::INFINITY;
    let facets: Vec<usize> = match facet {
        Some(k) => vec![k],
        None => (0..poly.facets().len()).collect(),
    };
    for k in facets {
        best = best.min(dist_to_facet(u, poly, k, x, rel_tol)?);
    }
    Ok(best)
}

fn dist_to_facet<P: ConvexPotential + ?Sized>(
    u: &P,
    poly: &DelzantPolytope,
    k: usize,
    x: &[f64],
    rel_tol: f64,
) -> Result<f64> {
    let n = poly.dim();
    let f = &poly.facets()[k];
    let un = f.normal_f64();
    let unorm = f.norm();
    let mut targets: Vec<Vec<f64>> = Vec::new();

    let verts: Vec<Vec<f64>> = poly.facet_vertices(k).into_iter().cloned().collect();
    if !verts.is_empty() {
        let mut centroid = vec![0.0; n];
        for v in &verts {
            for a in 0..n {
                centroid[a] += v[a];
            }
        }
        for c in centroid.iter_mut() {
            *c /= verts.len() as f64;
        }
        for v in &verts {
            targets.push(v.clone());
            targets.push(v.iter().zip(&centroid).map(|(a, b)| 0.5 * (a + b)).collect());
        }
        targets.push(centroid);
    }
    let lk = poly.facet_value(k, x);
    let proj: Vec<f64> = x
        .iter()
        .zip(&un)
        .map(|(xa, ua)| xa - lk * ua / (unorm * unorm))
        .collect();
    if poly.contains(&proj, 1e-9) {
        targets.push(proj);
    }
    let mut dirs: Vec<Vec<f64>> = vec![un.iter().map(|v| -v / unorm).collect()];
    for a in 0..n {
        for sgn in [1.0, -1.0] {
            let mut d: Vec<f64> = un.iter().map(|v| -v / unorm).collect();
            d[a] += 0.5 * sgn;
            let dn = linalg::norm2(&d);
            if dn > 1e-9 {
                for c in d.iter_mut() {
                    *c /= dn;
                }
                dirs.push(d);
            }
        }
    }
    for d in dirs {
        if let Some((t, hit)) = poly.ray_exit(x, &d) {
            if hit == k && t > 0.0 {
                targets.push(x.iter().zip(&d).map(|(xa, da)| xa + t * da).collect());
            }
        }
    }

    let mut best = f64::INFINITY;
    for target in targets {
        let len = segment_length_to_boundary(u, x, &target, rel_tol)?;
        best = best.min(len);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::{interval_01, unit_simplex_2d, unit_square};
    use crate::potential::analytic::{CosinePerturbed, QuadraticPotential};
    use crate::potential::{Normalize, SymplecticPotential};
    use std::sync::Arc;

    fn cp1() -> SymplecticPotential {
        SymplecticPotential::guillemin(Arc::new(interval_01()), 0.02, 0.01).unwrap()
    }

    #[test]
    fn cp1_scalar_curvature_and_fnorm_are_4() {
        let u = cp1();
        for &x in &[0.05, 0.17, 0.33, 0.5, 0.74, 0.95] {
            let r = curvature_at(&u, &[x]).unwrap();
            assert!((r.scalar - 4.0).abs() < 1e-10, "A at {x}: {}", r.scalar);
            assert!((r.f_norm - 4.0).abs() < 1e-10, "|F| at {x}: {}", r.f_norm);
            assert!(r.det_hess > 0.0);
            assert!((r.hess[0] * r.inv_hess[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_is_flat() {
        let q = QuadraticPotential::identity(2);
        let r = curvature_at(&q, &[0.4, -0.3]).unwrap();
        assert_eq!(r.scalar, 0.0);
        assert_eq!(r.f_norm, 0.0);
        for v in &r.f_tensor {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn cp2_scalar_curvature_is_12() {
        let u = SymplecticPotential::guillemin(Arc::new(unit_simplex_2d()), 0.02, 0.01).unwrap();
        for p in [[1.0 / 3.0, 1.0 / 3.0], [0.1, 0.2], [0.5, 0.3], [0.05, 0.9]] {
            let r = curvature_at(&u, &p).unwrap();
            assert!((r.scalar - 12.0).abs() < 1e-9, "A at {p:?}: {}", r.scalar);
        }
    }

    #[test]
    fn square_scalar_curvature_is_8() {
        let u = SymplecticPotential::guillemin(Arc::new(unit_square()), 0.05, 0.02).unwrap();
        let r = curvature_at(&u, &[0.3, 0.6]).unwrap();
        assert!((r.scalar - 8.0).abs() < 1e-9);
    }

    #[test]
    fn f_tensor_symmetries() {
        let up = SymplecticPotential::from_fn(
            Arc::new(unit_simplex_2d()),
            0.02,
            0.02,
            |x| 0.03 * x[0] * x[0] * x[1],
            Normalize::Centroid,
        )
        .unwrap();
        let r = curvature_at(&up, &[0.25, 0.4]).unwrap();
        let n = 2;
        let f = |a: usize, b: usize, k: usize, l: usize| r.f_tensor[((a * n + b) * n + k) * n + l];
        for a in 0..n {
            for b in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        assert!((f(a, b, k, l) - f(b, a, k, l)).abs() < 1e-12);
                        assert!((f(a, b, k, l) - f(a, b, l, k)).abs() < 1e-12);
                    }
                }
            }
        }
        assert!(r.f_norm >= 0.0);
    }

    #[test]
    fn cofactor_route_matches_direct() {
        let u = cp1();
        for &x in &[0.3, 0.5, 0.8] {
            let a1 = curvature_at(&u, &[x]).unwrap().scalar;
            let a2 = scalar_curvature_cofactor(&u, &[x]).unwrap();
            assert!((a1 - a2).abs() < 1e-6 * (1.0 + a1.abs()), "{a1} vs {a2}");
        }
        let q = QuadraticPotential::identity(2);
        assert!(scalar_curvature_cofactor(&q, &[0.2, 0.1]).unwrap().abs() < 1e-12);

        let up = SymplecticPotential::from_fn(
            Arc::new(unit_simplex_2d()),
            0.02,
            0.02,
            |x| 0.03 * x[0] * x[0] * x[1],
            Normalize::Centroid,
        )
        .unwrap();
        for p in [[0.3, 0.3], [0.2, 0.5], [0.6, 0.2]] {
            let a1 = curvature_at(&up, &p).unwrap().scalar;
            let a2 = scalar_curvature_cofactor(&up, &p).unwrap();
            assert!(
                (a1 - a2).abs() < 1e-6 * (1.0 + a1.abs()),
                "at {p:?}: {a1} vs {a2}"
            );
        }
    }

    #[test]
    fn one_dimensional_reduction_formula() {
        // A = -(1/u'')'' for n = 1, against the closed form for the cosine
        // test potential: 1/u'' = 1/g with g = 1 - eps k^2 cos(kx + phase).
        let u = CosinePerturbed { n: 1, eps: 0.05, k: vec![2.0], phase: 0.3 };
        for &x in &[0.0, 0.4, 1.1] {
            let r = curvature_at(&u, &[x]).unwrap();
            let th = 2.0 * x + 0.3;
            let g = 1.0 - 0.05 * 4.0 * th.cos();
            let g1 = 0.05 * 8.0 * th.sin();
            let g2 = 0.05 * 16.0 * th.cos();
            let w2 = (2.0 * g1 * g1 - g * g2) / (g * g * g);
            assert!((r.scalar + w2).abs() < 1e-10, "x={x}: {} vs {}", r.scalar, -w2);
            assert!((r.f_norm - w2.abs()).abs() < 1e-10);
        }
    }

    #[test]
    fn affine_gauge_leaves_curvature_exactly_unchanged() {
        let u = cp1();
        let ua = u.with_affine(3.7, &[-2.1]);
        for &x in &[0.21, 0.5, 0.83] {
            let r1 = curvature_at(&u, &[x]).unwrap();
            let r2 = curvature_at(&ua, &[x]).unwrap();
            assert_eq!(r1.scalar.to_bits(), r2.scalar.to_bits());
            assert_eq!(r1.f_norm.to_bits(), r2.f_norm.to_bits());
        }
    }

    #[test]
    fn fd_oracle_on_smooth_test_potential() {
        let u = CosinePerturbed { n: 2, eps: 0.04, k: vec![1.3, 0.7], phase: 0.1 };
        let x0 = [0.2, -0.1];
        let inv_at = |x: &[f64]| -> Vec<f64> {
            let b = u.derivs(x).unwrap();
            let mut hi = vec![0.0; 4];
            let mut ch = vec![0.0; 4];
            linalg::spd_invert(&b.hess, &mut hi, &mut ch, 2).unwrap();
            hi
        };
        let r = curvature_at(&u, &x0).unwrap();
        let fd_err = |h: f64| -> f64 {
            let mut worst = 0.0f64;
            for c in 0..2 {
                for d in 0..2 {
                    for a in 0..2 {
                        for b in 0..2 {
                            let exact = -r.f_tensor[((a * 2 + b) * 2 + c) * 2 + d];
                            let fd = if c == d {
                                let mut xp = x0.to_vec();
                                let mut xm = x0.to_vec();
                                xp[c] += h;
                                xm[c] -= h;
                                (inv_at(&xp)[a * 2 + b] - 2.0 * inv_at(&x0)[a * 2 + b]
                                    + inv_at(&xm)[a * 2 + b])
                                    / (h * h)
                            } else {
                                let mut xpp = x0.to_vec();
                                let mut xpm = x0.to_vec();
                                let mut xmp = x0.to_vec();
                                let mut xmm = x0.to_vec();
                                xpp[c] += h;
                                xpp[d] += h;
                                xpm[c] += h;
                                xpm[d] -= h;
                                xmp[c] -= h;
                                xmp[d] += h;
                                xmm[c] -= h;
                                xmm[d] -= h;
                                (inv_at(&xpp)[a * 2 + b] - inv_at(&xpm)[a * 2 + b]
                                    - inv_at(&xmp)[a * 2 + b]
                                    + inv_at(&xmm)[a * 2 + b])
                                    / (4.0 * h * h)
                            };
                            worst = worst.max((fd - exact).abs());
                        }
                    }
                }
            }
            worst
        };
        let e1 = fd_err(1e-3);
        let e2 = fd_err(5e-4);
        let order = (e1 / e2).log2();
        assert!((order - 2.0).abs() < 0.3, "observed order {order} ({e1} vs {e2})");
    }

    #[test]
    fn riemannian_length_closed_forms() {
        let u = cp1();
        let l = riemannian_length(&u, &[vec![0.25], vec![0.5]], 1e-10).unwrap();
        let expect = std::f64::consts::FRAC_PI_6 / std::f64::consts::SQRT_2;
        assert!((l - expect).abs() < 1e-8, "{l} vs {expect}");

        let q = QuadraticPotential::identity(2);
        let l2 = riemannian_length(&q, &[vec![0.0, 0.0], vec![0.3, 0.4]], 1e-10).unwrap();
        assert!((l2 - 0.5).abs() < 1e-10);
    }

    #[test]
    fn boundary_distance_examples() {
        let u = cp1();
        let p = interval_01();
        let d = dist_boundary_riemannian(&u, &p, None, &[0.5], 1e-9).unwrap();
        let expect = std::f64::consts::FRAC_PI_2 / std::f64::consts::SQRT_2;
        assert!((d - expect).abs() < 2e-5, "{d} vs {expect}");

        let q = QuadraticPotential::identity(2);
        let sq = unit_square();
        let dq = dist_boundary_riemannian(&q, &sq, None, &[0.5, 0.5], 1e-9).unwrap();
        assert!((dq - 0.5).abs() < 1e-6, "{dq}");
    }

    #[test]
    fn geodesics_flat_and_cp1() {
        let q = QuadraticPotential::identity(2);
        let path = geodesic_shoot(&q, &[0.0, 0.0], &[2.0, 0.0], 0.8).unwrap();
        assert_eq!(path.reason, GeodesicEnd::TimeReached);
        let last = path.samples.last().unwrap();
        assert!((last.x[0] - 0.8).abs() < 1e-8);
        assert!(last.x[1].abs() < 1e-12);

        // CP1: geodesics are reparameterized segments, so the arc length to
        // reach 0.25 from 0.5 equals the segment length.
        let u = cp1();
        let expect = std::f64::consts::FRAC_PI_6 / std::f64::consts::SQRT_2;
        let path = geodesic_shoot(&u, &[0.5], &[-1.0], expect).unwrap();
        assert_eq!(path.reason, GeodesicEnd::TimeReached);
        let last = path.samples.last().unwrap();
        assert!((last.x[0] - 0.25).abs() < 1e-5, "{}", last.x[0]);
        for s in &path.samples {
            let b = u.derivs(&s.x).unwrap();
            assert!((b.hess_quadratic(&s.v) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn geodesic_stops_at_margin() {
        let u = cp1();
        let path = geodesic_shoot(&u, &[0.5], &[1.0], 50.0).unwrap();
        assert_eq!(path.reason, GeodesicEnd::HitMargin);
        let last = path.samples.last().unwrap();
        assert!(last.x[0] > 0.9);
    }
}
