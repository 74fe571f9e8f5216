//! Blow-up rescaling, the geometric estimate suite, and singularity
//! detection.
//!
//! Rescaling follows the dilation u~(x) = lambda u(x / lambda) on
//! P~ = lambda P, under which |F| and A scale by 1/lambda and the
//! M-condition is preserved with the same M. The construction is exact on
//! the sample lattice: the scaled Guillemin part differs from lambda
//! u0(x/lambda) by an affine function, which is absorbed into the explicit
//! affine gauge rather than the samples, so lambda = 1 is a bit-identical
//! no-op and dyadic lambdas are exact.
//!
//! The estimate suite turns the distance/Hessian lemmas into sampled
//! inequality margins. Where a bound needs Dist_g from below (the alpha in
//! the sinh-ratio and elliptic-ball lemmas), a certified lower bound is used:
//! Dist_g(p, E) >= asinh sqrt(u_E^T H^{-1} u_E), the contrapositive of the
//! sinh^2 bound, so the tested instances are genuine consequences of the
//! hypotheses. Where a bound needs Dist_g from above (cosh/sinh right-hand
//! sides that increase with distance), the segment-fan upper estimator is
//! conservative in the safe direction.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::FlowRun;
use crate::geometry::{
    curvature_at, curvature_from_bundle, dist_boundary_riemannian, geodesic_shoot,
    riemannian_length, segment_length_to_boundary, CurvatureScratch, GeodesicEnd,
};
use crate::mcondition::{estimate_m, MEstimateConfig};
use crate::numerics::linalg;
use crate::polytope::{build_grid, DelzantPolytope, Facet, PolytopeSpec, QuadratureGrid};
use crate::potential::{ConvexPotential, SymplecticPotential};
use crate::spline::GridSpec;

// ---------------------------------------------------------------------------
// Rescaling
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, Serialize)]
pub struct Provenance {
    pub blowup_point: Option<Vec<f64>>,
    pub time: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RescaledProblem {
    pub lambda: f64,
    pub polytope: Arc<DelzantPolytope>,
    pub potential: SymplecticPotential,
    pub provenance: Provenance,
}

/// Construct P~ = lambda P and u~(x) = lambda u(x / lambda).
///
/// The new samples are exactly lambda times the old (the scaled lattice maps
/// node to node), and the affine mismatch between lambda u0(x/lambda) and
/// the Guillemin part of P~, namely -(ln lambda / 2) Σ_k l~_k(x), goes into
/// the affine gauge.
pub fn rescale(u: &SymplecticPotential, lambda: f64) -> Result<RescaledProblem> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::MalformedSpec("lambda must be positive".into()));
    }
    let poly = u.polytope();
    let n = poly.dim();
    let spec = PolytopeSpec {
        dimension: n,
        facets: poly
            .facets()
            .iter()
            .map(|f| Facet { normal: f.normal.clone(), offset: lambda * f.offset })
            .collect(),
    };
    let new_poly = Arc::new(DelzantPolytope::from_spec(&spec)?);
    let g = u.grid();
    let new_grid = GridSpec {
        lo: g.lo.iter().map(|v| lambda * v).collect(),
        h: lambda * g.h,
        shape: g.shape.clone(),
    };
    let samples: Vec<f64> = u.samples().iter().map(|s| lambda * s).collect();
    let (c0, slope) = u.affine();
    let mut new_c0 = lambda * c0;
    let mut new_slope: Vec<f64> = slope.to_vec();
    if u.include_singular() {
        let log_l = lambda.ln();
        let sum_offsets: f64 = poly.facets().iter().map(|f| f.offset).sum();
        new_c0 += 0.5 * log_l * lambda * sum_offsets;
        for (a, s) in new_slope.iter_mut().enumerate() {
            let sum_na: f64 = poly.facets().iter().map(|f| f.normal[a] as f64).sum();
            *s -= 0.5 * log_l * sum_na;
        }
    }
    let potential = SymplecticPotential::from_samples(
        Arc::clone(&new_poly),
        new_grid,
        samples,
        lambda * u.margin(),
        u.include_singular(),
        new_c0,
        new_slope,
    )?;
    Ok(RescaledProblem {
        lambda,
        polytope: new_poly,
        potential,
        provenance: Provenance::default(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RescaleResidualReport {
    pub lambda: f64,
    pub max_f_residual: f64,
    pub max_a_residual: f64,
    pub n_samples: usize,
}

/// Check |F~|(lambda p) = |F|(p)/lambda and A~(lambda p) = A(p)/lambda on
/// the given sample points.
pub fn verify_rescaling(
    u: &SymplecticPotential,
    lambda: f64,
    samples: &[Vec<f64>],
) -> Result<RescaleResidualReport> {
    let ru = rescale(u, lambda)?;
    let mut max_f = 0.0f64;
    let mut max_a = 0.0f64;
    let mut used = 0;
    for p in samples {
        if !u.in_domain(p) {
            continue;
        }
        let scaled: Vec<f64> = p.iter().map(|v| lambda * v).collect();
        let r0 = curvature_at(u, p)?;
        let r1 = curvature_at(&ru.potential, &scaled)?;
        max_f = max_f.max((r1.f_norm - r0.f_norm / lambda).abs());
        max_a = max_a.max((r1.scalar - r0.scalar / lambda).abs());
        used += 1;
    }
    Ok(RescaleResidualReport { lambda, max_f_residual: max_f, max_a_residual: max_a, n_samples: used })
}

// ---------------------------------------------------------------------------
// The estimate suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LemmaId {
    LengthBound,
    DistCorner,
    CurvIneq,
    HessUpper,
    SinhMono,
    SinhSq,
    DefiningBound,
    HessRatio,
    EllipticBalls,
}

pub const ALL_LEMMAS: [LemmaId; 9] = [
    LemmaId::LengthBound,
    LemmaId::DistCorner,
    LemmaId::CurvIneq,
    LemmaId::HessUpper,
    LemmaId::SinhMono,
    LemmaId::SinhSq,
    LemmaId::DefiningBound,
    LemmaId::HessRatio,
    LemmaId::EllipticBalls,
];

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LemmaId::LengthBound => "LENGTH_BOUND",
            LemmaId::DistCorner => "DIST_CORNER",
            LemmaId::CurvIneq => "CURV_INEQ",
            LemmaId::HessUpper => "HESS_UPPER",
            LemmaId::SinhMono => "SINH_MONO",
            LemmaId::SinhSq => "SINH_SQ",
            LemmaId::DefiningBound => "DEFINING_BOUND",
            LemmaId::HessRatio => "HESS_RATIO",
            LemmaId::EllipticBalls => "ELLIPTIC_BALLS",
        };
        f.write_str(s)
    }
}

impl FromStr for LemmaId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "LENGTH_BOUND" => LemmaId::LengthBound,
            "DIST_CORNER" => LemmaId::DistCorner,
            "CURV_INEQ" => LemmaId::CurvIneq,
            "HESS_UPPER" => LemmaId::HessUpper,
            "SINH_MONO" => LemmaId::SinhMono,
            "SINH_SQ" => LemmaId::SinhSq,
            "DEFINING_BOUND" => LemmaId::DefiningBound,
            "HESS_RATIO" => LemmaId::HessRatio,
            "ELLIPTIC_BALLS" => LemmaId::EllipticBalls,
            _ => return Err(Error::UnknownLemma(s.to_string())),
        })
    }
}

#[derive(Debug, Clone)]
pub struct EstimateParams {
    pub seed: u64,
    /// Sample grid nodes per axis over the polytope bounding box.
    pub per_axis: usize,
    /// Seeded directions on top of the coordinate axes.
    pub directions: usize,
    /// Pass threshold: pass iff min margin >= -tolerance.
    pub tolerance: f64,
    /// Relative tolerance for length quadrature.
    pub quad_tol: f64,
}

impl EstimateParams {
    pub fn standard(n: usize, seed: u64) -> Self {
        Self {
            seed,
            per_axis: if n == 1 { 9 } else { 5 },
            directions: 4,
            tolerance: 1e-6,
            quad_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub lemma: String,
    pub sample_description: String,
    pub n_checks: usize,
    pub n_skipped: usize,
    pub min_margin: f64,
    pub witness: Vec<f64>,
    pub pass: bool,
    /// Rescaling factor applied to enforce sup |F| <= 1, when the lemma
    /// hypotheses require it.
    pub lambda: Option<f64>,
    pub m_hat: Option<f64>,
    pub note: String,
    pub seed: u64,
}

struct MarginAcc {
    min_margin: f64,
    witness: Vec<f64>,
    checks: usize,
    skipped: usize,
}

impl MarginAcc {
    fn new() -> Self {
        Self { min_margin: f64::INFINITY, witness: Vec::new(), checks: 0, skipped: 0 }
    }

    fn offer(&mut self, margin: f64, witness: &[f64]) {
        self.checks += 1;
        if margin < self.min_margin {
            self.min_margin = margin;
            self.witness = witness.to_vec();
        }
    }
}

fn sample_nodes(poly: &DelzantPolytope, u: &SymplecticPotential, per_axis: usize) -> Vec<Vec<f64>> {
    let n = poly.dim();
    let (lo, hi) = poly.bbox();
    let mut out = Vec::new();
    let mut idx = vec![0usize; n];
    loop {
        let x: Vec<f64> = (0..n)
            .map(|a| lo[a] + (hi[a] - lo[a]) * idx[a] as f64 / (per_axis - 1) as f64)
            .collect();
        if u.in_domain(&x) {
            out.push(x);
        }
        let mut a = 0;
        loop {
            if a == n {
                break;
            }
            idx[a] += 1;
            if idx[a] < per_axis {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
        if a == n {
            break;
        }
    }
    out
}

fn direction_fan(n: usize, seed: u64, extra: usize) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for a in 0..n {
        let mut d = vec![0.0; n];
        d[a] = 1.0;
        dirs.push(d.clone());
        if n > 1 {
            d[a] = -1.0;
            dirs.push(d);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    for _ in 0..extra {
        loop {
            let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nd = linalg::norm2(&d);
            if nd > 0.2 {
                dirs.push(d.iter().map(|c| c / nd).collect());
                break;
            }
        }
    }
    dirs
}

/// sup |F| over a moderately fine quadrature grid, with the arg max.
pub fn sup_f_on_grid(u: &SymplecticPotential, grid: &QuadratureGrid) -> Result<(f64, Vec<f64>)> {
    let n = u.dim();
    let mut sc = CurvatureScratch::new(n);
    let mut best = f64::NEG_INFINITY;
    let mut arg = vec![0.0; n];
    for x in grid.iter_points() {
        u.derivs_into(x, &mut sc.bundle)?;
        let core = curvature_from_bundle(&mut sc)
            .ok_or_else(|| Error::NotPositiveDefinite(x.to_vec()))?;
        if core.f_norm > best {
            best = core.f_norm;
            arg.copy_from_slice(x);
        }
    }
    Ok((best, arg))
}

fn default_scan_grid(u: &SymplecticPotential) -> Result<QuadratureGrid> {
    let poly = u.polytope();
    let (lo, hi) = poly.bbox();
    let span = lo
        .iter()
        .zip(hi)
        .map(|(a, b)| b - a)
        .fold(f64::INFINITY, f64::min);
    let h = (span / 24.0).min(u.grid().h * 2.0);
    build_grid(poly, h, u.margin())
}

/// Certified lower bound for Dist_g(p, dP) under |F| <= 1 and Guillemin
/// boundary conditions: min over facets of asinh sqrt(u_E^T H^{-1} u_E).
fn certified_alpha(
    u: &SymplecticPotential,
    poly: &DelzantPolytope,
    x: &[f64],
    sc: &mut CurvatureScratch,
) -> Result<f64> {
    u.derivs_into(x, &mut sc.bundle)?;
    curvature_from_bundle(sc).ok_or_else(|| Error::NotPositiveDefinite(x.to_vec()))?;
    let n = poly.dim();
    let hi = sc.inv_hess();
    let mut alpha = f64::INFINITY;
    for f in poly.facets() {
        let un = f.normal_f64();
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += hi[i * n + j] * un[i] * un[j];
            }
        }
        alpha = alpha.min(q.max(0.0).sqrt().asinh());
    }
    Ok(alpha)
}

/// Verify one lemma of the estimate suite on sampled points/directions.
pub fn verify_estimate(
    u: &SymplecticPotential,
    lemma: LemmaId,
    params: &EstimateParams,
) -> Result<EstimateReport> {
    let needs_unit_f = matches!(
        lemma,
        LemmaId::HessUpper
            | LemmaId::SinhMono
            | LemmaId::SinhSq
            | LemmaId::DefiningBound
            | LemmaId::HessRatio
            | LemmaId::EllipticBalls
    );
    let (work, lambda) = if needs_unit_f {
        let grid = default_scan_grid(u)?;
        let (supf, _) = sup_f_on_grid(u, &grid)?;
        if supf > 1e-12 {
            (rescale(u, supf)?.potential, Some(supf))
        } else {
            (u.clone(), None)
        }
    } else {
        (u.clone(), None)
    };
    let poly = work.polytope().clone();
    let n = poly.dim();
    let samples = sample_nodes(&poly, &work, params.per_axis);
    if samples.is_empty() {
        return Err(Error::GridEmpty);
    }
    let dirs = direction_fan(n, params.seed, params.directions);
    let mut acc = MarginAcc::new();
    let mut m_hat = None;
    let mut sc = CurvatureScratch::new(n);

    let note;
    match lemma {
        LemmaId::LengthBound => {
            note = "LHS is the exact segment length; M taken from the sampled estimate".to_string();
            let m = estimate_m(&work, &poly, &MEstimateConfig::standard(n, params.seed))?.m_hat;
            m_hat = Some(m);
            let c = 1.0 / (2f64.sqrt() - 1.0);
            for p in &samples {
                for d in &dirs {
                    let fwd = poly.ray_exit(p, d).map(|(t, _)| t);
                    let back = {
                        let neg: Vec<f64> = d.iter().map(|v| -v).collect();
                        poly.ray_exit(p, &neg).map(|(t, _)| t)
                    };
                    let (Some(fwd), Some(back)) = (fwd, back) else {
                        acc.skipped += 1;
                        continue;
                    };
                    // p is the midpoint of I; p' = p + s d with both
                    // endpoints of I inside the closed polytope.
                    let s_star = fwd.min(back);
                    for frac in [0.9, 0.5] {
                        let s = s_star * frac;
                        let pp: Vec<f64> =
                            p.iter().zip(d).map(|(pa, da)| pa + s * da).collect();
                        if !work.in_domain(&pp) {
                            acc.skipped += 1;
                            continue;
                        }
                        let lhs =
                            riemannian_length(&work, &[p.clone(), pp.clone()], params.quad_tol)?;
                        let dist: f64 = s * linalg::norm2(d);
                        let rhs = c * (m * dist).sqrt();
                        acc.offer(rhs - lhs, p);
                    }
                }
            }
        }
        LemmaId::DistCorner => {
            note = "LHS is the fan upper bound on Dist_g, conservative for this inequality"
                .to_string();
            let m = estimate_m(&work, &poly, &MEstimateConfig::standard(n, params.seed))?.m_hat;
            m_hat = Some(m);
            let c = 1.0 / (2f64.sqrt() - 1.0);
            for p in &samples {
                let lhs = dist_boundary_riemannian(&work, &poly, None, p, params.quad_tol)?;
                let de = poly.euclid_dist_boundary(p)?;
                let rhs = c * (m * de).sqrt();
                acc.offer(rhs - lhs, p);
            }
        }
        LemmaId::CurvIneq => {
            note = "second derivative of 1/Hess(nu,nu) along nu, any direction".to_string();
            for p in &samples {
                work.derivs_into(p, &mut sc.bundle)?;
                let core = curvature_from_bundle(&mut sc)
                    .ok_or_else(|| Error::NotPositiveDefinite(p.clone()))?;
                for d in &dirs {
                    let q = sc.bundle.hess_quadratic(d);
                    let q1 = sc.bundle.third_cubic(d);
                    let q2 = sc.bundle.fourth_quartic(d);
                    let lhs = (2.0 * q1 * q1 - q * q2) / (q * q * q);
                    acc.offer(core.f_norm - lhs, p);
                }
            }
        }
        LemmaId::HessUpper => {
            note = "R is the largest radius with p ± 3R nu inside the closed polytope".to_string();
            let m = estimate_m(&work, &poly, &MEstimateConfig::standard(n, params.seed))?.m_hat;
            m_hat = Some(m);
            for p in &samples {
                work.derivs_into(p, &mut sc.bundle)?;
                for d in &dirs {
                    let nd = linalg::norm2(d);
                    let unit: Vec<f64> = d.iter().map(|v| v / nd).collect();
                    let fwd = poly.ray_exit(p, &unit).map(|(t, _)| t);
                    let back = {
                        let neg: Vec<f64> = unit.iter().map(|v| -v).collect();
                        poly.ray_exit(p, &neg).map(|(t, _)| t)
                    };
                    let (Some(fwd), Some(back)) = (fwd, back) else {
                        acc.skipped += 1;
                        continue;
                    };
                    let r = fwd.min(back) / 3.0;
                    if r <= 1e-9 {
                        acc.skipped += 1;
                        continue;
                    }
                    let lhs = sc.bundle.hess_quadratic(&unit);
                    let rhs = (2.0 * m / (std::f64::consts::PI * r))
                        .max(2.0 * (m / std::f64::consts::PI).powi(2));
                    acc.offer(rhs - lhs, p);
                }
            }
        }
        LemmaId::SinhMono => {
            note = "ratio sqrt(u^{ij}(nu,nu))/sinh t sampled along shot geodesics".to_string();
            let sub: Vec<&Vec<f64>> = samples.iter().step_by(samples.len().div_ceil(6)).collect();
            let mut hi = vec![0.0; n * n];
            let mut chol = vec![0.0; n * n];
            for p in sub {
                for d in dirs.iter().take(2 * n + 2) {
                    let path = geodesic_shoot(&work, p, d, 3.0)?;
                    let mut prev: Option<f64> = None;
                    for s in &path.samples {
                        if s.t < 0.05 {
                            continue;
                        }
                        work.derivs_into(&s.x, &mut sc.bundle)?;
                        if linalg::spd_invert(&sc.bundle.hess, &mut hi, &mut chol, n).is_none() {
                            return Err(Error::NotPositiveDefinite(s.x.clone()));
                        }
                        for nu in dirs.iter().take(n) {
                            let mut q = 0.0;
                            for i in 0..n {
                                for j in 0..n {
                                    q += hi[i * n + j] * nu[i] * nu[j];
                                }
                            }
                            let _ = q;
                        }
                        // Track the ratio for the first axis vector and the
                        // shoot direction; both are fixed vectors of R^n.
                        let mut worst_ratio_step = f64::INFINITY;
                        for nu in [&dirs[0], d] {
                            let mut q = 0.0;
                            for i in 0..n {
                                for j in 0..n {
                                    q += hi[i * n + j] * nu[i] * nu[j];
                                }
                            }
                            let ratio = q.max(0.0).sqrt() / s.t.sinh();
                            worst_ratio_step = worst_ratio_step.min(ratio);
                            if let Some(prev_r) = prev {
                                acc.offer(prev_r - ratio, &s.x);
                            }
                        }
                        prev = Some(worst_ratio_step);
                    }
                    if path.samples.len() < 3 && path.reason == GeodesicEnd::HitMargin {
                        acc.skipped += 1;
                    }
                }
            }
        }
        LemmaId::SinhSq => {
            note = "distance upper bound inflates the sinh^2 right side: safe".to_string();
            for p in &samples {
                work.derivs_into(p, &mut sc.bundle)?;
                curvature_from_bundle(&mut sc)
                    .ok_or_else(|| Error::NotPositiveDefinite(p.clone()))?;
                let hi = sc.inv_hess().to_vec();
                for (k, f) in poly.facets().iter().enumerate() {
                    let un = f.normal_f64();
                    let mut lhs = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            lhs += hi[i * n + j] * un[i] * un[j];
                        }
                    }
                    let dist =
                        dist_boundary_riemannian(&work, &poly, Some(k), p, params.quad_tol)?;
                    let rhs = dist.sinh().powi(2);
                    acc.offer(rhs - lhs, p);
                }
            }
        }
        LemmaId::DefiningBound => {
            note = "distance upper bound inflates cosh - 1: safe".to_string();
            for p in &samples {
                for (k, _f) in poly.facets().iter().enumerate() {
                    let lhs = poly.facet_value(k, p);
                    let dist =
                        dist_boundary_riemannian(&work, &poly, Some(k), p, params.quad_tol)?;
                    let rhs = dist.cosh() - 1.0;
                    acc.offer(rhs - lhs, p);
                }
            }
        }
        LemmaId::HessRatio => {
            note = "alpha is the certified asinh lower bound on Dist_g(p, dP); d is the \
                    segment-length upper bound on Dist_g(p, q)"
                .to_string();
            let mut hi_p = vec![0.0; n * n];
            let mut hi_q = vec![0.0; n * n];
            let mut chol = vec![0.0; n * n];
            let mut diff = vec![0.0; n * n];
            for (i, p) in samples.iter().enumerate() {
                let alpha = certified_alpha(&work, &poly, p, &mut sc)?;
                if alpha <= 1e-9 {
                    acc.skipped += 1;
                    continue;
                }
                work.derivs_into(p, &mut sc.bundle)?;
                if linalg::spd_invert(&sc.bundle.hess, &mut hi_p, &mut chol, n).is_none() {
                    return Err(Error::NotPositiveDefinite(p.clone()));
                }
                let hi_p_snapshot = hi_p.clone();
                for q in samples.iter().skip(i + 1) {
                    let d_up = riemannian_length(&work, &[p.clone(), q.clone()], params.quad_tol)?;
                    work.derivs_into(q, &mut sc.bundle)?;
                    if linalg::spd_invert(&sc.bundle.hess, &mut hi_q, &mut chol, n).is_none() {
                        return Err(Error::NotPositiveDefinite(q.clone()));
                    }
                    // u^{ij}(q) <= (sinh^2(alpha+d)/sinh^2 alpha) u^{ij}(p)
                    let grow = (alpha + d_up).sinh().powi(2) / alpha.sinh().powi(2);
                    for t in 0..n * n {
                        diff[t] = grow * hi_p_snapshot[t] - hi_q[t];
                    }
                    acc.offer(linalg::sym_min_eigenvalue(&diff, n), p);
                    // Reverse inequality when d < alpha.
                    if d_up < alpha {
                        let shrink = (alpha - d_up).sinh().powi(2) / alpha.sinh().powi(2);
                        for t in 0..n * n {
                            diff[t] = hi_q[t] - shrink * hi_p_snapshot[t];
                        }
                        acc.offer(linalg::sym_min_eigenvalue(&diff, n), p);
                    }
                }
            }
        }
        LemmaId::EllipticBalls => {
            note = "alpha certified from below; inner inclusion certified by segment length, \
                    outer by geodesic endpoints"
                .to_string();
            let sub: Vec<&Vec<f64>> = samples.iter().step_by(samples.len().div_ceil(6)).collect();
            let mut sqrt_inv = vec![0.0; n * n];
            for p in sub {
                let alpha = certified_alpha(&work, &poly, p, &mut sc)?;
                if alpha <= 1e-6 {
                    acc.skipped += 1;
                    continue;
                }
                let beta = 0.5 * alpha;
                let c = (alpha - beta).sinh() / alpha.sinh();
                let big_c = (alpha + beta).sinh() / alpha.sinh();
                work.derivs_into(p, &mut sc.bundle)?;
                let hess_p = sc.bundle.hess.clone();
                linalg::spd_inv_sqrt(&hess_p, &mut sqrt_inv, n)?;
                for d in dirs.iter().take(2 * n + 4) {
                    // Outer inclusion: geodesic ball endpoint inside E(p, C beta).
                    let path = geodesic_shoot(&work, p, d, beta)?;
                    if path.reason == GeodesicEnd::TimeReached {
                        let q = &path.samples.last().unwrap().x;
                        let dx: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
                        let mut quad = 0.0;
                        for i in 0..n {
                            for j in 0..n {
                                quad += hess_p[i * n + j] * dx[i] * dx[j];
                            }
                        }
                        acc.offer((big_c * beta).powi(2) - quad, p);
                    } else {
                        acc.skipped += 1;
                    }
                    // Inner inclusion: ellipse point within g-distance beta,
                    // certified by the straight segment.
                    let nd = linalg::norm2(d);
                    let mut y = p.clone();
                    for i in 0..n {
                        let mut step = 0.0;
                        for j in 0..n {
                            step += sqrt_inv[i * n + j] * d[j] / nd;
                        }
                        y[i] += c * beta * step;
                    }
                    if poly.contains(&y, 1e-12) {
                        let len = segment_length_to_boundary(&work, p, &y, params.quad_tol)?;
                        acc.offer(beta - len, p);
                    } else {
                        acc.skipped += 1;
                    }
                }
            }
        }
    }

    if acc.checks == 0 {
        return Err(Error::HypothesisUnsatisfiable(format!(
            "{lemma}: no admissible samples"
        )));
    }
    Ok(EstimateReport {
        lemma: lemma.to_string(),
        sample_description: format!(
            "{} grid points per axis, {} directions, seed {}",
            params.per_axis, params.directions, params.seed
        ),
        n_checks: acc.checks,
        n_skipped: acc.skipped,
        min_margin: acc.min_margin,
        witness: acc.witness,
        pass: acc.min_margin >= -params.tolerance,
        lambda,
        m_hat,
        note,
        seed: params.seed,
    })
}

/// Run the whole suite.
pub fn verify_all(u: &SymplecticPotential, params: &EstimateParams) -> Result<Vec<EstimateReport>> {
    ALL_LEMMAS.iter().map(|l| verify_estimate(u, *l, params)).collect()
}

// ---------------------------------------------------------------------------
// Singularity detection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct SingularityThresholds {
    pub sup_f_threshold: f64,
    /// A facet is retained in the limit when lambda * Dist_Euc(p, facet)
    /// stays below this cutoff.
    pub retain_cutoff: f64,
}

impl Default for SingularityThresholds {
    fn default() -> Self {
        Self { sup_f_threshold: 1e3, retain_cutoff: 10.0 }
    }
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum LimitType {
    /// Rescaled polytopes exhaust R^n.
    Interior,
    /// (R^+)^m x R^{n-m}: m facets stay at bounded rescaled distance.
    CornerEdge { m: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct SingularityEvent {
    pub t: f64,
    pub point: Vec<f64>,
    pub lambda: f64,
    pub retained_facets: Vec<usize>,
    pub class: LimitType,
    #[serde(skip)]
    pub rescaled: Option<RescaledProblem>,
}

fn classify(
    poly: &DelzantPolytope,
    point: &[f64],
    lambda: f64,
    cutoff: f64,
) -> (Vec<usize>, LimitType) {
    let mut retained = Vec::new();
    for (k, f) in poly.facets().iter().enumerate() {
        let dist = poly.facet_value(k, point).abs() / f.norm();
        if lambda * dist < cutoff {
            retained.push(k);
        }
    }
    let class = if retained.is_empty() {
        LimitType::Interior
    } else {
        LimitType::CornerEdge { m: retained.len() }
    };
    (retained, class)
}

/// Scan a flow trajectory for curvature blow-ups and build the rescaled
/// problems for flagged times. The rescaled potential can only be attached
/// at the final state (intermediate potentials are not retained by the run).
pub fn detect_singularity(
    run: &FlowRun,
    thresholds: &SingularityThresholds,
) -> Result<Vec<SingularityEvent>> {
    if run.records.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let poly = run.final_state.potential.polytope().clone();
    let mut events = Vec::new();
    for rec in &run.records {
        if rec.sup_f > thresholds.sup_f_threshold {
            let (retained, class) =
                classify(&poly, &rec.sup_f_point, rec.sup_f, thresholds.retain_cutoff);
            let rescaled = if (rec.t - run.final_state.t).abs() <= 1e-15 * (1.0 + rec.t.abs()) {
                let mut r = rescale(&run.final_state.potential, rec.sup_f)?;
                r.provenance = Provenance {
                    blowup_point: Some(rec.sup_f_point.clone()),
                    time: Some(rec.t),
                };
                Some(r)
            } else {
                None
            };
            events.push(SingularityEvent {
                t: rec.t,
                point: rec.sup_f_point.clone(),
                lambda: rec.sup_f,
                retained_facets: retained,
                class,
                rescaled,
            });
        }
    }
    Ok(events)
}

/// Threshold query against a single potential: the argmax of |F| over the
/// grid, as a singularity event, when it exceeds the threshold.
pub fn scan_potential(
    u: &SymplecticPotential,
    grid: &QuadratureGrid,
    t: f64,
    thresholds: &SingularityThresholds,
) -> Result<Option<SingularityEvent>> {
    let (supf, point) = sup_f_on_grid(u, grid)?;
    if supf <= thresholds.sup_f_threshold {
        return Ok(None);
    }
    let poly = u.polytope();
    let (retained, class) = classify(poly, &point, supf, thresholds.retain_cutoff);
    let mut r = rescale(u, supf)?;
    r.provenance = Provenance { blowup_point: Some(point.clone()), time: Some(t) };
    Ok(Some(SingularityEvent {
        t,
        point,
        lambda: supf,
        retained_facets: retained,
        class,
        rescaled: Some(r),
    }))
}
