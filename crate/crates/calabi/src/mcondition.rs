//! Donaldson's M-condition: V(p,q) = (grad_nu u)(q) - (grad_nu u)(p) must be
//! bounded by M over all pairs whose tripled segment
//! I(p,q) = {(p+q)/2 + t(p-q) : -3/2 <= t <= 3/2} stays inside the closed
//! polytope. `estimate_m` approximates the sup by stratified sampling:
//! all pairs on a coarse base grid, extremal admissible pairs along a
//! direction fan from every grid point, and geometric ladders marching into
//! each facet, where the sup localizes for Guillemin-type potentials.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::linalg;
use crate::polytope::DelzantPolytope;
use crate::potential::{ConvexPotential, DerivativeBundle, SymplecticPotential};

/// Directional-derivative difference along the unit vector from p to q.
/// Positive for strictly convex u.
pub fn v_value<P: ConvexPotential + ?Sized>(u: &P, p: &[f64], q: &[f64]) -> Result<f64> {
    let n = u.dim();
    let mut nu = vec![0.0; n];
    for i in 0..n {
        nu[i] = q[i] - p[i];
    }
    let d = linalg::norm2(&nu);
    if d == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    for c in nu.iter_mut() {
        *c /= d;
    }
    let mut gp = DerivativeBundle::zeros(n);
    let mut gq = DerivativeBundle::zeros(n);
    u.derivs_into(p, &mut gp)?;
    u.derivs_into(q, &mut gq)?;
    Ok(linalg::dot(&gq.grad, &nu) - linalg::dot(&gp.grad, &nu))
}

/// V(p,q) evaluated through gradients that omit any explicit affine gauge
/// term; the term cancels in the difference analytically, and skipping it
/// makes affine invariance of the estimate exact to the bit.
fn v_value_gauge_free(u: &SymplecticPotential, p: &[f64], q: &[f64]) -> Result<f64> {
    let n = u.dim();
    let mut nu = vec![0.0; n];
    for i in 0..n {
        nu[i] = q[i] - p[i];
    }
    let d = linalg::norm2(&nu);
    if d == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    for c in nu.iter_mut() {
        *c /= d;
    }
    let mut gp = DerivativeBundle::zeros(n);
    let mut gq = DerivativeBundle::zeros(n);
    u.gradient_no_affine_into(p, &mut gp)?;
    u.gradient_no_affine_into(q, &mut gq)?;
    Ok(linalg::dot(&gq.grad, &nu) - linalg::dot(&gp.grad, &nu))
}

/// Is the tripled segment I(p,q) inside the closed polytope? Its endpoints
/// are 2p - q and 2q - p, so by convexity the endpoint test suffices.
pub fn admissible(poly: &DelzantPolytope, p: &[f64], q: &[f64]) -> bool {
    if p == q {
        return false;
    }
    let n = poly.dim();
    let mut e1 = vec![0.0; n];
    let mut e2 = vec![0.0; n];
    for i in 0..n {
        e1[i] = 2.0 * p[i] - q[i];
        e2[i] = 2.0 * q[i] - p[i];
    }
    poly.contains(&e1, 1e-9) && poly.contains(&e2, 1e-9)
}

#[derive(Debug, Clone)]
pub struct MEstimateConfig {
    /// Base grid nodes per axis (level 0); level l has (b-1) 2^l + 1 so the
    /// sample hierarchy is nested and the estimate monotone in l.
    pub base_per_axis: usize,
    /// Number of doubling levels recorded in the refinement history.
    pub levels: u32,
    /// Seeded random directions on top of the coordinate axes.
    pub directions: usize,
    /// Depth of the geometric ladders marching into each facet.
    pub ladder_depth: usize,
    pub seed: u64,
}

impl MEstimateConfig {
    /// Dense defaults for one-shot estimates.
    pub fn standard(n: usize, seed: u64) -> Self {
        match n {
            1 => Self { base_per_axis: 65, levels: 3, directions: 0, ladder_depth: 6, seed },
            2 => Self { base_per_axis: 9, levels: 2, directions: 8, ladder_depth: 5, seed },
            _ => Self { base_per_axis: 5, levels: 1, directions: 12, ladder_depth: 4, seed },
        }
    }

    /// Cheap settings for per-record flow diagnostics.
    pub fn light(n: usize, seed: u64) -> Self {
        match n {
            1 => Self { base_per_axis: 17, levels: 1, directions: 0, ladder_depth: 4, seed },
            _ => Self { base_per_axis: 5, levels: 1, directions: 4, ladder_depth: 3, seed },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MHistoryEntry {
    pub per_axis: usize,
    pub m_hat: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MEstimate {
    pub m_hat: f64,
    pub witness_p: Vec<f64>,
    pub witness_q: Vec<f64>,
    pub samples: usize,
    pub history: Vec<MHistoryEntry>,
    pub seed: u64,
}

struct SupState {
    best: f64,
    witness: Option<(Vec<f64>, Vec<f64>)>,
    samples: usize,
}

impl SupState {
    fn offer(&mut self, v: f64, p: &[f64], q: &[f64]) {
        self.samples += 1;
        let better = v > self.best
            || (v == self.best
                && self
                    .witness
                    .as_ref()
                    .is_some_and(|(wp, wq)| lex_less(p, q, wp, wq)));
        if better {
            self.best = v;
            self.witness = Some((p.to_vec(), q.to_vec()));
        }
    }
}

fn lex_less(p: &[f64], q: &[f64], wp: &[f64], wq: &[f64]) -> bool {
    for (a, b) in p.iter().chain(q).zip(wp.iter().chain(wq)) {
        if a < b {
            return true;
        }
        if a > b {
            return false;
        }
    }
    false
}

enum VEval<'a, P: ConvexPotential + ?Sized> {
    Generic(&'a P),
    GaugeFree(&'a SymplecticPotential),
}

impl<P: ConvexPotential + ?Sized> VEval<'_, P> {
    fn v(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        match self {
            VEval::Generic(u) => v_value(*u, p, q),
            VEval::GaugeFree(u) => v_value_gauge_free(u, p, q),
        }
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        match self {
            VEval::Generic(u) => u.in_domain(x),
            VEval::GaugeFree(u) => u.in_domain(x),
        }
    }
}

/// Estimate the smallest M certified by sampling: the max of V over sampled
/// admissible pairs, with a nested refinement history.
pub fn estimate_m<P: ConvexPotential + ?Sized>(
    u: &P,
    poly: &DelzantPolytope,
    cfg: &MEstimateConfig,
) -> Result<MEstimate> {
    estimate_m_inner(&VEval::Generic(u), poly, cfg)
}

/// Like [`estimate_m`] but bit-exactly invariant under affine gauge changes
/// of a grid-backed potential.
pub fn estimate_m_gauge_free(
    u: &SymplecticPotential,
    cfg: &MEstimateConfig,
) -> Result<MEstimate> {
    let poly = u.polytope().clone();
    estimate_m_inner(&VEval::<SymplecticPotential>::GaugeFree(u), &poly, cfg)
}

fn estimate_m_inner<P: ConvexPotential + ?Sized>(
    ev: &VEval<'_, P>,
    poly: &DelzantPolytope,
    cfg: &MEstimateConfig,
) -> Result<MEstimate> {
    let n = poly.dim();
    let (lo, hi) = poly.bbox();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dirs: Vec<Vec<f64>> = Vec::new();
    for a in 0..n {
        let mut d = vec![0.0; n];
        d[a] = 1.0;
        dirs.push(d.clone());
        if n > 1 {
            d[a] = -1.0;
            dirs.push(d);
        }
    }
    for _ in 0..cfg.directions {
        loop {
            let d: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let nd = linalg::norm2(&d);
            if nd > 0.2 {
                dirs.push(d.iter().map(|c| c / nd).collect());
                break;
            }
        }
    }

    let mut state = SupState { best: f64::NEG_INFINITY, witness: None, samples: 0 };
    let mut history = Vec::new();

    let ladder_bases: Vec<(usize, Vec<Vec<f64>>)> = (0..poly.facets().len())
        .map(|k| {
            let verts: Vec<Vec<f64>> = poly.facet_vertices(k).into_iter().cloned().collect();
            let mut bases = Vec::new();
            if !verts.is_empty() {
                let mut c = vec![0.0; n];
                for v in &verts {
                    for a in 0..n {
                        c[a] += v[a];
                    }
                }
                for x in c.iter_mut() {
                    *x /= verts.len() as f64;
                }
                for v in &verts {
                    bases.push(v.iter().zip(&c).map(|(a, b)| 0.5 * (a + b)).collect());
                }
                bases.push(c);
            }
            (k, bases)
        })
        .collect();

    for level in 0..=cfg.levels {
        let d_axis = (cfg.base_per_axis - 1) * (1usize << level) + 1;
        let mut grid_points: Vec<Vec<f64>> = Vec::new();
        let mut idx = vec![0usize; n];
        loop {
            let x: Vec<f64> = (0..n)
                .map(|a| lo[a] + (hi[a] - lo[a]) * idx[a] as f64 / (d_axis - 1) as f64)
                .collect();
            if ev.in_domain(&x) {
                grid_points.push(x);
            }
            let mut a = 0;
            loop {
                if a == n {
                    break;
                }
                idx[a] += 1;
                if idx[a] < d_axis {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
            if a == n {
                break;
            }
        }

        if level == 0 {
            for i in 0..grid_points.len() {
                for j in i + 1..grid_points.len() {
                    let (p, q) = (&grid_points[i], &grid_points[j]);
                    if admissible(poly, p, q) {
                        let v = ev.v(p, q)?;
                        state.offer(v, p, q);
                    }
                }
            }
        }

        for p in &grid_points {
            for d in &dirs {
                extremal_pairs(ev, poly, p, d, &mut state)?;
            }
        }

        for (k, bases) in &ladder_bases {
            let f = &poly.facets()[*k];
            let un = f.normal_f64();
            let unorm = f.norm();
            let inward: Vec<f64> = un.iter().map(|c| c / unorm).collect();
            for b in bases {
                let reach = poly.ray_exit(b, &inward).map(|(t, _)| t).unwrap_or(0.0);
                if reach <= 0.0 {
                    continue;
                }
                for j in 0..=cfg.ladder_depth {
                    let depth = 0.45 * reach / (1u64 << j) as f64;
                    let p: Vec<f64> =
                        b.iter().zip(&inward).map(|(ba, da)| ba + depth * da).collect();
                    if !ev.in_domain(&p) {
                        continue;
                    }
                    extremal_pairs(ev, poly, &p, &inward, &mut state)?;
                    let outward: Vec<f64> = inward.iter().map(|c| -c).collect();
                    extremal_pairs(ev, poly, &p, &outward, &mut state)?;
                }
            }
        }

        history.push(MHistoryEntry { per_axis: d_axis, m_hat: state.best, samples: state.samples });
    }

    let (witness_p, witness_q) = state.witness.ok_or(Error::GridEmpty)?;
    Ok(MEstimate {
        m_hat: state.best,
        witness_p,
        witness_q,
        samples: state.samples,
        history,
        seed: cfg.seed,
    })
}

/// For a point p and direction d, the largest s with (p, p + s d) admissible
/// is bounded by the exit of the ray -d (endpoint 2p - q in the closed
/// polytope) and half the exit of +d (endpoint 2q - p). Gradients are taken
/// at margin-clipped points; clipping shrinks the pair along the same
/// segment, which keeps it admissible.
fn extremal_pairs<P: ConvexPotential + ?Sized>(
    ev: &VEval<'_, P>,
    poly: &DelzantPolytope,
    p: &[f64],
    d: &[f64],
    state: &mut SupState,
) -> Result<()> {
    let back = {
        let neg: Vec<f64> = d.iter().map(|c| -c).collect();
        poly.ray_exit(p, &neg).map(|(t, _)| t)
    };
    let fwd = poly.ray_exit(p, d).map(|(t, _)| t);
    let (Some(back), Some(fwd)) = (back, fwd) else {
        return Ok(());
    };
    let s_star = back.min(0.5 * fwd);
    if s_star <= 1e-12 {
        return Ok(());
    }
    for frac in [1.0, 0.5] {
        let s0 = s_star * frac;
        let mut s = s0;
        let mut q: Vec<f64> = p.iter().zip(d).map(|(pa, da)| pa + s * da).collect();
        let mut shrink = 0;
        while !ev.in_domain(&q) && shrink < 60 {
            s *= 0.5;
            for (qa, (pa, da)) in q.iter_mut().zip(p.iter().zip(d)) {
                *qa = pa + s * da;
            }
            shrink += 1;
        }
        if !ev.in_domain(&q) || q == *p {
            continue;
        }
        let v = ev.v(p, &q)?;
        state.offer(v, p, &q);
    }
    Ok(())
}

/// Standard-density gauge-free estimate for a grid-backed potential.
pub fn estimate_m_standard(u: &SymplecticPotential, seed: u64) -> Result<MEstimate> {
    estimate_m_gauge_free(u, &MEstimateConfig::standard(u.dim(), seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::{interval_01, unit_simplex_2d};
    use crate::potential::analytic::QuadraticPotential;
    use crate::potential::SymplecticPotential;
    use std::sync::Arc;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn admissible_examples() {
        let p = interval_01();
        assert!(admissible(&p, &[1.0 / 3.0], &[2.0 / 3.0]));
        assert!(!admissible(&p, &[0.1], &[0.6]));
        let s = unit_simplex_2d();
        assert!(admissible(&s, &[0.3, 0.3], &[0.31, 0.3]));
        assert!(!admissible(&s, &[0.3, 0.3], &[0.3, 0.3]));
    }

    #[test]
    fn v_value_examples() {
        let q = QuadraticPotential::identity(2);
        let v = v_value(&q, &[0.1, 0.2], &[0.4, 0.6]).unwrap();
        assert!((v - 0.5).abs() < 1e-12);
        assert!(matches!(
            v_value(&q, &[0.1, 0.2], &[0.1, 0.2]),
            Err(Error::CoincidentPoints)
        ));
        let u = SymplecticPotential::guillemin(Arc::new(interval_01()), 0.02, 0.01).unwrap();
        for (a, b) in [(0.2, 0.6), (0.5, 0.45), (0.31, 0.32)] {
            assert!(v_value(&u, &[a], &[b]).unwrap() > 0.0);
        }
    }

    /// Independent grid-search oracle with the closed-form gradient
    /// u0'(x) = (1/2) ln(x/(1-x)).
    fn brute_force_m_cp1(points: usize) -> f64 {
        let g = |x: f64| 0.5 * (x / (1.0 - x)).ln();
        let xs: Vec<f64> = (1..points).map(|i| i as f64 / points as f64).collect();
        let mut best = f64::NEG_INFINITY;
        for (i, &p) in xs.iter().enumerate() {
            for &q in &xs[i + 1..] {
                let e1 = 2.0 * p - q;
                let e2 = 2.0 * q - p;
                if (0.0..=1.0).contains(&e1) && (0.0..=1.0).contains(&e2) {
                    best = best.max(g(q) - g(p));
                }
            }
        }
        best
    }

    #[test]
    fn oracle_value_is_ln2() {
        let m = brute_force_m_cp1(1200);
        assert!((m - LN2).abs() < 0.01, "oracle {m} vs ln2 {LN2}");
    }

    #[test]
    fn estimate_matches_oracle_on_cp1() {
        let u = SymplecticPotential::guillemin(Arc::new(interval_01()), 0.01, 0.004).unwrap();
        let est = estimate_m_standard(&u, 0).unwrap();
        assert!((est.m_hat - LN2).abs() < 0.01, "m_hat {}", est.m_hat);
        assert!((est.witness_p[0] - 1.0 / 3.0).abs() < 0.05);
        assert!((est.witness_q[0] - 2.0 / 3.0).abs() < 0.05);
    }

    #[test]
    fn quadratic_m_is_max_admissible_separation() {
        let poly = Arc::new(interval_01());
        let u = SymplecticPotential::smooth_test(Arc::clone(&poly), 0.02, 0.004, |x| {
            0.5 * x[0] * x[0]
        })
        .unwrap();
        let est = estimate_m_gauge_free(
            &u,
            &MEstimateConfig { base_per_axis: 65, levels: 2, directions: 0, ladder_depth: 4, seed: 0 },
        )
        .unwrap();
        assert!((est.m_hat - 1.0 / 3.0).abs() < 0.01, "m_hat {}", est.m_hat);
    }

    #[test]
    fn affine_shift_is_bitwise_invariant() {
        let u = SymplecticPotential::guillemin(Arc::new(interval_01()), 0.02, 0.01).unwrap();
        let ua = u.with_affine(11.0, &[-3.0]);
        let cfg = MEstimateConfig { base_per_axis: 33, levels: 1, directions: 0, ladder_depth: 4, seed: 7 };
        let e1 = estimate_m_gauge_free(&u, &cfg).unwrap();
        let e2 = estimate_m_gauge_free(&ua, &cfg).unwrap();
        assert_eq!(e1.m_hat.to_bits(), e2.m_hat.to_bits());
        assert_eq!(e1.witness_p, e2.witness_p);
        assert_eq!(e1.witness_q, e2.witness_q);
    }

    #[test]
    fn history_is_monotone_and_stabilizes() {
        let u = SymplecticPotential::guillemin(Arc::new(interval_01()), 0.01, 0.004).unwrap();
        let est = estimate_m_standard(&u, 0).unwrap();
        for w in est.history.windows(2) {
            assert!(w[1].m_hat >= w[0].m_hat - 1e-15);
        }
        let last = &est.history[est.history.len() - 1];
        let prev = &est.history[est.history.len() - 2];
        assert!(last.m_hat - prev.m_hat < 0.05 * prev.m_hat.abs());
    }

    #[test]
    fn simplex_estimate_is_finite_and_positive() {
        let u = SymplecticPotential::guillemin(Arc::new(unit_simplex_2d()), 0.02, 0.015).unwrap();
        let est = estimate_m_standard(&u, 0).unwrap();
        assert!(est.m_hat > 0.3 && est.m_hat < 3.0, "m_hat {}", est.m_hat);
    }
}
