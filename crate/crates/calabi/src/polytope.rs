//! Delzant polytopes given by facet inequalities l_k(x) = <x, u_k> - lambda_k >= 0,
//! with primitive integer normals u_k, plus the quadrature grids and
//! lattice-normalized boundary measures the rest of the engine integrates
//! against.
//!
//! The boundary measure on facet k is the density d_sigma with
//! d_sigma ∧ d l_k = d_mu, i.e. Euclidean surface measure divided by |u_k|.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::linalg;

const GEOM_TOL: f64 = 1e-9;

/// One facet inequality: normal in Z^n, real offset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Facet {
    pub normal: Vec<i64>,
    pub offset: f64,
}

impl Facet {
    pub fn normal_f64(&self) -> Vec<f64> {
        self.normal.iter().map(|&v| v as f64).collect()
    }

    pub fn norm(&self) -> f64 {
        (self.normal.iter().map(|&v| (v * v) as f64).sum::<f64>()).sqrt()
    }
}

/// On-disk polytope description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolytopeSpec {
    pub dimension: usize,
    pub facets: Vec<Facet>,
}

/// A validated bounded polytope with computed vertices.
#[derive(Debug, Clone)]
pub struct DelzantPolytope {
    n: usize,
    facets: Vec<Facet>,
    vertices: Vec<Vec<f64>>,
    active_sets: Vec<Vec<usize>>,
    bbox_lo: Vec<f64>,
    bbox_hi: Vec<f64>,
    volume: f64,
    facet_sigma: Vec<f64>,
}

impl DelzantPolytope {
    /// Parse a JSON polytope spec and construct the polytope.
    pub fn parse(text: &str) -> Result<Self> {
        let spec: PolytopeSpec =
            serde_json::from_str(text).map_err(|e| Error::MalformedSpec(e.to_string()))?;
        Self::from_spec(&spec)
    }

    pub fn from_spec(spec: &PolytopeSpec) -> Result<Self> {
        let n = spec.dimension;
        if n == 0 {
            return Err(Error::MalformedSpec("dimension must be positive".into()));
        }
        if spec.facets.len() < n + 1 {
            return Err(Error::MalformedSpec(format!(
                "need at least {} facets in dimension {}",
                n + 1,
                n
            )));
        }
        for (k, f) in spec.facets.iter().enumerate() {
            if f.normal.len() != n {
                return Err(Error::MalformedSpec(format!(
                    "facet {k} normal has length {}, expected {n}",
                    f.normal.len()
                )));
            }
            if !f.offset.is_finite() {
                return Err(Error::MalformedSpec(format!("facet {k} offset not finite")));
            }
            let g = gcd_slice(&f.normal);
            if g != 1 {
                return Err(Error::NonPrimitiveNormal { facet: k, gcd: g });
            }
        }
        let facets = spec.facets.clone();
        check_bounded(n, &facets)?;
        let (vertices, active_sets) = enumerate_vertices(n, &facets)?;
        if vertices.is_empty() {
            return Err(Error::EmptyInterior);
        }
        let mut centroid = vec![0.0; n];
        for v in &vertices {
            for a in 0..n {
                centroid[a] += v[a];
            }
        }
        for c in centroid.iter_mut() {
            *c /= vertices.len() as f64;
        }
        let min_l = facets
            .iter()
            .map(|f| eval_facet(f, &centroid))
            .fold(f64::INFINITY, f64::min);
        if min_l <= GEOM_TOL {
            return Err(Error::EmptyInterior);
        }
        let mut bbox_lo = vec![f64::INFINITY; n];
        let mut bbox_hi = vec![f64::NEG_INFINITY; n];
        for v in &vertices {
            for a in 0..n {
                bbox_lo[a] = bbox_lo[a].min(v[a]);
                bbox_hi[a] = bbox_hi[a].max(v[a]);
            }
        }
        let mut p = Self {
            n,
            facets,
            vertices,
            active_sets,
            bbox_lo,
            bbox_hi,
            volume: 0.0,
            facet_sigma: Vec::new(),
        };
        let (vol, sigma) = p.compute_measures();
        p.volume = vol;
        p.facet_sigma = sigma;
        Ok(p)
    }

    pub fn to_spec(&self) -> PolytopeSpec {
        PolytopeSpec { dimension: self.n, facets: self.facets.clone() }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn vertices(&self) -> &[Vec<f64>] {
        &self.vertices
    }

    pub fn active_facets(&self, vertex: usize) -> &[usize] {
        &self.active_sets[vertex]
    }

    pub fn bbox(&self) -> (&[f64], &[f64]) {
        (&self.bbox_lo, &self.bbox_hi)
    }

    /// Euclidean volume of P.
    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Lattice-normalized measure of facet k: Euclidean (n-1)-volume / |u_k|.
    pub fn facet_sigma(&self, k: usize) -> f64 {
        self.facet_sigma[k]
    }

    /// Total boundary measure sigma(dP).
    pub fn boundary_sigma(&self) -> f64 {
        self.facet_sigma.iter().sum()
    }

    /// Vertex centroid; strictly interior for a valid polytope.
    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.n];
        for v in &self.vertices {
            for a in 0..self.n {
                c[a] += v[a];
            }
        }
        for x in c.iter_mut() {
            *x /= self.vertices.len() as f64;
        }
        c
    }

    /// All facet values l_k(x); affine in x.
    pub fn facet_values(&self, x: &[f64]) -> Vec<f64> {
        self.facets.iter().map(|f| eval_facet(f, x)).collect()
    }

    /// min_k l_k(x); positive iff strictly interior.
    pub fn min_facet_value(&self, x: &[f64]) -> f64 {
        self.facets
            .iter()
            .map(|f| eval_facet(f, x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn facet_value(&self, k: usize, x: &[f64]) -> f64 {
        eval_facet(&self.facets[k], x)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.min_facet_value(x) >= -tol
    }

    /// Euclidean distance from an interior point to the boundary.
    pub fn euclid_dist_boundary(&self, x: &[f64]) -> Result<f64> {
        let vals = self.facet_values(x);
        if vals.iter().any(|&v| v <= 0.0) {
            return Err(Error::NotInterior(x.to_vec()));
        }
        Ok(vals
            .iter()
            .zip(&self.facets)
            .map(|(v, f)| v / f.norm())
            .fold(f64::INFINITY, f64::min))
    }

    /// Euclidean distance from x to the hyperplane of facet k.
    pub fn euclid_dist_facet(&self, k: usize, x: &[f64]) -> f64 {
        eval_facet(&self.facets[k], x).abs() / self.facets[k].norm()
    }

    /// Exit parameter t of the ray x + t d (t > 0) through the boundary,
    /// together with the facet hit first. None if the ray never exits
    /// (cannot happen for bounded P and d != 0).
    pub fn ray_exit(&self, x: &[f64], d: &[f64]) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for (k, f) in self.facets.iter().enumerate() {
            let un = f.normal_f64();
            let slope = linalg::dot(&un, d);
            if slope < -1e-14 {
                let t = eval_facet(f, x) / (-slope);
                if t >= 0.0 && best.map_or(true, |(bt, _)| t < bt) {
                    best = Some((t, k));
                }
            }
        }
        best
    }

    /// Vertices lying on facet k.
    pub fn facet_vertices(&self, k: usize) -> Vec<&Vec<f64>> {
        self.vertices
            .iter()
            .filter(|v| eval_facet(&self.facets[k], v).abs() <= 10.0 * GEOM_TOL)
            .collect()
    }

    fn compute_measures(&self) -> (f64, Vec<f64>) {
        if self.n == 1 {
            let vol = self.bbox_hi[0] - self.bbox_lo[0];
            // Each facet of an interval is a point with lattice measure 1.
            return (vol, vec![1.0; self.facets.len()]);
        }
        let normals: Vec<Vec<f64>> = self.facets.iter().map(|f| f.normal_f64()).collect();
        let offsets: Vec<f64> = self.facets.iter().map(|f| f.offset).collect();
        let mut sigma = vec![0.0; self.facets.len()];
        let mut vol = 0.0;
        let c = self.centroid();
        for k in 0..self.facets.len() {
            let verts: Vec<Vec<f64>> =
                self.facet_vertices(k).into_iter().cloned().collect();
            if verts.len() < self.n {
                continue; // redundant facet
            }
            let fv = facet_volume(self.n, &normals, &offsets, k, &verts);
            sigma[k] = fv / self.facets[k].norm();
            let dist = eval_facet(&self.facets[k], &c) / self.facets[k].norm();
            vol += dist * fv / self.n as f64;
        }
        (vol, sigma)
    }
}

fn eval_facet(f: &Facet, x: &[f64]) -> f64 {
    let mut s = -f.offset;
    for (xa, &ua) in x.iter().zip(&f.normal) {
        s += xa * ua as f64;
    }
    s
}

fn gcd_slice(v: &[i64]) -> i64 {
    let mut g: i64 = 0;
    for &x in v {
        g = gcd(g, x.abs());
    }
    g
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Bounded iff the normals span R^n and no (n-1)-subset of facets bounds a
/// recession ray: a direction d != 0 with <u_k, d> >= 0 for all k.
fn check_bounded(n: usize, facets: &[Facet]) -> Result<()> {
    let d = facets.len();
    // Rank check: a nontrivial common nullspace direction gives a full line.
    let mut rows: Vec<Vec<f64>> = facets.iter().map(|f| f.normal_f64()).collect();
    if matrix_rank(&mut rows, n) < n {
        return Err(Error::Unbounded);
    }
    let is_recession = |dir: &[f64]| -> bool {
        let nd = linalg::norm2(dir);
        if nd < 1e-12 {
            return false;
        }
        facets.iter().all(|f| {
            let un = f.normal_f64();
            linalg::dot(&un, dir) >= -1e-9 * nd * f.norm()
        })
    };
    if n == 1 {
        if is_recession(&[1.0]) || is_recession(&[-1.0]) {
            return Err(Error::Unbounded);
        }
        return Ok(());
    }
    // Extreme rays of the recession cone lie in nullspaces of (n-1)-subsets.
    let mut subset = vec![0usize; n - 1];
    let mut found_unbounded = false;
    enumerate_subsets(d, n - 1, &mut subset, 0, 0, &mut |s: &[usize]| {
        let rows: Vec<Vec<f64>> = s.iter().map(|&k| facets[k].normal_f64()).collect();
        if let Some(dir) = nullspace_direction(&rows, n) {
            if is_recession(&dir) {
                found_unbounded = true;
            }
            let neg: Vec<f64> = dir.iter().map(|v| -v).collect();
            if is_recession(&neg) {
                found_unbounded = true;
            }
        }
    });
    if found_unbounded {
        Err(Error::Unbounded)
    } else {
        Ok(())
    }
}

fn enumerate_subsets(
    d: usize,
    k: usize,
    buf: &mut Vec<usize>,
    start: usize,
    depth: usize,
    f: &mut impl FnMut(&[usize]),
) {
    if depth == k {
        f(&buf[..k]);
        return;
    }
    for i in start..d {
        buf[depth] = i;
        enumerate_subsets(d, k, buf, i + 1, depth + 1, f);
    }
}

fn matrix_rank(rows: &mut [Vec<f64>], n: usize) -> usize {
    let m = rows.len();
    let mut rank = 0;
    let mut col = 0;
    while rank < m && col < n {
        let mut piv = rank;
        let mut best = rows[rank][col].abs();
        for r in rank + 1..m {
            if rows[r][col].abs() > best {
                best = rows[r][col].abs();
                piv = r;
            }
        }
        if best < 1e-10 {
            col += 1;
            continue;
        }
        rows.swap(rank, piv);
        for r in 0..m {
            if r != rank {
                let f = rows[r][col] / rows[rank][col];
                if f != 0.0 {
                    for c in col..n {
                        let sub = f * rows[rank][c];
                        rows[r][c] -= sub;
                    }
                }
            }
        }
        rank += 1;
        col += 1;
    }
    rank
}

/// If the given rows have a one-dimensional nullspace, return a spanning
/// direction.
fn nullspace_direction(rows: &[Vec<f64>], n: usize) -> Option<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = rows.to_vec();
    let rank = matrix_rank(&mut m, n);
    if rank != n - 1 {
        return None;
    }
    // m is now in reduced echelon-ish form with `rank` nonzero rows.
    // Find the free column, set it to 1, back-substitute.
    let mut pivot_col = vec![usize::MAX; rank];
    let mut is_pivot = vec![false; n];
    let mut r = 0;
    for row in m.iter().take(rows.len()) {
        if let Some(c) = row.iter().position(|v| v.abs() > 1e-10) {
            if r < rank {
                pivot_col[r] = c;
                is_pivot[c] = true;
                r += 1;
            }
        }
    }
    let free = (0..n).find(|&c| !is_pivot[c])?;
    let mut dir = vec![0.0; n];
    dir[free] = 1.0;
    for rr in (0..rank).rev() {
        let pc = pivot_col[rr];
        let mut s = 0.0;
        for c in pc + 1..n {
            s += m[rr][c] * dir[c];
        }
        dir[pc] = -s / m[rr][pc];
    }
    Some(dir)
}

fn enumerate_vertices(n: usize, facets: &[Facet]) -> Result<(Vec<Vec<f64>>, Vec<Vec<usize>>)> {
    let d = facets.len();
    let mut verts: Vec<Vec<f64>> = Vec::new();
    let mut subset = vec![0usize; n];
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    enumerate_subsets(d, n, &mut subset, 0, 0, &mut |s: &[usize]| {
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n];
        for (row, &k) in s.iter().enumerate() {
            for c in 0..n {
                a[row * n + c] = facets[k].normal[c] as f64;
            }
            b[row] = facets[k].offset;
        }
        if linalg::solve_in_place(&mut a, &mut b, n).is_ok() {
            candidates.push(b);
        }
    });
    for x in candidates {
        if !x.iter().all(|v| v.is_finite()) {
            continue;
        }
        let feasible = facets.iter().all(|f| eval_facet(f, &x) >= -GEOM_TOL);
        if !feasible {
            continue;
        }
        if !verts.iter().any(|v| max_abs_diff(v, &x) <= 10.0 * GEOM_TOL) {
            verts.push(x);
        }
    }
    // Deterministic ordering: lexicographic.
    verts.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.partial_cmp(y).unwrap())
            .find(|o| *o != std::cmp::Ordering::Equal)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let active: Vec<Vec<usize>> = verts
        .iter()
        .map(|v| {
            facets
                .iter()
                .enumerate()
                .filter(|(_, f)| eval_facet(f, v).abs() <= 10.0 * GEOM_TOL)
                .map(|(k, _)| k)
                .collect()
        })
        .collect();
    Ok((verts, active))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Euclidean (n-1)-volume of facet k, computed by recursive cone
/// decomposition of the restricted inequality system.
fn facet_volume(
    n: usize,
    normals: &[Vec<f64>],
    offsets: &[f64],
    k: usize,
    facet_verts: &[Vec<f64>],
) -> f64 {
    let v0 = &facet_verts[0];
    let basis = hyperplane_basis(&normals[k]);
    let sub_verts: Vec<Vec<f64>> = facet_verts
        .iter()
        .map(|v| {
            basis
                .iter()
                .map(|b| {
                    v.iter()
                        .zip(v0.iter())
                        .zip(b)
                        .map(|((x, x0), bb)| (x - x0) * bb)
                        .sum()
                })
                .collect()
        })
        .collect();
    let mut sub_normals = Vec::new();
    let mut sub_offsets = Vec::new();
    for (j, nj) in normals.iter().enumerate() {
        if j == k {
            continue;
        }
        let m: Vec<f64> = basis.iter().map(|b| linalg::dot(b, nj)).collect();
        if linalg::norm2(&m) < 1e-10 {
            continue; // facet parallel to this hyperplane
        }
        // l_j(v0 + B y) = <m, y> + l_j(v0) = <m, y> - (-l_j(v0))
        let l0: f64 = linalg::dot(v0, nj) - offsets[j];
        sub_normals.push(m);
        sub_offsets.push(-l0);
    }
    volume_of_hrep(n - 1, &sub_normals, &sub_offsets, &sub_verts)
}

fn volume_of_hrep(
    n: usize,
    normals: &[Vec<f64>],
    offsets: &[f64],
    verts: &[Vec<f64>],
) -> f64 {
    if verts.is_empty() {
        return 0.0;
    }
    if n == 0 {
        return 1.0;
    }
    if n == 1 {
        let lo = verts.iter().map(|v| v[0]).fold(f64::INFINITY, f64::min);
        let hi = verts.iter().map(|v| v[0]).fold(f64::NEG_INFINITY, f64::max);
        return (hi - lo).max(0.0);
    }
    let mut c = vec![0.0; n];
    for v in verts {
        for a in 0..n {
            c[a] += v[a];
        }
    }
    for x in c.iter_mut() {
        *x /= verts.len() as f64;
    }
    let mut vol = 0.0;
    for k in 0..normals.len() {
        let nk = linalg::norm2(&normals[k]);
        if nk < 1e-12 {
            continue;
        }
        let lk = |x: &[f64]| linalg::dot(x, &normals[k]) - offsets[k];
        let on: Vec<Vec<f64>> = verts
            .iter()
            .filter(|v| lk(v).abs() <= 1e-7 * (1.0 + nk))
            .cloned()
            .collect();
        if on.len() < n {
            continue;
        }
        let dist = lk(&c) / nk;
        if dist <= 0.0 {
            continue;
        }
        let fv = facet_volume(n, normals, offsets, k, &on);
        vol += dist * fv / n as f64;
    }
    vol
}

/// Orthonormal basis of the hyperplane orthogonal to `normal`.
fn hyperplane_basis(normal: &[f64]) -> Vec<Vec<f64>> {
    let n = normal.len();
    let nn = linalg::norm2(normal);
    let unit: Vec<f64> = normal.iter().map(|v| v / nn).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n - 1);
    for i in 0..n {
        let mut w = vec![0.0; n];
        w[i] = 1.0;
        let proj = linalg::dot(&w, &unit);
        for (wa, ua) in w.iter_mut().zip(&unit) {
            *wa -= proj * ua;
        }
        for b in &basis {
            let p = linalg::dot(&w, b);
            for (wa, ba) in w.iter_mut().zip(b) {
                *wa -= p * ba;
            }
        }
        let wn = linalg::norm2(&w);
        if wn > 1e-8 {
            for wa in w.iter_mut() {
                *wa /= wn;
            }
            basis.push(w);
            if basis.len() == n - 1 {
                break;
            }
        }
    }
    basis
}

// ---------------------------------------------------------------------------
// Delzant validation
// ---------------------------------------------------------------------------

/// Per-vertex validation data.
#[derive(Debug, Clone, Serialize)]
pub struct VertexCheck {
    pub vertex: Vec<f64>,
    pub active_facets: Vec<usize>,
    pub simple: bool,
    pub unimodular: bool,
    pub det: Option<i64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DelzantReport {
    pub pass: bool,
    pub vertices: Vec<VertexCheck>,
}

/// Check simplicity and unimodularity at every vertex. Diagnostic only.
pub fn delzant_check(p: &DelzantPolytope) -> DelzantReport {
    let n = p.dim();
    let mut vertices = Vec::new();
    let mut pass = true;
    for (vi, v) in p.vertices().iter().enumerate() {
        let active = p.active_facets(vi).to_vec();
        let simple = active.len() == n;
        let (unimodular, det) = if simple {
            let rows: Vec<Vec<i64>> = active
                .iter()
                .map(|&k| p.facets()[k].normal.clone())
                .collect();
            let d = int_det(&rows);
            (d.abs() == 1, Some(d))
        } else {
            (false, None)
        };
        pass &= simple && unimodular;
        vertices.push(VertexCheck {
            vertex: v.clone(),
            active_facets: active,
            simple,
            unimodular,
            det,
        });
    }
    DelzantReport { pass, vertices }
}

/// Integer determinant by fraction-free (Bareiss) elimination in i128.
fn int_det(rows: &[Vec<i64>]) -> i64 {
    let n = rows.len();
    let mut m: Vec<Vec<i128>> = rows
        .iter()
        .map(|r| r.iter().map(|&v| v as i128).collect())
        .collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n {
        if m[k][k] == 0 {
            let swap = (k + 1..n).find(|&i| m[i][k] != 0);
            match swap {
                Some(i) => {
                    m.swap(k, i);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                m[i][j] = (m[i][j] * m[k][k] - m[i][k] * m[k][j]) / prev;
            }
            m[i][k] = 0;
        }
        prev = m[k][k];
    }
    (sign * m[n - 1][n - 1]) as i64
}

// ---------------------------------------------------------------------------
// Quadrature grids
// ---------------------------------------------------------------------------

/// Cell-centered interior grid plus facet grids with lattice weights.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    pub n: usize,
    pub h: f64,
    pub delta: f64,
    /// Flat storage, n coordinates per point.
    points: Vec<f64>,
    pub weight: f64,
    pub facet_grids: Vec<FacetGrid>,
}

#[derive(Debug, Clone)]
pub struct FacetGrid {
    pub facet: usize,
    points: Vec<f64>,
    pub n: usize,
    pub weight: f64,
}

impl QuadratureGrid {
    pub fn len(&self) -> usize {
        self.points.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.n..(i + 1) * self.n]
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.n)
    }

    pub fn total_weight(&self) -> f64 {
        self.weight * self.len() as f64
    }
}

impl FacetGrid {
    pub fn len(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.points.len() / self.n
        }
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.n..(i + 1) * self.n]
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks_exact(self.n)
    }

    /// Quadrature approximation of the facet's sigma measure.
    pub fn sigma_weight(&self) -> f64 {
        self.weight * self.len() as f64
    }
}

/// Build the interior cell-centered grid masked by min_k l_k >= delta,
/// plus one boundary grid per facet.
pub fn build_grid(p: &DelzantPolytope, h: f64, delta: f64) -> Result<QuadratureGrid> {
    if !(h > 0.0) || !(delta > 0.0) {
        return Err(Error::MalformedSpec("h and delta must be positive".into()));
    }
    let n = p.dim();
    let (lo, hi) = p.bbox();
    let counts: Vec<usize> = (0..n)
        .map(|a| (((hi[a] - lo[a]) / h).ceil() as usize).max(1))
        .collect();
    let mut points = Vec::new();
    let mut idx = vec![0usize; n];
    let mut x = vec![0.0; n];
    loop {
        for a in 0..n {
            x[a] = lo[a] + (idx[a] as f64 + 0.5) * h;
        }
        if p.min_facet_value(&x) >= delta - 1e-12 {
            points.extend_from_slice(&x);
        }
        // Increment multi-index.
        let mut a = 0;
        loop {
            if a == n {
                break;
            }
            idx[a] += 1;
            if idx[a] < counts[a] {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
        if a == n {
            break;
        }
    }
    if points.is_empty() {
        return Err(Error::GridEmpty);
    }
    let weight = h.powi(n as i32);
    let facet_grids = (0..p.facets().len())
        .map(|k| build_facet_grid(p, k, h))
        .collect();
    Ok(QuadratureGrid { n, h, delta, points, weight, facet_grids })
}

fn build_facet_grid(p: &DelzantPolytope, k: usize, h: f64) -> FacetGrid {
    let n = p.dim();
    let f = &p.facets()[k];
    if n == 1 {
        // The facet is the single point where l_k vanishes; sigma mass 1.
        let x = f.offset / f.normal[0] as f64;
        return FacetGrid { facet: k, points: vec![x], n: 1, weight: 1.0 };
    }
    // Project out the axis with the largest |normal| component.
    let jstar = (0..n)
        .max_by_key(|&j| f.normal[j].abs())
        .expect("nonzero normal");
    let (lo, hi) = p.bbox();
    let axes: Vec<usize> = (0..n).filter(|&a| a != jstar).collect();
    let counts: Vec<usize> = axes
        .iter()
        .map(|&a| (((hi[a] - lo[a]) / h).ceil() as usize).max(1))
        .collect();
    let mut points = Vec::new();
    let mut idx = vec![0usize; axes.len()];
    let mut x = vec![0.0; n];
    loop {
        for (pos, &a) in axes.iter().enumerate() {
            x[a] = lo[a] + (idx[pos] as f64 + 0.5) * h;
        }
        // Solve <x, u> = offset for the dropped coordinate.
        let mut rest = 0.0;
        for a in &axes {
            rest += x[*a] * f.normal[*a] as f64;
        }
        x[jstar] = (f.offset - rest) / f.normal[jstar] as f64;
        let inside = p
            .facets()
            .iter()
            .enumerate()
            .all(|(m, fm)| m == k || eval_facet(fm, &x) >= -1e-9);
        if inside && x[jstar] >= lo[jstar] - 1e-9 && x[jstar] <= hi[jstar] + 1e-9 {
            points.extend_from_slice(&x);
        }
        let mut a = 0;
        loop {
            if a == axes.len() {
                break;
            }
            idx[a] += 1;
            if idx[a] < counts[a] {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
        if a == axes.len() {
            break;
        }
    }
    let weight = h.powi(n as i32 - 1) / (f.normal[jstar].abs() as f64);
    FacetGrid { facet: k, points, n, weight }
}

// ---------------------------------------------------------------------------
// Stock polytopes used across the test corpus
// ---------------------------------------------------------------------------

/// [0, 1]: the moment interval of CP^1.
pub fn interval_01() -> DelzantPolytope {
    DelzantPolytope::from_spec(&PolytopeSpec {
        dimension: 1,
        facets: vec![
            Facet { normal: vec![1], offset: 0.0 },
            Facet { normal: vec![-1], offset: -1.0 },
        ],
    })
    .expect("valid interval")
}

/// Unit simplex in R^2: the moment triangle of CP^2.
pub fn unit_simplex_2d() -> DelzantPolytope {
    DelzantPolytope::from_spec(&PolytopeSpec {
        dimension: 2,
        facets: vec![
            Facet { normal: vec![1, 0], offset: 0.0 },
            Facet { normal: vec![0, 1], offset: 0.0 },
            Facet { normal: vec![-1, -1], offset: -1.0 },
        ],
    })
    .expect("valid simplex")
}

/// Unit square [0,1]^2: CP^1 x CP^1.
pub fn unit_square() -> DelzantPolytope {
    DelzantPolytope::from_spec(&PolytopeSpec {
        dimension: 2,
        facets: vec![
            Facet { normal: vec![1, 0], offset: 0.0 },
            Facet { normal: vec![0, 1], offset: 0.0 },
            Facet { normal: vec![-1, 0], offset: -1.0 },
            Facet { normal: vec![0, -1], offset: -1.0 },
        ],
    })
    .expect("valid square")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_parse_and_vertices() {
        let p = interval_01();
        assert_eq!(p.dim(), 1);
        let mut vs: Vec<f64> = p.vertices().iter().map(|v| v[0]).collect();
        vs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(vs, vec![0.0, 1.0]);
        assert!((p.volume() - 1.0).abs() < 1e-12);
        assert!((p.boundary_sigma() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_vertices_and_measures() {
        let p = unit_simplex_2d();
        assert_eq!(p.vertices().len(), 3);
        assert!((p.volume() - 0.5).abs() < 1e-12);
        // Every facet has lattice measure 1, including the hypotenuse.
        for k in 0..3 {
            assert!((p.facet_sigma(k) - 1.0).abs() < 1e-10, "facet {k}");
        }
        assert!((p.boundary_sigma() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn square_measures() {
        let p = unit_square();
        assert_eq!(p.vertices().len(), 4);
        assert!((p.volume() - 1.0).abs() < 1e-12);
        assert!((p.boundary_sigma() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn facet_values_examples() {
        let p = unit_simplex_2d();
        let v = p.facet_values(&[1.0 / 3.0, 1.0 / 3.0]);
        for x in &v {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        let v0 = p.facet_values(&[0.0, 0.0]);
        assert_eq!(v0[0], 0.0);
        assert_eq!(v0[1], 0.0);
        assert!((v0[2] - 1.0).abs() < 1e-15);

        let i = interval_01();
        let vi = i.facet_values(&[0.25]);
        assert!((vi[0] - 0.25).abs() < 1e-15);
        assert!((vi[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn euclid_distance_examples() {
        let i = interval_01();
        assert!((i.euclid_dist_boundary(&[0.5]).unwrap() - 0.5).abs() < 1e-15);
        let s = unit_simplex_2d();
        let d = s.euclid_dist_boundary(&[1.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert!((d - 1.0 / (3.0 * 2.0f64.sqrt())).abs() < 1e-12);
        let q = unit_square();
        assert!((q.euclid_dist_boundary(&[0.1, 0.5]).unwrap() - 0.1).abs() < 1e-15);
        assert!(q.euclid_dist_boundary(&[1.5, 0.5]).is_err());
    }

    #[test]
    fn delzant_check_passes_on_standard_polytopes() {
        for p in [interval_01(), unit_simplex_2d(), unit_square()] {
            let rep = delzant_check(&p);
            assert!(rep.pass);
            for v in &rep.vertices {
                assert!(v.simple && v.unimodular);
            }
        }
    }

    #[test]
    fn delzant_check_flags_non_unimodular_vertex() {
        let p = DelzantPolytope::from_spec(&PolytopeSpec {
            dimension: 2,
            facets: vec![
                Facet { normal: vec![1, 0], offset: 0.0 },
                Facet { normal: vec![0, 1], offset: 0.0 },
                Facet { normal: vec![-1, -2], offset: -1.0 },
            ],
        })
        .unwrap();
        let rep = delzant_check(&p);
        assert!(!rep.pass);
        let bad: Vec<_> = rep.vertices.iter().filter(|v| !v.unimodular).collect();
        assert_eq!(bad.len(), 1);
        // Witness vertex is (0, 1/2).
        assert!((bad[0].vertex[0] - 0.0).abs() < 1e-9);
        assert!((bad[0].vertex[1] - 0.5).abs() < 1e-9);
        assert_eq!(bad[0].det, Some(-2));
    }

    #[test]
    fn parse_rejects_bad_specs() {
        // Non-primitive normal.
        let r = DelzantPolytope::parse(
            r#"{"dimension":1,"facets":[{"normal":[2],"offset":0.0},{"normal":[-1],"offset":-1.0}]}"#,
        );
        assert!(matches!(r, Err(Error::NonPrimitiveNormal { facet: 0, gcd: 2 })));
        // Unbounded.
        let r = DelzantPolytope::parse(
            r#"{"dimension":2,"facets":[{"normal":[1,0],"offset":0},{"normal":[0,1],"offset":0},{"normal":[1,1],"offset":0}]}"#,
        );
        assert!(matches!(r, Err(Error::Unbounded)));
        // Empty interior.
        let r = DelzantPolytope::parse(
            r#"{"dimension":1,"facets":[{"normal":[1],"offset":0},{"normal":[-1],"offset":1}]}"#,
        );
        assert!(matches!(r, Err(Error::EmptyInterior)));
        // Non-integer normal is a parse error.
        let r = DelzantPolytope::parse(
            r#"{"dimension":1,"facets":[{"normal":[1.5],"offset":0},{"normal":[-1],"offset":-1}]}"#,
        );
        assert!(matches!(r, Err(Error::MalformedSpec(_))));
    }

    #[test]
    fn grid_counts_on_interval() {
        let p = interval_01();
        let g = build_grid(&p, 0.1, 0.05).unwrap();
        assert_eq!(g.len(), 10);
        assert!((g.total_weight() - 1.0).abs() < 1e-12);
        // 1D facet grids: one point of sigma mass 1 at each end.
        assert_eq!(g.facet_grids.len(), 2);
        for fg in &g.facet_grids {
            assert_eq!(fg.len(), 1);
            assert!((fg.sigma_weight() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_weight_converges_to_volume() {
        let p = unit_simplex_2d();
        // delta tied to h so the mask converges to the full polytope.
        let w1 = build_grid(&p, 0.1, 0.05).unwrap().total_weight();
        let w2 = build_grid(&p, 0.05, 0.025).unwrap().total_weight();
        let w3 = build_grid(&p, 0.025, 0.0125).unwrap().total_weight();
        let d12 = (w1 - w2).abs();
        let d23 = (w2 - w3).abs();
        assert!(d23 <= d12 + 1e-12, "{d12} then {d23}");
        assert!((w3 - 0.5).abs() < 0.05);
    }

    #[test]
    fn facet_sigma_quadrature_matches_exact() {
        let p = unit_simplex_2d();
        let g = build_grid(&p, 0.01, 0.005).unwrap();
        for fg in &g.facet_grids {
            let exact = p.facet_sigma(fg.facet);
            assert!(
                (fg.sigma_weight() - exact).abs() < 0.03,
                "facet {}: {} vs {}",
                fg.facet,
                fg.sigma_weight(),
                exact
            );
        }
    }

    #[test]
    fn grid_empty_error() {
        let p = interval_01();
        assert!(matches!(build_grid(&p, 0.3, 0.6), Err(Error::GridEmpty)));
    }

    #[test]
    fn ray_exit_finds_first_facet() {
        let p = unit_square();
        let (t, k) = p.ray_exit(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((t - 0.5).abs() < 1e-12);
        assert_eq!(k, 2);
    }

    #[test]
    fn volume_of_3d_cube_and_simplex() {
        let cube = DelzantPolytope::from_spec(&PolytopeSpec {
            dimension: 3,
            facets: vec![
                Facet { normal: vec![1, 0, 0], offset: 0.0 },
                Facet { normal: vec![0, 1, 0], offset: 0.0 },
                Facet { normal: vec![0, 0, 1], offset: 0.0 },
                Facet { normal: vec![-1, 0, 0], offset: -2.0 },
                Facet { normal: vec![0, -1, 0], offset: -1.0 },
                Facet { normal: vec![0, 0, -1], offset: -1.0 },
            ],
        })
        .unwrap();
        assert!((cube.volume() - 2.0).abs() < 1e-9);
        // Face x=0 has area 1, primitive normal, sigma = 1.
        assert!((cube.facet_sigma(0) - 1.0).abs() < 1e-9);

        let simplex = DelzantPolytope::from_spec(&PolytopeSpec {
            dimension: 3,
            facets: vec![
                Facet { normal: vec![1, 0, 0], offset: 0.0 },
                Facet { normal: vec![0, 1, 0], offset: 0.0 },
                Facet { normal: vec![0, 0, 1], offset: 0.0 },
                Facet { normal: vec![-1, -1, -1], offset: -1.0 },
            ],
        })
        .unwrap();
        assert!((simplex.volume() - 1.0 / 6.0).abs() < 1e-9);
        // sigma of the slanted facet: area sqrt(3)/2 over |u| = sqrt(3).
        assert!((simplex.facet_sigma(3) - 0.5).abs() < 1e-9);
    }
}
