//! Symplectic potentials u = u0 + f with Guillemin boundary behavior.
//!
//! The singular part u0(x) = 1/2 Σ_k l_k(x) log l_k(x) is carried in closed
//! form with analytic derivatives; only the smooth part f is discretized, as
//! quintic-spline samples on a padded bounding-box lattice. An explicit
//! affine gauge term rides along separately so that gauge normalization and
//! affine-invariance arguments stay structurally exact instead of drowning
//! in sample roundoff.

use std::io::{BufRead, BufReader, Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::linalg;
use crate::polytope::{DelzantPolytope, QuadratureGrid};
use crate::spline::{AxisOffset, GridSpec, TensorSpline, MAX_DIM};

/// Value and derivatives of a scalar function to order four.
/// Third and fourth tensors are stored dense and fully symmetric.
#[derive(Debug, Clone)]
pub struct DerivativeBundle {
    pub n: usize,
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    pub third: Vec<f64>,
    pub fourth: Vec<f64>,
}

impl DerivativeBundle {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            value: 0.0,
            grad: vec![0.0; n],
            hess: vec![0.0; n * n],
            third: vec![0.0; n * n * n],
            fourth: vec![0.0; n * n * n * n],
        }
    }

    pub fn clear(&mut self) {
        self.value = 0.0;
        self.grad.fill(0.0);
        self.hess.fill(0.0);
        self.third.fill(0.0);
        self.fourth.fill(0.0);
    }

    #[inline]
    pub fn hess_at(&self, i: usize, j: usize) -> f64 {
        self.hess[i * self.n + j]
    }

    #[inline]
    pub fn third_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.third[(i * self.n + j) * self.n + k]
    }

    #[inline]
    pub fn fourth_at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.fourth[((i * self.n + j) * self.n + k) * self.n + l]
    }

    /// Set entry (i,j,k) of the third tensor and all permutations.
    pub fn set_third_sym(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let n = self.n;
        for (a, b, c) in [(i, j, k), (i, k, j), (j, i, k), (j, k, i), (k, i, j), (k, j, i)] {
            self.third[(a * n + b) * n + c] = v;
        }
    }

    /// Set entry (i,j,k,l) of the fourth tensor and all permutations.
    pub fn set_fourth_sym(&mut self, i: usize, j: usize, k: usize, l: usize, v: f64) {
        let vals = [i, j, k, l];
        let n = self.n;
        for p in PERM4 {
            let (a, b, c, d) = (vals[p[0]], vals[p[1]], vals[p[2]], vals[p[3]]);
            self.fourth[((a * n + b) * n + c) * n + d] = v;
        }
    }

    /// Directional second derivative Hess(v, v).
    pub fn hess_quadratic(&self, v: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.hess[i * n + j] * v[i] * v[j];
            }
        }
        s
    }

    /// Third tensor contracted with (v, v, v).
    pub fn third_cubic(&self, v: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let vij = v[i] * v[j];
                for k in 0..n {
                    s += self.third[(i * n + j) * n + k] * vij * v[k];
                }
            }
        }
        s
    }

    /// Fourth tensor contracted with (v, v, v, v).
    pub fn fourth_quartic(&self, v: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let vij = v[i] * v[j];
                for k in 0..n {
                    let vijk = vij * v[k];
                    for l in 0..n {
                        s += self.fourth[((i * n + j) * n + k) * n + l] * vijk * v[l];
                    }
                }
            }
        }
        s
    }
}

const PERM4: [[usize; 4]; 24] = [
    [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
    [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
    [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
    [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
];

/// Closed-form derivatives of u0 = 1/2 Σ l_k log l_k at a strictly interior
/// point. For the affine l_k with gradient u_k:
///   d^2: 1/(2 l) u⊗u,  d^3: -1/(2 l^2) u⊗3,  d^4: 1/l^3 u⊗4.
pub fn guillemin_derivs(p: &DelzantPolytope, x: &[f64]) -> Result<DerivativeBundle> {
    let mut out = DerivativeBundle::zeros(p.dim());
    add_guillemin_into(p, x, &mut out)?;
    Ok(out)
}

/// Accumulate the u0 derivatives onto an existing bundle.
pub fn add_guillemin_into(p: &DelzantPolytope, x: &[f64], out: &mut DerivativeBundle) -> Result<()> {
    let n = p.dim();
    debug_assert_eq!(out.n, n);
    for f in p.facets() {
        let mut l = -f.offset;
        for (xa, &ua) in x.iter().zip(&f.normal) {
            l += xa * ua as f64;
        }
        if l <= 0.0 {
            return Err(Error::NotInterior(x.to_vec()));
        }
        let ln = l.ln();
        out.value += 0.5 * l * ln;
        let g1 = 0.5 * (ln + 1.0);
        let g2 = 0.5 / l;
        let g3 = -0.5 / (l * l);
        let g4 = 1.0 / (l * l * l);
        let u: [f64; MAX_DIM] = {
            let mut b = [0.0; MAX_DIM];
            for (a, &ua) in f.normal.iter().enumerate() {
                b[a] = ua as f64;
            }
            b
        };
        for i in 0..n {
            out.grad[i] += g1 * u[i];
            for j in 0..n {
                let uij = u[i] * u[j];
                out.hess[i * n + j] += g2 * uij;
                for k in 0..n {
                    let uijk = uij * u[k];
                    out.third[(i * n + j) * n + k] += g3 * uijk;
                    for m in 0..n {
                        out.fourth[((i * n + j) * n + k) * n + m] += g4 * uijk * u[m];
                    }
                }
            }
        }
    }
    Ok(())
}

/// Anything the curvature, flow, and estimate machinery can evaluate:
/// a convex function with four derivatives on some domain.
pub trait ConvexPotential: Send + Sync {
    fn dim(&self) -> usize;

    /// Full derivative bundle at x, restricted to the admissible region
    /// (the margin region for grid-backed potentials).
    fn derivs_into(&self, x: &[f64], out: &mut DerivativeBundle) -> Result<()>;

    /// Evaluation for boundary-limit quadrature: skips the margin test and
    /// only requires the point to be strictly inside the domain.
    fn derivs_unchecked_into(&self, x: &[f64], out: &mut DerivativeBundle) -> Result<()> {
        self.derivs_into(x, out)
    }

    fn derivs(&self, x: &[f64]) -> Result<DerivativeBundle> {
        let mut b = DerivativeBundle::zeros(self.dim());
        self.derivs_into(x, &mut b)?;
        Ok(b)
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.derivs(x)?.value)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let b = self.derivs(x)?;
        out.copy_from_slice(&b.grad);
        Ok(())
    }

    fn in_domain(&self, x: &[f64]) -> bool;
}

/// How to fix the affine gauge at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalize {
    /// u(x0) = 0 and grad u(x0) = 0 at the polytope centroid.
    Centroid,
    /// Leave the raw sum u0 + f.
    None,
}

/// u = u0 + f + affine gauge, with f sampled on a padded node lattice.
#[derive(Debug, Clone)]
pub struct SymplecticPotential {
    polytope: Arc<DelzantPolytope>,
    grid: GridSpec,
    samples: Vec<f64>,
    spline: TensorSpline,
    margin: f64,
    affine_const: f64,
    affine_slope: Vec<f64>,
    include_singular: bool,
}

pub const GRID_PAD_CELLS: usize = 3;

/// Node lattice over the polytope bounding box, padded by `GRID_PAD_CELLS`
/// cells so spline end conditions sit away from the margin region.
pub fn grid_for(p: &DelzantPolytope, h: f64) -> GridSpec {
    let (lo, hi) = p.bbox();
    let n = p.dim();
    let mut glo = Vec::with_capacity(n);
    let mut shape = Vec::with_capacity(n);
    for a in 0..n {
        let core = (((hi[a] - lo[a]) / h) * (1.0 + 1e-12)).ceil() as usize + 1;
        shape.push(core + 2 * GRID_PAD_CELLS);
        glo.push(lo[a] - GRID_PAD_CELLS as f64 * h);
    }
    GridSpec { lo: glo, h, shape }
}

impl SymplecticPotential {
    /// Build from a closure for the smooth part.
    pub fn from_fn(
        polytope: Arc<DelzantPolytope>,
        h: f64,
        margin: f64,
        f: impl Fn(&[f64]) -> f64,
        normalize: Normalize,
    ) -> Result<Self> {
        let grid = grid_for(&polytope, h);
        let mut samples = vec![0.0; grid.len()];
        let n = grid.dim();
        let mut idx = vec![0usize; n];
        for (flat, s) in samples.iter_mut().enumerate() {
            let _ = flat;
            let x = grid.node(&idx);
            *s = f(&x);
            let mut a = n;
            loop {
                if a == 0 {
                    break;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < grid.shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self::assemble(polytope, grid, samples, margin, true, normalize)
    }

    /// The canonical potential of the polytope: f = 0, gauge-normalized.
    pub fn guillemin(polytope: Arc<DelzantPolytope>, h: f64, margin: f64) -> Result<Self> {
        Self::from_fn(polytope, h, margin, |_| 0.0, Normalize::Centroid)
    }

    /// f = 0 without gauge normalization (u is literally u0).
    pub fn guillemin_unnormalized(
        polytope: Arc<DelzantPolytope>,
        h: f64,
        margin: f64,
    ) -> Result<Self> {
        Self::from_fn(polytope, h, margin, |_| 0.0, Normalize::None)
    }

    /// Build from raw samples, keeping the given gauge. Used by checkpoint
    /// loading, rescaling, and flow stepping, which must not perturb samples.
    pub fn from_samples(
        polytope: Arc<DelzantPolytope>,
        grid: GridSpec,
        samples: Vec<f64>,
        margin: f64,
        include_singular: bool,
        affine_const: f64,
        affine_slope: Vec<f64>,
    ) -> Result<Self> {
        if grid.dim() != polytope.dim() {
            return Err(Error::DimensionMismatch {
                expected: polytope.dim(),
                got: grid.dim(),
            });
        }
        let spline = TensorSpline::fit(grid.clone(), &samples)?;
        Ok(Self {
            polytope,
            grid,
            samples,
            spline,
            margin,
            affine_const,
            affine_slope,
            include_singular,
        })
    }

    fn assemble(
        polytope: Arc<DelzantPolytope>,
        grid: GridSpec,
        samples: Vec<f64>,
        margin: f64,
        include_singular: bool,
        normalize: Normalize,
    ) -> Result<Self> {
        let n = polytope.dim();
        let mut pot = Self::from_samples(
            polytope,
            grid,
            samples,
            margin,
            include_singular,
            0.0,
            vec![0.0; n],
        )?;
        if normalize == Normalize::Centroid {
            let x0 = pot.polytope.centroid();
            let mut b = DerivativeBundle::zeros(n);
            pot.derivs_unchecked_into(&x0, &mut b)?;
            pot.affine_slope = b.grad.iter().map(|g| -g).collect();
            pot.affine_const = -b.value + linalg::dot(&b.grad, &x0);
        }
        Ok(pot)
    }

    /// Same potential with a different smooth part; gauge and mode carried over.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != self.samples.len() {
            return Err(Error::DimensionMismatch {
                expected: self.samples.len(),
                got: samples.len(),
            });
        }
        let spline = TensorSpline::fit(self.grid.clone(), &samples)?;
        Ok(Self {
            polytope: Arc::clone(&self.polytope),
            grid: self.grid.clone(),
            samples,
            spline,
            margin: self.margin,
            affine_const: self.affine_const,
            affine_slope: self.affine_slope.clone(),
            include_singular: self.include_singular,
        })
    }

    /// Add an affine function to the potential (exact, no resampling).
    pub fn with_affine(&self, c0: f64, slope: &[f64]) -> Self {
        let mut out = self.clone();
        out.affine_const += c0;
        for (s, a) in out.affine_slope.iter_mut().zip(slope) {
            *s += a;
        }
        out
    }

    /// Smooth test mode: spline-backed potential with the singular part off.
    pub fn smooth_test(
        polytope: Arc<DelzantPolytope>,
        h: f64,
        margin: f64,
        f: impl Fn(&[f64]) -> f64,
    ) -> Result<Self> {
        let grid = grid_for(&polytope, h);
        let mut samples = vec![0.0; grid.len()];
        let n = grid.dim();
        let mut idx = vec![0usize; n];
        for s in samples.iter_mut() {
            let x = grid.node(&idx);
            *s = f(&x);
            let mut a = n;
            loop {
                if a == 0 {
                    break;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < grid.shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Self::assemble(polytope, grid, samples, margin, false, Normalize::None)
    }

    pub fn polytope(&self) -> &Arc<DelzantPolytope> {
        &self.polytope
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }

    pub fn include_singular(&self) -> bool {
        self.include_singular
    }

    pub fn affine(&self) -> (f64, &[f64]) {
        (self.affine_const, &self.affine_slope)
    }

    pub fn spline(&self) -> &TensorSpline {
        &self.spline
    }

    pub fn in_margin(&self, x: &[f64]) -> bool {
        self.polytope.min_facet_value(x) >= self.margin - 1e-12
    }

    /// Aligned-lattice evaluation (nodes / cell centers) for field sweeps.
    pub fn derivs_aligned_into(
        &self,
        x: &[f64],
        cells: &[usize; MAX_DIM],
        kinds: &[AxisOffset; MAX_DIM],
        out: &mut DerivativeBundle,
    ) -> Result<()> {
        self.spline.eval_bundle_aligned_into(cells, kinds, out);
        if self.include_singular {
            add_guillemin_into(&self.polytope, x, out)?;
        }
        self.add_affine(x, out);
        Ok(())
    }

    pub fn locate_aligned(&self, x: &[f64]) -> Option<([usize; MAX_DIM], [AxisOffset; MAX_DIM])> {
        self.spline.locate_aligned(x)
    }

    #[inline]
    fn add_affine(&self, x: &[f64], out: &mut DerivativeBundle) {
        out.value += self.affine_const + linalg::dot(&self.affine_slope, x);
        for (g, s) in out.grad.iter_mut().zip(&self.affine_slope) {
            *g += s;
        }
    }

    /// Gradient omitting the affine gauge. Differences of this are the same
    /// as differences of the full gradient, exactly; the M-condition
    /// machinery uses it so that affine invariance holds to the bit.
    pub fn gradient_no_affine_into(&self, x: &[f64], out: &mut DerivativeBundle) -> Result<()> {
        if !self.in_margin(x) {
            return Err(Error::OutsideMargin(x.to_vec()));
        }
        self.spline.eval_bundle_into(x, out)?;
        if self.include_singular {
            add_guillemin_into(&self.polytope, x, out)?;
        }
        Ok(())
    }
}

impl ConvexPotential for SymplecticPotential {
    fn dim(&self) -> usize {
        self.polytope.dim()
    }

    fn derivs_into(&self, x: &[f64], out: &mut DerivativeBundle) -> Result<()> {
        if !self.in_margin(x) {
            return Err(Error::OutsideMargin(x.to_vec()));
        }
        self.spline.eval_bundle_into(x, out)?;
        if self.include_singular {
            add_guillemin_into(&self.polytope, x, out)?;
        }
        self.add_affine(x, out);
        Ok(())
    }

    fn derivs_unchecked_into(&self, x: &[f64], out: &mut DerivativeBundle) -> Result<()> {
        self.spline.eval_bundle_into(x, out)?;
        if self.include_singular {
            add_guillemin_into(&self.polytope, x, out)?;
        }
        self.add_affine(x, out);
        Ok(())
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        self.in_margin(x)
    }
}

// ---------------------------------------------------------------------------
// Legendre duality
// ---------------------------------------------------------------------------

/// Point on the Kähler side: log-affine coordinate and dual potential value.
#[derive(Debug, Clone)]
pub struct KahlerDualPoint {
    pub xi: Vec<f64>,
    pub phi: f64,
}

/// xi = grad u(x), phi = <x, xi> - u(x).
pub fn legendre_forward(u: &impl ConvexPotential, x: &[f64]) -> Result<KahlerDualPoint> {
    let b = u.derivs(x)?;
    let phi = linalg::dot(x, &b.grad) - b.value;
    Ok(KahlerDualPoint { xi: b.grad, phi })
}

/// Solve grad u(x) = xi by damped Newton iteration; the step is halved
/// whenever a trial point would leave the margin region.
pub fn legendre_inverse(u: &SymplecticPotential, xi: &[f64]) -> Result<Vec<f64>> {
    let n = u.dim();
    let mut x = u.polytope().centroid();
    let mut b = DerivativeBundle::zeros(n);
    let mut a = vec![0.0; n * n];
    let mut step = vec![0.0; n];
    for _iter in 0..200 {
        u.derivs_into(&x, &mut b)?;
        let mut rn = 0.0f64;
        for i in 0..n {
            step[i] = xi[i] - b.grad[i];
            rn += step[i] * step[i];
        }
        if rn.sqrt() <= 1e-10 {
            return Ok(x);
        }
        a.copy_from_slice(&b.hess);
        linalg::solve_in_place(&mut a, &mut step, n)?;
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&step).map(|(xa, d)| xa + t * d).collect();
            if u.in_margin(&trial) {
                x = trial;
                break;
            }
            t *= 0.5;
            if t < 1e-14 {
                return Err(Error::OutsideGradientImage);
            }
        }
    }
    Err(Error::NewtonDidNotConverge)
}

// ---------------------------------------------------------------------------
// Convexity diagnostics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ConvexityReport {
    pub min_eigenvalue: f64,
    pub witness: Vec<f64>,
    pub pass: bool,
}

/// Minimum Hessian eigenvalue over the grid's interior points.
pub fn convexity_check(u: &impl ConvexPotential, grid: &QuadratureGrid) -> Result<ConvexityReport> {
    let n = u.dim();
    let mut b = DerivativeBundle::zeros(n);
    let mut min_eig = f64::INFINITY;
    let mut witness = vec![0.0; n];
    for x in grid.iter_points() {
        u.derivs_into(x, &mut b)?;
        let e = linalg::sym_min_eigenvalue(&b.hess, n);
        if e < min_eig {
            min_eig = e;
            witness.copy_from_slice(x);
        }
    }
    Ok(ConvexityReport { min_eigenvalue: min_eig, witness, pass: min_eig > 0.0 })
}

// ---------------------------------------------------------------------------
// Checkpoint format: text header, then row-major f64 little-endian samples.
// ---------------------------------------------------------------------------

const CKPT_MAGIC: &str = "calabi-fgrid-v1";

pub fn write_checkpoint<W: Write>(u: &SymplecticPotential, w: &mut W) -> Result<()> {
    let g = u.grid();
    let shape: Vec<String> = g.shape.iter().map(|s| s.to_string()).collect();
    let lo: Vec<String> = g.lo.iter().map(|v| format!("{v}")).collect();
    let hi: Vec<String> = g.hi().iter().map(|v| format!("{v}")).collect();
    writeln!(
        w,
        "{CKPT_MAGIC} n={} shape={} lo={} hi={} h={}",
        g.dim(),
        shape.join(","),
        lo.join(","),
        hi.join(","),
        g.h
    )?;
    for v in u.samples() {
        w.write_all(&v.to_bits().to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(
    r: &mut R,
    polytope: Arc<DelzantPolytope>,
    margin: f64,
) -> Result<SymplecticPotential> {
    let mut br = BufReader::new(r);
    let mut header = String::new();
    br.read_line(&mut header)?;
    let header = header.trim_end();
    let mut n = None;
    let mut shape: Option<Vec<usize>> = None;
    let mut lo: Option<Vec<f64>> = None;
    let mut hi: Option<Vec<f64>> = None;
    let mut h = None;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(CKPT_MAGIC) {
        return Err(Error::BadCheckpoint("bad magic".into()));
    }
    for field in fields {
        let (key, val) = field
            .split_once('=')
            .ok_or_else(|| Error::BadCheckpoint(format!("bad field {field}")))?;
        match key {
            "n" => n = Some(val.parse::<usize>().map_err(bad)?),
            "shape" => {
                shape = Some(
                    val.split(',')
                        .map(|s| s.parse::<usize>().map_err(bad))
                        .collect::<Result<_>>()?,
                )
            }
            "lo" => {
                lo = Some(
                    val.split(',')
                        .map(|s| s.parse::<f64>().map_err(bad))
                        .collect::<Result<_>>()?,
                )
            }
            "hi" => {
                hi = Some(
                    val.split(',')
                        .map(|s| s.parse::<f64>().map_err(bad))
                        .collect::<Result<_>>()?,
                )
            }
            "h" => h = Some(val.parse::<f64>().map_err(bad)?),
            _ => return Err(Error::BadCheckpoint(format!("unknown field {key}"))),
        }
    }
    let n = n.ok_or_else(|| Error::BadCheckpoint("missing n".into()))?;
    let shape = shape.ok_or_else(|| Error::BadCheckpoint("missing shape".into()))?;
    let lo = lo.ok_or_else(|| Error::BadCheckpoint("missing lo".into()))?;
    let hi = hi.ok_or_else(|| Error::BadCheckpoint("missing hi".into()))?;
    let h = h.ok_or_else(|| Error::BadCheckpoint("missing h".into()))?;
    if shape.len() != n || lo.len() != n || hi.len() != n {
        return Err(Error::BadCheckpoint("inconsistent dimensions".into()));
    }
    let grid = GridSpec { lo, h, shape };
    for (a, hv) in hi.iter().enumerate() {
        if (grid.hi()[a] - hv).abs() > 1e-12 * (1.0 + hv.abs()) {
            return Err(Error::BadCheckpoint("bbox does not match shape*h".into()));
        }
    }
    let count = grid.len();
    let mut buf = vec![0u8; count * 8];
    br.read_exact(&mut buf)
        .map_err(|_| Error::BadCheckpoint("short payload".into()))?;
    let samples: Vec<f64> = buf
        .chunks_exact(8)
        .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let slope = vec![0.0; n];
    SymplecticPotential::from_samples(polytope, grid, samples, margin, true, 0.0, slope)
}

fn bad<E: std::fmt::Display>(e: E) -> Error {
    Error::BadCheckpoint(e.to_string())
}

// ---------------------------------------------------------------------------
// Closed-form potentials for test modes and oracles
// ---------------------------------------------------------------------------

pub mod analytic {
    use super::*;

    /// u = 1/2 x^T Q x, domain all of R^n.
    #[derive(Debug, Clone)]
    pub struct QuadraticPotential {
        pub n: usize,
        pub q: Vec<f64>,
    }

    impl QuadraticPotential {
        pub fn identity(n: usize) -> Self {
            let mut q = vec![0.0; n * n];
            for i in 0..n {
                q[i * n + i] = 1.0;
            }
            Self { n, q }
        }
    }

    impl ConvexPotential for QuadraticPotential {
        fn dim(&self) -> usize {
            self.n
        }

        fn derivs_into(&self, x: &[f64], out: &mut DerivativeBundle) -> Result<()> {
            out.clear();
            let n = self.n;
            let mut v = 0.0;
            for i in 0..n {
                let mut gi = 0.0;
                for j in 0..n {
                    gi += self.q[i * n + j] * x[j];
                    out.hess[i * n + j] = self.q[i * n + j];
                }
                out.grad[i] = gi;
                v += gi * x[i];
            }
            out.value = 0.5 * v;
            Ok(())
        }

        fn in_domain(&self, _x: &[f64]) -> bool {
            true
        }
    }

    /// u = Σ x_i log x_i on the positive orthant (the local boundary model).
    #[derive(Debug, Clone)]
    pub struct XLogX {
        pub m: usize,
    }

    impl ConvexPotential for XLogX {
        fn dim(&self) -> usize {
            self.m
        }

        fn derivs_into(&self, x: &[f64], out: &mut DerivativeBundle) -> Result<()> {
            out.clear();
            let n = self.m;
            for i in 0..n {
                if x[i] <= 0.0 {
                    return Err(Error::NotInterior(x.to_vec()));
                }
                out.value += x[i] * x[i].ln();
                out.grad[i] = x[i].ln() + 1.0;
                out.hess[i * n + i] = 1.0 / x[i];
                out.third[(i * n + i) * n + i] = -1.0 / (x[i] * x[i]);
                out.fourth[((i * n + i) * n + i) * n + i] = 2.0 / (x[i] * x[i] * x[i]);
            }
            Ok(())
        }

        fn in_domain(&self, x: &[f64]) -> bool {
            x.iter().all(|&v| v > 0.0)
        }
    }

    /// u = 1/2 |x|^2 + eps cos(<k, x> + phase): smooth, strictly convex for
    /// small eps, with closed-form derivatives of every order. Used as the
    /// independent oracle for curvature finite-difference checks.
    #[derive(Debug, Clone)]
    pub struct CosinePerturbed {
        pub n: usize,
        pub eps: f64,
        pub k: Vec<f64>,
        pub phase: f64,
    }

    impl ConvexPotential for CosinePerturbed {
        fn dim(&self) -> usize {
            self.n
        }

        fn derivs_into(&self, x: &[f64], out: &mut DerivativeBundle) -> Result<()> {
            out.clear();
            let n = self.n;
            let th = linalg::dot(&self.k, x) + self.phase;
            let (s, c) = th.sin_cos();
            out.value = 0.5 * linalg::dot(x, x) + self.eps * c;
            for i in 0..n {
                out.grad[i] = x[i] - self.eps * s * self.k[i];
                for j in 0..n {
                    let kk = self.k[i] * self.k[j];
                    out.hess[i * n + j] = if i == j { 1.0 } else { 0.0 } - self.eps * c * kk;
                    for m in 0..n {
                        let kkk = kk * self.k[m];
                        out.third[(i * n + j) * n + m] = self.eps * s * kkk;
                        for l in 0..n {
                            out.fourth[((i * n + j) * n + m) * n + l] = self.eps * c * kkk * self.k[l];
                        }
                    }
                }
            }
            Ok(())
        }

        fn in_domain(&self, _x: &[f64]) -> bool {
            true
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::{build_grid, interval_01, unit_simplex_2d};

    fn interval() -> Arc<DelzantPolytope> {
        Arc::new(interval_01())
    }

    #[test]
    fn guillemin_closed_forms_on_interval() {
        let p = interval();
        let b = guillemin_derivs(&p, &[0.5]).unwrap();
        assert!((b.value - 0.5 * 0.5f64.ln()).abs() < 1e-14);
        assert!((b.hess[0] - 2.0).abs() < 1e-14);
        assert!(b.grad[0].abs() < 1e-14);
        // u0'' = 1/(2x(1-x))
        let b2 = guillemin_derivs(&p, &[0.25]).unwrap();
        assert!((b2.hess[0] - 1.0 / (2.0 * 0.25 * 0.75)).abs() < 1e-12);
        // Gradient toward the nearest facet diverges to -inf.
        let g_near = guillemin_derivs(&p, &[1e-6]).unwrap().grad[0];
        assert!(g_near < -5.0);
        assert!(guillemin_derivs(&p, &[0.0]).is_err());
    }

    #[test]
    fn guillemin_closed_form_on_simplex() {
        let p = Arc::new(unit_simplex_2d());
        let b = guillemin_derivs(&p, &[1.0 / 3.0, 1.0 / 3.0]).unwrap();
        assert!((b.value - 0.5 * (1.0f64 / 3.0).ln()).abs() < 1e-14);
        // Hessian = 3/2 [[2,1],[1,2]]
        assert!((b.hess[0] - 3.0).abs() < 1e-12);
        assert!((b.hess[1] - 1.5).abs() < 1e-12);
        assert!((b.hess[3] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn additive_split_and_affine_invariance() {
        let p = interval();
        let u0 = SymplecticPotential::guillemin_unnormalized(Arc::clone(&p), 0.05, 0.02).unwrap();
        let x = [0.37];
        let b = u0.derivs(&x).unwrap();
        let g = guillemin_derivs(&p, &x).unwrap();
        assert!((b.value - g.value).abs() < 1e-14);
        assert!((b.hess[0] - g.hess[0]).abs() < 1e-12);
        assert!((b.fourth[0] - g.fourth[0]).abs() < 1e-9);

        // f = affine changes nothing from order two up, and the quadratic
        // bump adds exactly its own Hessian.
        let ua = SymplecticPotential::from_fn(
            Arc::clone(&p),
            0.05,
            0.02,
            |x| 3.0 * x[0] - 0.7,
            Normalize::None,
        )
        .unwrap();
        let ba = ua.derivs(&x).unwrap();
        assert!((ba.hess[0] - b.hess[0]).abs() < 1e-9);
        assert!((ba.third[0] - b.third[0]).abs() < 1e-8);
        assert!((ba.grad[0] - (b.grad[0] + 3.0)).abs() < 1e-9);

        let ue = SymplecticPotential::from_fn(
            Arc::clone(&p),
            0.05,
            0.02,
            |x| 0.05 * x[0] * x[0],
            Normalize::None,
        )
        .unwrap();
        let be = ue.derivs(&[0.5]).unwrap();
        assert!((be.hess[0] - 2.1).abs() < 1e-9, "got {}", be.hess[0]);
    }

    #[test]
    fn normalization_fixes_gauge_at_centroid() {
        let p = interval();
        let u = SymplecticPotential::guillemin(Arc::clone(&p), 0.05, 0.02).unwrap();
        let b = u.derivs(&[0.5]).unwrap();
        assert!(b.value.abs() < 1e-12);
        assert!(b.grad[0].abs() < 1e-12);
        // Curvature-relevant orders identical to the unnormalized potential.
        let raw = SymplecticPotential::guillemin_unnormalized(Arc::clone(&p), 0.05, 0.02).unwrap();
        let br = raw.derivs(&[0.3]).unwrap();
        let bn = u.derivs(&[0.3]).unwrap();
        assert_eq!(br.hess[0], bn.hess[0]);
        assert_eq!(br.third[0], bn.third[0]);
    }

    #[test]
    fn legendre_forward_examples() {
        let p = interval();
        let u = SymplecticPotential::guillemin_unnormalized(Arc::clone(&p), 0.02, 0.005).unwrap();
        let d = legendre_forward(&u, &[0.5]).unwrap();
        assert!(d.xi[0].abs() < 1e-10);
        assert!((d.phi - 0.346_573_590_279_972_6).abs() < 1e-9);
        let d2 = legendre_forward(&u, &[0.25]).unwrap();
        assert!((d2.xi[0] - 0.5 * (1.0f64 / 3.0).ln()).abs() < 1e-9);
        // Self-dual quadratic.
        let q = analytic::QuadraticPotential::identity(2);
        let dq = legendre_forward(&q, &[0.3, -0.4]).unwrap();
        assert!((dq.xi[0] - 0.3).abs() < 1e-15);
        assert!((dq.phi - 0.5 * 0.25).abs() < 1e-15);
    }

    #[test]
    fn legendre_inverse_roundtrip_and_errors() {
        let p = interval();
        let u = SymplecticPotential::guillemin_unnormalized(Arc::clone(&p), 0.02, 0.005).unwrap();
        let x = legendre_inverse(&u, &[0.0]).unwrap();
        assert!((x[0] - 0.5).abs() < 1e-9);
        for &x0 in &[0.1, 0.33, 0.77, 0.94] {
            let xi = legendre_forward(&u, &[x0]).unwrap().xi;
            let back = legendre_inverse(&u, &xi).unwrap();
            assert!((back[0] - x0).abs() < 1e-8, "x0={x0} back={}", back[0]);
        }
        assert!(matches!(
            legendre_inverse(&u, &[1e6]),
            Err(Error::OutsideGradientImage) | Err(Error::NewtonDidNotConverge)
        ));
    }

    #[test]
    fn convexity_check_examples() {
        let p = interval();
        let grid = build_grid(&p, 0.05, 0.05).unwrap();
        let u0 = SymplecticPotential::guillemin(Arc::clone(&p), 0.05, 0.02).unwrap();
        let r = convexity_check(&u0, &grid).unwrap();
        assert!(r.pass);
        // Analytic min of u0'' is 2 at x = 1/2; the cell-centered grid sees
        // the nearest centers.
        assert!((r.min_eigenvalue - 2.0).abs() < 0.01, "{}", r.min_eigenvalue);
        assert!((r.witness[0] - 0.5).abs() < 0.03);

        let bad = SymplecticPotential::from_fn(
            Arc::clone(&p),
            0.05,
            0.02,
            |x| -2.0 * x[0] * x[0],
            Normalize::None,
        )
        .unwrap();
        let rb = convexity_check(&bad, &grid).unwrap();
        assert!(!rb.pass);
        assert!((rb.witness[0] - 0.5).abs() < 0.1);

        let q = analytic::QuadraticPotential::identity(1);
        let rq = convexity_check(&q, &grid).unwrap();
        assert!((rq.min_eigenvalue - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let p = interval();
        let u = SymplecticPotential::from_fn(
            Arc::clone(&p),
            0.07,
            0.02,
            |x| 0.03 * (x[0] * 5.1).sin(),
            Normalize::Centroid,
        )
        .unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&u, &mut buf).unwrap();
        let mut cur = std::io::Cursor::new(buf.clone());
        let v = read_checkpoint(&mut cur, Arc::clone(&p), 0.02).unwrap();
        assert_eq!(u.samples().len(), v.samples().len());
        for (a, b) in u.samples().iter().zip(v.samples()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let mut buf2 = Vec::new();
        write_checkpoint(&v, &mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn xlogx_directional_difference_is_log2() {
        let u = analytic::XLogX { m: 1 };
        for &x in &[0.01, 0.3, 2.0] {
            let gp = u.derivs(&[x]).unwrap().grad[0];
            let gq = u.derivs(&[2.0 * x]).unwrap().grad[0];
            assert!((gq - gp - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }
}
