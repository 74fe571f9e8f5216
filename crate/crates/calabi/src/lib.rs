//! Numerical engine for toric Kähler geometry in symplectic (action)
//! coordinates on a Delzant polytope.
//!
//! The pieces, bottom up:
//!
//! * [`polytope`] — Delzant polytopes from facet inequalities, validation,
//!   quadrature grids, lattice boundary measures.
//! * [`potential`] — symplectic potentials u = u0 + f with the canonical
//!   singular part u0 = 1/2 Σ l_k log l_k and a quintic-spline smooth part,
//!   derivatives to order four, Legendre duality.
//! * [`geometry`] — Hessian metric, curvature tensor F, |F|, scalar
//!   curvature A two ways, Riemannian lengths and geodesics.
//! * [`mcondition`] — V(p, q) and the smallest M for which the M-condition
//!   plausibly holds, by stratified sampling.
//! * [`flow`] — the Calabi flow du/dt = -A + Ā on the smooth part, with
//!   energy-monotone accept/reject stepping and diagnostics.
//! * [`analysis`] — blow-up rescaling, the geometric estimate suite, and
//!   singularity detection/classification.

pub mod analysis;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod mcondition;
pub mod numerics;
pub mod polytope;
pub mod potential;
pub mod spline;

pub use error::{Error, Result};
pub use polytope::{build_grid, delzant_check, DelzantPolytope, PolytopeSpec, QuadratureGrid};
pub use potential::{
    guillemin_derivs, ConvexPotential, DerivativeBundle, SymplecticPotential,
};
