//! Shared numerical kernels: small dense linear algebra, banded LU,
//! finite-difference weights, adaptive quadrature, B-spline basis.

pub mod banded;
pub mod bspline;
pub mod fd;
pub mod linalg;
pub mod quad;
