//! Candidate minimizers of supremal functionals
//! `E_inf(u, I) = ess sup_{x in I} L(x, u(x), Du(x))` for paths
//! `u : [a, b] -> R^N` with affine boundary data, computed by minimizing the
//! power energies `int L^m` for growing `m`, together with numerical audits of
//! the properties such minimizers should have:
//!
//! * [`lagrangian`]: models, derivative jets, level-convexity and growth checks.
//! * [`path`]: grids, piecewise-linear paths, difference quotients.
//! * [`energy`]: sup-energy, stabilized power energies and their gradient,
//!   Jensen gaps.
//! * [`solver`]: quasi-Newton minimization and the `m` sweep.
//! * [`aronsson`]: the vectorial Aronsson operator and residual profiles.
//! * [`audit`]: absolute-minimality audits on subintervals, the boundary-layer
//!   comparison map, semicontinuity and endpoint-quotient checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aronsson;
pub mod audit;
pub mod energy;
pub mod error;
pub mod lagrangian;
pub mod path;
pub mod solver;

pub use nalgebra;

pub use error::{Error, Result};
pub use lagrangian::LagrangianModel;
pub use path::{AffineMap, Grid, Path};
