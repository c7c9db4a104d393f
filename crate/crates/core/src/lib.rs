//! Numerical toolkit for controlled incompressible flows whose velocity
//! decays faster than the generic heat-flow rate.

// Index loops over several parallel arrays read better than zipped
// iterators here, and `!(x > 0.0)` rejects NaN on purpose.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod error;
pub mod field;
pub mod fit;
pub mod grid;
pub mod harness;
pub mod io;
mod jet;
pub mod kernels;
pub mod multi_index;
pub mod profiles;
pub mod quadrature;
pub mod solver;

pub use error::{Error, Result};
pub use grid::Grid;
pub use multi_index::MultiIndex;
pub use profiles::{
    build_chi_family, build_profile, compute_moments, solve_moment_system, BumpShape, BumpSpec, ControlProfileFamily,
    MomentMatrix, MomentVector, Profile1D, SampledFamily,
};
