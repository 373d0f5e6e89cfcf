//! BMO norms on grid fields, functional Taylor expansions with explicit
//! remainder bounds, and second-variation checks for gradient energies on
//! axis-aligned boxes.

// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bmo;
pub mod error;
pub mod experiment;
pub mod field;
pub mod gf1;
pub mod grid;
pub mod integrand;
pub mod numeric;
pub mod report;
pub mod taylor;
pub mod variational;

pub use error::{Error, Result};
pub use field::{Mat, ScalarGridFunction, TensorField};
pub use grid::{Cube, CubeMode, Face, Grid};
