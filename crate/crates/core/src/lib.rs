//! Explicit topology optimization with moving mass nodes.
//!
//! A structure is the union of a few rectangular components ("mass nodes")
//! whose kernel-smoothed masses define a density field on a finite element
//! mesh. Compliance is minimized by steepest descent on the component
//! positions, orientations and dimensions under a mass budget, and a
//! merge/suppress pass turns the converged layout into an explicit beam
//! assembly. A SIMP optimizer on the same meshes serves as a baseline.
//!
//! The modules follow the data flow of one optimization iteration:
//!
//! * [`geometry`]: structured meshes, Gauss points, benchmark load cases
//! * [`density`]: mass nodes, the cubic spline kernel and its derivatives
//! * [`material`]: filter, saturation and stiffness interpolation
//! * [`fem`]: stiffness assembly, sparse solve, compliance sensitivities
//! * [`optimize`]: mass-constrained steepest descent
//! * [`recognize`]: merging, suppression and beam export
//! * [`simp`]: the element-density baseline
//! * [`io`], [`config`], [`run`]: file formats and the run pipeline

// `!(x > 0.0)` style guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// index loops mirror the matrix formulas
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod density;
pub mod error;
pub mod fem;
pub mod geometry;
pub mod io;
pub mod material;
pub mod optimize;
pub mod recognize;
pub mod run;
pub mod simp;

pub use error::{Error, Result};
