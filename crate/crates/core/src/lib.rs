//! Numerical tools for studying quasiconformal curves `f: Ω ⊂ Rⁿ → Rᵐ` with
//! respect to a constant-coefficient calibrating `n`-form.
//!
//! The crate is organised around a few pieces:
//! - [`forms`]: constant-coefficient forms, their comass and pullbacks;
//! - [`jetcalc`]: parametrized maps, differentials and distortion scans;
//! - [`modulus`]: discrete `p`-modulus of curve families on cell grids;
//! - [`surface`]: triangulated image surfaces and their intrinsic metric;
//! - [`verify`]: definition-level checks that tie the above together.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod forms;
pub mod graph;
pub mod grid;
pub mod jetcalc;
pub mod linalg;
pub mod modulus;
pub mod report;
pub mod surface;
pub mod verify;

pub use error::{Error, Result};
pub use forms::{comass, ComassBudget, ComassEstimate, ConstantForm, MultiIndex};
pub use grid::{AxisBox, GridDomain, Mask};
pub use jetcalc::{
    area_measure, cb_jacobian, differential, distortion_scan, operator_norm, pointwise_distortion, Distortion,
    DistortionReport, Jet, MapKind, MapSpec, Phi,
};
pub use modulus::{discrete_modulus, discrete_modulus_with, ModulusOptions, ModulusResult, PathFamily, Selector};
pub use surface::{intrinsic_distance, triangulate, SurfaceMesh};
pub use verify::{CheckResult, ExperimentConfig};
