//! Markov-model laboratory for `p`-Selmer ranks in quadratic twist families.
//!
//! The crate models the rank of a twisted Selmer group as a walk driven by
//! the birth-death operator `M_L` and checks the resulting limit laws:
//!
//! * [`lagrangian`] builds `M_L`, the constants `c_n` and the equilibrium
//!   states `E^+`, `E^-`.
//! * [`twist`] simulates twisting over a synthetic prime stream and exposes
//!   the exact one-step kernels.
//! * [`fan`] counts and samples fan structures and averages rank laws over them.
//! * [`disparity`] turns local character data into the disparity `δ` and
//!   the limiting rank distribution it selects.
//!
//! Densities and operators are generic over [`Scalar`], so every identity
//! can be checked in exact rational arithmetic as well as in `f64`.

pub mod cli;
pub mod disparity;
pub mod distribution;
pub mod error;
pub mod exec;
pub mod fan;
pub mod lagrangian;
pub mod scalar;
pub mod stats;
pub mod twist;

pub use distribution::{l1_distance, make_density, project_parity, rho_parity, BandedOperator, Density, Side};
pub use error::{Error, Result};
pub use exec::Execution;
pub use lagrangian::{build_lagrangian, equilibrium, EquilibriumPair, LagrangianParams, Prime};
pub use scalar::Scalar;
