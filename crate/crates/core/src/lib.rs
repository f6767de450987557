//! Dynamical charge susceptibilities of the Falicov-Kimball impurity model
//! on the Matsubara axis.
//!
//! The equilibrium problem ([`equilibrium`]) is solved in a bath
//! ([`bath`]) on a fermionic grid ([`grid`]). [`response`] evaluates
//! `χ(iν_ℓ)` three ways: through the one-index Bethe-Salpeter equation with
//! the diagonal FK vertex, through the combined closed form, and directly from
//! the linear change of the propagator in the field. [`oracle`] checks that
//! linear coefficient against numerical inversion of the perturbed
//! propagator matrix.

// `!(x <= limit)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bath;
pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod oracle;
pub mod response;
mod serde_float;

pub use bath::{BathFunction, DmftSettings, DmftSolution};
pub use equilibrium::{FkEquilibrium, FkParams};
pub use error::{Error, Result};
pub use grid::{BosonicIndex, MatsubaraGrid};
pub use response::{Route, RouteSelection, SusceptibilityResult};
