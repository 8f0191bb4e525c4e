//! Optimization over ensembles of trained ReLU networks.
//!
//! The ensemble optimum is found by encoding every network as a big-M
//! mixed-integer program ([`formulation`]), tightening the big-M constants
//! ([`tighten`]), and solving with a branch-and-bound engine ([`bnb`])
//! strengthened by dual-derived cuts ([`benders`]). Ensembles of two or more
//! networks then switch to a Lagrangian decomposition with spatial branching
//! on the input box ([`lagrange`]). [`driver`] ties the stages together and
//! [`oracle`] provides exact reference answers for small instances.

#![allow(clippy::needless_range_loop)]

pub mod bench;
pub mod benders;
pub mod bnb;
pub mod driver;
pub mod error;
pub mod formulation;
pub mod lagrange;
pub mod model;
pub mod oracle;
pub mod tighten;

pub use error::{Error, Result};
