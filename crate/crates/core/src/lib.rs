//! Riemann approximation of stochastic integrals driven by Brownian and
//! geometric Brownian motion: time-nets, error simulation, fractional
//! smoothness proxies and the Riemann–Liouville operator.

// `!(x > 0.0)` guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiment;
pub mod gauss;
pub mod model;
pub mod payoff;
pub mod quadrature;
pub mod rng;
pub mod simulator;
pub mod smoothness;
pub mod timenet;
pub mod verify;

pub use error::{FracnetError, Result};
pub use model::{DiffusionModel, ModelKind, PathBatch, TimeGrid};
pub use payoff::Payoff;
pub use timenet::{NetFamily, TimeNet};
