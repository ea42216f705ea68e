//! Numerical laboratory for a multiplicative wealth model: Kelly growth of the
//! underlying bet, Pareto exponents from the characteristic equation of the
//! dissipative evolution operator, grid evolution of wealth densities, and
//! agent-based measurement of elite turnover.

pub mod abm;
pub mod cli;
pub mod density;
pub mod error;
pub mod kelly;
pub mod model;
pub mod output;
pub mod spectral;

mod roots;

pub use error::{Error, Result};
pub use model::{LogCoefficients, ModelParams};
