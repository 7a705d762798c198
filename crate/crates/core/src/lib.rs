//! Single-slot ad auctions with display prices: valuation math, mechanisms,
//! price equilibria, property checks, parameter search and Monte Carlo
//! experiments.

pub mod cli;
pub mod equilibrium;
pub mod error;
pub mod ironing;
pub mod mechanisms;
pub mod model;
pub mod numeric;
pub mod optimizer;
pub mod rng;
pub mod simulation;
pub mod stats;
pub mod verification;

pub use error::{Error, Result};
