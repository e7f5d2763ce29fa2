//! Semi-dual neural optimal transport toolkit.
//!
//! The crate is organised bottom-up:
//!
//! * [`numcore`]: tensors and an eager reverse-mode differentiation graph
//! * [`models`]: MLP maps and potentials, input-convex networks
//! * [`objectives`]: costs and the saddle functionals
//! * [`solver`]: the two-timescale alternating optimizer
//! * [`benchmarks`]: problems with known optimal maps
//! * [`metrics`]: map/potential errors, flatness, exact empirical `W₁`
//! * [`oracle`]: exact discrete transport and structural witnesses
//! * [`sweep`]: multi-seed grids over the timescale parameters

pub mod assignment;
pub mod benchmarks;
pub mod error;
pub mod metrics;
pub mod models;
pub mod numcore;
pub mod objectives;
pub mod oracle;
pub mod rng;
pub mod solver;
pub mod sweep;

pub use error::{OtError, Result};
