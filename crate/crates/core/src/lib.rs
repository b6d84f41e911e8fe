//! Monte Carlo laboratory for the extremal process of branching Brownian
//! motion.

pub mod bbm_sim;
pub mod error;
pub mod fmt;
pub mod fkpp;
pub mod genealogy;
pub mod martingale;
pub mod point_process;
pub mod stats;
pub mod rng;

pub use error::{LabError, Result};
