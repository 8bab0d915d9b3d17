//! Simulation and exact-verification laboratory for the tree builder random
//! walk (TBRW).

pub mod cli;
pub mod error;
pub mod exact;
pub mod mc;
pub mod model;
pub mod renewal;
pub mod stats;

pub use error::{Error, Result};
