//! Chance-constrained differential dynamic programming for receding-horizon
//! control under additive Gaussian process noise.

pub mod chance;
pub mod constraints;
pub mod ddp;
pub mod dynamics;
pub mod error;
pub mod mpc;
pub mod qp;
pub mod scenario;
pub mod trajectory;

pub use error::{Error, Result};
pub mod sim;
