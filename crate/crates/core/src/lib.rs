//! Learning control barrier functions with a deep differential network,
//! using model-based rollouts and an MPC backup to keep the real system
//! safe while data is collected.

pub mod bench;
pub mod cbf;
pub mod ddn;
pub mod dynamics;
pub mod error;
pub mod learning;
pub mod mpc;
pub mod persistence;
pub mod qp;
pub mod qpfilter;
pub mod sim;
pub mod task;

pub use error::{Error, Result};
