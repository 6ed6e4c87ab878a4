pub mod allocation;
pub mod dataset;
pub mod error;
pub mod features;
pub mod harness;
pub mod network;
pub mod physics;
pub mod seed;
pub mod traffic;

pub use error::{Error, Result};
