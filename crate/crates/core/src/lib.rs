//! Neural-network solution bundles for parameterized first-order ODE
//! initial-value problems.

pub mod ad;
pub mod bench;
pub mod bundle;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod network;
pub mod reference;
pub mod systems;
pub mod training;
pub mod uq;

pub use error::{Error, Result};
