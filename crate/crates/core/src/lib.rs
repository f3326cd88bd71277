//! Reality-gap evaluation for simulated robot manipulation.
//!
//! Paired repeat bundles (20 recordings per task from the real dataset and
//! from a simulator) are reduced to per-task metric sets and per-subgroup
//! error vectors. A small kinematic simulator generates synthetic bundles
//! in the same format.

pub mod distributions;
pub mod error;
pub mod ingest;
pub mod kinematics;
pub mod metrics;
pub mod report;
pub mod trajectory;

pub use error::{Error, Result};
