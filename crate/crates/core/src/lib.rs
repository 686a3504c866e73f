//! Physics-based simulation of valence-change memristive devices and analog
//! crossbar training.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod constants;
pub mod crossbar;
pub mod device;
pub mod dynamics;
pub mod error;
pub mod fit;
mod kv;
pub mod mnist;
pub mod params;
pub mod physics;
pub mod stochastic;
pub mod trainer;

pub use error::{Error, Result};
pub use device::DeviceState;
pub use fit::FitCoefficients;
pub use params::PhysicalParams;
pub use physics::{Polarity, VoltagePartition};
