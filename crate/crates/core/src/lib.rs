//! Spin-torque dynamics of a levitated diamond: NV spin Bloch and rate
//! equations coupled to a Langevin-damped librational oscillator.

pub mod analysis;
pub mod config;
pub mod dynamics;
pub mod io;
pub mod linres;
pub mod model;
pub mod spin;
pub mod steadystate;

pub use dynamics::{Protocol, SystemState, Trajectory};
pub use model::{Drive, ModelKind, PhysicalParams, ValidatedParams};
