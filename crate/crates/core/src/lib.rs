//! Voltage-aware energy sharing among prosumers on a radial distribution
//! feeder under net energy metering.
//!
//! * [`network`]: feeder model, LinDistFlow sensitivities and an exact
//!   DistFlow sweep.
//! * [`prosumer`]: device utilities, best responses and envelopes.
//! * [`welfare`]: centralized welfare maximization by dual decomposition.
//! * [`pricing`]: ex-ante bus prices, settlement and equilibrium checks.
//! * [`harness`]: scenario files, runs, sweeps and CSV/JSON reports.

pub mod error;
pub mod harness;
pub mod network;
pub mod pricing;
pub mod prosumer;
pub mod registry;
pub mod roots;
pub mod welfare;

pub use error::{Error, Result};
