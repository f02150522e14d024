//! Macroscopic traffic network flows on directed link graphs: first-order
//! dynamics with proportional-priority merging, equilibrium analysis, ramp
//! metering synthesis, and cooperativity diagnostics.

pub mod analysis;
pub mod diagram;
pub mod dynamics;
pub mod equilibrium;
pub mod metering;
pub mod network;
pub mod samples;
pub mod sim;
pub mod simplex;
pub mod tolerances;
