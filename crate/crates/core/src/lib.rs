//! Simulation of two-atom entanglement through the Rydberg blockade.
//!
//! The crate evolves a pair of five-level atoms under square laser pulses
//! (Raman rotations between the hyperfine ground states, Rydberg excitation
//! and mapping pulses), adds Markovian and shot-to-shot noise, models
//! push-out state detection and extracts Rabi frequencies and Bell-state
//! fidelities from the simulated scans.

pub mod analysis;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod measurement;
pub mod physics;
pub mod qstate;

pub use error::{Error, Result};
