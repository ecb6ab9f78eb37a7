//! Agent-based epidemic simulation coupled with an active-sampling policy that
//! decides which individuals to test each day under a fixed budget.
//!
//! The crate is organised bottom-up:
//!
//! - [`population`] builds the synthetic city (agents, locations, visit propensities).
//! - [`abm`] runs the daily contact / transmission / progression loop.
//! - [`observed`] keeps the policy maker's partial, windowed view of the contacts.
//! - [`embedding`] turns that view into node vectors (random walks + skip-gram).
//! - [`sampler`] picks whom to test: Thompson-sampled expansion vs. kNN-UCB densification,
//!   plus the baseline policies.
//! - [`harness`] wires everything into seeded, replicated, paired experiments.

pub mod abm;
pub mod embedding;
pub mod error;
pub mod harness;
pub mod observed;
pub mod population;
pub mod rng;
pub mod sampler;

#[cfg(test)]
mod properties;

pub use error::{Error, Result};

/// Dense agent index, `0..N`.
pub type AgentId = u32;
/// Dense location index into [`population::Population::locations`].
pub type LocationId = u32;
/// Index of a neighborhood (row of the NTA table).
pub type NtaId = u16;
/// Simulation day. Day 0 is the seeding day; the loop starts at day 1.
pub type Day = u32;
