//! Simulation and verification of anonymous voting with entangled qudits.
//!
//! The crate is organised bottom-up:
//!
//! * [`qstate`] dense pure-state algebra over qudit registers,
//! * [`ballots`] ballot states, voting operators and the authority's decoders,
//! * [`protocols`] end-to-end runs that emit [`transcript::Transcript`]s,
//! * [`adversary`] attacks on the protocols and the matching detection tests,
//! * [`verify`] privacy-condition checks and the qubit/qutrit feasibility searches,
//! * [`cli`] the `qvote` command-line front end.
//!
//! All randomness flows from a [`rng::Seed`]; equal seeds give equal runs.

pub mod adversary;
pub mod ballots;
pub mod cli;
pub mod error;
pub mod protocols;
pub mod qstate;
pub mod rng;
pub mod transcript;
pub mod verify;

pub use error::{Error, Result};
