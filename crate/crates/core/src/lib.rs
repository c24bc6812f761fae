//! Scheduling correlated sources for remote inference by age of information.
//!
//! The crate is organised bottom-up:
//!
//! * [`signal`] generates correlated AR(1) sources and update packets.
//! * [`info_measures`] evaluates conditional prediction errors (L-entropies)
//!   analytically for Gaussian sources and empirically from samples.
//! * [`penalty`] builds the single-source tables `f_m(δ)` and the exact joint
//!   penalty `g_m(δ_1, ..., δ_M)`.
//! * [`relaxed_mdp`] solves the Lagrangian-relaxed per-source MDP, computes
//!   gain indices, searches optimal two-source cycles and provides brute-force
//!   joint oracles.
//! * [`policies`] and [`online_learning`] implement the schedulers.
//! * [`sim_engine`] runs closed-loop simulations and [`experiment`] drives
//!   config-based sweeps and audits.

pub mod error;
pub mod experiment;
pub mod info_measures;
pub mod online_learning;
pub mod penalty;
pub mod policies;
pub mod relaxed_mdp;
pub mod signal;
pub mod sim_engine;

pub use error::{Error, Result};
pub use penalty::{JointCost, JointPenalty, PenaltyMode, PenaltyTable, TruncationConfig};
pub use policies::{AoiVector, ScheduleDecision, Scheduler};
pub use signal::GaussMarkovModel;
