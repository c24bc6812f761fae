//! Config-driven sweeps, audits and trace export.

pub mod audit;
pub mod config;
pub mod runner;

pub use audit::{audit, AuditReport};
pub use config::{ExperimentConfig, PolicyKind, SweepAxis};
pub use runner::{beta_trace, export_penalties, run, write_beta_rows, write_rows, ResultRow};
