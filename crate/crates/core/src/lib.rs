//! Cost-sensitive learning to defer for a team of human experts and one
//! classifier, with per-batch capacity limits.
//!
//! The crate is organised bottom-up:
//!
//! - [`data_model`]: instances, expert records, capacities, cost structure and CSV I/O.
//! - [`scorer`]: weighted logistic scorers (linear and boosted stumps) with persistence.
//! - [`alert_model`]: the upstream alert classifier, its threshold and the implied cost ratio.
//! - [`expert_sim`]: synthetic experts with instance-dependent error probabilities.
//! - [`hem`]: the joint human expertise model.
//! - [`assigner`]: correctness matrices and exact capacity-constrained assignment.
//! - [`baselines`]: OvA, random, only-classifier and full-rejection strategies.
//! - [`metrics`]: cost per 100, weighted ECE / ROC-AUC and report summaries.
//! - [`harness`]: synthetic data, the scenario grid and end-to-end runs.

pub mod alert_model;
pub mod assigner;
pub mod baselines;
pub mod data_model;
pub mod error;
pub mod expert_sim;
pub mod harness;
pub mod hem;
pub mod metrics;
pub mod persist;
pub mod rng;
pub mod scorer;

pub use error::{Error, Result};
