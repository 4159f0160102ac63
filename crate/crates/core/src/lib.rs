//! Client/server split planning for transformer inference.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`cost_model`] turns a model description and sequence length into
//!    per-layer FLOP, memory, boundary-tensor size and device times.
//! 2. [`problem`] adds a link model and a deadline and integerizes every
//!    time onto a fixed unit.
//! 3. [`planner`] picks a client/server placement per layer that minimizes
//!    server load within the budget (plus greedy, constant and exhaustive
//!    baselines), and [`evaluator`] scores placements and runs grid sweeps.
//! 4. [`throughput_sim`] replays planned scenarios through a FIFO server
//!    with finite capacity to compare queueing delay across policies.
//!
//! Numeric code is generic over the float type; the aliases below fix it
//! to `f64`, which is what the command-line tool uses.

// `!(x > 0)` style checks are there to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost_model;
pub mod error;
pub mod evaluator;
pub mod planner;
pub mod problem;
pub mod scalar;
pub mod throughput_sim;

pub use error::{Error, Result};
pub use planner::{Location, PlannerKind};
pub use scalar::{Scalar, Value};

pub type DeviceSpec = cost_model::DeviceSpec<f64>;
pub type LayerProfile = cost_model::LayerProfile<f64>;
pub type ModelProfile = cost_model::ModelProfile<f64>;
pub type LinkSpec = problem::LinkSpec<f64>;
pub type LayerTimes = problem::LayerTimes<f64>;
pub type PlanProblem = problem::PlanProblem<f64>;
pub type Scenario = problem::Scenario<f64>;
pub type TimedProblem = problem::TimedProblem<f64>;
pub type PlacementPolicy = planner::PlacementPolicy<f64>;
pub type SweepGrid = evaluator::SweepGrid<f64>;
pub type SweepCell = evaluator::SweepCell<f64>;
