//! Influence-based pricing of training data for linear regression.
//!
//! Agents report data points to a Center that fits a least-squares model and
//! pays each report by its influence on the test risk. The crate covers the
//! regression core, exact and approximate influence, the sequential batch
//! mechanism, closed-form mixture theory, agent simulation and data loading.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod data_io;
pub mod error;
pub mod experiments;
pub mod influence;
pub mod mechanism;
pub mod regression;
pub mod special;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
pub use regression::{fit, AgentId, DataPoint, Dataset, FittedModel, Parameters};
