//! Analytical step-time, memory and fault-tolerance cost model for
//! distributed LLM pretraining, with a strategy tuner and independent
//! simulation oracles for every closed form.

// `!(x > 0.0)` deliberately rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arch;
pub mod basecost;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod fault;
pub mod optim;
pub mod oracle;
pub mod plan;
pub mod profile;
pub mod report;
pub mod tuner;

pub use error::{Error, Result};
pub use plan::ParallelPlan;
