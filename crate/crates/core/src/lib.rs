//! Tri-level coupled learning: a fast Hebbian layer, a coordination layer
//! driven by aggregated embeddings, and a slow meta layer that rewrites the
//! Hebbian rule. The crate provides a deterministic multi-rate simulator,
//! closed-form drift and suboptimality bounds, and runtime contract monitors
//! that check the simulated dynamics against those bounds.
//!
//! ```
//! use trilevel::{bounds::total_bound, SystemConfig};
//!
//! let report = total_bound(&SystemConfig::default()).unwrap();
//! assert_eq!(report.n12, 100);
//! assert!((report.phi_max - 0.05).abs() < 1e-12);
//! ```

// `!(x <= y)` is used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cascade;
pub mod config;
pub mod contracts;
pub mod drift;
pub mod error;
pub mod hebbian;
pub mod linalg;
pub mod meta;
pub mod report;
pub mod rng;
pub mod sim;
pub mod trace_io;
pub mod verify;

pub use bounds::BoundReport;
pub use config::{load_config, load_config_with_overrides, SystemConfig};
pub use contracts::{ContractId, ContractVerdict};
pub use error::{Error, Result};
pub use hebbian::{AgentState, HebbianRule, Observation, StepRecord};
pub use sim::{run, Scenario, ScenarioKind, Trace};
