//! Level analysis, bootstrap planning and cost estimation for CKKS-style
//! homomorphic inference over neural-network graphs.
//!
//! The usual flow is [`arch::build`] or [`graph::parse_graph`] to get a
//! [`Graph`], [`planner::plan`] to insert bootstraps and rescales, then
//! [`cost::price`] to estimate CPU time or [`mock::execute`] to run the plan
//! on a cleartext simulator.

pub mod arch;
pub mod config;
pub mod corpus;
pub mod cost;
pub mod graph;
pub mod levels;
pub mod mock;
pub mod planner;

pub use arch::{ArchConfig, ArchError, Variant};
pub use config::{Config, ConfigError, NoiseConfig};
pub use cost::{CostError, CostReport, CostWeights, OpClass};
pub use graph::{Graph, GraphError, Node, NodeId, OpKind, TileShape};
pub use levels::{LevelError, LevelRules, LevelTrace};
pub use mock::{MockError, Tensor};
pub use planner::{Plan, PlanError, PlannerConfig};
