//! Generalized signal-flow graphs with online adaptation of branch gains.
//!
//! Nodes carry identity, static, linear, nonlinear or delay dynamics;
//! branches carry scalar gains, some of which adapt by gradient flow on a
//! tracking error. The numeric core is generic over [`scalar::Real`]
//! (`f32` or `f64`); the aliases below fix it to `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod dynamics;
pub mod expr;
pub mod graph;
pub mod learning;
pub mod linalg;
pub mod poles;
pub mod scalar;
pub mod scenario;
pub mod sim;

pub use graph::NodeId;

pub type Graph = graph::GsfgGraph<f64>;
pub type NodeSpec = dynamics::NodeSpec<f64>;
pub type Branch = graph::Branch<f64>;
pub type DynamicsKind = dynamics::DynamicsKind<f64>;
pub type TransferFunction = dynamics::TransferFunction<f64>;
pub type StateSpace = dynamics::StateSpace<f64>;
pub type LearningConfig = learning::LearningConfig<f64>;
pub type Scenario = scenario::Scenario<f64>;
pub type SimulationTrace = sim::SimulationTrace<f64>;
pub type SignalSpec = sim::SignalSpec<f64>;
