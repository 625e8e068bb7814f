//! Dynamic batch size scheduling for synchronous data-parallel training on
//! heterogeneous clusters, with an epoch-level timing simulator and a
//! strongly-convex SGD lab for checking convergence behaviour.

pub mod config;
pub mod dbs;
pub mod report;
pub mod runner;
pub mod scenarios;
pub mod sgd;
pub mod sim;
