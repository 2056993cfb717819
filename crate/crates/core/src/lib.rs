//! Source-to-source optimizer for multi-kernel OpenCL FPGA workloads.
//!
//! The flow mirrors a classic optimizing pipeline: parse kernels and host
//! code, classify cross-kernel dependences, plan pipelines, transform
//! kernels, balance resources, split bitstreams and regenerate host code.
//! [`simcheck`] interprets kernel sets to verify that transformations
//! preserve semantics.

pub mod balance;
pub mod config;
pub mod dependence;
pub mod error;
pub mod fixtures;
pub mod flow;
pub mod frontend;
pub mod host;
pub mod hostgen;
pub mod io;
pub mod planner;
pub mod simcheck;
pub mod split;
pub mod transforms;

pub use config::{Config, Granularity};
pub use error::{Error, Result};
