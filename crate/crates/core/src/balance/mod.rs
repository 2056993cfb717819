//! Resource estimation and factor balancing for the optimized kernels.

pub mod algo;
pub mod hybrid;
pub mod profile;
pub mod resources;
pub mod tuning;

pub use algo::{
    decompose_factor, is_reachable, next_factor, prev_factor, resource_balance, throughput_balance,
    Decomposition, FactorAssignment, KernelFactor, Step, MAX_FACTOR,
};
pub use hybrid::{balance_groups, virtual_profile, BalanceReport, GroupAllocation, Method};
pub use profile::{Estimator, LinearEstimator, ProfileRecord, Profiles, TableEstimator};
pub use resources::{compute_eru, Resource, ResourceVector, StaticResources};
pub use tuning::{
    apply_factors, emit_tuning_plan, select_tuned, tuning_candidates, write_tuning_variants,
    Candidate, Measurement, Measurements, TuningKernel, TuningPlan,
};
