//! Time-share versus fair-share CPU scheduling on a single processor.
//!
//! The crate provides share/entitlement algebra, two scheduling disciplines,
//! a deterministic tick-level simulator of closed interactive workloads and an
//! analytic planner that predicts the same quantities without simulating.

pub mod domain;
pub mod entitlements;
pub mod error;
pub mod planner;
pub mod scenario_file;
pub mod sched;
pub mod sim;

pub use domain::*;
pub use entitlements::{
    dynamic_entitlements, effective_entitlements, static_entitlements, EntitlementTable,
    GroupEntitlement, UserEntitlement,
};
pub use error::{Error, Result};
pub use planner::{predict, suggest_shares, what_if, PlanReport, Suggestion, WhatIf};
pub use scenario_file::{emit_scenario, parse_scenario, ScenarioDoc};
pub use sim::{compare_policies, run, sweep, Comparison, SimReport};
