//! Shared fixtures for the criterion benches.

use driverl_core::scenario::{generate_synthetic, ScenarioKind};
use driverl_core::Scenario;
use std::sync::Arc;

/// A small mixed scenario set reused across benches.
pub fn bench_scenarios() -> Vec<Arc<Scenario>> {
    ScenarioKind::ALL
        .iter()
        .enumerate()
        .map(|(i, k)| Arc::new(generate_synthetic(i as u64, *k)))
        .collect()
}
