//! Shared test fixtures.

use crate::device::oneplus8t;
use crate::keyframe::SelectorConfig;
use crate::scenario::{ssd_like_workload, yolo_like_workload, PenaltyMode, Scenario};
use crate::trace::{generate_trace, TraceGenParams};

pub fn default_scenario(seed: u64, frames: usize) -> Scenario {
    let trace = generate_trace(
        &TraceGenParams {
            seed,
            ..TraceGenParams::default()
        },
        30.0,
        frames as f64 * 1000.0 / 30.0,
    )
    .unwrap();
    Scenario::build(
        oneplus8t(),
        yolo_like_workload(),
        trace,
        SelectorConfig::default(),
        33.0,
        1.0,
        PenaltyMode::Soft,
        5.0,
    )
    .unwrap()
}

pub fn ssd_scenario(seed: u64, frames: usize) -> Scenario {
    let trace = generate_trace(
        &TraceGenParams {
            seed,
            ..TraceGenParams::default()
        },
        30.0,
        frames as f64 * 1000.0 / 30.0,
    )
    .unwrap();
    Scenario::build(
        oneplus8t(),
        ssd_like_workload(),
        trace,
        SelectorConfig::default(),
        33.0,
        1.0,
        PenaltyMode::Soft,
        5.0,
    )
    .unwrap()
}
