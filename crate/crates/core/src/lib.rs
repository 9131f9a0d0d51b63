//! Deployment-space search toolkit for real-time object detection on
//! heterogeneous edge devices: a modeled CPU-GPU platform, frame-similarity
//! traces, keyframe selection, a pruning lookup table, a latency predictor,
//! a multi-agent Q-learning coordinator, and a brute-force Pareto oracle.

pub mod cluster;
pub mod collect;
pub mod device;
pub mod keyframe;
pub mod latency;
pub mod marl;
pub mod oracle;
pub mod prune;
pub mod scenario;
pub mod trace;

#[cfg(test)]
pub(crate) mod testutil;
