//! Scenario assembly and the shared episode loop.
//!
//! A scenario pins everything an episode needs: the device with its selected
//! cluster, the workload (pruning LUT + layer footprints), the trace, the
//! selector configuration, and the optimized-space bounds. Every strategy
//! (origin, static threshold + governor, coordinator) and the oracle run
//! through the same loop so their metrics are comparable.

use std::collections::VecDeque;

use thiserror::Error;

use crate::cluster::select_cluster;
use crate::collect::{
    aggregate, AccuracyModel, CollectError, DeploymentAction, EpisodeMetrics, ProcessingRecord,
    ServiceModel,
};
use crate::device::{power_draw, DeviceError, DeviceSpec, PlatformState};
use crate::keyframe::{
    keyframe_lower_bound, t_locality_select, SelectorConfig, SelectorError, TLocalitySelector,
};
use crate::latency::{params_for, predict, LatencyError, PredictorParams};
use crate::prune::{compute_bounds, PruneBounds, PruneError, PruningLut};
use crate::trace::FrameTrace;

/// DNN workload stand-in: the pruning table plus the scalars the coordinator
/// sees as its model descriptor.
#[derive(Debug, Clone)]
pub struct Workload {
    pub name: String,
    pub lut: PruningLut,
    pub max_layer_bytes: u64,
    /// Min-max normalized (weight count, layer count, kernel summary).
    pub descriptor: [f64; 3],
}

pub fn yolo_like_workload() -> Workload {
    Workload {
        name: "yolo_like".into(),
        lut: crate::prune::yolo_like(),
        max_layer_bytes: 800_000,
        descriptor: [0.21, 0.35, 0.40],
    }
}

pub fn ssd_like_workload() -> Workload {
    Workload {
        name: "ssd_like".into(),
        lut: crate::prune::ssd_like(),
        max_layer_bytes: 3_360_000,
        descriptor: [0.55, 0.50, 0.65],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyMode {
    /// `(L_pred - RT_tar) / RT_tar` past the deadline.
    Soft,
    /// Constant penalty past the deadline.
    Hard,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Latency(#[from] LatencyError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Collect(#[from] CollectError),
    #[error("scenario invalid: {0}")]
    Invalid(String),
}

/// Everything one episode needs, immutable during the run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub device: DeviceSpec,
    pub cluster_idx: usize,
    pub predictor: PredictorParams,
    pub workload: Workload,
    pub trace: FrameTrace,
    pub selector_cfg: SelectorConfig,
    pub prune_bounds: PruneBounds,
    /// Stored LUT ratios inside the bounds: the pruning action space.
    pub prune_ratios: Vec<f64>,
    /// Candidate next-keyframe offsets: the keyframe action space, all within
    /// the application response horizon.
    pub kf_candidates: Vec<usize>,
    pub rt_tar_ms: f64,
    pub alpha: f64,
    pub penalty_mode: PenaltyMode,
    pub hard_penalty: f64,
    pub accuracy: AccuracyModel,
    /// min(application-implied count, temporal-locality count) for this trace.
    pub kf_lower_bound: usize,
    /// Dynamic power of the all-maxed origin configuration; normalizes Po_N.
    pub origin_delta_p: f64,
}

impl Scenario {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        device: DeviceSpec,
        workload: Workload,
        trace: FrameTrace,
        selector_cfg: SelectorConfig,
        rt_tar_ms: f64,
        alpha: f64,
        penalty_mode: PenaltyMode,
        prune_tolerance_map: f64,
    ) -> Result<Self, ScenarioError> {
        selector_cfg.validate()?;
        if rt_tar_ms <= 0.0 {
            return Err(ScenarioError::Invalid("rt_tar_ms must be > 0".into()));
        }
        if trace.is_empty() {
            return Err(ScenarioError::Invalid("trace is empty".into()));
        }
        let cluster_idx = select_cluster(&device, workload.max_layer_bytes);
        let cluster = device.cluster(cluster_idx)?.clone();
        let predictor = params_for(&device, &cluster, workload.max_layer_bytes)?;
        let prune_bounds = compute_bounds(&workload.lut, prune_tolerance_map);
        let prune_ratios = workload.lut.ratios_within(&prune_bounds);
        let horizon = selector_cfg.app_min_response_frames;
        let kf_candidates: Vec<usize> = [1, 2, 3, 4, 6, 12]
            .into_iter()
            .filter(|&k| k <= horizon)
            .collect();
        let ours = t_locality_select(&trace, &selector_cfg).len();
        let kf_lower_bound = keyframe_lower_bound(ours, &selector_cfg, trace.len())?;
        let max_state = PlatformState {
            active_cluster: cluster_idx,
            cpu_level: cluster.levels.len() - 1,
            gpu_level: device.gpu_levels.len() - 1,
        };
        let origin_delta_p = power_draw(&device, &max_state, 1.0)? - device.idle_power;
        Ok(Self {
            device,
            cluster_idx,
            predictor,
            workload,
            trace,
            selector_cfg,
            prune_bounds,
            prune_ratios,
            kf_candidates,
            rt_tar_ms,
            alpha,
            penalty_mode,
            hard_penalty: 1.0,
            accuracy: AccuracyModel::default(),
            kf_lower_bound,
            origin_delta_p,
        })
    }

    pub fn cluster(&self) -> &crate::device::CpuCluster {
        &self.device.clusters[self.cluster_idx]
    }

    pub fn platform_state(&self, action: &DeploymentAction) -> PlatformState {
        PlatformState {
            active_cluster: self.cluster_idx,
            cpu_level: action.cpu_level,
            gpu_level: action.gpu_level,
        }
    }

    pub fn cpu_ghz(&self, action: &DeploymentAction) -> f64 {
        self.cluster().levels[action.cpu_level].ghz()
    }

    pub fn gpu_ghz(&self, action: &DeploymentAction) -> f64 {
        self.device.gpu_levels[action.gpu_level].ghz()
    }

    /// Deadline-check latency for an action (the noiseless table prediction).
    pub fn predicted_latency_ms(&self, action: &DeploymentAction) -> Result<f64, ScenarioError> {
        let base = self.workload.lut.latency_at(action.prune_ratio)?;
        Ok(predict(
            base,
            self.cpu_ghz(action),
            self.gpu_ghz(action),
            &self.predictor,
        )?)
    }

    /// Average power above idle while servicing with this action.
    pub fn delta_p(&self, action: &DeploymentAction) -> Result<f64, ScenarioError> {
        let state = self.platform_state(action);
        Ok(power_draw(&self.device, &state, 1.0)? - self.device.idle_power)
    }

    /// All-maxed dense action (the origin configuration).
    pub fn origin_action(&self) -> DeploymentAction {
        DeploymentAction {
            keyframe_offset: 1,
            cpu_level: self.cluster().levels.len() - 1,
            gpu_level: self.device.gpu_levels.len() - 1,
            prune_ratio: self.workload.lut.min_ratio(),
        }
    }

    /// Forces an action into valid table ranges. The optimized prune bounds
    /// constrain the search agents' action space, not baseline strategies, so
    /// the ratio is clamped to the LUT's domain only.
    pub fn clamp_action(&self, mut action: DeploymentAction) -> DeploymentAction {
        let horizon = self.selector_cfg.app_min_response_frames;
        action.keyframe_offset = action.keyframe_offset.clamp(1, horizon);
        action.cpu_level = action.cpu_level.min(self.cluster().levels.len() - 1);
        action.gpu_level = action.gpu_level.min(self.device.gpu_levels.len() - 1);
        action.prune_ratio = action
            .prune_ratio
            .clamp(self.workload.lut.min_ratio(), self.workload.lut.max_ratio());
        action
    }
}

/// What the controller sees at an activation point.
#[derive(Debug, Clone, Copy)]
pub struct Observation {
    pub frame_index: usize,
    /// Similarity of this frame to the current keyframe.
    pub composed_ssim: f64,
    /// Keyframes still waiting or in service.
    pub queue_depth: usize,
    pub frames_since_keyframe: usize,
    pub is_keyframe: bool,
    /// Device-busy fraction of the interval since the previous activation.
    pub busy_fraction: f64,
    pub current_action: DeploymentAction,
}

/// Decides the deployment action at each activation point.
pub trait Controller {
    fn decide(&mut self, obs: &Observation, scenario: &Scenario) -> DeploymentAction;
    /// Called once after the last frame.
    fn episode_end(&mut self, _scenario: &Scenario) {}
}

/// Which frames are keyframes.
#[derive(Debug, Clone)]
pub enum KeyframeRule {
    /// Every frame (origin / Static-1).
    All,
    /// Membership in a precomputed, sorted index set.
    FixedSet(Vec<usize>),
    /// Temporal-locality trigger, or the controller's scheduled offset,
    /// whichever fires first.
    Scheduled,
}

/// Runs one episode: walks the trace, activates the controller on keyframe
/// arrivals and on filtered frames with a nonempty queue, services keyframes
/// FIFO on a single device, and aggregates the metrics.
pub fn run_episode(
    scenario: &Scenario,
    rule: &KeyframeRule,
    controller: &mut dyn Controller,
    noise_bound: f64,
    seed: u64,
) -> Result<(EpisodeMetrics, Vec<ProcessingRecord>), ScenarioError> {
    let mut service = ServiceModel::new(noise_bound, seed);
    let mut selector = TLocalitySelector::new(scenario.selector_cfg.clone());
    let mut records: Vec<ProcessingRecord> = Vec::new();
    let mut busy_until: VecDeque<f64> = VecDeque::new();
    let mut device_free = 0.0_f64;
    let mut scheduled_next = 0_usize;
    let mut last_kf = 0_usize;
    let mut prev_now = 0.0_f64;
    let mut action = scenario.clamp_action(scenario.origin_action());

    for frame in &scenario.trace.frames {
        let idx = frame.index;
        let now = frame.arrival_ms;
        while busy_until.front().is_some_and(|&end| end <= now) {
            busy_until.pop_front();
        }
        let selector_fired = selector.observe(idx, frame.raw_feature);
        let is_kf = match rule {
            KeyframeRule::All => true,
            KeyframeRule::FixedSet(set) => set.binary_search(&idx).is_ok(),
            KeyframeRule::Scheduled => selector_fired || idx >= scheduled_next,
        };
        if is_kf && !selector_fired {
            selector.force_keyframe(idx);
        }
        let depth = busy_until.len();
        if is_kf || depth > 0 {
            let span = now - prev_now;
            let busy_fraction = if span > 0.0 {
                ((device_free - prev_now).clamp(0.0, span)) / span
            } else {
                1.0
            };
            let obs = Observation {
                frame_index: idx,
                composed_ssim: if is_kf {
                    1.0
                } else {
                    selector.composed_similarity()
                },
                queue_depth: depth,
                frames_since_keyframe: idx - last_kf,
                is_keyframe: is_kf,
                busy_fraction,
                current_action: action,
            };
            action = scenario.clamp_action(controller.decide(&obs, scenario));
            prev_now = now;
        }
        if is_kf {
            let start = device_free.max(now);
            let svc = service.service_ms(
                &scenario.workload.lut,
                action.prune_ratio,
                scenario.cpu_ghz(&action),
                scenario.gpu_ghz(&action),
                &scenario.predictor,
            )?;
            let state = scenario.platform_state(&action);
            let p_avg = power_draw(&scenario.device, &state, 1.0)?;
            device_free = start + svc;
            busy_until.push_back(device_free);
            records.push(ProcessingRecord {
                frame_index: idx,
                arrival_ms: now,
                service_start_ms: start,
                service_ms: svc,
                power_w: p_avg,
                is_keyframe: true,
                action: Some(action),
            });
            last_kf = idx;
            scheduled_next = idx + action.keyframe_offset;
        }
    }
    controller.episode_end(scenario);
    let metrics = aggregate(
        &records,
        &scenario.trace,
        scenario.device.idle_power,
        &scenario.workload.lut,
        &scenario.accuracy,
        scenario.kf_lower_bound,
    )?;
    Ok((metrics, records))
}

/// Always returns the same action; used by origin runs and the oracle.
pub struct FixedController(pub DeploymentAction);

impl Controller for FixedController {
    fn decide(&mut self, _obs: &Observation, _scenario: &Scenario) -> DeploymentAction {
        self.0
    }
}

/// Utilization-proportional V/F stepping: raise one level when the device was
/// busy more than 80% of the last interval, lower one when below 50%. The
/// pruning ratio adapts to the levels: the smallest stored ratio whose
/// predicted latency meets the deadline.
pub struct GovernorController {
    cpu_level: usize,
    gpu_level: usize,
}

impl GovernorController {
    pub fn new(scenario: &Scenario) -> Self {
        Self {
            cpu_level: scenario.cluster().levels.len() - 1,
            gpu_level: scenario.device.gpu_levels.len() - 1,
        }
    }
}

impl Controller for GovernorController {
    fn decide(&mut self, obs: &Observation, scenario: &Scenario) -> DeploymentAction {
        let cpu_max = scenario.cluster().levels.len() - 1;
        let gpu_max = scenario.device.gpu_levels.len() - 1;
        if obs.busy_fraction > 0.8 {
            self.cpu_level = (self.cpu_level + 1).min(cpu_max);
            self.gpu_level = (self.gpu_level + 1).min(gpu_max);
        } else if obs.busy_fraction < 0.5 {
            self.cpu_level = self.cpu_level.saturating_sub(1);
            self.gpu_level = self.gpu_level.saturating_sub(1);
        }
        let mut action = DeploymentAction {
            keyframe_offset: 1,
            cpu_level: self.cpu_level,
            gpu_level: self.gpu_level,
            prune_ratio: scenario.workload.lut.max_ratio(),
        };
        for &ratio in scenario.workload.lut.entries().iter().map(|e| &e.ratio) {
            action.prune_ratio = ratio;
            if scenario
                .predicted_latency_ms(&action)
                .is_ok_and(|l| l <= scenario.rt_tar_ms)
            {
                break;
            }
        }
        action
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::default_scenario;

    #[test]
    fn yolo_workload_lands_on_little_cluster() {
        let scn = default_scenario(1, 300);
        assert_eq!(scn.cluster_idx, 0);
        assert!((scn.predictor.vf_c_max_ghz - 1.8).abs() < 1e-12);
        assert!((scn.predictor.gamma - 0.8).abs() < 1e-12);
    }

    #[test]
    fn ssd_workload_escalates_cluster() {
        let scn = crate::testutil::ssd_scenario(0, 300);
        assert_eq!(scn.cluster_idx, 2); // only big holds 3.36 MB
    }

    #[test]
    fn origin_processes_every_frame_without_blocking() {
        let scn = default_scenario(2, 300);
        let mut ctl = FixedController(scn.origin_action());
        let (m, _) = run_episode(&scn, &KeyframeRule::All, &mut ctl, 0.0, 0).unwrap();
        assert_eq!(m.kf_count, 300);
        // service 26.1 ms < 33.3 ms period: nothing blocks
        assert_eq!(m.wp_fraction, 0.0);
        assert_eq!(m.wt_ms, 0.0);
        assert!((m.l_per_frame_ms - 26.1).abs() < 1e-9);
        assert!((m.map_points - 70.2).abs() < 1e-9);
    }

    #[test]
    fn slow_service_blocks_keyframes() {
        let scn = crate::testutil::ssd_scenario(0, 300);
        let mut ctl = FixedController(scn.origin_action());
        let (m, _) = run_episode(&scn, &KeyframeRule::All, &mut ctl, 0.0, 0).unwrap();
        // 62.5 ms service at a 33.3 ms period: almost everything waits
        assert!(m.wp_fraction > 0.9);
        assert!(m.wt_ms > 0.0);
    }

    #[test]
    fn episode_deterministic_under_fixed_seed() {
        let scn = default_scenario(3, 400);
        let mut a = FixedController(scn.origin_action());
        let mut b = FixedController(scn.origin_action());
        let (ma, ra) = run_episode(&scn, &KeyframeRule::All, &mut a, 0.03, 9).unwrap();
        let (mb, rb) = run_episode(&scn, &KeyframeRule::All, &mut b, 0.03, 9).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(ra, rb);
    }

    #[test]
    fn scheduled_rule_covers_jumps_and_stride() {
        let scn = default_scenario(4, 600);
        let action = DeploymentAction {
            keyframe_offset: 12,
            ..scn.origin_action()
        };
        let mut ctl = FixedController(action);
        let (m, records) = run_episode(&scn, &KeyframeRule::Scheduled, &mut ctl, 0.0, 0).unwrap();
        let kf_set: Vec<usize> = records.iter().map(|r| r.frame_index).collect();
        for j in &scn.trace.jump_indices {
            assert!(kf_set.contains(j), "jump {j} not serviced");
        }
        // stride keeps gaps within the horizon
        for w in kf_set.windows(2) {
            assert!(w[1] - w[0] <= 12);
        }
        assert!(m.kf_count >= scn.kf_lower_bound);
        assert!(m.kf_count < 600);
    }

    #[test]
    fn governor_backs_off_when_idle() {
        let scn = default_scenario(5, 600);
        let set = crate::keyframe::static_select(&scn.trace, 0.7);
        let mut ctl = GovernorController::new(&scn);
        let (m, records) =
            run_episode(&scn, &KeyframeRule::FixedSet(set.clone()), &mut ctl, 0.0, 0).unwrap();
        assert_eq!(m.kf_count, set.len());
        // sparse keyframes leave the device mostly idle, so levels drop
        let last = records.last().unwrap().action.unwrap();
        assert!(last.cpu_level < scn.cluster().levels.len() - 1);
    }

    #[test]
    fn fewer_keyframes_cost_less_power_than_origin() {
        let scn = default_scenario(6, 600);
        let mut origin = FixedController(scn.origin_action());
        let (mo, _) = run_episode(&scn, &KeyframeRule::All, &mut origin, 0.0, 0).unwrap();
        let action = DeploymentAction {
            keyframe_offset: 12,
            ..scn.origin_action()
        };
        let mut sparse = FixedController(action);
        let (ms, _) = run_episode(&scn, &KeyframeRule::Scheduled, &mut sparse, 0.0, 0).unwrap();
        assert!(ms.p_per_video_w < mo.p_per_video_w);
    }
}
