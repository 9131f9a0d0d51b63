//! Brute-force ground truth over small deployment spaces: every joint action
//! inside the optimized bounds is run through a noiseless episode, then scored
//! and Pareto-filtered. The coordinator's quality is measured against this.

use thiserror::Error;

use crate::collect::DeploymentAction;
use crate::marl::{episode_reward, JointSpace};
use crate::scenario::{run_episode, FixedController, KeyframeRule, Scenario, ScenarioError};

pub const DEFAULT_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidatePoint {
    pub action: DeploymentAction,
    pub map_points: f64,
    pub p_per_video_w: f64,
    pub l_per_frame_ms: f64,
    pub reward: f64,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("joint space has {cardinality} actions, above the cap of {cap}")]
    CapExceeded { cardinality: usize, cap: usize },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("no candidate points")]
    Empty,
}

/// Evaluates every joint action deterministically (noise off), in action-index
/// order: DVFS-major, then offset, then ratio.
pub fn enumerate(scenario: &Scenario, cap: usize) -> Result<Vec<CandidatePoint>, OracleError> {
    let space = JointSpace::from_scenario(scenario);
    let cardinality = space.cardinality();
    if cardinality > cap {
        return Err(OracleError::CapExceeded { cardinality, cap });
    }
    let sizes = space.sizes();
    let mut points = Vec::with_capacity(cardinality);
    for d in 0..sizes[0] {
        for k in 0..sizes[1] {
            for p in 0..sizes[2] {
                let action = space.action([d, k, p]);
                let mut ctl = FixedController(action);
                let (metrics, _) =
                    run_episode(scenario, &KeyframeRule::Scheduled, &mut ctl, 0.0, 0)?;
                points.push(CandidatePoint {
                    action,
                    map_points: metrics.map_points,
                    p_per_video_w: metrics.p_per_video_w,
                    l_per_frame_ms: metrics.l_per_frame_ms,
                    reward: episode_reward(&metrics, scenario),
                });
            }
        }
    }
    Ok(points)
}

/// Scores one action on the same noiseless footing as `enumerate`.
pub fn evaluate_action(
    scenario: &Scenario,
    action: DeploymentAction,
) -> Result<CandidatePoint, OracleError> {
    let mut ctl = FixedController(action);
    let (metrics, _) = run_episode(scenario, &KeyframeRule::Scheduled, &mut ctl, 0.0, 0)?;
    Ok(CandidatePoint {
        action,
        map_points: metrics.map_points,
        p_per_video_w: metrics.p_per_video_w,
        l_per_frame_ms: metrics.l_per_frame_ms,
        reward: episode_reward(&metrics, scenario),
    })
}

/// `p` dominates `q`: at least as accurate, at most as power-hungry, at most
/// as slow, strictly better somewhere.
pub fn dominates(p: &CandidatePoint, q: &CandidatePoint) -> bool {
    let ge = p.map_points >= q.map_points
        && p.p_per_video_w <= q.p_per_video_w
        && p.l_per_frame_ms <= q.l_per_frame_ms;
    let strict = p.map_points > q.map_points
        || p.p_per_video_w < q.p_per_video_w
        || p.l_per_frame_ms < q.l_per_frame_ms;
    ge && strict
}

/// Indices of the non-dominated points, by pairwise check.
pub fn pareto_front(points: &[CandidatePoint]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| !points.iter().any(|q| dominates(q, &points[i])))
        .collect()
}

/// Index of the reward argmax; ties broken by lower power, then lower latency.
pub fn best_reward(points: &[CandidatePoint]) -> Result<usize, OracleError> {
    if points.is_empty() {
        return Err(OracleError::Empty);
    }
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        let b = &points[best];
        let better = p.reward > b.reward
            || (p.reward == b.reward
                && (p.p_per_video_w < b.p_per_video_w
                    || (p.p_per_video_w == b.p_per_video_w
                        && p.l_per_frame_ms < b.l_per_frame_ms)));
        if better {
            best = i;
        }
    }
    Ok(best)
}

/// One line per candidate: action fields, the three metrics, reward, and
/// whether the point sits on the Pareto front.
pub fn front_csv(points: &[CandidatePoint], front: &[usize]) -> String {
    let mut out = String::from(
        "cpu_level,gpu_level,keyframe_offset,prune_ratio,map,p_per_video_w,l_per_frame_ms,reward,on_front\n",
    );
    for (i, p) in points.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.action.cpu_level,
            p.action.gpu_level,
            p.action.keyframe_offset,
            p.action.prune_ratio,
            p.map_points,
            p.p_per_video_w,
            p.l_per_frame_ms,
            p.reward,
            front.binary_search(&i).is_ok()
        ));
    }
    out
}
