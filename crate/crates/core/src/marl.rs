//! Three-agent Q-learning coordinator: a DVFS agent, a keyframe-offset agent,
//! and a pruning agent with shared state and a shared scalar reward.
//!
//! Each agent owns an independent two-layer feed-forward Q-network whose input
//! is the normalized state vector concatenated with a one-hot encoding of the
//! previous joint action; that last-action feedback supplies the recurrence
//! without hidden-state plumbing. Replay buffer and target networks stabilize
//! the otherwise vanilla DQN updates.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::collect::{DeploymentAction, EpisodeMetrics};
use crate::scenario::{
    run_episode, Controller, KeyframeRule, Observation, PenaltyMode, Scenario, ScenarioError,
};

pub const STATE_DIM: usize = 11;

#[derive(Debug, Error)]
pub enum MarlError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("training diverged: non-finite loss at train call {0}")]
    Diverged(usize),
    #[error("checkpoint malformed: {0}")]
    Checkpoint(String),
}

/// Shared-reward scalar. Accuracy minus weighted power, minus a deadline
/// penalty when the predicted latency overshoots the target.
pub fn compute_reward(
    acc_n: f64,
    po_n: f64,
    l_pred_ms: f64,
    rt_tar_ms: f64,
    alpha: f64,
    mode: PenaltyMode,
    hard_penalty: f64,
) -> f64 {
    assert!(rt_tar_ms > 0.0, "rt_tar must be > 0");
    let mut r = acc_n - alpha * po_n;
    if l_pred_ms > rt_tar_ms {
        r -= match mode {
            PenaltyMode::Soft => (l_pred_ms - rt_tar_ms) / rt_tar_ms,
            PenaltyMode::Hard => hard_penalty,
        };
    }
    r
}

/// Reward of a whole episode, on the same scale as the per-decision reward:
/// mAP over 100, power normalized by the origin configuration's dynamic power.
pub fn episode_reward(metrics: &EpisodeMetrics, scenario: &Scenario) -> f64 {
    compute_reward(
        metrics.map_points / 100.0,
        metrics.p_per_video_w / scenario.origin_delta_p,
        metrics.l_per_frame_ms,
        scenario.rt_tar_ms,
        scenario.alpha,
        scenario.penalty_mode,
        scenario.hard_penalty,
    )
}

/// Reward of one coordinator decision. The power term amortizes the keyframe's
/// energy over the frames the decision covers, so it matches the episode-level
/// power normalization when keyframes land every `keyframe_offset` frames.
pub fn action_reward(
    scenario: &Scenario,
    action: &DeploymentAction,
    keyframe_step: bool,
) -> Result<f64, MarlError> {
    let l_pred = scenario.predicted_latency_ms(action)?;
    let acc = if keyframe_step {
        scenario
            .workload
            .lut
            .map_at(action.prune_ratio)
            .map_err(ScenarioError::from)?
            / 100.0
    } else {
        0.0
    };
    let dp = scenario.delta_p(action)?;
    let span_ms = action.keyframe_offset as f64 * scenario.trace.period_ms();
    let po = (dp / scenario.origin_delta_p) * (l_pred / span_ms);
    Ok(compute_reward(
        acc,
        po,
        l_pred,
        scenario.rt_tar_ms,
        scenario.alpha,
        scenario.penalty_mode,
        scenario.hard_penalty,
    ))
}

/// The per-agent discrete action spaces, assembled once per scenario.
#[derive(Debug, Clone)]
pub struct JointSpace {
    /// (cpu_level, gpu_level) pairs of the selected cluster, cpu-major.
    pub dvfs: Vec<(usize, usize)>,
    pub offsets: Vec<usize>,
    pub ratios: Vec<f64>,
}

impl JointSpace {
    pub fn from_scenario(scenario: &Scenario) -> Self {
        let mut dvfs = Vec::new();
        for c in 0..scenario.cluster().levels.len() {
            for g in 0..scenario.device.gpu_levels.len() {
                dvfs.push((c, g));
            }
        }
        Self {
            dvfs,
            offsets: scenario.kf_candidates.clone(),
            ratios: scenario.prune_ratios.clone(),
        }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.dvfs.len(), self.offsets.len(), self.ratios.len()]
    }

    pub fn cardinality(&self) -> usize {
        self.dvfs.len() * self.offsets.len() * self.ratios.len()
    }

    pub fn action(&self, joint: [usize; 3]) -> DeploymentAction {
        let (cpu_level, gpu_level) = self.dvfs[joint[0]];
        DeploymentAction {
            keyframe_offset: self.offsets[joint[1]],
            cpu_level,
            gpu_level,
            prune_ratio: self.ratios[joint[2]],
        }
    }
}

/// Two fully-connected layers with tanh between them. tanh keeps the loss
/// surface smooth, which the finite-difference gradient check relies on.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// hidden x input, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// output x hidden, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Grads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl QNetwork {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Self {
        let scale1 = 1.0 / (input_dim as f64).sqrt();
        let scale2 = 1.0 / (hidden_dim as f64).sqrt();
        let init = |n: usize, s: f64, rng: &mut dyn rand::RngCore| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-s..=s)).collect()
        };
        Self {
            input_dim,
            hidden_dim,
            output_dim,
            w1: init(hidden_dim * input_dim, scale1, rng),
            b1: vec![0.0; hidden_dim],
            w2: init(output_dim * hidden_dim, scale2, rng),
            b2: vec![0.0; output_dim],
        }
    }

    /// Hidden activations and Q-values for one input.
    pub fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        debug_assert_eq!(x.len(), self.input_dim);
        let mut hidden = vec![0.0; self.hidden_dim];
        for h in 0..self.hidden_dim {
            let row = &self.w1[h * self.input_dim..(h + 1) * self.input_dim];
            let pre: f64 = self.b1[h] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            hidden[h] = pre.tanh();
        }
        let mut q = vec![0.0; self.output_dim];
        for o in 0..self.output_dim {
            let row = &self.w2[o * self.hidden_dim..(o + 1) * self.hidden_dim];
            q[o] = self.b2[o] + row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>();
        }
        (hidden, q)
    }

    pub fn q_values(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).1
    }

    /// Mean squared error over `(input, action, target)` samples, with its
    /// analytic gradient.
    pub fn loss_and_grads(&self, batch: &[(Vec<f64>, usize, f64)]) -> (f64, Grads) {
        assert!(!batch.is_empty(), "batch nonempty");
        let mut g = Grads {
            w1: vec![0.0; self.w1.len()],
            b1: vec![0.0; self.b1.len()],
            w2: vec![0.0; self.w2.len()],
            b2: vec![0.0; self.b2.len()],
        };
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for (x, action, target) in batch {
            let (hidden, q) = self.forward(x);
            let err = q[*action] - target;
            loss += err * err / n;
            let dq = 2.0 * err / n;
            let out_row = &self.w2[*action * self.hidden_dim..(*action + 1) * self.hidden_dim];
            g.b2[*action] += dq;
            for h in 0..self.hidden_dim {
                g.w2[*action * self.hidden_dim + h] += dq * hidden[h];
                let dpre = dq * out_row[h] * (1.0 - hidden[h] * hidden[h]);
                g.b1[h] += dpre;
                let row = &mut g.w1[h * self.input_dim..(h + 1) * self.input_dim];
                for (gw, xv) in row.iter_mut().zip(x) {
                    *gw += dpre * xv;
                }
            }
        }
        (loss, g)
    }

    fn params_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// Per-network Adam state.
#[derive(Debug, Clone)]
struct Adam {
    m: [Vec<f64>; 4],
    v: [Vec<f64>; 4],
    t: u64,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(net: &QNetwork, lr: f64) -> Self {
        let zeros = |n: usize| vec![0.0; n];
        Self {
            m: [
                zeros(net.w1.len()),
                zeros(net.b1.len()),
                zeros(net.w2.len()),
                zeros(net.b2.len()),
            ],
            v: [
                zeros(net.w1.len()),
                zeros(net.b1.len()),
                zeros(net.w2.len()),
                zeros(net.b2.len()),
            ],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, net: &mut QNetwork, grads: &Grads) {
        self.t += 1;
        let bc1 = 1.0 - Self::BETA1.powi(self.t as i32);
        let bc2 = 1.0 - Self::BETA2.powi(self.t as i32);
        let grad_vecs = [&grads.w1, &grads.b1, &grads.w2, &grads.b2];
        for (slot, (params, grad)) in net.params_mut().into_iter().zip(grad_vecs).enumerate() {
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            for i in 0..params.len() {
                m[i] = Self::BETA1 * m[i] + (1.0 - Self::BETA1) * grad[i];
                v[i] = Self::BETA2 * v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                params[i] -= self.lr * mh / (vh.sqrt() + Self::EPS);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub online: QNetwork,
    pub target: QNetwork,
    opt: Adam,
}

impl Agent {
    fn new(input_dim: usize, hidden: usize, actions: usize, lr: f64, rng: &mut impl Rng) -> Self {
        let online = QNetwork::new(input_dim, hidden, actions, rng);
        let target = online.clone();
        let opt = Adam::new(&online, lr);
        Self {
            online,
            target,
            opt,
        }
    }

    fn sync_target(&mut self) {
        self.target = self.online.clone();
    }
}

#[derive(Debug, Clone)]
pub struct Hyper {
    pub lr: f64,
    pub discount: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_sync_every: usize,
    pub hidden: usize,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the step budget over which epsilon decays linearly.
    pub eps_decay_fraction: f64,
    /// Multiplier applied to the learning rate after every train call; 1.0
    /// disables decay.
    pub lr_decay: f64,
    /// Train once per this many coordinator activations.
    pub train_every: usize,
    /// Minimum stored transitions before training starts.
    pub warmup_transitions: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            discount: 0.9,
            batch_size: 32,
            replay_capacity: 10_000,
            target_sync_every: 200,
            hidden: 64,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_fraction: 0.6,
            lr_decay: 1.0,
            train_every: 1,
            warmup_transitions: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub input: Vec<f64>,
    pub joint: [usize; 3],
    pub reward: f64,
    pub next_input: Vec<f64>,
    pub done: bool,
}

/// One row of the training curve: logged at every train call.
#[derive(Debug, Clone, Copy)]
pub struct CurveRow {
    pub step: usize,
    pub loss: [f64; 3],
    pub mean_episode_reward: f64,
}

pub fn curve_to_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("step,loss_dvfs,loss_keyframe,loss_prune,mean_episode_reward\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.step, r.loss[0], r.loss[1], r.loss[2], r.mean_episode_reward
        ));
    }
    out
}

/// The three agents plus everything shared between them.
#[derive(Debug, Clone)]
pub struct Coordinator {
    pub space: JointSpace,
    pub hyper: Hyper,
    pub agents: [Agent; 3],
    pub env_steps: usize,
    pub train_calls: usize,
    /// Step count at which epsilon reaches its floor.
    pub eps_horizon: usize,
    replay: VecDeque<Transition>,
    rng: ChaCha8Rng,
}

impl Coordinator {
    pub fn new(scenario: &Scenario, hyper: Hyper, seed: u64) -> Self {
        let space = JointSpace::from_scenario(scenario);
        let sizes = space.sizes();
        let input_dim = STATE_DIM + sizes.iter().sum::<usize>();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents = [
            Agent::new(input_dim, hyper.hidden, sizes[0], hyper.lr, &mut rng),
            Agent::new(input_dim, hyper.hidden, sizes[1], hyper.lr, &mut rng),
            Agent::new(input_dim, hyper.hidden, sizes[2], hyper.lr, &mut rng),
        ];
        Self {
            space,
            hyper: hyper.clone(),
            agents,
            env_steps: 0,
            train_calls: 0,
            eps_horizon: 1,
            replay: VecDeque::with_capacity(hyper.replay_capacity),
            rng,
        }
    }

    pub fn input_dim(&self) -> usize {
        STATE_DIM + self.space.sizes().iter().sum::<usize>()
    }

    /// Normalized state for one activation point.
    pub fn state_vector(&self, obs: &Observation, scenario: &Scenario) -> Vec<f64> {
        let cluster = scenario.cluster();
        let horizon = scenario.selector_cfg.app_min_response_frames as f64;
        let max_cache = scenario
            .device
            .clusters
            .iter()
            .map(|c| c.l2_cache_bytes)
            .max()
            .unwrap_or(1) as f64;
        let cur = &obs.current_action;
        vec![
            obs.composed_ssim,
            (obs.queue_depth as f64 / 10.0).min(1.0),
            (obs.frames_since_keyframe as f64 / horizon).min(1.0),
            scenario.workload.descriptor[0],
            scenario.workload.descriptor[1],
            scenario.workload.descriptor[2],
            scenario.cpu_ghz(cur) / cluster.max_level().ghz(),
            scenario.gpu_ghz(cur) / scenario.device.gpu_levels.last().unwrap().ghz(),
            1.0, // memory bandwidth: single-valued on this device model
            cluster.l2_cache_bytes as f64 / max_cache,
            cur.prune_ratio,
        ]
    }

    /// State ++ one-hot of the previous joint action.
    pub fn network_input(&self, state: &[f64], last_joint: [usize; 3]) -> Vec<f64> {
        let sizes = self.space.sizes();
        let mut input = state.to_vec();
        for (slot, &size) in sizes.iter().enumerate() {
            let mut one_hot = vec![0.0; size];
            one_hot[last_joint[slot]] = 1.0;
            input.extend(one_hot);
        }
        input
    }

    pub fn epsilon(&self) -> f64 {
        let h = &self.hyper;
        let horizon = (self.eps_horizon as f64 * h.eps_decay_fraction).max(1.0);
        let t = (self.env_steps as f64 / horizon).min(1.0);
        h.eps_start + (h.eps_end - h.eps_start) * t
    }

    /// Epsilon-greedy pick, independently per agent.
    pub fn select_actions(&mut self, input: &[f64], epsilon: f64) -> [usize; 3] {
        let mut joint = [0usize; 3];
        for (slot, agent) in self.agents.iter().enumerate() {
            let n = agent.online.output_dim;
            joint[slot] = if self.rng.gen::<f64>() < epsilon {
                self.rng.gen_range(0..n)
            } else {
                argmax(&agent.online.q_values(input))
            };
        }
        joint
    }

    pub fn push_transition(&mut self, t: Transition) {
        if self.replay.len() == self.hyper.replay_capacity {
            self.replay.pop_front();
        }
        self.replay.push_back(t);
    }

    pub fn replay_len(&self) -> usize {
        self.replay.len()
    }

    /// One TD update per agent on a shared minibatch. Each agent regresses its
    /// own action component toward `r + discount * max Q_target(s')`.
    pub fn train_step(&mut self) -> Result<[f64; 3], MarlError> {
        let n = self.replay.len().min(self.hyper.batch_size);
        assert!(n > 0, "replay empty");
        let indices: Vec<usize> = (0..n).map(|_| self.rng.gen_range(0..self.replay.len())).collect();
        let mut losses = [0.0; 3];
        for slot in 0..3 {
            let agent = &self.agents[slot];
            let batch: Vec<(Vec<f64>, usize, f64)> = indices
                .iter()
                .map(|&i| {
                    let t = &self.replay[i];
                    let future = if t.done {
                        0.0
                    } else {
                        agent
                            .target
                            .q_values(&t.next_input)
                            .into_iter()
                            .fold(f64::NEG_INFINITY, f64::max)
                    };
                    (
                        t.input.clone(),
                        t.joint[slot],
                        t.reward + self.hyper.discount * future,
                    )
                })
                .collect();
            let (loss, grads) = agent.online.loss_and_grads(&batch);
            if !loss.is_finite() {
                return Err(MarlError::Diverged(self.train_calls));
            }
            let agent = &mut self.agents[slot];
            agent.opt.step(&mut agent.online, &grads);
            agent.opt.lr *= self.hyper.lr_decay;
            losses[slot] = loss;
        }
        self.train_calls += 1;
        if self.train_calls % self.hyper.target_sync_every == 0 {
            for agent in &mut self.agents {
                agent.sync_target();
            }
        }
        Ok(losses)
    }

    /// Greedy joint action at an episode-initial state: keyframe observation,
    /// empty queue, origin action as both current and previous.
    pub fn greedy_initial_action(&self, scenario: &Scenario) -> DeploymentAction {
        let obs = Observation {
            frame_index: 0,
            composed_ssim: 1.0,
            queue_depth: 0,
            frames_since_keyframe: 0,
            is_keyframe: true,
            busy_fraction: 0.0,
            current_action: scenario.clamp_action(scenario.origin_action()),
        };
        let state = self.state_vector(&obs, scenario);
        let input = self.network_input(&state, [0, 0, 0]);
        let joint = [
            argmax(&self.agents[0].online.q_values(&input)),
            argmax(&self.agents[1].online.q_values(&input)),
            argmax(&self.agents[2].online.q_values(&input)),
        ];
        self.space.action(joint)
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Drives the coordinator from inside the episode loop. Each activation closes
/// the previous decision's transition, optionally trains, then picks the next
/// joint action.
pub struct MarlController<'a> {
    pub coord: &'a mut Coordinator,
    pub mode: Mode,
    pub curve: Vec<CurveRow>,
    pub error: Option<MarlError>,
    prev: Option<(Vec<f64>, [usize; 3], f64)>,
    last_joint: [usize; 3],
    reward_sum: f64,
    reward_count: usize,
}

impl<'a> MarlController<'a> {
    pub fn new(coord: &'a mut Coordinator, mode: Mode) -> Self {
        Self {
            coord,
            mode,
            curve: Vec::new(),
            error: None,
            prev: None,
            last_joint: [0, 0, 0],
            reward_sum: 0.0,
            reward_count: 0,
        }
    }

    pub fn mean_reward(&self) -> f64 {
        if self.reward_count == 0 {
            0.0
        } else {
            self.reward_sum / self.reward_count as f64
        }
    }

    fn close_previous(&mut self, next_input: &[f64], done: bool) {
        if let Some((input, joint, reward)) = self.prev.take() {
            if self.mode == Mode::Train {
                self.coord.push_transition(Transition {
                    input,
                    joint,
                    reward,
                    next_input: next_input.to_vec(),
                    done,
                });
                let ready = self.coord.replay_len() >= self.coord.hyper.warmup_transitions;
                if ready && self.coord.env_steps % self.coord.hyper.train_every == 0 {
                    match self.coord.train_step() {
                        Ok(loss) => self.curve.push(CurveRow {
                            step: self.coord.env_steps,
                            loss,
                            mean_episode_reward: self.mean_reward(),
                        }),
                        Err(e) => self.error = Some(e),
                    }
                }
            }
        }
    }
}

impl Controller for MarlController<'_> {
    fn decide(&mut self, obs: &Observation, scenario: &Scenario) -> DeploymentAction {
        let state = self.coord.state_vector(obs, scenario);
        let input = self.coord.network_input(&state, self.last_joint);
        self.close_previous(&input, false);
        if self.error.is_some() {
            return scenario.clamp_action(scenario.origin_action());
        }
        let epsilon = match self.mode {
            Mode::Train => self.coord.epsilon(),
            Mode::Eval => 0.0,
        };
        let joint = self.coord.select_actions(&input, epsilon);
        let action = self.coord.space.action(joint);
        let reward = match action_reward(scenario, &action, obs.is_keyframe) {
            Ok(r) => r,
            Err(e) => {
                self.error = Some(e);
                return scenario.clamp_action(scenario.origin_action());
            }
        };
        self.reward_sum += reward;
        self.reward_count += 1;
        self.prev = Some((input, joint, reward));
        self.last_joint = joint;
        self.coord.env_steps += 1;
        action
    }

    fn episode_end(&mut self, _scenario: &Scenario) {
        if let Some((input, _, _)) = &self.prev {
            let terminal = input.clone();
            self.close_previous(&terminal, true);
        }
    }
}

/// Trains for (at least) `step_budget` coordinator activations by looping
/// episodes over the scenario's trace. Returns the training curve; the
/// coordinator is updated in place.
pub fn train(
    coord: &mut Coordinator,
    scenario: &Scenario,
    step_budget: usize,
    noise_bound: f64,
    seed: u64,
) -> Result<Vec<CurveRow>, MarlError> {
    coord.eps_horizon = coord.env_steps + step_budget.max(1);
    let mut curve = Vec::new();
    let mut episode = 0u64;
    let target = coord.env_steps + step_budget;
    while coord.env_steps < target {
        let mut ctl = MarlController::new(coord, Mode::Train);
        run_episode(
            scenario,
            &KeyframeRule::Scheduled,
            &mut ctl,
            noise_bound,
            seed.wrapping_add(episode),
        )?;
        let err = ctl.error.take();
        curve.extend(ctl.curve.drain(..));
        if let Some(e) = err {
            return Err(e);
        }
        episode += 1;
    }
    Ok(curve)
}

/// One greedy evaluation episode with frozen weights.
pub fn evaluate(
    coord: &mut Coordinator,
    scenario: &Scenario,
    noise_bound: f64,
    seed: u64,
) -> Result<EpisodeMetrics, MarlError> {
    let steps_before = coord.env_steps;
    let mut ctl = MarlController::new(coord, Mode::Eval);
    let (metrics, _) = run_episode(
        scenario,
        &KeyframeRule::Scheduled,
        &mut ctl,
        noise_bound,
        seed,
    )?;
    if let Some(e) = ctl.error {
        return Err(e);
    }
    coord.env_steps = steps_before; // eval must not advance the schedule
    Ok(metrics)
}

/// Plain-text checkpoint: a version line, step counters, then per agent the
/// layer shapes followed by row-major values.
pub fn checkpoint_to_text(coord: &Coordinator) -> String {
    let mut out = String::from("edgeod-marl-checkpoint v1\n");
    out.push_str(&format!("steps {} {}\n", coord.env_steps, coord.train_calls));
    for (name, agent) in ["dvfs", "keyframe", "prune"].iter().zip(&coord.agents) {
        let n = &agent.online;
        out.push_str(&format!(
            "agent {} {} {} {}\n",
            name, n.input_dim, n.hidden_dim, n.output_dim
        ));
        for (tag, vals) in [("w1", &n.w1), ("b1", &n.b1), ("w2", &n.w2), ("b2", &n.b2)] {
            out.push_str(tag);
            for v in vals {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
    }
    out
}

/// Restores weights into a coordinator built for the same scenario; target
/// networks are set equal to the restored online networks.
pub fn checkpoint_from_text(coord: &mut Coordinator, text: &str) -> Result<(), MarlError> {
    let bad = |msg: &str| MarlError::Checkpoint(msg.to_string());
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    if lines.next() != Some("edgeod-marl-checkpoint v1") {
        return Err(bad("missing or unsupported version header"));
    }
    let steps_line = lines.next().ok_or_else(|| bad("missing steps line"))?;
    let parts: Vec<&str> = steps_line.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "steps" {
        return Err(bad("malformed steps line"));
    }
    let env_steps: usize = parts[1].parse().map_err(|_| bad("bad env step count"))?;
    let train_calls: usize = parts[2].parse().map_err(|_| bad("bad train call count"))?;
    for (name, agent) in ["dvfs", "keyframe", "prune"].iter().zip(&mut coord.agents) {
        let header = lines.next().ok_or_else(|| bad("missing agent header"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 5 || h[0] != "agent" || h[1] != *name {
            return Err(bad(&format!("expected header for agent {name}")));
        }
        let dims: Vec<usize> = h[2..]
            .iter()
            .map(|s| s.parse().map_err(|_| bad("bad dimension")))
            .collect::<Result<_, _>>()?;
        let n = &mut agent.online;
        if dims != [n.input_dim, n.hidden_dim, n.output_dim] {
            return Err(bad(&format!(
                "agent {name} shape {:?} does not match scenario {:?}",
                dims,
                [n.input_dim, n.hidden_dim, n.output_dim]
            )));
        }
        for (tag, vals) in [
            ("w1", &mut n.w1),
            ("b1", &mut n.b1),
            ("w2", &mut n.w2),
            ("b2", &mut n.b2),
        ] {
            let line = lines.next().ok_or_else(|| bad("missing tensor line"))?;
            let mut fields = line.split_whitespace();
            if fields.next() != Some(tag) {
                return Err(bad(&format!("expected tensor {tag} for agent {name}")));
            }
            let parsed: Vec<f64> = fields
                .map(|s| {
                    s.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| bad("non-finite or malformed weight"))
                })
                .collect::<Result<_, _>>()?;
            if parsed.len() != vals.len() {
                return Err(bad(&format!(
                    "tensor {tag} for agent {name} has {} values, expected {}",
                    parsed.len(),
                    vals.len()
                )));
            }
            *vals = parsed;
        }
        agent.sync_target();
    }
    coord.env_steps = env_steps;
    coord.train_calls = train_calls;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::default_scenario;

    #[test]
    fn reward_examples() {
        let r = compute_reward(0.70, 0.10, 30.0, 33.0, 1.0, PenaltyMode::Soft, 1.0);
        assert!((r - 0.60).abs() < 1e-12);
        let r = compute_reward(0.70, 0.10, 39.6, 33.0, 1.0, PenaltyMode::Soft, 1.0);
        assert!((r - 0.40).abs() < 1e-12);
        let r = compute_reward(0.0, 0.10, 30.0, 33.0, 1.0, PenaltyMode::Soft, 1.0);
        assert!((r + 0.10).abs() < 1e-12);
    }

    #[test]
    fn reward_continuous_at_deadline() {
        let below = compute_reward(0.7, 0.1, 33.0 - 1e-9, 33.0, 1.0, PenaltyMode::Soft, 1.0);
        let above = compute_reward(0.7, 0.1, 33.0 + 1e-9, 33.0, 1.0, PenaltyMode::Soft, 1.0);
        assert!((below - above).abs() < 1e-9);
        // hard mode is deliberately discontinuous
        let hard = compute_reward(0.7, 0.1, 33.0 + 1e-9, 33.0, 1.0, PenaltyMode::Hard, 1.0);
        assert!((below - hard - 1.0).abs() < 1e-6);
    }

    #[test]
    fn joint_space_from_default_scenario() {
        let scn = default_scenario(1, 300);
        let space = JointSpace::from_scenario(&scn);
        assert_eq!(space.sizes(), [13 * 6, 6, 5]);
        let a = space.action([0, 5, 0]);
        assert_eq!(a.cpu_level, 0);
        assert_eq!(a.gpu_level, 0);
        assert_eq!(a.keyframe_offset, 12);
        assert_eq!(a.prune_ratio, 0.3);
    }

    fn small_net(seed: u64, input: usize, hidden: usize, out: usize) -> QNetwork {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        QNetwork::new(input, hidden, out, &mut rng)
    }

    #[test]
    fn gradient_check_against_finite_differences() {
        let h_step = 1e-5;
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let net = small_net(seed, 4, 5, 3);
            let batch: Vec<(Vec<f64>, usize, f64)> = (0..4)
                .map(|_| {
                    (
                        (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                        rng.gen_range(0..3),
                        rng.gen_range(-1.0..1.0),
                    )
                })
                .collect();
            let (_, analytic) = net.loss_and_grads(&batch);
            let flat_analytic: Vec<f64> = [&analytic.w1, &analytic.b1, &analytic.w2, &analytic.b2]
                .iter()
                .flat_map(|v| v.iter().copied())
                .collect();
            let mut max_dev: f64 = 0.0;
            let mut flat_idx = 0;
            for slot in 0..4 {
                let len = [
                    net.w1.len(),
                    net.b1.len(),
                    net.w2.len(),
                    net.b2.len(),
                ][slot];
                for i in 0..len {
                    let mut plus = net.clone();
                    plus.params_mut()[slot][i] += h_step;
                    let mut minus = net.clone();
                    minus.params_mut()[slot][i] -= h_step;
                    let numeric =
                        (plus.loss_and_grads(&batch).0 - minus.loss_and_grads(&batch).0)
                            / (2.0 * h_step);
                    let a = flat_analytic[flat_idx];
                    let dev = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
                    max_dev = max_dev.max(dev);
                    flat_idx += 1;
                }
            }
            assert!(max_dev < 1e-4, "seed {seed}: max deviation {max_dev}");
        }
    }

    #[test]
    fn bandit_fixed_point() {
        // discount 0, one repeated transition: Q(s, a) -> r
        let scn = default_scenario(2, 120);
        let hyper = Hyper {
            discount: 0.0,
            warmup_transitions: 1,
            ..Hyper::default()
        };
        let mut coord = Coordinator::new(&scn, hyper, 7);
        let input = vec![0.5; coord.input_dim()];
        coord.push_transition(Transition {
            input: input.clone(),
            joint: [3, 1, 2],
            reward: 0.42,
            next_input: input.clone(),
            done: false,
        });
        for _ in 0..3000 {
            coord.train_step().unwrap();
        }
        let q = coord.agents[0].online.q_values(&input);
        assert!((q[3] - 0.42).abs() < 1e-3, "Q = {}", q[3]);
        let q = coord.agents[2].online.q_values(&input);
        assert!((q[2] - 0.42).abs() < 1e-3);
    }

    #[test]
    fn target_sync_copies_online_weights() {
        let scn = default_scenario(3, 120);
        let hyper = Hyper {
            target_sync_every: 5,
            warmup_transitions: 1,
            ..Hyper::default()
        };
        let mut coord = Coordinator::new(&scn, hyper, 1);
        let input = vec![0.1; coord.input_dim()];
        coord.push_transition(Transition {
            input: input.clone(),
            joint: [0, 0, 0],
            reward: 1.0,
            next_input: input,
            done: true,
        });
        for _ in 0..4 {
            coord.train_step().unwrap();
        }
        assert_ne!(coord.agents[0].online, coord.agents[0].target);
        coord.train_step().unwrap();
        assert_eq!(coord.agents[0].online, coord.agents[0].target);
    }

    #[test]
    fn epsilon_extremes() {
        let scn = default_scenario(4, 120);
        let mut coord = Coordinator::new(&scn, Hyper::default(), 5);
        let input = vec![0.3; coord.input_dim()];
        // epsilon 0: always the argmax, stable across calls
        let first = coord.select_actions(&input, 0.0);
        for _ in 0..20 {
            assert_eq!(coord.select_actions(&input, 0.0), first);
        }
        // epsilon 1: uniform per agent within 3 sigma over 10^4 draws
        let n_draws = 10_000;
        let sizes = coord.space.sizes();
        let mut counts = vec![vec![0usize; sizes[0]], vec![0; sizes[1]], vec![0; sizes[2]]];
        for _ in 0..n_draws {
            let j = coord.select_actions(&input, 1.0);
            for slot in 0..3 {
                counts[slot][j[slot]] += 1;
            }
        }
        for slot in 0..3 {
            let p = 1.0 / sizes[slot] as f64;
            let sigma = (n_draws as f64 * p * (1.0 - p)).sqrt();
            for &c in &counts[slot] {
                let dev = (c as f64 - n_draws as f64 * p).abs();
                assert!(dev <= 3.0 * sigma, "slot {slot}: count {c} off uniform");
            }
        }
    }

    #[test]
    fn greedy_invariant_under_constant_shift() {
        let scn = default_scenario(5, 120);
        let mut coord = Coordinator::new(&scn, Hyper::default(), 9);
        let input = vec![0.2; coord.input_dim()];
        let before = coord.select_actions(&input, 0.0);
        for i in 0..coord.agents[1].online.b2.len() {
            coord.agents[1].online.b2[i] += 5.0;
        }
        let after = coord.select_actions(&input, 0.0);
        assert_eq!(before, after);
    }

    #[test]
    fn eval_episode_deterministic() {
        let scn = default_scenario(6, 300);
        let mut coord = Coordinator::new(&scn, Hyper::default(), 11);
        let a = evaluate(&mut coord, &scn, 0.0, 3).unwrap();
        let b = evaluate(&mut coord, &scn, 0.0, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_produces_curve_and_stays_finite() {
        let scn = default_scenario(7, 200);
        let hyper = Hyper {
            warmup_transitions: 16,
            ..Hyper::default()
        };
        let mut coord = Coordinator::new(&scn, hyper, 13);
        let curve = train(&mut coord, &scn, 300, 0.0, 21).unwrap();
        assert!(!curve.is_empty());
        assert!(curve.iter().all(|r| r.loss.iter().all(|l| l.is_finite())));
        assert!(coord.env_steps >= 300);
    }

    #[test]
    fn checkpoint_round_trips() {
        let scn = default_scenario(8, 200);
        let mut coord = Coordinator::new(&scn, Hyper::default(), 17);
        train(&mut coord, &scn, 100, 0.0, 5).unwrap();
        let text = checkpoint_to_text(&coord);
        let mut restored = Coordinator::new(&scn, Hyper::default(), 999);
        checkpoint_from_text(&mut restored, &text).unwrap();
        assert_eq!(restored.env_steps, coord.env_steps);
        for slot in 0..3 {
            assert_eq!(restored.agents[slot].online, coord.agents[slot].online);
            assert_eq!(restored.agents[slot].target, restored.agents[slot].online);
        }
        let a = evaluate(&mut coord, &scn, 0.0, 2).unwrap();
        let b = evaluate(&mut restored, &scn, 0.0, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        let scn = default_scenario(9, 120);
        let mut coord = Coordinator::new(&scn, Hyper::default(), 1);
        assert!(checkpoint_from_text(&mut coord, "nonsense").is_err());
        let mut text = checkpoint_to_text(&coord);
        text = text.replacen("agent dvfs", "agent bogus", 1);
        assert!(checkpoint_from_text(&mut coord, &text).is_err());
        let truncated: String = checkpoint_to_text(&coord)
            .lines()
            .take(4)
            .collect::<Vec<_>>()
            .join("\n");
        assert!(checkpoint_from_text(&mut coord, &truncated).is_err());
    }
}
