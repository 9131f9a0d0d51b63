//! C ABI for the deployment controller: an opaque streaming session that
//! consumes per-frame similarity features and returns joint deployment
//! decisions. All functions return a status code; the last error message is
//! retrievable per session.

use std::ffi::{c_char, CString};
use std::ptr;

use edgeod::collect::DeploymentAction;
use edgeod::device::load_device_spec;
use edgeod::keyframe::{SelectorConfig, TLocalitySelector};
use edgeod::marl::{checkpoint_from_text, Coordinator, Hyper, Mode};
use edgeod::prune::PruningLut;
use edgeod::scenario::{Observation, PenaltyMode, Scenario, Workload};
use edgeod::trace::{generate_trace, TraceGenParams};

/// Status codes returned by every API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeodStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    RuntimeError = 4,
}

/// One joint deployment decision for the frame just pushed.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct EdgeodDecision {
    /// 1 when the pushed frame is a keyframe (must be processed), else 0.
    pub is_keyframe: u8,
    /// Frames until the next scheduled keyframe.
    pub keyframe_offset: usize,
    pub cpu_level: usize,
    pub gpu_level: usize,
    pub prune_ratio: f64,
    /// Predicted service latency of the active configuration, in ms.
    pub predicted_latency_ms: f64,
}

/// Opaque streaming session. Create with `edgeod_session_new`, destroy with
/// `edgeod_session_free`.
pub struct EdgeodSession {
    scenario: Scenario,
    coordinator: Option<Coordinator>,
    selector: TLocalitySelector,
    frame_index: usize,
    last_keyframe: usize,
    scheduled_next: usize,
    action: DeploymentAction,
    last_error: CString,
    _mode: Mode,
}

impl EdgeodSession {
    fn set_error(&mut self, msg: &str) {
        self.last_error = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    }
}

fn read_str<'a>(ptr: *const c_char) -> Option<&'a str> {
    if ptr.is_null() {
        return None;
    }
    unsafe { std::ffi::CStr::from_ptr(ptr) }.to_str().ok()
}

/// Creates a session from a device spec (TOML text), a pruning LUT (CSV text),
/// and the workload's largest layer footprint. Pass null for `device_toml` or
/// `lut_csv` to use the bundled defaults.
///
/// # Safety
/// `out_session` must be a valid pointer; string arguments must be
/// NUL-terminated when non-null.
#[no_mangle]
pub unsafe extern "C" fn edgeod_session_new(
    device_toml: *const c_char,
    lut_csv: *const c_char,
    max_layer_bytes: u64,
    rt_tar_ms: f64,
    alpha: f64,
    out_session: *mut *mut EdgeodSession,
) -> EdgeodStatus {
    if out_session.is_null() {
        return EdgeodStatus::NullPointer;
    }
    *out_session = ptr::null_mut();
    let device = if device_toml.is_null() {
        edgeod::device::oneplus8t()
    } else {
        let Some(text) = read_str(device_toml) else {
            return EdgeodStatus::InvalidArgument;
        };
        match load_device_spec(text) {
            Ok(d) => d,
            Err(_) => return EdgeodStatus::ParseError,
        }
    };
    let workload = if lut_csv.is_null() {
        edgeod::scenario::yolo_like_workload()
    } else {
        let Some(text) = read_str(lut_csv) else {
            return EdgeodStatus::InvalidArgument;
        };
        match PruningLut::from_csv(text) {
            Ok(lut) => Workload {
                name: "custom".into(),
                lut,
                max_layer_bytes,
                descriptor: [0.5, 0.5, 0.5],
            },
            Err(_) => return EdgeodStatus::ParseError,
        }
    };
    if rt_tar_ms <= 0.0 || !rt_tar_ms.is_finite() || !alpha.is_finite() {
        return EdgeodStatus::InvalidArgument;
    }
    // calibration trace: fixes the keyframe lower bound and reward scale; the
    // streamed frames themselves arrive through edgeod_session_push_frame
    let trace = match generate_trace(&TraceGenParams::default(), 30.0, 4000.0) {
        Ok(t) => t,
        Err(_) => return EdgeodStatus::RuntimeError,
    };
    let cfg = SelectorConfig::default();
    let scenario = match Scenario::build(
        device,
        workload,
        trace,
        cfg.clone(),
        rt_tar_ms,
        alpha,
        PenaltyMode::Soft,
        5.0,
    ) {
        Ok(s) => s,
        Err(_) => return EdgeodStatus::InvalidArgument,
    };
    let action = scenario.clamp_action(scenario.origin_action());
    let session = Box::new(EdgeodSession {
        scenario,
        coordinator: None,
        selector: TLocalitySelector::new(cfg),
        frame_index: 0,
        last_keyframe: 0,
        scheduled_next: 0,
        action,
        last_error: CString::default(),
        _mode: Mode::Eval,
    });
    *out_session = Box::into_raw(session);
    EdgeodStatus::Ok
}

/// Loads trained coordinator weights (checkpoint text). Until a checkpoint is
/// loaded the session decides with the all-maxed dense configuration.
///
/// # Safety
/// `session` must come from `edgeod_session_new`; `checkpoint_text` must be
/// NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn edgeod_session_load_checkpoint(
    session: *mut EdgeodSession,
    checkpoint_text: *const c_char,
) -> EdgeodStatus {
    let Some(session) = session.as_mut() else {
        return EdgeodStatus::NullPointer;
    };
    let Some(text) = read_str(checkpoint_text) else {
        session.set_error("checkpoint text is null or not UTF-8");
        return EdgeodStatus::InvalidArgument;
    };
    let mut coord = Coordinator::new(&session.scenario, Hyper::default(), 0);
    match checkpoint_from_text(&mut coord, text) {
        Ok(()) => {
            session.coordinator = Some(coord);
            EdgeodStatus::Ok
        }
        Err(e) => {
            session.set_error(&e.to_string());
            EdgeodStatus::ParseError
        }
    }
}

/// Pushes the next frame's similarity feature (to its predecessor, in [0, 1])
/// and writes the resulting decision.
///
/// # Safety
/// `session` must come from `edgeod_session_new`; `out_decision` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn edgeod_session_push_frame(
    session: *mut EdgeodSession,
    similarity: f64,
    out_decision: *mut EdgeodDecision,
) -> EdgeodStatus {
    let Some(session) = session.as_mut() else {
        return EdgeodStatus::NullPointer;
    };
    if out_decision.is_null() {
        session.set_error("out_decision is null");
        return EdgeodStatus::NullPointer;
    }
    if !(0.0..=1.0).contains(&similarity) {
        session.set_error("similarity outside [0, 1]");
        return EdgeodStatus::InvalidArgument;
    }
    let idx = session.frame_index;
    session.frame_index += 1;
    let fired = session.selector.observe(idx, similarity);
    let is_kf = fired || idx >= session.scheduled_next;
    if is_kf && !fired {
        session.selector.force_keyframe(idx);
    }
    if is_kf {
        let obs = Observation {
            frame_index: idx,
            composed_ssim: 1.0,
            queue_depth: 0,
            frames_since_keyframe: idx - session.last_keyframe,
            is_keyframe: true,
            busy_fraction: 0.0,
            current_action: session.action,
        };
        let next = match &session.coordinator {
            Some(coord) => {
                let state = coord.state_vector(&obs, &session.scenario);
                let input = coord.network_input(&state, [0, 0, 0]);
                let joint = [
                    greedy(&coord.agents[0].online.q_values(&input)),
                    greedy(&coord.agents[1].online.q_values(&input)),
                    greedy(&coord.agents[2].online.q_values(&input)),
                ];
                coord.space.action(joint)
            }
            None => session.scenario.origin_action(),
        };
        session.action = session.scenario.clamp_action(next);
        session.last_keyframe = idx;
        session.scheduled_next = idx + session.action.keyframe_offset;
    }
    let predicted = match session.scenario.predicted_latency_ms(&session.action) {
        Ok(l) => l,
        Err(e) => {
            session.set_error(&e.to_string());
            return EdgeodStatus::RuntimeError;
        }
    };
    *out_decision = EdgeodDecision {
        is_keyframe: is_kf as u8,
        keyframe_offset: session.action.keyframe_offset,
        cpu_level: session.action.cpu_level,
        gpu_level: session.action.gpu_level,
        prune_ratio: session.action.prune_ratio,
        predicted_latency_ms: predicted,
    };
    EdgeodStatus::Ok
}

/// Last error message of this session; the pointer stays valid until the next
/// call on the same session. Empty string when no error was recorded.
///
/// # Safety
/// `session` must come from `edgeod_session_new`.
#[no_mangle]
pub unsafe extern "C" fn edgeod_session_last_error(
    session: *const EdgeodSession,
) -> *const c_char {
    match session.as_ref() {
        Some(s) => s.last_error.as_ptr(),
        None => ptr::null(),
    }
}

/// Destroys a session. Passing null is a no-op.
///
/// # Safety
/// `session` must come from `edgeod_session_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn edgeod_session_free(session: *mut EdgeodSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

fn greedy(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
