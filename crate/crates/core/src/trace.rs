//! Frame traces and the arrival queue.
//!
//! A trace stores, per frame, the feature similarity to its *immediately
//! preceding* frame; similarity to the current keyframe is composed
//! multiplicatively by the selector, so one trace serves any keyframe choice.
//! The synthetic generator produces the piecewise-linear-decay-with-jumps
//! pattern seen in real dashcam similarity sequences: within a segment the
//! similarity to the segment's first frame declines linearly, and at a jump
//! event it drops discontinuously below the local trend.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::collect::ProcessingRecord;

/// Similarity floor for generated levels; keeps per-frame ratios well defined.
const LEVEL_FLOOR: f64 = 0.05;
/// Waits below this are treated as "served instantly".
pub const WAIT_EPS_MS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub arrival_ms: f64,
    /// Feature similarity to the immediately preceding frame, in [0, 1].
    pub raw_feature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrace {
    pub frames: Vec<Frame>,
    pub fps: f64,
    pub duration_ms: f64,
    /// Indices where the generator injected a similarity jump. Empty for
    /// file-loaded traces; generator metadata only, not serialized.
    pub jump_indices: Vec<usize>,
}

impl FrameTrace {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Inter-arrival period in ms.
    pub fn period_ms(&self) -> f64 {
        1000.0 / self.fps
    }
}

#[derive(Debug, Clone)]
pub struct TraceGenParams {
    pub segment_len_frames: usize,
    pub decay_slope_per_frame: f64,
    pub noise_sigma: f64,
    pub jump_prob: f64,
    /// Similarity drop applied at a jump event, chosen large against the
    /// selector's default band half-width.
    pub jump_magnitude: f64,
    pub seed: u64,
}

impl Default for TraceGenParams {
    fn default() -> Self {
        Self {
            segment_len_frames: 40,
            decay_slope_per_frame: 0.003,
            noise_sigma: 0.0,
            jump_prob: 0.05,
            jump_magnitude: 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("fps must be > 0")]
    ZeroFps,
    #[error("duration must be > 0")]
    ZeroDuration,
    #[error("invalid trace generation params: {0}")]
    BadParams(&'static str),
    #[error("trace file line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn arrival_ms(index: usize, fps: f64) -> f64 {
    index as f64 * 1000.0 / fps
}

fn validate_params(p: &TraceGenParams) -> Result<(), TraceError> {
    if p.segment_len_frames == 0 {
        return Err(TraceError::BadParams("segment_len_frames must be > 0"));
    }
    if p.decay_slope_per_frame < 0.0 || p.noise_sigma < 0.0 || p.jump_magnitude < 0.0 {
        return Err(TraceError::BadParams("negative parameter"));
    }
    if !(0.0..=1.0).contains(&p.jump_prob) {
        return Err(TraceError::BadParams("jump_prob outside [0, 1]"));
    }
    Ok(())
}

/// Generates a deterministic synthetic trace.
///
/// Jump decisions and noise draws come from two independent ChaCha streams of
/// the same seed, so the jump count can be reproduced from the seed alone.
pub fn generate_trace(
    params: &TraceGenParams,
    fps: f64,
    duration_ms: f64,
) -> Result<FrameTrace, TraceError> {
    validate_params(params)?;
    if fps <= 0.0 {
        return Err(TraceError::ZeroFps);
    }
    if duration_ms <= 0.0 {
        return Err(TraceError::ZeroDuration);
    }
    let n = (fps * duration_ms / 1000.0).round() as usize;
    if n == 0 {
        return Err(TraceError::ZeroDuration);
    }

    let mut jump_rng = ChaCha8Rng::seed_from_u64(params.seed);
    jump_rng.set_stream(0);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(params.seed);
    noise_rng.set_stream(1);
    let noise = Normal::new(0.0, params.noise_sigma.max(f64::MIN_POSITIVE))
        .expect("sigma is finite and positive");

    let mut frames = Vec::with_capacity(n);
    let mut jump_indices = Vec::new();
    frames.push(Frame {
        index: 0,
        arrival_ms: 0.0,
        raw_feature: 1.0,
    });

    // Level of the current frame relative to the current segment anchor.
    let mut prev_level = 1.0_f64;
    let mut since_anchor = 0_usize;
    for i in 1..n {
        let is_jump = jump_rng.gen::<f64>() < params.jump_prob;
        let eps = if params.noise_sigma > 0.0 {
            noise.sample(&mut noise_rng)
        } else {
            let _ = noise_rng.gen::<f64>(); // keep the stream position fixed
            0.0
        };
        let raw;
        if is_jump {
            // Discontinuous drop below the local trend; starts a new segment.
            let ideal = (1.0 - params.decay_slope_per_frame * (since_anchor + 1) as f64)
                .max(LEVEL_FLOOR);
            raw = ((ideal / prev_level - params.jump_magnitude) + eps).clamp(0.0, 1.0);
            jump_indices.push(i);
            since_anchor = 0;
            prev_level = 1.0;
        } else if since_anchor + 1 >= params.segment_len_frames {
            // Natural segment boundary: re-anchor with an ordinary-sized step.
            raw = (1.0 - params.decay_slope_per_frame + eps).clamp(0.0, 1.0);
            since_anchor = 0;
            prev_level = 1.0;
        } else {
            since_anchor += 1;
            let level = ((1.0 - params.decay_slope_per_frame * since_anchor as f64) + eps)
                .clamp(LEVEL_FLOOR, 1.0);
            raw = (level / prev_level).clamp(0.0, 1.0);
            prev_level = level;
        }
        frames.push(Frame {
            index: i,
            arrival_ms: arrival_ms(i, fps),
            raw_feature: raw,
        });
    }

    Ok(FrameTrace {
        frames,
        fps,
        duration_ms,
        jump_indices,
    })
}

/// FIFO arrival queue over a trace. Frames are admitted in arrival order;
/// when a capacity is set, the oldest pending frame is dropped and counted.
#[derive(Debug, Clone)]
pub struct FrameQueue {
    pending: VecDeque<usize>,
    capacity: Option<usize>,
    next_frame: usize,
    dropped: u64,
}

impl FrameQueue {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            pending: VecDeque::new(),
            capacity,
            next_frame: 0,
            dropped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn front(&self) -> Option<usize> {
        self.pending.front().copied()
    }

    pub fn pop(&mut self) -> Option<usize> {
        self.pending.pop_front()
    }

    /// Appends every not-yet-seen frame with `arrival_ms <= now_ms`.
    /// Idempotent for an unchanged `now_ms`.
    pub fn enqueue_arrivals(&mut self, trace: &FrameTrace, now_ms: f64) {
        while self.next_frame < trace.len()
            && trace.frames[self.next_frame].arrival_ms <= now_ms + WAIT_EPS_MS
        {
            self.pending.push_back(self.next_frame);
            self.next_frame += 1;
            if let Some(cap) = self.capacity {
                while self.pending.len() > cap {
                    self.pending.pop_front();
                    self.dropped += 1;
                }
            }
        }
    }
}

/// Mean wait of blocked keyframes and the blocked fraction, from finished
/// processing records. Empty input yields `(0, 0)`.
pub fn waiting_stats(records: &[ProcessingRecord]) -> (f64, f64) {
    let mut kf_total = 0_usize;
    let mut blocked = 0_usize;
    let mut wait_sum = 0.0;
    for r in records.iter().filter(|r| r.is_keyframe) {
        kf_total += 1;
        let wait = r.service_start_ms - r.arrival_ms;
        if wait > WAIT_EPS_MS {
            blocked += 1;
            wait_sum += wait;
        }
    }
    if kf_total == 0 || blocked == 0 {
        return (0.0, 0.0);
    }
    (wait_sum / blocked as f64, blocked as f64 / kf_total as f64)
}

/// Writes a trace in the exchange format: header `fps,frame_count`, then one
/// `index,arrival_ms,feature` line per frame.
pub fn trace_to_csv(trace: &FrameTrace) -> String {
    let mut out = String::new();
    out.push_str(&format!("{},{}\n", trace.fps, trace.len()));
    for f in &trace.frames {
        out.push_str(&format!("{},{},{}\n", f.index, f.arrival_ms, f.raw_feature));
    }
    out
}

pub fn trace_from_csv(text: &str) -> Result<FrameTrace, TraceError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(TraceError::Format {
        line: 1,
        msg: "missing header".into(),
    })?;
    let mut parts = header.split(',');
    let fps: f64 = parse_field(&mut parts, 1, "fps")?;
    let count: usize = parse_field(&mut parts, 1, "frame_count")?;
    if fps <= 0.0 {
        return Err(TraceError::ZeroFps);
    }
    let mut frames = Vec::with_capacity(count);
    let mut prev_arrival = f64::NEG_INFINITY;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let index: usize = parse_field(&mut parts, lineno + 1, "index")?;
        let arrival: f64 = parse_field(&mut parts, lineno + 1, "arrival_ms")?;
        let feature: f64 = parse_field(&mut parts, lineno + 1, "feature")?;
        if arrival <= prev_arrival {
            return Err(TraceError::Format {
                line: lineno + 1,
                msg: "arrival times not strictly increasing".into(),
            });
        }
        if !(0.0..=1.0).contains(&feature) {
            return Err(TraceError::Format {
                line: lineno + 1,
                msg: format!("feature {feature} outside [0, 1]"),
            });
        }
        prev_arrival = arrival;
        frames.push(Frame {
            index,
            arrival_ms: arrival,
            raw_feature: feature,
        });
    }
    if frames.len() != count {
        return Err(TraceError::Format {
            line: 1,
            msg: format!("header says {count} frames, file has {}", frames.len()),
        });
    }
    let duration_ms = frames.len() as f64 * 1000.0 / fps;
    Ok(FrameTrace {
        frames,
        fps,
        duration_ms,
        jump_indices: Vec::new(),
    })
}

fn parse_field<'a, T: std::str::FromStr>(
    parts: &mut impl Iterator<Item = &'a str>,
    line: usize,
    name: &str,
) -> Result<T, TraceError> {
    parts
        .next()
        .ok_or_else(|| TraceError::Format {
            line,
            msg: format!("missing {name}"),
        })?
        .trim()
        .parse()
        .map_err(|_| TraceError::Format {
            line,
            msg: format!("bad {name}"),
        })
}
