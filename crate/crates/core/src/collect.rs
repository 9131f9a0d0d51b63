//! Simulated performance collector: ground-truth service time (the predictor
//! formula plus bounded multiplicative noise, standing in for real hardware),
//! the accuracy sampler, and per-video metric aggregation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::latency::{predict, LatencyError, PredictorParams};
use crate::prune::{PruneError, PruningLut};
use crate::trace::{waiting_stats, FrameTrace};

/// Joint deployment decision taken by the coordinator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeploymentAction {
    /// Frames until the next scheduled keyframe.
    pub keyframe_offset: usize,
    pub cpu_level: usize,
    pub gpu_level: usize,
    pub prune_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessingRecord {
    pub frame_index: usize,
    pub arrival_ms: f64,
    pub service_start_ms: f64,
    pub service_ms: f64,
    /// P_avg during service.
    pub power_w: f64,
    pub is_keyframe: bool,
    pub action: Option<DeploymentAction>,
}

/// Ground-truth keyframe service time: the table-backed prediction times a
/// `(1 + eta)` factor with `eta` uniform in `[-bound, +bound]`. With a zero
/// bound it reproduces the prediction exactly, which is what makes predictor
/// validation and oracle runs noise-free.
#[derive(Debug, Clone)]
pub struct ServiceModel {
    pub noise_bound: f64,
    rng: ChaCha8Rng,
}

impl ServiceModel {
    pub fn new(noise_bound: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&noise_bound), "noise bound in [0, 1)");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Self { noise_bound, rng }
    }

    pub fn noiseless() -> Self {
        Self::new(0.0, 0)
    }

    pub fn service_ms(
        &mut self,
        lut: &PruningLut,
        ratio: f64,
        cpu_vf_ghz: f64,
        gpu_vf_ghz: f64,
        params: &PredictorParams,
    ) -> Result<f64, CollectError> {
        let base = lut.latency_at(ratio)?;
        let predicted = predict(base, cpu_vf_ghz, gpu_vf_ghz, params)?;
        let eta = if self.noise_bound > 0.0 {
            self.rng.gen_range(-self.noise_bound..=self.noise_bound)
        } else {
            0.0
        };
        Ok(predicted * (1.0 + eta))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CollectError {
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Latency(#[from] LatencyError),
}

/// Emulates detection accuracy: the LUT accuracy curve minus penalties for
/// trace jumps not covered by a keyframe and for falling short of the
/// keyframe-count lower bound.
#[derive(Debug, Clone)]
pub struct AccuracyModel {
    /// mAP points lost per jump with no keyframe inside the window.
    pub per_miss_penalty: f64,
    /// mAP points lost per keyframe below the lower bound.
    pub sparsity_penalty_per_frame: f64,
    /// A jump at `j` counts as covered when a keyframe lies in `[j-w, j+w]`.
    pub jump_window: usize,
}

impl Default for AccuracyModel {
    fn default() -> Self {
        Self {
            per_miss_penalty: 0.05,
            sparsity_penalty_per_frame: 0.02,
            jump_window: 2,
        }
    }
}

impl AccuracyModel {
    pub fn missed_jumps(&self, kf_set: &[usize], trace: &FrameTrace) -> usize {
        let w = self.jump_window;
        trace
            .jump_indices
            .iter()
            .filter(|&&j| {
                !kf_set
                    .iter()
                    .any(|&k| k + w >= j && k <= j + w)
            })
            .count()
    }

    /// Per-video mAP for a keyframe set at a fixed pruning ratio.
    /// `kf_lower_bound` is the count below which the sparsity penalty applies.
    pub fn sample_accuracy(
        &self,
        lut: &PruningLut,
        ratio: f64,
        kf_set: &[usize],
        trace: &FrameTrace,
        kf_lower_bound: usize,
    ) -> Result<f64, CollectError> {
        let base = lut.map_at(ratio)?;
        Ok(self.penalized(base, kf_set, trace, kf_lower_bound))
    }

    pub fn penalized(
        &self,
        base_map: f64,
        kf_set: &[usize],
        trace: &FrameTrace,
        kf_lower_bound: usize,
    ) -> f64 {
        let misses = self.missed_jumps(kf_set, trace);
        let short = kf_lower_bound.saturating_sub(kf_set.len());
        let penalty = self.per_miss_penalty * misses as f64
            + self.sparsity_penalty_per_frame * short as f64;
        (base_map - penalty).max(0.0)
    }
}

/// Per-video aggregates matching the report column set
/// L/F, KF#, WT, WP, P/V, mAP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeMetrics {
    pub l_per_frame_ms: f64,
    pub kf_count: usize,
    pub wt_ms: f64,
    pub wp_fraction: f64,
    /// Keyframe energy above idle, normalized by whole-video wall time (W).
    pub p_per_video_w: f64,
    pub map_points: f64,
}

/// Folds finished records into episode metrics.
///
/// P/V is keyframe energy over video wall time: the sum over keyframes of
/// `(P_avg - P_idle) * service_ms`, divided by `total_frames * frame period`.
pub fn aggregate(
    records: &[ProcessingRecord],
    trace: &FrameTrace,
    idle_power: f64,
    lut: &PruningLut,
    accuracy: &AccuracyModel,
    kf_lower_bound: usize,
) -> Result<EpisodeMetrics, CollectError> {
    let keyframes: Vec<&ProcessingRecord> = records.iter().filter(|r| r.is_keyframe).collect();
    let kf_count = keyframes.len();
    if kf_count == 0 {
        return Ok(EpisodeMetrics {
            l_per_frame_ms: 0.0,
            kf_count: 0,
            wt_ms: 0.0,
            wp_fraction: 0.0,
            p_per_video_w: 0.0,
            map_points: 0.0,
        });
    }
    let l_per_frame_ms =
        keyframes.iter().map(|r| r.service_ms).sum::<f64>() / kf_count as f64;
    let energy_ms_w: f64 = keyframes
        .iter()
        .map(|r| (r.power_w - idle_power).max(0.0) * r.service_ms)
        .sum();
    let wall_ms = trace.len() as f64 * trace.period_ms();
    let p_per_video_w = energy_ms_w / wall_ms;
    let (wt_ms, wp_fraction) = waiting_stats(records);

    let kf_set: Vec<usize> = keyframes.iter().map(|r| r.frame_index).collect();
    let mut base_sum = 0.0;
    for r in &keyframes {
        let ratio = r.action.map(|a| a.prune_ratio).unwrap_or(0.0);
        base_sum += lut.map_at(ratio)?;
    }
    let map_points =
        accuracy.penalized(base_sum / kf_count as f64, &kf_set, trace, kf_lower_bound);

    Ok(EpisodeMetrics {
        l_per_frame_ms,
        kf_count,
        wt_ms,
        wp_fraction,
        p_per_video_w,
        map_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latency::PredictorParams;
    use crate::prune::yolo_like;
    use crate::trace::{generate_trace, TraceGenParams};

    fn params() -> PredictorParams {
        PredictorParams {
            gamma: 0.8,
            vf_c_max_ghz: 1.8,
            vf_g_max_ghz: 0.587,
        }
    }

    #[test]
    fn zero_noise_reproduces_prediction() {
        let lut = yolo_like();
        let mut m = ServiceModel::noiseless();
        let got = m.service_ms(&lut, 0.0, 1.8, 0.587, &params()).unwrap();
        assert_eq!(got, 26.1);
    }

    #[test]
    fn noise_stays_within_bound() {
        let lut = yolo_like();
        let mut m = ServiceModel::new(0.03, 42);
        for _ in 0..500 {
            let got = m.service_ms(&lut, 0.0, 1.8, 0.587, &params()).unwrap();
            assert!((got / 26.1 - 1.0).abs() <= 0.03 + 1e-12);
        }
    }

    #[test]
    fn fixed_seed_fresh_streams_identical() {
        let lut = yolo_like();
        let mut a = ServiceModel::new(0.03, 7);
        let mut b = ServiceModel::new(0.03, 7);
        for _ in 0..10 {
            assert_eq!(
                a.service_ms(&lut, 0.3, 1.2, 0.4, &params()).unwrap(),
                b.service_ms(&lut, 0.3, 1.2, 0.4, &params()).unwrap()
            );
        }
    }

    fn jump_trace() -> FrameTrace {
        generate_trace(
            &TraceGenParams {
                seed: 11,
                ..TraceGenParams::default()
            },
            30.0,
            40_000.0,
        )
        .unwrap()
    }

    #[test]
    fn select_all_has_full_accuracy() {
        let trace = jump_trace();
        let all: Vec<usize> = (0..trace.len()).collect();
        let acc = AccuracyModel::default();
        let map = acc
            .sample_accuracy(&yolo_like(), 0.0, &all, &trace, 100)
            .unwrap();
        assert_eq!(map, 70.2);
    }

    #[test]
    fn covering_all_jumps_costs_nothing() {
        let trace = jump_trace();
        let kfs = crate::keyframe::t_locality_select(&trace, &Default::default());
        let acc = AccuracyModel::default();
        let bound = kfs.len().min(trace.len().div_ceil(12));
        let map = acc
            .sample_accuracy(&yolo_like(), 0.0, &kfs, &trace, bound)
            .unwrap();
        assert!(map >= 70.2 - 0.5);
    }

    #[test]
    fn no_jumps_means_exact_curve_value() {
        let trace = generate_trace(
            &TraceGenParams {
                jump_prob: 0.0,
                ..TraceGenParams::default()
            },
            30.0,
            10_000.0,
        )
        .unwrap();
        let kfs: Vec<usize> = (0..trace.len()).step_by(10).collect();
        let acc = AccuracyModel::default();
        let map = acc
            .sample_accuracy(&yolo_like(), 0.5, &kfs, &trace, kfs.len())
            .unwrap();
        assert_eq!(map, 69.1);
    }

    #[test]
    fn accuracy_nonincreasing_in_ratio_and_misses() {
        let trace = jump_trace();
        let acc = AccuracyModel::default();
        let all: Vec<usize> = (0..trace.len()).collect();
        let mut prev = f64::INFINITY;
        for ratio in [0.0, 0.2, 0.4, 0.6, 0.8] {
            let m = acc
                .sample_accuracy(&yolo_like(), ratio, &all, &trace, 1)
                .unwrap();
            assert!(m <= prev);
            prev = m;
        }
        // dropping all keyframes but frame 0 misses every jump
        let sparse = vec![0usize];
        let m_sparse = acc
            .sample_accuracy(&yolo_like(), 0.0, &sparse, &trace, 1)
            .unwrap();
        let m_full = acc
            .sample_accuracy(&yolo_like(), 0.0, &all, &trace, 1)
            .unwrap();
        assert!(m_sparse < m_full);
    }

    fn kf_record(index: usize, period: f64, power: f64, service: f64) -> ProcessingRecord {
        ProcessingRecord {
            frame_index: index,
            arrival_ms: index as f64 * period,
            service_start_ms: index as f64 * period,
            service_ms: service,
            power_w: power,
            is_keyframe: true,
            action: None,
        }
    }

    fn flat_trace(n: usize) -> FrameTrace {
        generate_trace(
            &TraceGenParams {
                jump_prob: 0.0,
                ..TraceGenParams::default()
            },
            30.0,
            n as f64 * 1000.0 / 30.0,
        )
        .unwrap()
    }

    #[test]
    fn power_normalization_hand_computed() {
        let trace = flat_trace(100);
        let period = trace.period_ms();
        // 2 keyframes, each one period long at delta-P = 1 W
        let records = vec![
            kf_record(0, period, 1.0, period),
            kf_record(50, period, 1.0, period),
        ];
        let m = aggregate(
            &records,
            &trace,
            0.0,
            &yolo_like(),
            &AccuracyModel::default(),
            1,
        )
        .unwrap();
        assert!((m.p_per_video_w - 0.02).abs() < 1e-12);
    }

    #[test]
    fn all_frames_at_constant_delta_p_normalizes_to_delta_p() {
        let trace = flat_trace(60);
        let period = trace.period_ms();
        let records: Vec<ProcessingRecord> = (0..60)
            .map(|i| kf_record(i, period, 1.5, period))
            .collect();
        let m = aggregate(
            &records,
            &trace,
            0.5,
            &yolo_like(),
            &AccuracyModel::default(),
            1,
        )
        .unwrap();
        assert!((m.p_per_video_w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_keyframes_zeroes_metrics() {
        let trace = flat_trace(10);
        let m = aggregate(
            &[],
            &trace,
            0.3,
            &yolo_like(),
            &AccuracyModel::default(),
            1,
        )
        .unwrap();
        assert_eq!(m.p_per_video_w, 0.0);
        assert_eq!(m.map_points, 0.0);
        assert_eq!(m.kf_count, 0);
    }

    #[test]
    fn fewer_keyframes_never_increase_power() {
        let trace = flat_trace(100);
        let period = trace.period_ms();
        let full: Vec<ProcessingRecord> =
            (0..100).map(|i| kf_record(i, period, 1.0, 10.0)).collect();
        let half: Vec<ProcessingRecord> = (0..100)
            .step_by(2)
            .map(|i| kf_record(i, period, 1.0, 10.0))
            .collect();
        let acc = AccuracyModel::default();
        let m_full = aggregate(&full, &trace, 0.0, &yolo_like(), &acc, 1).unwrap();
        let m_half = aggregate(&half, &trace, 0.0, &yolo_like(), &acc, 1).unwrap();
        assert!(m_half.p_per_video_w <= m_full.p_per_video_w);
    }
}
