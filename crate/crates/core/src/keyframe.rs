//! Keyframe selection: the temporal-locality regression selector, the static
//! threshold baseline, and the application-constrained lower bound on the
//! keyframe count.
//!
//! Similarity to the current keyframe is composed multiplicatively from the
//! trace's per-frame features. The temporal-locality selector fits an
//! ordinary-least-squares line through the recent keyframe-relative
//! similarities and flags a frame as a new keyframe when its similarity lands
//! outside a band around that line.

use thiserror::Error;

use crate::trace::FrameTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectorMode {
    /// Regression-band selector.
    TLocality,
    /// Classic static-threshold filtering.
    StaticThreshold,
    /// Every frame is a keyframe (the "process everything" upper bound).
    SelectAll,
}

#[derive(Debug, Clone)]
pub struct SelectorConfig {
    pub mode: SelectorMode,
    /// Static-threshold mode only.
    pub threshold: f64,
    /// Band half-width as a fraction of the keyframe-to-next-frame similarity.
    pub band_fraction: f64,
    /// Number of recent frames used for the regression fit.
    pub fit_window: usize,
    /// Application bound: at least one keyframe per this many frames.
    pub app_min_response_frames: usize,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            mode: SelectorMode::TLocality,
            threshold: 0.7,
            band_fraction: 0.05,
            fit_window: 5,
            app_min_response_frames: 12,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), SelectorError> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(SelectorError::BadConfig("threshold outside (0, 1]"));
        }
        if !(self.band_fraction > 0.0 && self.band_fraction < 1.0) {
            return Err(SelectorError::BadConfig("band_fraction outside (0, 1)"));
        }
        if self.fit_window < 2 {
            return Err(SelectorError::BadConfig("fit_window < 2"));
        }
        if self.app_min_response_frames == 0 {
            return Err(SelectorError::BadConfig("app_min_response_frames == 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("selector config invalid: {0}")]
    BadConfig(&'static str),
    #[error("regression needs at least 2 points")]
    TooFewPoints,
    #[error("total_frames must be > 0")]
    ZeroFrames,
}

/// OLS line over recent keyframe-relative similarities, with the acceptance
/// band half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionBand {
    pub slope: f64,
    pub intercept: f64,
    pub half_width: f64,
    pub anchor_index: usize,
}

impl RegressionBand {
    pub fn predicted(&self, frame_index: usize) -> f64 {
        self.intercept + self.slope * (frame_index - self.anchor_index) as f64
    }
}

/// Fits the band over `(offset_from_anchor, similarity)` points, sorted by
/// offset. The half-width is `band_fraction` times the first point's
/// similarity (the frame right after the keyframe).
pub fn fit_band(
    points: &[(f64, f64)],
    cfg: &SelectorConfig,
    anchor_index: usize,
) -> Result<RegressionBand, SelectorError> {
    if points.len() < 2 {
        return Err(SelectorError::TooFewPoints);
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in points {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    Ok(RegressionBand {
        slope,
        intercept: mean_y - slope * mean_x,
        half_width: cfg.band_fraction * points[0].1,
        anchor_index,
    })
}

/// True iff the observed similarity falls outside the band. Boundary equality
/// (deviation exactly `half_width`) is inside; the test is two-sided.
pub fn is_keyframe(frame_similarity: f64, frame_index: usize, band: &RegressionBand) -> bool {
    outside_band(frame_similarity - band.predicted(frame_index), band.half_width)
}

// Strict exceedance with a small slack so boundary equality stays inside
// under floating-point roundoff.
fn outside_band(deviation: f64, half_width: f64) -> bool {
    deviation.abs() - half_width > 1e-9
}

/// Online temporal-locality selector; one instance per episode.
///
/// Until two post-keyframe points exist the band degenerates: with no points
/// it is the flat line through similarity 1.0, with one point the line through
/// that point and the keyframe itself. This keeps jump detection live right
/// after a re-anchor.
#[derive(Debug, Clone)]
pub struct TLocalitySelector {
    cfg: SelectorConfig,
    anchor: Option<usize>,
    composed: f64,
    points: Vec<(f64, f64)>,
}

impl TLocalitySelector {
    pub fn new(cfg: SelectorConfig) -> Self {
        Self {
            cfg,
            anchor: None,
            composed: 1.0,
            points: Vec::new(),
        }
    }

    pub fn anchor_index(&self) -> Option<usize> {
        self.anchor
    }

    /// Similarity of the last observed frame to the current keyframe.
    pub fn composed_similarity(&self) -> f64 {
        self.composed
    }

    /// Feeds the next frame; returns true when it becomes the new keyframe.
    pub fn observe(&mut self, frame_index: usize, raw_feature: f64) -> bool {
        let anchor = match self.anchor {
            None => {
                // First frame is always a keyframe.
                self.anchor = Some(frame_index);
                self.composed = 1.0;
                return true;
            }
            Some(a) => a,
        };
        self.composed *= raw_feature;
        let offset = (frame_index - anchor) as f64;
        let (predicted, half_width) = match self.points.len() {
            0 => (1.0, self.cfg.band_fraction),
            1 => {
                let (x1, s1) = self.points[0];
                let slope = (s1 - 1.0) / x1;
                (1.0 + slope * offset, self.cfg.band_fraction * s1)
            }
            _ => {
                let band = fit_band(&self.points, &self.cfg, anchor).expect(">= 2 points");
                (band.intercept + band.slope * offset, band.half_width)
            }
        };
        if outside_band(self.composed - predicted, half_width) {
            self.anchor = Some(frame_index);
            self.composed = 1.0;
            self.points.clear();
            return true;
        }
        self.points.push((offset, self.composed));
        if self.points.len() > self.cfg.fit_window {
            self.points.remove(0);
        }
        false
    }

    /// Re-anchors on a keyframe chosen outside the selector (a scheduled
    /// offset), exactly as if `observe` had fired at `frame_index`.
    pub fn force_keyframe(&mut self, frame_index: usize) {
        self.anchor = Some(frame_index);
        self.composed = 1.0;
        self.points.clear();
    }

    /// Current band, when enough points have been observed.
    pub fn band(&self) -> Option<RegressionBand> {
        let anchor = self.anchor?;
        fit_band(&self.points, &self.cfg, anchor).ok()
    }
}

/// Runs the temporal-locality selector over a whole trace.
pub fn t_locality_select(trace: &FrameTrace, cfg: &SelectorConfig) -> Vec<usize> {
    let mut sel = TLocalitySelector::new(cfg.clone());
    trace
        .frames
        .iter()
        .filter(|f| sel.observe(f.index, f.raw_feature))
        .map(|f| f.index)
        .collect()
}

/// Static-threshold selection: frame 0 plus every frame whose composed
/// similarity to the last keyframe drops below `threshold`.
pub fn static_select(trace: &FrameTrace, threshold: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut composed = 1.0;
    for f in &trace.frames {
        if f.index == 0 {
            out.push(0);
            composed = 1.0;
            continue;
        }
        composed *= f.raw_feature;
        if composed < threshold {
            out.push(f.index);
            composed = 1.0;
        }
    }
    out
}

pub fn select(trace: &FrameTrace, cfg: &SelectorConfig) -> Vec<usize> {
    match cfg.mode {
        SelectorMode::TLocality => t_locality_select(trace, cfg),
        SelectorMode::StaticThreshold => static_select(trace, cfg.threshold),
        SelectorMode::SelectAll => (0..trace.len()).collect(),
    }
}

/// Lower bound on the keyframe count: the smaller of the selector's own count
/// and the application-implied count (one keyframe per response window,
/// rounded up).
pub fn keyframe_lower_bound(
    ours_count: usize,
    cfg: &SelectorConfig,
    total_frames: usize,
) -> Result<usize, SelectorError> {
    if total_frames == 0 {
        return Err(SelectorError::ZeroFrames);
    }
    let app_implied = total_frames.div_ceil(cfg.app_min_response_frames);
    Ok(app_implied.min(ours_count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::{generate_trace, TraceGenParams};

    fn cfg() -> SelectorConfig {
        SelectorConfig::default()
    }

    #[test]
    fn ols_on_collinear_points() {
        let band = fit_band(&[(1.0, 0.99), (2.0, 0.98), (3.0, 0.97)], &cfg(), 0).unwrap();
        assert!((band.slope + 0.01).abs() < 1e-12);
        assert!((band.intercept - 1.00).abs() < 1e-12);
        assert!((band.half_width - 0.0495).abs() < 1e-12);
    }

    #[test]
    fn flat_points_give_zero_slope() {
        let band = fit_band(&[(1.0, 0.9), (2.0, 0.9), (3.0, 0.9)], &cfg(), 0).unwrap();
        assert_eq!(band.slope, 0.0);
        assert!((band.intercept - 0.9).abs() < 1e-12);
    }

    #[test]
    fn too_few_points_is_an_error() {
        assert!(matches!(
            fit_band(&[(1.0, 0.99)], &cfg(), 0),
            Err(SelectorError::TooFewPoints)
        ));
    }

    #[test]
    fn band_membership() {
        let band = RegressionBand {
            slope: 0.0,
            intercept: 0.95,
            half_width: 0.05,
            anchor_index: 0,
        };
        assert!(!is_keyframe(0.95, 1, &band)); // on the line
        assert!(is_keyframe(0.88, 1, &band)); // |0.07| > 0.05
        assert!(!is_keyframe(1.00, 1, &band)); // deviation exactly 0.05 is inside
    }

    fn gen(params: &TraceGenParams, frames: usize) -> FrameTrace {
        generate_trace(params, 30.0, frames as f64 * 1000.0 / 30.0).unwrap()
    }

    #[test]
    fn noiseless_trace_selects_only_frame_zero() {
        let params = TraceGenParams {
            jump_prob: 0.0,
            noise_sigma: 0.0,
            ..TraceGenParams::default()
        };
        let trace = gen(&params, 600);
        let kfs = t_locality_select(&trace, &cfg());
        assert_eq!(kfs, vec![0]);
    }

    #[test]
    fn every_injected_jump_selected() {
        for seed in 0..20 {
            let params = TraceGenParams {
                seed,
                ..TraceGenParams::default()
            };
            let trace = gen(&params, 1200);
            let kfs = t_locality_select(&trace, &cfg());
            for j in &trace.jump_indices {
                assert!(kfs.contains(j), "seed {seed}: jump at {j} missed");
            }
        }
    }

    #[test]
    fn frame_zero_always_keyframe() {
        let trace = gen(&TraceGenParams::default(), 100);
        for mode in [
            SelectorMode::TLocality,
            SelectorMode::StaticThreshold,
            SelectorMode::SelectAll,
        ] {
            let c = SelectorConfig {
                mode,
                ..SelectorConfig::default()
            };
            assert_eq!(select(&trace, &c).first(), Some(&0));
        }
    }

    #[test]
    fn select_all_takes_everything() {
        let trace = gen(&TraceGenParams::default(), 100);
        let c = SelectorConfig {
            mode: SelectorMode::SelectAll,
            ..SelectorConfig::default()
        };
        assert_eq!(select(&trace, &c).len(), 100);
    }

    #[test]
    fn static_threshold_running_product() {
        // all per-frame similarities 0.999: first drop below 0.7 after
        // ceil(ln 0.7 / ln 0.999) = 357 steps
        let frames: Vec<crate::trace::Frame> = (0..800)
            .map(|i| crate::trace::Frame {
                index: i,
                arrival_ms: i as f64 * 1000.0 / 30.0,
                raw_feature: if i == 0 { 1.0 } else { 0.999 },
            })
            .collect();
        let trace = FrameTrace {
            frames,
            fps: 30.0,
            duration_ms: 800.0 * 1000.0 / 30.0,
            jump_indices: vec![],
        };
        let kfs = static_select(&trace, 0.7);
        assert_eq!(kfs[0], 0);
        assert_eq!(kfs[1], 357);
        // threshold 1.0 selects every frame (similarity strictly below 1)
        assert_eq!(static_select(&trace, 1.0).len(), 800);
    }

    #[test]
    fn single_frame_trace() {
        let trace = FrameTrace {
            frames: vec![crate::trace::Frame {
                index: 0,
                arrival_ms: 0.0,
                raw_feature: 1.0,
            }],
            fps: 30.0,
            duration_ms: 33.4,
            jump_indices: vec![],
        };
        assert_eq!(static_select(&trace, 0.7), vec![0]);
        assert_eq!(t_locality_select(&trace, &cfg()), vec![0]);
    }

    #[test]
    fn lower_bound_examples() {
        let c = cfg();
        assert_eq!(keyframe_lower_bound(171, &c, 1200).unwrap(), 100);
        assert_eq!(keyframe_lower_bound(50, &c, 1200).unwrap(), 50);
        assert_eq!(keyframe_lower_bound(1, &c, 12).unwrap(), 1);
        assert!(keyframe_lower_bound(0, &c, 0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        c.threshold = 0.0;
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.fit_window = 1;
        assert!(c.validate().is_err());
        assert!(cfg().validate().is_ok());
    }
}
