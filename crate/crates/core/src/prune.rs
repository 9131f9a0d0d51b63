//! Pruning-ratio lookup table, the accuracy-vs-ratio curve, and the
//! latency-constrained ratio bounds. Runtime ratio reconfiguration is modeled
//! as instantaneous (the referenced soft-mask mechanism needs no retraining;
//! zero switching latency is an optimistic stand-in).

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LutEntry {
    /// Fraction of weights pruned, in [0, 1).
    pub ratio: f64,
    /// Latency at the highest V/F levels of the selected cluster and GPU.
    pub latency_ms: f64,
    /// Detection accuracy at this ratio, in mAP points.
    pub map_points: f64,
}

/// Ratio -> (dense-equivalent latency at max V/F, accuracy) table.
#[derive(Debug, Clone, PartialEq)]
pub struct PruningLut {
    entries: Vec<LutEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneBounds {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("LUT line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("LUT is empty")]
    Empty,
    #[error("first LUT entry must have ratio 0 (dense)")]
    MissingDense,
    #[error("LUT ratios must be strictly increasing and in [0, 1)")]
    BadRatios,
    #[error("LUT latency must be nonincreasing in ratio")]
    LatencyNotMonotone,
    #[error("LUT mAP must be nonincreasing in ratio")]
    MapNotMonotone,
    #[error("ratio {0} outside table range")]
    RatioOutOfRange(f64),
}

impl PruningLut {
    pub fn new(entries: Vec<LutEntry>) -> Result<Self, PruneError> {
        if entries.is_empty() {
            return Err(PruneError::Empty);
        }
        if entries[0].ratio != 0.0 {
            return Err(PruneError::MissingDense);
        }
        for w in entries.windows(2) {
            if !(w[0].ratio < w[1].ratio) || w[1].ratio >= 1.0 {
                return Err(PruneError::BadRatios);
            }
            if w[1].latency_ms > w[0].latency_ms {
                return Err(PruneError::LatencyNotMonotone);
            }
            if w[1].map_points > w[0].map_points {
                return Err(PruneError::MapNotMonotone);
            }
        }
        Ok(Self { entries })
    }

    /// Parses the LUT exchange format: `ratio,latency_ms,map` lines, with an
    /// optional header line.
    pub fn from_csv(text: &str) -> Result<Self, PruneError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if i == 0 && line.starts_with("ratio") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(PruneError::Format {
                    line: i + 1,
                    msg: "expected ratio,latency_ms,map".into(),
                });
            }
            let parse = |s: &str, name: &str| {
                s.parse::<f64>().map_err(|_| PruneError::Format {
                    line: i + 1,
                    msg: format!("bad {name}: {s}"),
                })
            };
            entries.push(LutEntry {
                ratio: parse(fields[0], "ratio")?,
                latency_ms: parse(fields[1], "latency_ms")?,
                map_points: parse(fields[2], "map")?,
            });
        }
        Self::new(entries)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("ratio,latency_ms,map\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.ratio, e.latency_ms, e.map_points));
        }
        out
    }

    pub fn entries(&self) -> &[LutEntry] {
        &self.entries
    }

    pub fn dense(&self) -> LutEntry {
        self.entries[0]
    }

    pub fn min_ratio(&self) -> f64 {
        self.entries[0].ratio
    }

    pub fn max_ratio(&self) -> f64 {
        self.entries[self.entries.len() - 1].ratio
    }

    /// Latency at `ratio`: exact entry when stored, otherwise linear
    /// interpolation between the neighboring entries.
    pub fn latency_at(&self, ratio: f64) -> Result<f64, PruneError> {
        self.interpolate(ratio, |e| e.latency_ms)
    }

    /// Accuracy at `ratio`, same interpolation rule as `latency_at`.
    pub fn map_at(&self, ratio: f64) -> Result<f64, PruneError> {
        self.interpolate(ratio, |e| e.map_points)
    }

    fn interpolate(&self, ratio: f64, field: impl Fn(&LutEntry) -> f64) -> Result<f64, PruneError> {
        if ratio < self.min_ratio() || ratio > self.max_ratio() {
            return Err(PruneError::RatioOutOfRange(ratio));
        }
        if let Some(e) = self.entries.iter().find(|e| e.ratio == ratio) {
            return Ok(field(e));
        }
        let hi = self
            .entries
            .iter()
            .position(|e| e.ratio > ratio)
            .expect("ratio below max");
        let (a, b) = (&self.entries[hi - 1], &self.entries[hi]);
        let t = (ratio - a.ratio) / (b.ratio - a.ratio);
        Ok(field(a) + t * (field(b) - field(a)))
    }

    /// Stored ratios inside `bounds` (the MARL pruning action space).
    pub fn ratios_within(&self, bounds: &PruneBounds) -> Vec<f64> {
        self.entries
            .iter()
            .map(|e| e.ratio)
            .filter(|&r| r >= bounds.lower && r <= bounds.upper)
            .collect()
    }
}

/// Ratio bounds from the accuracy curve: `lower` is the highest lossless
/// ratio, `upper` the highest ratio whose accuracy stays within
/// `accuracy_tolerance` mAP points of dense.
pub fn compute_bounds(lut: &PruningLut, accuracy_tolerance: f64) -> PruneBounds {
    let dense_map = lut.dense().map_points;
    let mut lower = 0.0;
    let mut upper = 0.0;
    for e in lut.entries() {
        if e.map_points == dense_map {
            lower = e.ratio;
        }
        if e.map_points >= dense_map - accuracy_tolerance {
            upper = e.ratio;
        }
    }
    PruneBounds { lower, upper }
}

/// Applies a ratio change: the target clamped into the bounds. The switch is
/// instantaneous on the simulation clock.
pub fn reconfigure(_current_ratio: f64, target_ratio: f64, bounds: &PruneBounds) -> f64 {
    target_ratio.clamp(bounds.lower, bounds.upper)
}

/// Bundled profile anchored to a dense 26.1 ms / 70.2 mAP operating point.
pub const YOLO_LIKE_LUT: &str = include_str!("../assets/yolo_like.csv");
/// Bundled profile anchored to a dense 62.5 ms / 52.9 mAP operating point.
pub const SSD_LIKE_LUT: &str = include_str!("../assets/ssd_like.csv");

pub fn yolo_like() -> PruningLut {
    PruningLut::from_csv(YOLO_LIKE_LUT).expect("bundled LUT is valid")
}

pub fn ssd_like() -> PruningLut {
    PruningLut::from_csv(SSD_LIKE_LUT).expect("bundled LUT is valid")
}
