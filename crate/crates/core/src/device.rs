//! Heterogeneous CPU-GPU platform model: core clusters, DVFS tables, caches,
//! and a parametric power model standing in for a hardware power monitor.
//!
//! Frequencies are stored as kHz integers so that bundled specs round-trip
//! without float drift. The dynamic power model is cubic in frequency
//! (f^3 approximates f*V^2 with V roughly linear in f), one coefficient per
//! cluster plus one for the GPU.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KHZ_PER_GHZ: f64 = 1_000_000.0;

/// One entry of a DVFS table, identified by frequency alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VfLevel {
    pub khz: u64,
    /// Ordinal position in its table, 0 = lowest frequency.
    pub index: usize,
}

impl VfLevel {
    pub fn ghz(&self) -> f64 {
        self.khz as f64 / KHZ_PER_GHZ
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpuCluster {
    pub name: String,
    pub core_count: u32,
    /// Sorted ascending by frequency.
    pub levels: Vec<VfLevel>,
    pub l2_cache_bytes: u64,
    /// Dynamic power coefficient in W per GHz^3.
    pub power_coeff: f64,
}

impl CpuCluster {
    pub fn max_level(&self) -> VfLevel {
        *self.levels.last().expect("levels non-empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceSpec {
    pub clusters: Vec<CpuCluster>,
    /// Sorted ascending by frequency.
    pub gpu_levels: Vec<VfLevel>,
    pub gpu_power_coeff: f64,
    pub idle_power: f64,
}

/// Active operating point of one simulation episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlatformState {
    pub active_cluster: usize,
    pub cpu_level: usize,
    pub gpu_level: usize,
}

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("device spec parse error: {0}")]
    Parse(String),
    #[error("cluster '{0}' has no DVFS levels")]
    EmptyLevels(String),
    #[error("gpu_levels_khz is empty")]
    EmptyGpuLevels,
    #[error("cluster '{0}' levels are not strictly increasing")]
    UnsortedLevels(String),
    #[error("gpu levels are not strictly increasing")]
    UnsortedGpuLevels,
    #[error("cluster '{name}' has nonpositive {field}")]
    NonPositive { name: String, field: &'static str },
    #[error("spec has no clusters")]
    NoClusters,
    #[error("idle_power_w must be >= 0")]
    NegativeIdlePower,
    #[error("index out of range: {0}")]
    IndexOutOfRange(&'static str),
    #[error("busy_fraction {0} outside [0, 1]")]
    BusyFractionRange(f64),
}

// On-disk layout of a device spec (TOML).
#[derive(Serialize, Deserialize)]
struct SpecDoc {
    idle_power_w: f64,
    gpu_power_coeff_w_per_ghz3: f64,
    gpu_levels_khz: Vec<u64>,
    #[serde(rename = "cluster")]
    clusters: Vec<ClusterDoc>,
}

#[derive(Serialize, Deserialize)]
struct ClusterDoc {
    name: String,
    cores: u32,
    l2_cache_bytes: u64,
    power_coeff_w_per_ghz3: f64,
    levels_khz: Vec<u64>,
}

fn index_levels(khz: &[u64]) -> Vec<VfLevel> {
    khz.iter()
        .enumerate()
        .map(|(index, &khz)| VfLevel { khz, index })
        .collect()
}

fn strictly_increasing(khz: &[u64]) -> bool {
    khz.windows(2).all(|w| w[0] < w[1])
}

/// Parses and validates a device spec from its TOML representation.
pub fn load_device_spec(source: &str) -> Result<DeviceSpec, DeviceError> {
    let doc: SpecDoc = toml::from_str(source).map_err(|e| DeviceError::Parse(e.to_string()))?;
    if doc.clusters.is_empty() {
        return Err(DeviceError::NoClusters);
    }
    if doc.gpu_levels_khz.is_empty() {
        return Err(DeviceError::EmptyGpuLevels);
    }
    if !strictly_increasing(&doc.gpu_levels_khz) {
        return Err(DeviceError::UnsortedGpuLevels);
    }
    if doc.idle_power_w < 0.0 {
        return Err(DeviceError::NegativeIdlePower);
    }
    let mut clusters = Vec::with_capacity(doc.clusters.len());
    for c in &doc.clusters {
        if c.levels_khz.is_empty() {
            return Err(DeviceError::EmptyLevels(c.name.clone()));
        }
        if !strictly_increasing(&c.levels_khz) {
            return Err(DeviceError::UnsortedLevels(c.name.clone()));
        }
        if c.levels_khz[0] == 0 {
            return Err(DeviceError::NonPositive {
                name: c.name.clone(),
                field: "frequency",
            });
        }
        if c.l2_cache_bytes == 0 {
            return Err(DeviceError::NonPositive {
                name: c.name.clone(),
                field: "l2_cache_bytes",
            });
        }
        if c.cores == 0 {
            return Err(DeviceError::NonPositive {
                name: c.name.clone(),
                field: "cores",
            });
        }
        clusters.push(CpuCluster {
            name: c.name.clone(),
            core_count: c.cores,
            levels: index_levels(&c.levels_khz),
            l2_cache_bytes: c.l2_cache_bytes,
            power_coeff: c.power_coeff_w_per_ghz3,
        });
    }
    Ok(DeviceSpec {
        clusters,
        gpu_levels: index_levels(&doc.gpu_levels_khz),
        gpu_power_coeff: doc.gpu_power_coeff_w_per_ghz3,
        idle_power: doc.idle_power_w,
    })
}

/// Serializes a spec back to TOML. `load_device_spec(serialize(spec))`
/// reproduces `spec` exactly.
pub fn serialize_device_spec(spec: &DeviceSpec) -> String {
    let doc = SpecDoc {
        idle_power_w: spec.idle_power,
        gpu_power_coeff_w_per_ghz3: spec.gpu_power_coeff,
        gpu_levels_khz: spec.gpu_levels.iter().map(|l| l.khz).collect(),
        clusters: spec
            .clusters
            .iter()
            .map(|c| ClusterDoc {
                name: c.name.clone(),
                cores: c.core_count,
                l2_cache_bytes: c.l2_cache_bytes,
                power_coeff_w_per_ghz3: c.power_coeff,
                levels_khz: c.levels.iter().map(|l| l.khz).collect(),
            })
            .collect(),
    };
    toml::to_string(&doc).expect("spec serializes")
}

impl DeviceSpec {
    pub fn cluster(&self, idx: usize) -> Result<&CpuCluster, DeviceError> {
        self.clusters
            .get(idx)
            .ok_or(DeviceError::IndexOutOfRange("cluster"))
    }

    pub fn validate_state(&self, state: &PlatformState) -> Result<(), DeviceError> {
        let cluster = self.cluster(state.active_cluster)?;
        if state.cpu_level >= cluster.levels.len() {
            return Err(DeviceError::IndexOutOfRange("cpu_level"));
        }
        if state.gpu_level >= self.gpu_levels.len() {
            return Err(DeviceError::IndexOutOfRange("gpu_level"));
        }
        Ok(())
    }

    pub fn cpu_ghz(&self, state: &PlatformState) -> f64 {
        self.clusters[state.active_cluster].levels[state.cpu_level].ghz()
    }

    pub fn gpu_ghz(&self, state: &PlatformState) -> f64 {
        self.gpu_levels[state.gpu_level].ghz()
    }
}

/// Average platform power at the given operating point.
///
/// Returns `idle + busy * (c_cluster * f_cpu^3 + c_gpu * f_gpu^3)` in watts.
/// Only the active cluster contributes dynamic power; idle clusters are folded
/// into `idle_power`.
pub fn power_draw(
    spec: &DeviceSpec,
    state: &PlatformState,
    busy_fraction: f64,
) -> Result<f64, DeviceError> {
    spec.validate_state(state)?;
    if !(0.0..=1.0).contains(&busy_fraction) {
        return Err(DeviceError::BusyFractionRange(busy_fraction));
    }
    let cluster = &spec.clusters[state.active_cluster];
    let f_cpu = spec.cpu_ghz(state);
    let f_gpu = spec.gpu_ghz(state);
    let dynamic = cluster.power_coeff * f_cpu.powi(3) + spec.gpu_power_coeff * f_gpu.powi(3);
    Ok(spec.idle_power + busy_fraction * dynamic)
}

/// The bundled OnePlus 8T spec: Kryo 585 little/medium/big clusters plus the
/// Adreno 650 DVFS table. Power coefficients and idle power are calibration
/// choices (the device documents frequencies only).
pub const ONEPLUS8T_SPEC: &str = include_str!("../assets/oneplus8t.toml");

pub fn oneplus8t() -> DeviceSpec {
    load_device_spec(ONEPLUS8T_SPEC).expect("bundled spec is valid")
}
