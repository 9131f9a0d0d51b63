//! Keyframe latency prediction from the operating point.
//!
//! The GPU term scales the table latency by the GPU frequency ratio; the CPU
//! term adds `gamma * (f_max / f_cur - 1)` milliseconds, where gamma is the
//! largest layer footprint over the active cluster's L2 cache. Gamma is
//! recomputed whenever the active cluster (and hence its cache) changes.

use thiserror::Error;

use crate::device::{CpuCluster, DeviceSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct GammaInputs {
    /// Weights + output feature map per layer, in bytes.
    pub layer_footprints_bytes: Vec<u64>,
    pub cpu_l2_bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorParams {
    pub gamma: f64,
    pub vf_c_max_ghz: f64,
    pub vf_g_max_ghz: f64,
}

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error("layer footprint list is empty")]
    NoLayers,
    #[error("cache size must be > 0")]
    ZeroCache,
    #[error("layer footprints must be > 0")]
    ZeroFootprint,
    #[error("frequency must be > 0")]
    ZeroFrequency,
    #[error("frequency {0} GHz above table maximum")]
    AboveMax(f64),
    #[error("validation sweep is empty")]
    EmptySweep,
}

/// Max layer footprint divided by the cluster's L2 cache size.
pub fn compute_gamma(inputs: &GammaInputs) -> Result<f64, LatencyError> {
    if inputs.cpu_l2_bytes == 0 {
        return Err(LatencyError::ZeroCache);
    }
    let max = inputs
        .layer_footprints_bytes
        .iter()
        .copied()
        .max()
        .ok_or(LatencyError::NoLayers)?;
    if max == 0 {
        return Err(LatencyError::ZeroFootprint);
    }
    Ok(max as f64 / inputs.cpu_l2_bytes as f64)
}

/// Predictor parameters for a workload pinned to one cluster of a device.
pub fn params_for(
    spec: &DeviceSpec,
    cluster: &CpuCluster,
    max_layer_bytes: u64,
) -> Result<PredictorParams, LatencyError> {
    let gamma = compute_gamma(&GammaInputs {
        layer_footprints_bytes: vec![max_layer_bytes],
        cpu_l2_bytes: cluster.l2_cache_bytes,
    })?;
    Ok(PredictorParams {
        gamma,
        vf_c_max_ghz: cluster.max_level().ghz(),
        vf_g_max_ghz: spec.gpu_levels.last().expect("gpu levels non-empty").ghz(),
    })
}

/// Predicted keyframe latency in ms.
///
/// `base_latency_ms` is the LUT latency at the active pruning ratio (the dense
/// latency for ratio 0), measured at both maxima.
pub fn predict(
    base_latency_ms: f64,
    cpu_vf_ghz: f64,
    gpu_vf_ghz: f64,
    params: &PredictorParams,
) -> Result<f64, LatencyError> {
    if cpu_vf_ghz <= 0.0 || gpu_vf_ghz <= 0.0 {
        return Err(LatencyError::ZeroFrequency);
    }
    if cpu_vf_ghz > params.vf_c_max_ghz + 1e-12 {
        return Err(LatencyError::AboveMax(cpu_vf_ghz));
    }
    if gpu_vf_ghz > params.vf_g_max_ghz + 1e-12 {
        return Err(LatencyError::AboveMax(gpu_vf_ghz));
    }
    Ok(base_latency_ms * (params.vf_g_max_ghz / gpu_vf_ghz)
        + params.gamma * (params.vf_c_max_ghz / cpu_vf_ghz - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Cpu,
    Gpu,
}

#[derive(Debug, Clone)]
pub struct ValidationRow {
    pub axis: SweepAxis,
    pub vf_khz: u64,
    pub predicted_ms: f64,
    pub truth_ms: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub cpu_mean_rel_error: f64,
    pub cpu_max_rel_error: f64,
    pub gpu_mean_rel_error: f64,
    pub gpu_max_rel_error: f64,
}

impl ValidationReport {
    /// One sweep row per line: `axis,vf,predicted_ms,truth_ms,rel_error`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("axis,vf,predicted_ms,truth_ms,rel_error\n");
        for r in &self.rows {
            let axis = match r.axis {
                SweepAxis::Cpu => "cpu",
                SweepAxis::Gpu => "gpu",
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                axis, r.vf_khz, r.predicted_ms, r.truth_ms, r.rel_error
            ));
        }
        out
    }
}

/// Sweeps each frequency axis with the other pinned at its maximum and
/// compares the prediction against a ground-truth service-time model.
pub fn validate(
    base_latency_ms: f64,
    cluster: &CpuCluster,
    gpu_levels_khz: &[u64],
    params: &PredictorParams,
    mut truth: impl FnMut(f64, f64) -> f64,
) -> Result<ValidationReport, LatencyError> {
    if cluster.levels.is_empty() || gpu_levels_khz.is_empty() {
        return Err(LatencyError::EmptySweep);
    }
    let mut rows = Vec::new();
    for level in &cluster.levels {
        let cpu = level.ghz();
        let predicted = predict(base_latency_ms, cpu, params.vf_g_max_ghz, params)?;
        let t = truth(cpu, params.vf_g_max_ghz);
        rows.push(ValidationRow {
            axis: SweepAxis::Cpu,
            vf_khz: level.khz,
            predicted_ms: predicted,
            truth_ms: t,
            rel_error: (predicted - t).abs() / t,
        });
    }
    for &khz in gpu_levels_khz {
        let gpu = khz as f64 / crate::device::KHZ_PER_GHZ;
        let predicted = predict(base_latency_ms, params.vf_c_max_ghz, gpu, params)?;
        let t = truth(params.vf_c_max_ghz, gpu);
        rows.push(ValidationRow {
            axis: SweepAxis::Gpu,
            vf_khz: khz,
            predicted_ms: predicted,
            truth_ms: t,
            rel_error: (predicted - t).abs() / t,
        });
    }
    let stats = |axis: SweepAxis| {
        let errs: Vec<f64> = rows
            .iter()
            .filter(|r| r.axis == axis)
            .map(|r| r.rel_error)
            .collect();
        let mean = errs.iter().sum::<f64>() / errs.len() as f64;
        let max = errs.iter().cloned().fold(0.0, f64::max);
        (mean, max)
    };
    let (cpu_mean, cpu_max) = stats(SweepAxis::Cpu);
    let (gpu_mean, gpu_max) = stats(SweepAxis::Gpu);
    Ok(ValidationReport {
        rows,
        cpu_mean_rel_error: cpu_mean,
        cpu_max_rel_error: cpu_max,
        gpu_mean_rel_error: gpu_mean,
        gpu_max_rel_error: gpu_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::oneplus8t;

    fn params() -> PredictorParams {
        PredictorParams {
            gamma: 3.36,
            vf_c_max_ghz: 1.8,
            vf_g_max_ghz: 0.587,
        }
    }

    #[test]
    fn gamma_from_footprints() {
        let g = compute_gamma(&GammaInputs {
            layer_footprints_bytes: vec![3_360_000],
            cpu_l2_bytes: 1_000_000,
        })
        .unwrap();
        assert!((g - 3.36).abs() < 1e-12);
        let g = compute_gamma(&GammaInputs {
            layer_footprints_bytes: vec![2_000_000],
            cpu_l2_bytes: 2_000_000,
        })
        .unwrap();
        assert_eq!(g, 1.0);
        let g = compute_gamma(&GammaInputs {
            layer_footprints_bytes: vec![1_000_000, 2_000_000, 5_000_000],
            cpu_l2_bytes: 2_000_000,
        })
        .unwrap();
        assert!((g - 2.5).abs() < 1e-12);
    }

    #[test]
    fn gamma_input_errors() {
        assert!(compute_gamma(&GammaInputs {
            layer_footprints_bytes: vec![],
            cpu_l2_bytes: 1
        })
        .is_err());
        assert!(compute_gamma(&GammaInputs {
            layer_footprints_bytes: vec![1],
            cpu_l2_bytes: 0
        })
        .is_err());
    }

    #[test]
    fn prediction_at_maxima_is_base() {
        let p = params();
        assert_eq!(predict(26.1, 1.8, 0.587, &p).unwrap(), 26.1);
    }

    #[test]
    fn gpu_scaling_hand_evaluated() {
        let p = params();
        let got = predict(26.1, 1.8, 0.305, &p).unwrap();
        assert!((got - 26.1 * 0.587 / 0.305).abs() < 1e-12);
        assert!((got - 50.23).abs() < 0.01);
    }

    #[test]
    fn cpu_term_hand_evaluated() {
        let p = params();
        let got = predict(26.1, 0.9, 0.587, &p).unwrap();
        assert!((got - (26.1 + 3.36 * (2.0 - 1.0))).abs() < 1e-12);
        assert!((got - 29.46).abs() < 1e-9);
    }

    #[test]
    fn strictly_decreasing_in_each_frequency() {
        let p = params();
        let mut prev = f64::INFINITY;
        for cpu in [0.69, 0.9, 1.2, 1.5, 1.8] {
            let l = predict(26.1, cpu, 0.587, &p).unwrap();
            assert!(l < prev);
            prev = l;
        }
        let mut prev = f64::INFINITY;
        for gpu in [0.305, 0.4, 0.49, 0.587] {
            let l = predict(26.1, 1.8, gpu, &p).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn cpu_term_independent_of_base() {
        let p = params();
        let a = predict(10.0, 0.9, 0.4, &p).unwrap();
        let b = predict(20.0, 0.9, 0.4, &p).unwrap();
        // doubling base doubles only the GPU term
        let gpu_a = 10.0 * p.vf_g_max_ghz / 0.4;
        assert!((b - a - gpu_a).abs() < 1e-12);
    }

    #[test]
    fn frequency_domain_errors() {
        let p = params();
        assert!(predict(26.1, 0.0, 0.587, &p).is_err());
        assert!(predict(26.1, 1.9, 0.587, &p).is_err());
        assert!(predict(26.1, 1.8, 0.6, &p).is_err());
    }

    #[test]
    fn validation_zero_when_truth_matches() {
        let spec = oneplus8t();
        let p = params();
        let report = validate(
            26.1,
            &spec.clusters[0],
            &[305_000, 400_000, 587_000],
            &p,
            |cpu, gpu| predict(26.1, cpu, gpu, &p).unwrap(),
        )
        .unwrap();
        assert_eq!(report.cpu_mean_rel_error, 0.0);
        assert_eq!(report.gpu_max_rel_error, 0.0);
    }

    #[test]
    fn validation_error_bounded_by_injected_perturbation() {
        let spec = oneplus8t();
        let p = params();
        let mut flip = 1.0_f64;
        let report = validate(
            26.1,
            &spec.clusters[0],
            &[305_000, 400_000, 587_000],
            &p,
            |cpu, gpu| {
                flip = -flip;
                predict(26.1, cpu, gpu, &p).unwrap() * (1.0 + 0.05 * flip)
            },
        )
        .unwrap();
        // |pred - truth|/truth = eta/(1+eta) <= ~5.3% for |eta| <= 5%
        assert!(report.cpu_mean_rel_error <= 0.053);
        assert!(report.gpu_mean_rel_error <= 0.053);
    }
}
