//! CPU core cluster selection, done once per (model, device) pair before the
//! DVFS search: pick the cheapest cluster whose L2 cache holds the largest
//! DNN layer, falling back to the largest cache when none does.

use crate::device::DeviceSpec;

/// Returns the index of the lowest-power-coefficient cluster with
/// `l2_cache_bytes >= max_layer_bytes`, or the largest-cache cluster when no
/// cluster qualifies.
pub fn select_cluster(spec: &DeviceSpec, max_layer_bytes: u64) -> usize {
    let qualifying = spec
        .clusters
        .iter()
        .enumerate()
        .filter(|(_, c)| c.l2_cache_bytes >= max_layer_bytes)
        .min_by(|a, b| {
            a.1.power_coeff
                .partial_cmp(&b.1.power_coeff)
                .expect("finite coefficients")
        });
    match qualifying {
        Some((idx, _)) => idx,
        None => spec
            .clusters
            .iter()
            .enumerate()
            .max_by_key(|(_, c)| c.l2_cache_bytes)
            .expect("spec has clusters")
            .0,
    }
}
