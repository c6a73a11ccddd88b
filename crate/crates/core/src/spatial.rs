//! Spatial concentration of attacks across an IP region, per time unit.
//!
//! For a bin whose counts are all 0/1 the cross-IP deviation sits exactly on
//! the ellipse `sigma_IP = sqrt(1/4 - (w_mean - 1/2)^2)`; concentrating every
//! attack on one IP instead gives the line `sigma_IP = sqrt(N - 1) * w_mean`.
//! Real bins live between those two envelopes, and the concentration index
//! locates each bin on that span.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::fluxfluct::mean_and_pop_std;
use crate::matrix::AttackMatrix;
use crate::IpRange;

/// Cross-IP statistics of one time bin.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SpatialPoint {
    pub bin: usize,
    /// Average attacks per IP in the bin (n / N).
    pub mean: f64,
    /// Population standard deviation across the region's IPs.
    pub std: f64,
    /// Total attacks n in the bin.
    pub total: u64,
    /// Region size N.
    pub region_size: usize,
    /// Whether every count in the bin is 0 or 1 (the ellipse's regime).
    pub binary_counts: bool,
}

/// One [`SpatialPoint`] per bin of the matrix, restricted to `region`.
pub fn spatial_stats(matrix: &AttackMatrix, region: IpRange) -> Result<Vec<SpatialPoint>> {
    region.check_within(matrix.n_ips() as u32)?;
    let n = region.len() as usize;
    let mut out = Vec::with_capacity(matrix.n_bins());
    let mut column = vec![0.0f64; n];
    for bin in 0..matrix.n_bins() {
        let mut total = 0u64;
        let mut binary = true;
        for (k, ip) in region.iter().enumerate() {
            let c = matrix.count(ip, bin);
            column[k] = c as f64;
            total += c as u64;
            binary &= c <= 1;
        }
        let (mean, std) = mean_and_pop_std(&column);
        out.push(SpatialPoint { bin, mean, std, total, region_size: n, binary_counts: binary });
    }
    Ok(out)
}

/// Lower envelope for sparse bins: the ellipse of n attacks spread over n
/// distinct IPs, valid for mean in [0, 1].
pub fn homogeneous_bound(mean: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&mean) {
        return Err(Error::domain(format!(
            "homogeneous bound needs mean in [0, 1], got {mean}"
        )));
    }
    Ok((0.25 - (mean - 0.5) * (mean - 0.5)).max(0.0).sqrt())
}

/// Upper envelope: all attacks on a single IP.
pub fn concentrated_bound(mean: f64, region_size: usize) -> Result<f64> {
    if mean < 0.0 {
        return Err(Error::domain("mean must be non-negative"));
    }
    if region_size < 2 {
        return Err(Error::validation("region_size must be >= 2"));
    }
    Ok(((region_size - 1) as f64).sqrt() * mean)
}

fn pop_std_of_counts(counts: &[u64]) -> f64 {
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    mean_and_pop_std(&xs).1
}

/// Where the bin sits between the most even and the most concentrated
/// placement of its n attacks: 0 at the even extreme, 1 at single-IP
/// concentration, linear in sigma between them, clipped to [0, 1].
/// Undefined for empty bins.
pub fn concentration_index(point: &SpatialPoint) -> Option<f64> {
    if point.total == 0 || point.region_size < 2 {
        return None;
    }
    let n = point.total;
    let size = point.region_size as u64;
    // Most even integer placement: n mod N IPs get one extra attack.
    let base = n / size;
    let extra = (n % size) as usize;
    let mut even: Vec<u64> = vec![base + 1; extra];
    even.resize(point.region_size, base);
    let sigma_lo = pop_std_of_counts(&even);
    let mut single = vec![0u64; point.region_size];
    single[0] = n;
    let sigma_hi = pop_std_of_counts(&single);
    if sigma_hi - sigma_lo <= 1e-12 {
        // n = 1: both extremes coincide.
        return Some(0.0);
    }
    Some(((point.std - sigma_lo) / (sigma_hi - sigma_lo)).clamp(0.0, 1.0))
}
