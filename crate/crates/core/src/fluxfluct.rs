//! Flux-fluctuation analysis of per-IP attack series.
//!
//! Treating the attack frequency of one IP as a flux `w(t)` driven by the
//! regional total `W(t)`, the fluctuation of the flux obeys
//!
//! ```text
//! sigma = sqrt(<w> + (sigma_ext^2 / <W>^2 - 1 / <W>) * <w>^2)
//! ```
//!
//! For a constant or Poisson drive (`sigma_ext^2 = <W>`) this collapses to
//! `sigma = sqrt(<w>)`, a slope of 1/2 on the log-log plot; a strongly
//! fluctuating drive gives `sigma ~ <w>`, slope 1. A deterministic series
//! has no fluctuation at all and shows up as a single dot. Sparse 0/1
//! backgrounds give `sigma = sqrt(<w> - <w>^2)`, and the same expression
//! with wall time units added shows why walls pull the apparent slope
//! slightly below 1/2.
//!
//! All moments are population moments.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::AttackMatrix;
use crate::IpRange;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct IpFlux {
    pub ip: u32,
    /// Time-average attacks per bin.
    pub mean: f64,
    /// Population standard deviation over bins.
    pub std: f64,
}

/// Per-IP flux statistics plus the regional drive series.
#[derive(Debug, Clone)]
pub struct FluxStats {
    pub region: IpRange,
    pub per_ip: Vec<IpFlux>,
    /// W(t): total attacks in the region per bin.
    pub drive: Vec<f64>,
    pub mean_drive: f64,
    pub std_drive: f64,
    /// Number of time units T.
    pub t_units: usize,
    /// Number of time units with W exactly 1.
    pub t_active: usize,
}

pub(crate) fn mean_and_pop_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.max(0.0).sqrt())
}

/// Population statistics of every IP in `region`, plus the drive series.
pub fn flux_stats(matrix: &AttackMatrix, region: IpRange) -> Result<FluxStats> {
    region.check_within(matrix.n_ips() as u32)?;
    let n_bins = matrix.n_bins();
    let mut drive = vec![0.0f64; n_bins];
    let mut per_ip = Vec::with_capacity(region.len() as usize);
    for ip in region.iter() {
        let row = matrix.row(ip);
        let series: Vec<f64> = row.iter().map(|&c| c as f64).collect();
        let (mean, std) = mean_and_pop_std(&series);
        per_ip.push(IpFlux { ip, mean, std });
        for (d, &c) in drive.iter_mut().zip(row) {
            *d += c as f64;
        }
    }
    let (mean_drive, std_drive) = mean_and_pop_std(&drive);
    let t_active = drive.iter().filter(|&&w| w == 1.0).count();
    Ok(FluxStats { region, per_ip, drive, mean_drive, std_drive, t_units: n_bins, t_active })
}

/// The flux-fluctuation relation: predicted sigma for one IP's mean flux
/// under a drive with the given mean and standard deviation.
pub fn theoretical_sigma(mean_flux: f64, mean_drive: f64, std_drive: f64) -> Result<f64> {
    if !(mean_drive > 0.0) {
        return Err(Error::domain("mean drive must be positive"));
    }
    let ratio = std_drive * std_drive / (mean_drive * mean_drive) - 1.0 / mean_drive;
    let radicand = mean_flux + ratio * mean_flux * mean_flux;
    if radicand < 0.0 {
        return Err(Error::domain(format!(
            "negative radicand {radicand}: inconsistent flux/drive statistics"
        )));
    }
    Ok(radicand.sqrt())
}

/// Least-squares line through `(log10 x, log10 y)`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log10 units.
    pub rms_residual: f64,
    pub n_points: usize,
    /// Points excluded for nonpositive coordinates.
    pub n_excluded: usize,
}

pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|&(x, y)| (x.log10(), y.log10()))
        .collect();
    let n_excluded = points.len() - usable.len();
    if usable.len() < 2 {
        return Err(Error::Fit(format!(
            "need at least 2 points with positive coordinates, have {}",
            usable.len()
        )));
    }
    let n = usable.len() as f64;
    let sx: f64 = usable.iter().map(|p| p.0).sum();
    let sy: f64 = usable.iter().map(|p| p.1).sum();
    let mx = sx / n;
    let my = sy / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("all points share one abscissa; slope undefined".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 =
        usable.iter().map(|p| (p.1 - (intercept + slope * p.0)).powi(2)).sum();
    Ok(SlopeFit {
        slope,
        intercept,
        rms_residual: (ss_res / n).sqrt(),
        n_points: usable.len(),
        n_excluded,
    })
}

/// Fluctuation of a sparse 0/1 background where `t_active` of `t_units`
/// time units carry exactly one attack: `sqrt(<w> - <w>^2)`.
pub fn sparse_background_sigma(t_active: usize, t_units: usize) -> Result<f64> {
    if t_units == 0 {
        return Err(Error::validation("t_units must be positive"));
    }
    if t_active > t_units {
        return Err(Error::validation("t_active cannot exceed t_units"));
    }
    let w = t_active as f64 / t_units as f64;
    Ok((w - w * w).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct WallAdjusted {
    /// Mean flux with wall time units included.
    pub mean_flux: f64,
    pub sigma: f64,
    /// Whether the point sits on or below the slope-1/2 reference line
    /// (`sigma' <= sqrt(<w'>)`); undefined at mean flux 0 or 1.
    pub slope_bound_holds: Option<bool>,
}

/// Sparse-background fluctuation with `t_wall` unity-height wall units
/// added to the active time.
pub fn wall_adjusted_sigma(t_active: usize, t_wall: usize, t_units: usize) -> Result<WallAdjusted> {
    if t_units == 0 {
        return Err(Error::validation("t_units must be positive"));
    }
    if t_active + t_wall > t_units {
        return Err(Error::validation("t_active + t_wall cannot exceed t_units"));
    }
    let w = (t_active + t_wall) as f64 / t_units as f64;
    let sigma = (w - w * w).max(0.0).sqrt();
    let slope_bound_holds = if w > 0.0 && w < 1.0 {
        Some(sigma <= w.sqrt() * (1.0 + 1e-12))
    } else {
        None
    };
    Ok(WallAdjusted { mean_flux: w, sigma, slope_bound_holds })
}

/// Drive classification from the fitted flux-fluctuation slope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveClass {
    /// Slope near 1/2: constant or Poisson external drive.
    ConstantOrPoisson,
    /// Slope near 1: strongly fluctuating external drive.
    StronglyFluctuating,
    /// Every IP in the region has (relatively) zero fluctuation.
    Deterministic,
    /// No recognizable scaling.
    Unscaled,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClassifyTolerances {
    /// Relative sigma/mean below which an IP counts as fluctuation-free.
    pub eps_det: f64,
    /// Acceptance band around the slopes 1/2 and 1.
    pub slope_band: f64,
}

impl Default for ClassifyTolerances {
    fn default() -> Self {
        ClassifyTolerances { eps_det: 1e-6, slope_band: 0.1 }
    }
}

pub fn classify_drive(
    fit: Option<&SlopeFit>,
    stats: &FluxStats,
    tol: &ClassifyTolerances,
) -> DriveClass {
    let deterministic = !stats.per_ip.is_empty()
        && stats.per_ip.iter().all(|f| {
            if f.mean > 0.0 {
                f.std / f.mean < tol.eps_det
            } else {
                f.std == 0.0
            }
        });
    if deterministic {
        return DriveClass::Deterministic;
    }
    match fit {
        Some(f) if (f.slope - 0.5).abs() <= tol.slope_band => DriveClass::ConstantOrPoisson,
        Some(f) if (f.slope - 1.0).abs() <= tol.slope_band => DriveClass::StronglyFluctuating,
        _ => DriveClass::Unscaled,
    }
}

/// Scatter points for the slope fit: per-IP (mean, sigma), zero-sigma IPs
/// excluded (they collapse to a dot and cannot enter a log fit).
pub fn scatter_points(stats: &FluxStats) -> Vec<(f64, f64)> {
    stats
        .per_ip
        .iter()
        .filter(|f| f.std > 0.0 && f.mean > 0.0)
        .map(|f| (f.mean, f.std))
        .collect()
}
