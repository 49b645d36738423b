//! Mass initialisation policies. Every policy returns new clouds and only
//! touches masses.

use crate::error::{Error, Result};
use crate::geometry::PointCloud;

pub const DEFAULT_PRIOR_WEIGHT: f64 = 100.0;

/// Points declared to correspond across clouds, as `(cloud, point)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMatchSet {
    pub members: Vec<(usize, usize)>,
    pub weight: f64,
}

impl PriorMatchSet {
    pub fn new(members: Vec<(usize, usize)>, weight: f64) -> Result<Self> {
        if !(weight >= 1.0 && weight.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "weight",
                reason: format!("prior weight must be at least 1, got {weight}"),
            });
        }
        Ok(Self { members, weight })
    }
}

pub fn set_uniform_masses<const D: usize>(cloud: &PointCloud<D>, value: f64) -> Result<PointCloud<D>> {
    if !(value > 0.0 && value.is_finite()) {
        return Err(Error::NonPositive(value));
    }
    cloud.replace_masses(vec![value; cloud.len()])
}

/// Multiply the mass of every prior-matched point by its group weight.
pub fn apply_prior_matches<const D: usize>(
    clouds: &[PointCloud<D>],
    priors: &[PriorMatchSet],
) -> Result<Vec<PointCloud<D>>> {
    let mut masses: Vec<Vec<f64>> = clouds.iter().map(|c| c.masses().to_vec()).collect();
    for prior in priors {
        for &(cloud, point) in &prior.members {
            let slot = masses
                .get_mut(cloud)
                .and_then(|m| m.get_mut(point))
                .ok_or(Error::IndexOutOfRange { cloud, point })?;
            *slot *= prior.weight;
        }
    }
    clouds
        .iter()
        .zip(masses)
        .map(|(c, m)| c.replace_masses(m))
        .collect()
}

/// `mass = lo + (hi - lo) * intensity`, clamped to `[lo, hi]`.
pub fn masses_from_intensity<const D: usize>(cloud: &PointCloud<D>, lo: f64, hi: f64) -> Result<PointCloud<D>> {
    if !(lo > 0.0) {
        return Err(Error::NonPositive(lo));
    }
    if !(hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidParameter {
            name: "hi",
            reason: format!("must be finite and at least lo={lo}, got {hi}"),
        });
    }
    let intensities = cloud.intensities().ok_or(Error::MissingIntensities)?;
    let masses = intensities
        .iter()
        .map(|v| (lo + (hi - lo) * v).clamp(lo, hi))
        .collect();
    cloud.replace_masses(masses)
}
