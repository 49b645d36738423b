//! Alignment error measures.

use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};

/// Average relative Frobenius error over all unordered pairs of clouds with
/// point-wise correspondence by index:
///
/// `mean over i < j of |A_i - A_j|_F / |A_i|_F`, where `A_k` holds the points of
/// cloud `k` moved by `transforms[k]`.
pub fn e3d<const D: usize>(clouds: &[PointCloud<D>], transforms: &[RigidTransform<D>]) -> Result<f64> {
    if clouds.len() != transforms.len() {
        return Err(Error::CountMismatch {
            clouds: clouds.len(),
            transforms: transforms.len(),
        });
    }
    if clouds.len() < 2 {
        return Err(Error::TooFewClouds {
            needed: 2,
            got: clouds.len(),
        });
    }
    let n = clouds[0].len();
    if let Some(c) = clouds.iter().find(|c| c.len() != n) {
        return Err(Error::CardinalityMismatch(n, c.len()));
    }
    let moved: Vec<_> = clouds
        .iter()
        .zip(transforms)
        .map(|(c, t)| t.apply_all(c.points()))
        .collect();
    let mut sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..moved.len() {
        let norm_i = moved[i].iter().map(|p| p.norm_squared()).sum::<f64>().sqrt();
        for j in (i + 1)..moved.len() {
            let diff = moved[i]
                .iter()
                .zip(&moved[j])
                .map(|(a, b)| (a - b).norm_squared())
                .sum::<f64>()
                .sqrt();
            sum += diff / norm_i;
            pairs += 1;
        }
    }
    Ok(sum / pairs as f64)
}

/// Geodesic rotation error in degrees and translation error in world units.
pub fn transform_error<const D: usize>(estimated: &RigidTransform<D>, truth: &RigidTransform<D>) -> (f64, f64) {
    let relative = estimated.compose(&truth.inverse());
    let angle = relative.angle().abs().to_degrees();
    let translation = (estimated.translation() - truth.translation()).norm();
    (angle, translation)
}
