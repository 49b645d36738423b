//! Multi-body gravitational potential energy: the exact all-pairs sum and the
//! tree-approximated version, plus residual assembly for one set.
//!
//! Both energies sum over ordered pairs, so every cross-set interaction is
//! counted once from each side.

use rayon::prelude::*;

use crate::bhtree::{BhTree, Cluster, DEFAULT_DEPTH_CAP};
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, RigidTransform};

/// Largest instance `gpe_exact` accepts without forcing.
pub const EXACT_POINT_LIMIT: usize = 20_000;

/// Points per parallel work unit. Partial sums are combined in chunk order so
/// results do not depend on the thread count.
pub(crate) const CHUNK: usize = 256;

/// One point-cluster interaction of set `set_label`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualTerm<const D: usize> {
    pub set_label: usize,
    pub point_index: usize,
    /// World position of the point when the cluster was fetched.
    pub point: Point<D>,
    pub cluster: Cluster<D>,
    /// `m_point * m_cluster`
    pub weight: f64,
}

pub(crate) fn check_inputs<const D: usize>(
    clouds: &[PointCloud<D>],
    transforms: &[RigidTransform<D>],
) -> Result<()> {
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
    Ok(())
}

/// Points of every cloud moved into the world frame.
pub fn world_points<const D: usize>(
    clouds: &[PointCloud<D>],
    transforms: &[RigidTransform<D>],
) -> Vec<Vec<Point<D>>> {
    clouds
        .iter()
        .zip(transforms)
        .map(|(c, t)| t.apply_all(c.points()))
        .collect()
}

pub(crate) fn build_world_tree<const D: usize>(
    world: &[Vec<Point<D>>],
    clouds: &[PointCloud<D>],
    depth_cap: usize,
) -> Result<BhTree<D>> {
    let sets: Vec<_> = world
        .iter()
        .zip(clouds)
        .map(|(w, c)| (w.as_slice(), c.masses()))
        .collect();
    BhTree::build(&sets, depth_cap)
}

/// Exact energy by direct double loop. Refuses instances above
/// [`EXACT_POINT_LIMIT`] points; see [`gpe_exact_forced`].
pub fn gpe_exact<const D: usize>(clouds: &[PointCloud<D>], transforms: &[RigidTransform<D>]) -> Result<f64> {
    let points: usize = clouds.iter().map(PointCloud::len).sum();
    if points > EXACT_POINT_LIMIT {
        return Err(Error::InstanceTooLarge {
            points,
            limit: EXACT_POINT_LIMIT,
        });
    }
    gpe_exact_forced(clouds, transforms)
}

pub fn gpe_exact_forced<const D: usize>(
    clouds: &[PointCloud<D>],
    transforms: &[RigidTransform<D>],
) -> Result<f64> {
    check_inputs(clouds, transforms)?;
    let world = world_points(clouds, transforms);
    let mut total = 0.0;
    for (l, (pts, cloud)) in world.iter().zip(clouds).enumerate() {
        let partials: Vec<f64> = pts
            .par_chunks(CHUNK)
            .zip(cloud.masses().par_chunks(CHUNK))
            .map(|(chunk, masses)| {
                let mut acc = 0.0;
                for (p, m) in chunk.iter().zip(masses) {
                    for (k, (other, other_cloud)) in world.iter().zip(clouds).enumerate() {
                        if k == l {
                            continue;
                        }
                        for (q, mq) in other.iter().zip(other_cloud.masses()) {
                            acc += m * mq * (p - q).norm();
                        }
                    }
                }
                acc
            })
            .collect();
        total += partials.iter().sum::<f64>();
    }
    Ok(total)
}

/// Tree-approximated energy with the default depth cap.
pub fn gpe_tree<const D: usize>(
    clouds: &[PointCloud<D>],
    transforms: &[RigidTransform<D>],
    theta: f64,
) -> Result<f64> {
    gpe_tree_with_depth(clouds, transforms, theta, DEFAULT_DEPTH_CAP)
}

pub fn gpe_tree_with_depth<const D: usize>(
    clouds: &[PointCloud<D>],
    transforms: &[RigidTransform<D>],
    theta: f64,
    depth_cap: usize,
) -> Result<f64> {
    check_inputs(clouds, transforms)?;
    check_theta(theta)?;
    let world = world_points(clouds, transforms);
    let tree = build_world_tree(&world, clouds, depth_cap)?;
    Ok((0..clouds.len())
        .map(|l| set_energy(&tree, &world[l], clouds[l].masses(), l, theta))
        .sum())
}

pub(crate) fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "theta",
            reason: format!("must be positive and finite, got {theta}"),
        })
    }
}

/// Contribution of set `label` to the tree energy: its points, at the world
/// positions the tree was built with, against the other sets' clusters.
pub fn set_energy<const D: usize>(
    tree: &BhTree<D>,
    world: &[Point<D>],
    masses: &[f64],
    label: usize,
    theta: f64,
) -> f64 {
    let partials: Vec<f64> = world
        .par_chunks(CHUNK)
        .zip(masses.par_chunks(CHUNK))
        .map(|(pts, ms)| {
            let mut acc = 0.0;
            for (p, m) in pts.iter().zip(ms) {
                let mut inner = 0.0;
                tree.for_each_cluster(p, Some(label), theta, |_, c| {
                    inner += c.mass * (p - c.position).norm();
                });
                acc += m * inner;
            }
            acc
        })
        .collect();
    partials.iter().sum()
}

/// Materialised residuals of set `set_label` against the clusters of `tree`,
/// which must have been built on the clouds in the poses `transforms`.
/// Terms come in point order, then traversal order.
pub fn build_residuals<const D: usize>(
    clouds: &[PointCloud<D>],
    transforms: &[RigidTransform<D>],
    tree: &BhTree<D>,
    set_label: usize,
    theta: f64,
) -> Result<Vec<ResidualTerm<D>>> {
    check_inputs(clouds, transforms)?;
    check_theta(theta)?;
    let cloud = &clouds[set_label];
    let transform = &transforms[set_label];
    let mut terms = Vec::new();
    for (i, (p, m)) in cloud.points().iter().zip(cloud.masses()).enumerate() {
        let point = transform.apply(p);
        tree.for_each_cluster(&point, Some(set_label), theta, |_, cluster| {
            terms.push(ResidualTerm {
                set_label,
                point_index: i,
                point,
                cluster,
                weight: m * cluster.mass,
            });
        });
    }
    Ok(terms)
}
