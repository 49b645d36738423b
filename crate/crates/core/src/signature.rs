//! Per-point cubic surface signature.
//!
//! Around every point we take the leaf points a tree query returns, express
//! them in the neighbourhood's PCA frame (origin at the query point, z along
//! the direction of least variance) and fit
//!
//! `z = a1 + a2 x + a3 y + a4 x^2 + a5 xy + a6 y^2 + a7 x^3 + a8 x^2 y + a9 x y^2 + a10 y^3`
//!
//! by least squares. The descriptor is `|a7| + |a10|`.

use std::ops::Range;

use nalgebra::{Matrix3, SMatrix, SVector, SymmetricEigen, Vector3};
use rayon::prelude::*;

use crate::bhtree::{chunk_clusters, list_index, BhTree, ChunkClusters, DEFAULT_DEPTH_CAP, QUERY_LEVELS};
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud};

/// Fewest points a fit accepts; two more than the number of coefficients.
pub const MIN_NEIGHBORS: usize = 12;
pub const DEFAULT_SIGNATURE_THETA: f64 = 16.0;
pub const DEFAULT_BOOST: f64 = 10.0;
pub const DEFAULT_QUANTILE: f64 = 0.9;
pub const MAX_CONDITION: f64 = 1e12;

const MAX_DOUBLINGS: usize = 4;

type Coefficients = SVector<f64, 10>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceFit {
    /// `a1..a10` in the monomial order above.
    pub coefficients: [f64; 10],
    pub neighbors: usize,
    /// Condition estimate of the (coordinate-scaled) normal equations.
    pub condition: f64,
}

impl SurfaceFit {
    /// Sum of squared residuals over `points` (local frame).
    pub fn residual(&self, points: &[Vector3<f64>]) -> f64 {
        let a = Coefficients::from(self.coefficients);
        points
            .iter()
            .map(|p| {
                let r = p.z - monomials(p.x, p.y).dot(&a);
                r * r
            })
            .sum()
    }
}

fn monomials(x: f64, y: f64) -> Coefficients {
    Coefficients::from([1.0, x, y, x * x, x * y, y * y, x * x * x, x * x * y, x * y * y, y * y * y])
}

// powers of (x, y) per coefficient
const EXPONENTS: [(usize, usize); 10] = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)];

/// Neighbourhood of point `i`: the leaf points of a theta-query on a tree
/// over this cloud alone.
pub fn local_neighborhood(cloud: &PointCloud<3>, i: usize, theta: f64) -> Result<Vec<Point<3>>> {
    check_cloud(cloud)?;
    check_signature_theta(theta)?;
    if i >= cloud.len() {
        return Err(Error::IndexOutOfRange {
            cloud: cloud.id(),
            point: i,
        });
    }
    let tree = single_tree(cloud)?;
    Ok(neighborhood_in(&tree, cloud, i, theta))
}

fn check_cloud(cloud: &PointCloud<3>) -> Result<()> {
    if cloud.len() < MIN_NEIGHBORS {
        return Err(Error::TooFewPoints {
            needed: MIN_NEIGHBORS,
            found: cloud.len(),
        });
    }
    Ok(())
}

fn check_signature_theta(theta: f64) -> Result<()> {
    if theta > 8.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "theta",
            reason: format!("signature neighbourhoods need theta > 8, got {theta}"),
        })
    }
}

/// Per-cloud tree built in the principal-axes frame of the whole cloud, so
/// its cells, and with them the neighbourhoods, move with the cloud.
struct CloudTree {
    tree: BhTree<3>,
    canonical: Vec<Point<3>>,
}

fn single_tree(cloud: &PointCloud<3>) -> Result<CloudTree> {
    let canonical = project(cloud.points(), &cloud.centroid(), &principal_axes(cloud.points()));
    let tree = BhTree::build(&[(&canonical, cloud.masses())], DEFAULT_DEPTH_CAP)?;
    Ok(CloudTree { tree, canonical })
}

fn neighborhood_in(tree: &CloudTree, cloud: &PointCloud<3>, i: usize, theta: f64) -> Vec<Point<3>> {
    let points = cloud.points();
    let mut theta = theta;
    for _ in 0..=MAX_DOUBLINGS {
        let found = tree.tree.fetch_leaf_points(&tree.canonical[i], None, theta);
        if found.len() >= MIN_NEIGHBORS {
            return found.into_iter().map(|(_, k)| points[k]).collect();
        }
        theta *= 2.0;
    }
    nearest(points, &points[i], MIN_NEIGHBORS)
}

fn nearest(points: &[Point<3>], query: &Point<3>, k: usize) -> Vec<Point<3>> {
    let mut by_distance: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(j, p)| ((p - query).norm_squared(), j))
        .collect();
    by_distance.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
    by_distance[..k].iter().map(|&(_, j)| points[j]).collect()
}

/// Principal axes of `points`, by decreasing variance.
fn principal_axes(points: &[Point<3>]) -> [Vector3<f64>; 3] {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov / n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    order.map(|k| eig.eigenvectors.column(k).into_owned())
}

fn project(points: &[Point<3>], origin: &Point<3>, axes: &[Vector3<f64>; 3]) -> Vec<Vector3<f64>> {
    points
        .iter()
        .map(|p| {
            let d = p - origin;
            Vector3::new(d.dot(&axes[0]), d.dot(&axes[1]), d.dot(&axes[2]))
        })
        .collect()
}

/// Express `points` in the PCA frame of the set, centred on `origin`.
pub fn local_frame(points: &[Point<3>], origin: &Point<3>) -> Vec<Vector3<f64>> {
    project(points, origin, &principal_axes(points))
}

/// Least-squares cubic height field through `points`, already in the local
/// frame.
pub fn fit_cubic_surface(points: &[Vector3<f64>]) -> Result<SurfaceFit> {
    fit_with(points.len(), || points.iter().copied())
}

// (a, b) with a + b <= 6: the moments sum(u^a v^b) the normal matrix is made of
const MOMENTS: [(usize, usize); 28] = {
    let mut out = [(0, 0); 28];
    let mut k = 0;
    let mut a = 0;
    while a <= 6 {
        let mut b = 0;
        while a + b <= 6 {
            out[k] = (a, b);
            k += 1;
            b += 1;
        }
        a += 1;
    }
    out
};

const fn moment_slot(a: usize, b: usize) -> usize {
    let mut k = 0;
    while MOMENTS[k].0 != a || MOMENTS[k].1 != b {
        k += 1;
    }
    k
}

/// `MOMENT_OF[i][j]`: moment slot of entry `(i, j)` of the normal matrix.
const MOMENT_OF: [[usize; 10]; 10] = {
    let mut out = [[0; 10]; 10];
    let mut i = 0;
    while i < 10 {
        let mut j = 0;
        while j < 10 {
            out[i][j] = moment_slot(EXPONENTS[i].0 + EXPONENTS[j].0, EXPONENTS[i].1 + EXPONENTS[j].1);
            j += 1;
        }
        i += 1;
    }
    out
};

/// Fit over `n` points produced (twice) by `points`.
fn fit_with<I: Iterator<Item = Vector3<f64>>>(n: usize, points: impl Fn() -> I) -> Result<SurfaceFit> {
    if n < MIN_NEIGHBORS {
        return Err(Error::TooFewPoints {
            needed: MIN_NEIGHBORS,
            found: n,
        });
    }
    // scale x, y to unit range so the normal matrix is not dominated by
    // the cubic columns
    let scale = points().map(|p| p.x.abs().max(p.y.abs())).fold(0.0, f64::max);
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::IllConditioned {
            condition: f64::INFINITY,
        });
    }
    let inv = 1.0 / scale;
    let mut moments = [0.0; 28];
    let mut rhs = [0.0; 10];
    for p in points() {
        let (u, v) = (p.x * inv, p.y * inv);
        let mut pu = [1.0; 7];
        let mut pv = [1.0; 7];
        for k in 1..7 {
            pu[k] = pu[k - 1] * u;
            pv[k] = pv[k - 1] * v;
        }
        // same (a, b) order as MOMENTS
        let mut k = 0;
        for (a, &ua) in pu.iter().enumerate() {
            for &vb in &pv[..7 - a] {
                moments[k] += ua * vb;
                k += 1;
            }
        }
        let z = [p.z, p.z * u, p.z * v, p.z * u * u, p.z * u * v, p.z * v * v];
        rhs[0] += z[0];
        rhs[1] += z[1];
        rhs[2] += z[2];
        rhs[3] += z[3];
        rhs[4] += z[4];
        rhs[5] += z[5];
        rhs[6] += z[3] * u;
        rhs[7] += z[3] * v;
        rhs[8] += z[5] * u;
        rhs[9] += z[5] * v;
    }
    let normal = SMatrix::<f64, 10, 10>::from_fn(|i, j| moments[MOMENT_OF[i][j]]);
    let eig = normal.symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition <= MAX_CONDITION) {
        return Err(Error::IllConditioned { condition });
    }
    let solution = normal
        .cholesky()
        .ok_or(Error::IllConditioned { condition })?
        .solve(&Coefficients::from(rhs));
    let mut coefficients = [0.0; 10];
    for (k, c) in coefficients.iter_mut().enumerate() {
        let (a, b) = EXPONENTS[k];
        *c = solution[k] / scale.powi((a + b) as i32);
    }
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::IllConditioned { condition });
    }
    Ok(SurfaceFit {
        coefficients,
        neighbors: n,
        condition,
    })
}

pub fn shape_descriptor(fit: &SurfaceFit) -> f64 {
    fit.coefficients[6].abs() + fit.coefficients[9].abs()
}

/// Descriptor of every point; points whose fit is ill-conditioned get 0.
pub fn compute_descriptors(cloud: &PointCloud<3>, theta: f64) -> Result<Vec<f64>> {
    check_cloud(cloud)?;
    check_signature_theta(theta)?;
    let tree = single_tree(cloud)?;
    let points = cloud.points();
    let walk = tree.tree.walk_for(None);
    // nearby queries share one traversal; the per-point leaf sets are the
    // same as those of single queries
    let order = tree.tree.spatial_order(0);
    // leaves cover contiguous runs of this copy
    let in_tree_order: Vec<Point<3>> = order.iter().map(|&i| points[i as usize]).collect();
    let per_chunk: Vec<Vec<(u32, f64)>> = order
        .par_chunks(QUERY_LEVELS[0])
        .map_init(
            || (ChunkClusters::default(), Vec::<Range<usize>>::new(), Vec::new(), Vec::new()),
            |(lists, leaves, spans, hood), indices| {
                let queries: Vec<&Point<3>> = indices.iter().map(|&i| &tree.canonical[i as usize]).collect();
                chunk_clusters(walk, &queries, theta, lists);
                // every list reduced once to merged runs of leaf points
                leaves.clear();
                spans.clear();
                for &(a, b) in &lists.ranges {
                    let first = leaves.len();
                    for &pos in &lists.entries[a..b] {
                        if let Some(run) = tree.tree.walk_leaf_range(None, pos) {
                            if leaves.len() > first && leaves[leaves.len() - 1].end == run.start {
                                leaves.last_mut().unwrap().end = run.end;
                            } else {
                                leaves.push(run);
                            }
                        }
                    }
                    spans.push(first..leaves.len());
                }
                let mut out = Vec::with_capacity(indices.len());
                for (j, &i) in indices.iter().enumerate() {
                    hood.clear();
                    for level in 0..QUERY_LEVELS.len() {
                        for run in &leaves[spans[list_index(level, j)].clone()] {
                            hood.extend_from_slice(&in_tree_order[run.clone()]);
                        }
                    }
                    let d = if hood.len() >= MIN_NEIGHBORS {
                        descriptor_of(hood, &points[i as usize])
                    } else {
                        descriptor_of(&neighborhood_in(&tree, cloud, i as usize, theta), &points[i as usize])
                    };
                    out.push((i, d?));
                }
                Ok(out)
            },
        )
        .collect::<Result<_>>()?;
    let mut descriptors = vec![0.0; cloud.len()];
    for (i, d) in per_chunk.into_iter().flatten() {
        descriptors[i as usize] = d;
    }
    Ok(descriptors)
}

fn descriptor_of(hood: &[Point<3>], origin: &Point<3>) -> Result<f64> {
    let axes = principal_axes(hood);
    let local = |p: &Point<3>| {
        let d = p - origin;
        Vector3::new(d.dot(&axes[0]), d.dot(&axes[1]), d.dot(&axes[2]))
    };
    match fit_with(hood.len(), || hood.iter().map(local)) {
        Ok(fit) => Ok(shape_descriptor(&fit)),
        Err(Error::IllConditioned { .. }) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Multiply by `boost` the mass of every point whose descriptor lies strictly
/// above the `quantile` of all descriptors.
pub fn masses_from_signature(
    cloud: &PointCloud<3>,
    descriptors: &[f64],
    boost: f64,
    quantile_level: f64,
) -> Result<PointCloud<3>> {
    if descriptors.len() != cloud.len() {
        return Err(Error::InvalidParameter {
            name: "descriptors",
            reason: format!("{} descriptors for {} points", descriptors.len(), cloud.len()),
        });
    }
    if !(boost > 0.0 && boost.is_finite()) {
        return Err(Error::NonPositive(boost));
    }
    if !(0.0..=1.0).contains(&quantile_level) {
        return Err(Error::InvalidParameter {
            name: "quantile",
            reason: format!("must lie in [0, 1], got {quantile_level}"),
        });
    }
    let threshold = quantile(descriptors, quantile_level);
    let masses = cloud
        .masses()
        .iter()
        .zip(descriptors)
        .map(|(&m, &d)| if d > threshold { m * boost } else { m })
        .collect();
    cloud.replace_masses(masses)
}
