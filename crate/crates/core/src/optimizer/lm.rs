//! Huber-robustified Levenberg-Marquardt on a single rigid delta transform.
//!
//! The residual of a point-cluster pair is the Euclidean distance between the
//! moved point and the cluster, weighted by the product of their masses. The
//! robust cost is `sum w * rho(d)` and the normal equations use the iteratively
//! reweighted form `H = sum w rho'(d)/d J^T J`, `g = sum w rho'(d)/d J^T e`.
//!
//! Within a point all clusters share the same Jacobian, so the tree-backed
//! residuals only accumulate the scalar weight sum and the weighted residual
//! vector per point.

use nalgebra::{DMatrix, DVector, SMatrix};
use rayon::prelude::*;

use super::kernel::{accumulate, RawSums};
use crate::bhtree::{chunk_clusters, list_index, BhTree, ChunkClusters, QUERY_LEVELS};
use crate::energy::{ResidualTerm, CHUNK};
use crate::geometry::{Params, Point, RigidTransform};

pub type Hessian = SMatrix<f64, 6, 6>;

const MAX_RETRIES: usize = 8;
const LAMBDA_UP: f64 = 10.0;
const LAMBDA_DOWN: f64 = 3.0;
const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e12;
const DIAG_FLOOR: f64 = 1e-12;

/// Huber loss on a non-negative distance: quadratic below `eps`, linear above.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Huber {
    pub eps: f64,
}

impl Huber {
    pub fn new(eps: f64) -> Self {
        Self { eps }
    }

    #[inline]
    pub fn rho(&self, d: f64) -> f64 {
        if d <= self.eps {
            0.5 * d * d
        } else {
            self.eps * (d - 0.5 * self.eps)
        }
    }

    /// `rho'(d) / d`
    #[inline]
    pub fn irls_weight(&self, d: f64) -> f64 {
        if d <= self.eps {
            1.0
        } else {
            self.eps / d
        }
    }
}

/// Damping carried between LM steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmState {
    pub lambda: f64,
}

impl Default for LmState {
    fn default() -> Self {
        Self { lambda: 1e-4 }
    }
}

/// Cost, raw energy and normal equations at one delta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// `sum w * rho(d)`
    pub cost: f64,
    /// `sum w * d`, the energy of the residual set
    pub energy: f64,
    pub hessian: Hessian,
    pub gradient: Params,
    pub terms: usize,
}

impl Evaluation {
    fn zero() -> Self {
        Self {
            cost: 0.0,
            energy: 0.0,
            hessian: Hessian::zeros(),
            gradient: Params::zeros(),
            terms: 0,
        }
    }

    fn merge(mut self, other: &Self) -> Self {
        self.cost += other.cost;
        self.energy += other.energy;
        self.hessian += other.hessian;
        self.gradient += other.gradient;
        self.terms += other.terms;
        self
    }

    pub fn is_finite(&self) -> bool {
        self.cost.is_finite()
            && self.energy.is_finite()
            && self.hessian.iter().all(|v| v.is_finite())
            && self.gradient.iter().all(|v| v.is_finite())
    }
}

/// A set of weighted point-cluster residuals that can be evaluated at a delta.
pub trait Residuals<const D: usize>: Sync {
    fn evaluate(&self, delta: &RigidTransform<D>, huber: Huber) -> Evaluation;
}

/// Scalar weight sum and weighted residual vector of one point.
struct PointSums<const D: usize> {
    cost: f64,
    energy: f64,
    omega: f64,
    weighted: Point<D>,
    terms: usize,
}

impl<const D: usize> PointSums<D> {
    fn new() -> Self {
        Self {
            cost: 0.0,
            energy: 0.0,
            omega: 0.0,
            weighted: Point::zeros(),
            terms: 0,
        }
    }

    #[inline]
    fn add(&mut self, moved: &Point<D>, cluster: &Point<D>, weight: f64, huber: Huber) {
        let e = moved - cluster;
        let d = e.norm();
        let omega = weight * huber.irls_weight(d);
        self.cost += weight * huber.rho(d);
        self.energy += weight * d;
        self.omega += omega;
        self.weighted += e * omega;
        self.terms += 1;
    }

    fn fold_into(&self, jac: &SMatrix<f64, D, 6>, out: &mut Evaluation) {
        out.cost += self.cost;
        out.energy += self.energy;
        out.terms += self.terms;
        out.hessian += jac.transpose() * jac * self.omega;
        out.gradient += jac.transpose() * self.weighted;
    }
}

impl<const D: usize> Residuals<D> for [ResidualTerm<D>] {
    fn evaluate(&self, delta: &RigidTransform<D>, huber: Huber) -> Evaluation {
        let partials: Vec<Evaluation> = self
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut out = Evaluation::zero();
                for t in chunk {
                    let mut sums = PointSums::new();
                    sums.add(&delta.apply(&t.point), &t.cluster.position, t.weight, huber);
                    sums.fold_into(&delta.point_jacobian(&t.point), &mut out);
                }
                out
            })
            .collect();
        partials.iter().fold(Evaluation::zero(), |acc, p| acc.merge(p))
    }
}

impl<const D: usize> Residuals<D> for Vec<ResidualTerm<D>> {
    fn evaluate(&self, delta: &RigidTransform<D>, huber: Huber) -> Evaluation {
        self.as_slice().evaluate(delta, huber)
    }
}

/// Residuals of one set against a tree, fetched lazily. The query position of
/// every point is its world position at construction, so the cluster sets stay
/// fixed however the delta moves the points.
#[derive(Clone, Copy)]
pub struct TreeResiduals<'a, const D: usize> {
    pub tree: &'a BhTree<D>,
    pub points: &'a [Point<D>],
    pub masses: &'a [f64],
    pub label: usize,
    pub theta: f64,
}

impl<const D: usize> Residuals<D> for TreeResiduals<'_, D> {
    fn evaluate(&self, delta: &RigidTransform<D>, huber: Huber) -> Evaluation {
        let partials: Vec<Evaluation> = self
            .points
            .par_chunks(CHUNK)
            .zip(self.masses.par_chunks(CHUNK))
            .map(|(pts, ms)| {
                let mut out = Evaluation::zero();
                for (p, &m) in pts.iter().zip(ms) {
                    if m <= 0.0 {
                        continue;
                    }
                    let moved = delta.apply(p);
                    let mut sums = PointSums::new();
                    self.tree
                        .for_each_cluster(p, Some(self.label), self.theta, |_, c| {
                            sums.add(&moved, &c.position, m * c.mass, huber);
                        });
                    sums.fold_into(&delta.point_jacobian(p), &mut out);
                }
                out
            })
            .collect();
        partials.iter().fold(Evaluation::zero(), |acc, p| acc.merge(p))
    }
}

/// Upper bound on cached cluster references, 4 bytes each.
const CACHE_ENTRIES: usize = 1 << 27;

/// Chunks filled per batch and thread.
const CHUNKS_PER_THREAD: usize = 4;

/// Cluster lists of one set, fetched once and reused by every evaluation of
/// that set. Points are taken in spatial order in chunks of [`CHUNK`]; chunks
/// past the memory budget are left uncached and traverse the tree on every
/// evaluation. The buffers are kept between fills.
#[derive(Debug, Default)]
pub(crate) struct ClusterLists {
    order: Vec<u32>,
    chunks: Vec<ChunkClusters>,
    cached: usize,
}

/// Kernel input for a point moved to `y`.
fn padded<const D: usize>(y: &Point<D>) -> [f64; 3] {
    let mut out = [0.0; 3];
    out[..D].copy_from_slice(y.as_slice());
    out
}

/// Evaluation of the chunk `indices` of `residuals`, whose clusters are in
/// `lists`.
fn evaluate_chunk<const D: usize>(
    residuals: &TreeResiduals<'_, D>,
    packed: &[[f64; 4]],
    indices: &[u32],
    lists: &ChunkClusters,
    delta: &RigidTransform<D>,
    huber: Huber,
) -> Evaluation {
    let mut out = Evaluation::zero();
    for (j, &i) in indices.iter().enumerate() {
        let (p, m) = (&residuals.points[i as usize], residuals.masses[i as usize]);
        if m <= 0.0 {
            continue;
        }
        let y = padded(&delta.apply(p));
        let mut raw = RawSums::default();
        let mut terms = 0;
        for level in 0..QUERY_LEVELS.len() {
            let (a, b) = lists.ranges[list_index(level, j)];
            accumulate(y, &lists.entries[a..b], packed, huber.eps, &mut raw);
            terms += b - a;
        }
        if terms == 0 {
            continue;
        }
        let jac = delta.point_jacobian(p);
        let weighted = Point::<D>::from_column_slice(&raw.weighted[..D]);
        out.cost += m * raw.cost;
        out.energy += m * raw.energy;
        out.terms += terms;
        out.hessian += jac.transpose() * jac * (m * raw.omega);
        out.gradient += jac.transpose() * weighted * m;
    }
    out
}

fn fetch_chunk<const D: usize>(residuals: &TreeResiduals<'_, D>, indices: &[u32], lists: &mut ChunkClusters) {
    let walk = residuals.tree.walk_for(Some(residuals.label));
    let queries: Vec<&Point<D>> = indices.iter().map(|&i| &residuals.points[i as usize]).collect();
    chunk_clusters(walk, &queries, residuals.theta, lists);
}

impl ClusterLists {
    /// Fetch the clusters of every point of `residuals` and return the
    /// evaluation at the identity.
    pub(crate) fn fill<const D: usize>(&mut self, residuals: &TreeResiduals<'_, D>, huber: Huber) -> Evaluation {
        self.fill_within(residuals, huber, CACHE_ENTRIES)
    }

    fn fill_within<const D: usize>(
        &mut self,
        residuals: &TreeResiduals<'_, D>,
        huber: Huber,
        budget: usize,
    ) -> Evaluation {
        let packed = residuals.tree.packed_for(Some(residuals.label));
        self.order = residuals.tree.spatial_order(residuals.label);
        let count = self.order.len().div_ceil(CHUNK);
        if self.chunks.len() < count {
            self.chunks.resize_with(count, ChunkClusters::default);
        }
        self.cached = 0;
        let identity = RigidTransform::<D>::identity();
        let batch = CHUNKS_PER_THREAD * rayon::current_num_threads();
        let mut total = Evaluation::zero();
        let mut stored = 0;
        let mut caching = true;
        for first in (0..count).step_by(batch) {
            let last = (first + batch).min(count);
            let order = &self.order[first * CHUNK..(last * CHUNK).min(self.order.len())];
            let evaluations: Vec<Evaluation> = self.chunks[first..last]
                .par_iter_mut()
                .zip(order.par_chunks(CHUNK))
                .map(|(lists, indices)| {
                    fetch_chunk(residuals, indices, lists);
                    evaluate_chunk(residuals, packed, indices, lists, &identity, huber)
                })
                .collect();
            for (k, eval) in evaluations.iter().enumerate() {
                total = total.merge(eval);
                let lists = &mut self.chunks[first + k];
                if caching && stored + lists.entries.len() <= budget {
                    stored += lists.entries.len();
                    self.cached += 1;
                } else {
                    caching = false;
                    *lists = ChunkClusters::default();
                }
            }
        }
        total
    }
}

/// Tree-backed residuals of one set evaluated through its [`ClusterLists`].
pub(crate) struct CachedResiduals<'a, const D: usize> {
    pub(crate) residuals: &'a TreeResiduals<'a, D>,
    pub(crate) lists: &'a ClusterLists,
}

impl<const D: usize> Residuals<D> for CachedResiduals<'_, D> {
    fn evaluate(&self, delta: &RigidTransform<D>, huber: Huber) -> Evaluation {
        let residuals = self.residuals;
        let packed = residuals.tree.packed_for(Some(residuals.label));
        let lists = self.lists;
        let partials: Vec<Evaluation> = lists
            .order
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(chunk, indices)| {
                if chunk < lists.cached {
                    evaluate_chunk(residuals, packed, indices, &lists.chunks[chunk], delta, huber)
                } else {
                    let mut fresh = ChunkClusters::default();
                    fetch_chunk(residuals, indices, &mut fresh);
                    evaluate_chunk(residuals, packed, indices, &fresh, delta, huber)
                }
            })
            .collect();
        partials.iter().fold(Evaluation::zero(), |acc, p| acc.merge(p))
    }
}

/// Result of one damped step attempt sequence.
#[derive(Debug, Clone, Copy)]
pub(crate) struct StepOutcome<const D: usize> {
    pub delta: RigidTransform<D>,
    pub evaluation: Evaluation,
    pub accepted: bool,
}

/// Solve the damped normal equations for the active parameters.
fn solve_damped<const D: usize>(eval: &Evaluation, lambda: f64) -> Option<Params> {
    let dof = RigidTransform::<D>::DOF;
    let max_diag = (0..dof).map(|i| eval.hessian[(i, i)]).fold(0.0, f64::max);
    let floor = if max_diag > 0.0 { DIAG_FLOOR * max_diag } else { 1.0 };
    let mut a = DMatrix::<f64>::from_fn(dof, dof, |r, c| eval.hessian[(r, c)]);
    for i in 0..dof {
        a[(i, i)] += lambda * eval.hessian[(i, i)].max(floor);
    }
    let rhs = DVector::<f64>::from_fn(dof, |r, _| -eval.gradient[r]);
    let step = a.cholesky()?.solve(&rhs);
    if step.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut out = Params::zeros();
    out.rows_mut(0, dof).copy_from(&step);
    Some(out)
}

/// One LM iteration starting from `delta` whose evaluation is `current`.
/// Rejected steps raise the damping and retry; if every retry fails the delta
/// is returned unchanged.
pub(crate) fn lm_iterate<const D: usize, R: Residuals<D> + ?Sized>(
    residuals: &R,
    delta: &RigidTransform<D>,
    current: &Evaluation,
    state: &mut LmState,
    huber: Huber,
) -> StepOutcome<D> {
    let unchanged = StepOutcome {
        delta: *delta,
        evaluation: *current,
        accepted: false,
    };
    if current.terms == 0 || current.gradient.iter().all(|&g| g == 0.0) {
        return unchanged;
    }
    let params = delta.params();
    for _ in 0..=MAX_RETRIES {
        let Some(step) = solve_damped::<D>(current, state.lambda) else {
            state.lambda = (state.lambda * LAMBDA_UP).min(LAMBDA_MAX);
            continue;
        };
        let step_norm = step.norm();
        if step_norm <= f64::EPSILON * (1.0 + params.norm()) {
            return unchanged;
        }
        let candidate = RigidTransform::<D>::from_params(&(params + step));
        let eval = residuals.evaluate(&candidate, huber);
        if eval.cost < current.cost {
            state.lambda = (state.lambda / LAMBDA_DOWN).max(LAMBDA_MIN);
            return StepOutcome {
                delta: candidate,
                evaluation: eval,
                accepted: true,
            };
        }
        state.lambda = (state.lambda * LAMBDA_UP).min(LAMBDA_MAX);
    }
    unchanged
}

/// One Levenberg-Marquardt step on `residuals` from `current_delta`.
pub fn lm_step<const D: usize, R: Residuals<D> + ?Sized>(
    residuals: &R,
    current_delta: &RigidTransform<D>,
    damping: LmState,
    huber: Huber,
) -> (RigidTransform<D>, LmState) {
    let mut state = damping;
    let current = residuals.evaluate(current_delta, huber);
    let outcome = lm_iterate(residuals, current_delta, &current, &mut state, huber);
    (outcome.delta, state)
}

/// Gradient of the scalar distance `|g(delta, p) - c|` with respect to the
/// delta parameters.
pub fn distance_gradient<const D: usize>(delta: &RigidTransform<D>, p: &Point<D>, c: &Point<D>) -> Params {
    let e = delta.apply(p) - c;
    let d = e.norm();
    if d == 0.0 {
        return Params::zeros();
    }
    delta.point_jacobian(p).transpose() * (e / d)
}
