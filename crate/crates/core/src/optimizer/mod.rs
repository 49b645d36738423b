//! Alternating, Huber-robustified least-squares minimisation of the tree
//! energy over all rigid transforms.
//!
//! Every outer iteration moves all sets into the world frame with their
//! current transforms, builds one joint tree, and then sweeps the sets in
//! label order. Each set fetches its clusters once (its own mass hidden),
//! runs one or two LM iterations on a delta transform starting at identity,
//! and composes the delta onto its transform. The tree is not rebuilt inside
//! a sweep.

mod correspondences;
mod kernel;
pub mod lm;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bhtree::DEFAULT_DEPTH_CAP;
use crate::energy::{build_world_tree, check_theta, world_points};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};

pub use correspondences::{extract_correspondences, Match};
pub use lm::{lm_step, Evaluation, Huber, LmState, Residuals, TreeResiduals};

/// Solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Tree opening parameter; larger is more accurate and slower.
    pub theta: f64,
    /// Huber threshold in world units, within `[1e-4, 0.1]`.
    pub huber_eps: f64,
    pub max_outer_iters: usize,
    /// LM iterations per set and tree rebuild, 1 or 2.
    pub inner_lm_iters: usize,
    /// Stop when the relative energy change between outer iterations drops below this.
    pub gpe_rel_tol: f64,
    pub depth_cap: usize,
    /// Move every cloud's centroid to the origin before optimising.
    pub center_clouds_first: bool,
    /// Recorded with results; the solver itself is deterministic.
    pub seed: u64,
    /// Emit one `log::info!` line per outer iteration.
    pub log_iterations: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            theta: 12.0,
            huber_eps: 1e-3,
            max_outer_iters: 100,
            inner_lm_iters: 2,
            gpe_rel_tol: 1e-6,
            depth_cap: DEFAULT_DEPTH_CAP,
            center_clouds_first: true,
            seed: 0,
            log_iterations: false,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        check_theta(self.theta)?;
        if !(1e-4..=0.1).contains(&self.huber_eps) {
            return Err(Error::InvalidParameter {
                name: "huber_eps",
                reason: format!("must lie in [1e-4, 0.1], got {}", self.huber_eps),
            });
        }
        if !(1..=2).contains(&self.inner_lm_iters) {
            return Err(Error::InvalidParameter {
                name: "inner_lm_iters",
                reason: format!("must be 1 or 2, got {}", self.inner_lm_iters),
            });
        }
        if self.max_outer_iters == 0 {
            return Err(Error::InvalidParameter {
                name: "max_outer_iters",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.gpe_rel_tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "gpe_rel_tol",
                reason: format!("must be positive, got {}", self.gpe_rel_tol),
            });
        }
        if self.depth_cap == 0 {
            return Err(Error::InvalidParameter {
                name: "depth_cap",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct AlignResult<const D: usize> {
    /// World-frame pose of every input cloud.
    pub transforms: Vec<RigidTransform<D>>,
    /// Tree energy at the start of each outer iteration.
    pub gpe_trace: Vec<f64>,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Seconds.
    pub wall_time: f64,
}

/// Align all clouds jointly, starting from identity poses.
pub fn align<const D: usize>(clouds: &[PointCloud<D>], config: &AlignConfig) -> Result<AlignResult<D>> {
    let initial = vec![RigidTransform::identity(); clouds.len()];
    align_from(clouds, &initial, config)
}

/// Align all clouds starting from the given poses.
pub fn align_from<const D: usize>(
    clouds: &[PointCloud<D>],
    initial: &[RigidTransform<D>],
    config: &AlignConfig,
) -> Result<AlignResult<D>> {
    let start = Instant::now();
    config.validate()?;
    if clouds.iter().all(|c| c.is_empty()) {
        return Err(Error::EmptyInput);
    }
    crate::energy::check_inputs(clouds, initial)?;

    let huber = Huber::new(config.huber_eps);
    let mut transforms = initial.to_vec();
    if config.center_clouds_first {
        for (t, cloud) in transforms.iter_mut().zip(clouds) {
            let c = t.apply(&cloud.centroid());
            *t = RigidTransform::from_translation(-c).compose(t);
        }
    }
    let mut damping = vec![LmState::default(); clouds.len()];
    let mut lists = lm::ClusterLists::default();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..config.max_outer_iters {
        iterations = iter + 1;
        let world = world_points(clouds, &transforms);
        let tree = build_world_tree(&world, clouds, config.depth_cap)?;

        let mut energy = 0.0;
        let mut updates = 0;
        let mut max_step = 0.0f64;
        for l in 0..clouds.len() {
            let residuals = TreeResiduals {
                tree: &tree,
                points: &world[l],
                masses: clouds[l].masses(),
                label: l,
                theta: config.theta,
            };
            let mut current = lists.fill(&residuals, huber);
            let residuals = lm::CachedResiduals {
                residuals: &residuals,
                lists: &lists,
            };
            let mut delta = RigidTransform::identity();
            check_finite(l, &current)?;
            energy += current.energy;
            let mut moved = false;
            for _ in 0..config.inner_lm_iters {
                let outcome = lm::lm_iterate(&residuals, &delta, &current, &mut damping[l], huber);
                check_finite(l, &outcome.evaluation)?;
                if !outcome.accepted {
                    break;
                }
                moved = true;
                delta = outcome.delta;
                current = outcome.evaluation;
            }
            if moved {
                updates += 1;
                max_step = max_step.max(delta.params().norm());
                transforms[l] = delta.compose(&transforms[l]);
            }
        }

        if config.log_iterations {
            log::info!("iter={iter} gpe={energy:.9e} set_updates={updates} max_step={max_step:.3e}");
        }
        let previous = trace.last().copied();
        trace.push(energy);
        if let Some(prev) = previous {
            if (energy - prev).abs() / prev.max(f64::MIN_POSITIVE) < config.gpe_rel_tol {
                converged = true;
                break;
            }
        }
        if updates == 0 {
            // nothing moved, so the next sweep would see the same tree
            converged = true;
            break;
        }
    }

    Ok(AlignResult {
        transforms,
        gpe_trace: trace,
        outer_iterations: iterations,
        converged,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn check_finite(set: usize, eval: &Evaluation) -> Result<()> {
    if eval.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteEnergy {
            set,
            detail: format!("cost={} energy={}", eval.cost, eval.energy),
        })
    }
}
