//! Point clouds and rigid transforms for D = 2 and D = 3.
//!
//! Rotations are parametrised by a rotation vector (axis times angle). In the
//! plane the rotation vector is `(0, 0, angle)`, so both dimensions share one
//! code path and the 2D rotation matrix is the upper-left block of the 3D one.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point<const D: usize> = SVector<f64, D>;

/// Parameter vector of a rigid transform, rotation first, then translation.
/// Only the first [`RigidTransform::DOF`] entries are used.
pub type Params = SVector<f64, 6>;

const SMALL_ANGLE: f64 = 1e-8;

/// One input point set with per-point masses.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<const D: usize> {
    id: usize,
    points: Vec<Point<D>>,
    masses: Vec<f64>,
    intensities: Option<Vec<f64>>,
}

impl<const D: usize> PointCloud<D> {
    /// Cloud with unit masses.
    pub fn new(id: usize, points: Vec<Point<D>>) -> Result<Self> {
        let masses = vec![1.0; points.len()];
        Self::with_masses(id, points, masses)
    }

    pub fn with_masses(id: usize, points: Vec<Point<D>>, masses: Vec<f64>) -> Result<Self> {
        let cloud = Self {
            id,
            points,
            masses,
            intensities: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_intensities(mut self, intensities: Vec<f64>) -> Result<Self> {
        self.intensities = Some(intensities);
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        assert_supported::<D>();
        if self.points.is_empty() {
            return Err(Error::EmptyInput);
        }
        if self.points.len() != self.masses.len() {
            return Err(Error::InvalidCloud(format!(
                "{} points but {} masses",
                self.points.len(),
                self.masses.len()
            )));
        }
        if let Some(intensities) = &self.intensities {
            if intensities.len() != self.points.len() {
                return Err(Error::InvalidCloud(format!(
                    "{} points but {} intensities",
                    self.points.len(),
                    intensities.len()
                )));
            }
            if intensities.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidCloud("intensity outside [0, 1]".into()));
            }
        }
        if self.masses.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::InvalidCloud("masses must be finite and non-negative".into()));
        }
        if !self.masses.iter().any(|m| *m > 0.0) {
            return Err(Error::InvalidCloud("at least one mass must be positive".into()));
        }
        if self.points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::InvalidCloud("non-finite coordinate".into()));
        }
        Ok(())
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point<D>] {
        &self.points
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn intensities(&self) -> Option<&[f64]> {
        self.intensities.as_deref()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Replace the masses, keeping points and intensities.
    pub fn replace_masses(&self, masses: Vec<f64>) -> Result<Self> {
        let mut out = self.clone();
        out.masses = masses;
        out.validate()?;
        Ok(out)
    }

    pub fn centroid(&self) -> Point<D> {
        let sum = self.points.iter().fold(Point::<D>::zeros(), |acc, p| acc + p);
        sum / self.points.len() as f64
    }

    /// Radius of the smallest ball centred at the bounding-box centre that
    /// contains every point, doubled.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = bounding_box(&self.points);
        let center = (lo + hi) * 0.5;
        let radius = self
            .points
            .iter()
            .map(|p| (p - center).norm())
            .fold(0.0, f64::max);
        2.0 * radius
    }

    /// Subset of points (masses and intensities follow) in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let masses = indices.iter().map(|&i| self.masses[i]).collect();
        let mut out = Self::with_masses(self.id, points, masses)?;
        if let Some(intensities) = &self.intensities {
            out = out.with_intensities(indices.iter().map(|&i| intensities[i]).collect())?;
        }
        Ok(out)
    }

    pub(crate) fn map_points(&self, f: impl Fn(&Point<D>) -> Point<D>) -> Self {
        Self {
            id: self.id,
            points: self.points.iter().map(f).collect(),
            masses: self.masses.clone(),
            intensities: self.intensities.clone(),
        }
    }
}

pub fn bounding_box<const D: usize>(points: &[Point<D>]) -> (Point<D>, Point<D>) {
    let mut lo = Point::<D>::repeat(f64::INFINITY);
    let mut hi = Point::<D>::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    (lo, hi)
}

pub(crate) fn assert_supported<const D: usize>() {
    assert!(D == 2 || D == 3, "only D = 2 and D = 3 are supported, got {D}");
}

/// Rigid transform `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform<const D: usize> {
    rotation_vector: Vector3<f64>,
    rotation: SMatrix<f64, D, D>,
    translation: Point<D>,
}

impl<const D: usize> Default for RigidTransform<D> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<const D: usize> RigidTransform<D> {
    /// Number of rotation parameters: 1 in the plane, 3 in space.
    pub const ROTATION_DOF: usize = if D == 3 { 3 } else { 1 };
    /// Total number of free parameters.
    pub const DOF: usize = Self::ROTATION_DOF + D;

    pub fn identity() -> Self {
        assert_supported::<D>();
        Self {
            rotation_vector: Vector3::zeros(),
            rotation: SMatrix::identity(),
            translation: Point::zeros(),
        }
    }

    pub fn from_translation(translation: Point<D>) -> Self {
        Self {
            translation,
            ..Self::identity()
        }
    }

    /// Build from a rotation vector. In the plane only the z component is used.
    pub fn from_rotation_vector(rotation_vector: Vector3<f64>, translation: Point<D>) -> Self {
        assert_supported::<D>();
        let rotation_vector = if D == 2 {
            Vector3::new(0.0, 0.0, rotation_vector.z)
        } else {
            rotation_vector
        };
        let full = rodrigues(&rotation_vector);
        Self {
            rotation_vector,
            rotation: SMatrix::from_fn(|r, c| full[(r, c)]),
            translation,
        }
    }

    fn from_matrix(rotation: SMatrix<f64, D, D>, translation: Point<D>) -> Self {
        let rotation_vector = if D == 2 {
            Vector3::new(0.0, 0.0, rotation[(1, 0)].atan2(rotation[(0, 0)]))
        } else {
            log_so3(&Matrix3::from_fn(|r, c| rotation[(r, c)]))
        };
        Self {
            rotation_vector,
            rotation,
            translation,
        }
    }

    pub fn from_params(params: &Params) -> Self {
        let rotation_vector = if D == 3 {
            Vector3::new(params[0], params[1], params[2])
        } else {
            Vector3::new(0.0, 0.0, params[0])
        };
        let off = Self::ROTATION_DOF;
        let translation = Point::<D>::from_fn(|i, _| params[off + i]);
        Self::from_rotation_vector(rotation_vector, translation)
    }

    pub fn params(&self) -> Params {
        let mut out = Params::zeros();
        if D == 3 {
            out.fixed_rows_mut::<3>(0).copy_from(&self.rotation_vector);
        } else {
            out[0] = self.rotation_vector.z;
        }
        for i in 0..D {
            out[Self::ROTATION_DOF + i] = self.translation[i];
        }
        out
    }

    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.rotation_vector
    }

    pub fn rotation_matrix(&self) -> &SMatrix<f64, D, D> {
        &self.rotation
    }

    pub fn translation(&self) -> &Point<D> {
        &self.translation
    }

    /// Rotation angle in radians, in `[0, pi]` for D = 3 and signed for D = 2.
    pub fn angle(&self) -> f64 {
        if D == 2 {
            self.rotation_vector.z
        } else {
            self.rotation_vector.norm()
        }
    }

    #[inline]
    pub fn apply(&self, p: &Point<D>) -> Point<D> {
        self.rotation * p + self.translation
    }

    pub fn apply_cloud(&self, cloud: &PointCloud<D>) -> PointCloud<D> {
        cloud.map_points(|p| self.apply(p))
    }

    pub fn apply_all(&self, points: &[Point<D>]) -> Vec<Point<D>> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    /// `self ∘ inner`: apply `inner` first, then `self`.
    pub fn compose(&self, inner: &Self) -> Self {
        Self::from_matrix(
            self.rotation * inner.rotation,
            self.rotation * inner.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let mut out = Self::from_matrix(rt, -(rt * self.translation));
        // keep the exact negated vector instead of the re-derived one
        out.rotation_vector = -self.rotation_vector;
        out
    }

    /// Jacobian of `apply(p)` with respect to [`Self::params`]. Columns beyond
    /// [`Self::DOF`] are zero.
    pub fn point_jacobian(&self, p: &Point<D>) -> SMatrix<f64, D, 6> {
        let mut jac = SMatrix::<f64, D, 6>::zeros();
        if D == 3 {
            let p3 = Vector3::new(p[0], p[1], p[2]);
            let r3 = Matrix3::from_fn(|r, c| self.rotation[(r, c)]);
            let block = -(r3 * skew(&p3) * right_jacobian(&self.rotation_vector));
            for r in 0..3 {
                for c in 0..3 {
                    jac[(r, c)] = block[(r, c)];
                }
            }
        } else {
            // d/dphi (R p) = R * (-p_y, p_x)
            let perp = Point::<D>::from_fn(|i, _| if i == 0 { -p[1] } else { p[0] });
            let col = self.rotation * perp;
            for r in 0..D {
                jac[(r, 0)] = col[r];
            }
        }
        for i in 0..D {
            jac[(i, Self::ROTATION_DOF + i)] = 1.0;
        }
        jac
    }
}

impl RigidTransform<3> {
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self::from_rotation_vector(axis_angle, translation)
    }

    pub fn axis_angle(&self) -> Vector3<f64> {
        self.rotation_vector
    }
}

impl RigidTransform<2> {
    pub fn from_angle(angle: f64, translation: Point<2>) -> Self {
        Self::from_rotation_vector(Vector3::new(0.0, 0.0, angle), translation)
    }
}

/// Serializable form: rotation vector (length 3, or 1 in the plane) and translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub rotation_axis_angle: Vec<f64>,
    pub translation: Vec<f64>,
}

impl<const D: usize> From<&RigidTransform<D>> for TransformRecord {
    fn from(t: &RigidTransform<D>) -> Self {
        let rotation_axis_angle = if D == 3 {
            t.rotation_vector.iter().copied().collect()
        } else {
            vec![t.rotation_vector.z]
        };
        Self {
            rotation_axis_angle,
            translation: t.translation.iter().copied().collect(),
        }
    }
}

impl<const D: usize> TryFrom<&TransformRecord> for RigidTransform<D> {
    type Error = Error;

    fn try_from(rec: &TransformRecord) -> Result<Self> {
        if rec.translation.len() != D {
            return Err(Error::DimensionMismatch {
                expected: D,
                found: rec.translation.len(),
            });
        }
        let rv = match rec.rotation_axis_angle.as_slice() {
            [a] if D == 2 => Vector3::new(0.0, 0.0, *a),
            [x, y, z] if D == 3 => Vector3::new(*x, *y, *z),
            other => {
                return Err(Error::DimensionMismatch {
                    expected: Self::ROTATION_DOF,
                    found: other.len(),
                })
            }
        };
        Ok(Self::from_rotation_vector(
            rv,
            Point::<D>::from_column_slice(&rec.translation),
        ))
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix of a rotation vector (Rodrigues' formula).
pub fn rodrigues(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta = v.norm();
    let k = skew(v);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() + k + 0.5 * k * k;
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Matrix3::identity() + a * k + b * k * k
}

/// Right Jacobian of SO(3): `R(v + d) ≈ R(v) · Exp(J_r(v) d)`.
pub fn right_jacobian(v: &Vector3<f64>) -> Matrix3<f64> {
    let theta = v.norm();
    let k = skew(v);
    if theta < SMALL_ANGLE {
        return Matrix3::identity() - 0.5 * k + (1.0 / 6.0) * k * k;
    }
    let t2 = theta * theta;
    let a = (1.0 - theta.cos()) / t2;
    let b = (theta - theta.sin()) / (t2 * theta);
    Matrix3::identity() - a * k + b * k * k
}

/// Rotation vector of a rotation matrix, angle in `[0, pi]`.
pub fn log_so3(m: &Matrix3<f64>) -> Vector3<f64> {
    // Shepperd's method: pick the largest quaternion component for stability.
    let trace = m.trace();
    let (w, x, y, z);
    if trace > m[(0, 0)] && trace > m[(1, 1)] && trace > m[(2, 2)] {
        let s = (1.0 + trace).sqrt() * 2.0;
        w = 0.25 * s;
        x = (m[(2, 1)] - m[(1, 2)]) / s;
        y = (m[(0, 2)] - m[(2, 0)]) / s;
        z = (m[(1, 0)] - m[(0, 1)]) / s;
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(2, 1)] - m[(1, 2)]) / s;
        x = 0.25 * s;
        y = (m[(0, 1)] + m[(1, 0)]) / s;
        z = (m[(0, 2)] + m[(2, 0)]) / s;
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(0, 2)] - m[(2, 0)]) / s;
        x = (m[(0, 1)] + m[(1, 0)]) / s;
        y = 0.25 * s;
        z = (m[(1, 2)] + m[(2, 1)]) / s;
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        w = (m[(1, 0)] - m[(0, 1)]) / s;
        x = (m[(0, 2)] + m[(2, 0)]) / s;
        y = (m[(1, 2)] + m[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let (w, v) = if w < 0.0 {
        (-w, -Vector3::new(x, y, z))
    } else {
        (w, Vector3::new(x, y, z))
    };
    let sin_half = v.norm();
    if sin_half < SMALL_ANGLE {
        return 2.0 * v / w;
    }
    let angle = 2.0 * sin_half.atan2(w);
    v * (angle / sin_half)
}
