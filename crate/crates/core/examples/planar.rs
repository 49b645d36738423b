//! Alignment in the plane: three rotated copies of a noisy curve.
use gravalign::geometry::{Point, PointCloud, RigidTransform};
use gravalign::metrics::e3d;
use gravalign::{align, AlignConfig};
use rand::{Rng, SeedableRng};

fn main() -> gravalign::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
    let base: Vec<Point<2>> = (0..3000)
        .map(|_| {
            let t: f64 = rng.random_range(-1.0..1.0);
            Point::<2>::new(t, 0.4 * t.powi(3) + 0.2 * (4.0 * t).sin())
        })
        .collect();
    let poses = [
        RigidTransform::<2>::from_angle(0.0, Point::<2>::zeros()),
        RigidTransform::from_angle(0.3, Point::<2>::new(0.1, -0.05)),
        RigidTransform::from_angle(-0.25, Point::<2>::new(-0.08, 0.1)),
    ];
    let clouds: Vec<PointCloud<2>> = poses
        .iter()
        .enumerate()
        .map(|(l, t)| PointCloud::new(l, t.apply_all(&base)))
        .collect::<gravalign::Result<_>>()?;
    let result = align(&clouds, &AlignConfig::default())?;
    let identity = vec![RigidTransform::identity(); 3];
    println!(
        "e3d {:.4} -> {:.6} in {} iterations",
        e3d(&clouds, &identity)?,
        e3d(&clouds, &result.transforms)?,
        result.outer_iterations
    );
    Ok(())
}
