use gravalign::geometry::{PointCloud, RigidTransform};
use gravalign::masses::{apply_prior_matches, masses_from_intensity, set_uniform_masses, PriorMatchSet};
use gravalign::metrics::{e3d, transform_error};
use nalgebra::Vector3;
use proptest::prelude::*;

fn vec3() -> impl Strategy<Value = Vector3<f64>> {
    (-5.0..5.0f64, -5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn motion() -> impl Strategy<Value = RigidTransform<3>> {
    (vec3(), 0.0..3.0f64, vec3()).prop_map(|(axis, angle, t)| {
        let axis = if axis.norm() < 1e-3 { Vector3::x() } else { axis.normalize() };
        RigidTransform::from_axis_angle(axis * angle, t)
    })
}

fn clouds(copies: usize) -> impl Strategy<Value = Vec<PointCloud<3>>> {
    (8usize..40).prop_flat_map(move |n| {
        prop::collection::vec(prop::collection::vec(vec3(), n), copies).prop_map(|sets| {
            sets.into_iter()
                .enumerate()
                .map(|(id, pts)| PointCloud::new(id, pts).unwrap())
                .collect()
        })
    })
}

fn centred(c: &PointCloud<3>) -> PointCloud<3> {
    RigidTransform::from_translation(-c.centroid()).apply_cloud(c)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn e3d_ignores_a_common_rotation(clouds in clouds(3), axis in vec3(), angle in 0.0..3.0f64) {
        // rotating everything about the origin keeps every norm and difference
        let axis = if axis.norm() < 1e-3 { Vector3::z() } else { axis.normalize() };
        let r = RigidTransform::from_axis_angle(axis * angle, Vector3::zeros());
        let id = vec![RigidTransform::identity(); 3];
        let a = e3d(&clouds, &id).unwrap();
        let b = e3d(&clouds, &[r; 3]).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
    }

    #[test]
    fn e3d_symmetric_for_equal_norms(clouds in clouds(3)) {
        // with equal norms the per-pair normalisation is symmetric, so order is irrelevant
        let centred: Vec<_> = clouds.iter().map(centred).collect();
        let scaled: Vec<_> = centred
            .iter()
            .map(|c| {
                let norm = c.points().iter().map(|p| p.norm_squared()).sum::<f64>().sqrt();
                PointCloud::new(c.id(), c.points().iter().map(|p| p / norm).collect()).unwrap()
            })
            .collect();
        let id = vec![RigidTransform::identity(); 3];
        let a = e3d(&scaled, &id).unwrap();
        let reversed: Vec<_> = scaled.iter().rev().cloned().collect();
        let b = e3d(&reversed, &id).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1e-12));
    }

    #[test]
    fn transform_error_matches_point_samples(est in motion(), truth in motion()) {
        let (angle, shift) = transform_error(&est, &truth);
        prop_assert!((shift - (est.translation() - truth.translation()).norm()).abs() < 1e-12);
        // the largest angle any direction turns under R_est R_truth^T is the rotation angle
        let relative = est.rotation_matrix() * truth.rotation_matrix().transpose();
        let mut widest: f64 = 0.0;
        for k in 0..2000 {
            let t = k as f64 * 0.618_033_988_75;
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / 2000.0;
            let r = (1.0 - z * z).sqrt();
            let u = Vector3::new(r * (t * std::f64::consts::TAU).cos(), r * (t * std::f64::consts::TAU).sin(), z);
            widest = widest.max((relative * u).dot(&u).clamp(-1.0, 1.0).acos().to_degrees());
        }
        prop_assert!(widest <= angle + 1e-6);
        prop_assert!(widest >= angle - 3.0, "sampled {widest}, reported {angle}");
    }

    #[test]
    fn mass_policies_only_touch_masses(
        clouds in clouds(2),
        value in 0.1..10.0f64,
        weight in 1.0..200.0f64,
        picks in prop::collection::vec(0usize..8, 1..5),
    ) {
        for c in &clouds {
            let u = set_uniform_masses(c, value).unwrap();
            prop_assert_eq!(u.points(), c.points());
            prop_assert!(u.masses().iter().all(|&m| m == value));

            let ramp: Vec<f64> = (0..c.len()).map(|i| i as f64 / c.len() as f64).collect();
            let lit = c.clone().with_intensities(ramp).unwrap();
            let m = masses_from_intensity(&lit, 0.5, 2.0).unwrap();
            prop_assert_eq!(m.points(), c.points());
            prop_assert!(m.masses().iter().all(|&x| (0.5..=2.0).contains(&x)));
        }
        let members: Vec<_> = picks.iter().map(|&p| (p % 2, p)).collect();
        let prior = PriorMatchSet::new(members, weight).unwrap();
        let weighted = apply_prior_matches(&clouds, &[prior]).unwrap();
        for (w, c) in weighted.iter().zip(&clouds) {
            prop_assert_eq!(w.points(), c.points());
            prop_assert!(w.masses().iter().all(|&m| m > 0.0 && m.is_finite()));
        }
    }
}
