use gravalign::geometry::{PointCloud, RigidTransform};
use gravalign::harness::{generate_base_cloud, make_instance, BaseSource, ScenarioSpec};
use gravalign::masses::set_uniform_masses;
use gravalign::metrics::{e3d, transform_error};
use gravalign::optimizer::extract_correspondences;
use gravalign::{align, AlignConfig};
use nalgebra::Vector3;

fn rotated_pair(points: usize, degrees: f64) -> (Vec<PointCloud<3>>, RigidTransform<3>) {
    let base = generate_base_cloud(points, 3);
    let motion = RigidTransform::from_axis_angle(Vector3::new(0.2, 1.0, 0.4).normalize() * degrees.to_radians(), Vector3::zeros());
    let moved = PointCloud::new(1, motion.apply_all(base.points())).unwrap();
    (vec![base, moved], motion)
}

#[test]
fn recovers_a_single_rotation() {
    let (clouds, motion) = rotated_pair(1000, 15.0);
    let result = align(&clouds, &AlignConfig::default()).unwrap();
    // cloud 1 seen through its pose, undone by the motion, should match cloud 0's pose
    let implied = result.transforms[1].compose(&motion);
    let (angle, _) = transform_error(&implied, &result.transforms[0]);
    assert!(angle < 1.0, "residual rotation {angle} deg");
    assert!(e3d(&clouds, &result.transforms).unwrap() < 0.05);
}

#[test]
fn energy_trace_descends() {
    let spec = ScenarioSpec {
        base: BaseSource::Generated { points: 800 },
        noise_fraction: 0.2,
        ..ScenarioSpec::default()
    };
    let instance = make_instance(&spec, 11).unwrap();
    let result = align(&instance.clouds, &spec.config).unwrap();
    let trace = &result.gpe_trace;
    assert!(trace.len() >= 2);
    for pair in trace.windows(2) {
        assert!(pair[1] <= 1.05 * pair[0], "{trace:?}");
    }
    assert!(trace.last().unwrap() < &trace[0]);
    let before = instance.e3d(&vec![RigidTransform::identity(); 3]).unwrap();
    assert!(instance.e3d(&result.transforms).unwrap() < before);
}

#[test]
fn aligned_copies_stay_put() {
    let base = generate_base_cloud(600, 5);
    let clouds: Vec<_> = (0..3).map(|id| PointCloud::new(id, base.points().to_vec()).unwrap()).collect();
    let result = align(&clouds, &AlignConfig::default()).unwrap();
    assert!(e3d(&clouds, &result.transforms).unwrap() < 1e-3);
    for t in &result.transforms[1..] {
        let (angle, shift) = transform_error(t, &result.transforms[0]);
        assert!(angle < 0.1 && shift < 1e-3, "{angle} {shift}");
    }
}

#[test]
fn uniform_mass_scale_does_not_change_poses() {
    let (clouds, _) = rotated_pair(500, 10.0);
    let doubled: Vec<_> = clouds.iter().map(|c| set_uniform_masses(c, 2.0).unwrap()).collect();
    let config = AlignConfig::default();
    let a = align(&clouds, &config).unwrap();
    let b = align(&doubled, &config).unwrap();
    assert_eq!(a.outer_iterations, b.outer_iterations);
    for (ta, tb) in a.transforms.iter().zip(&b.transforms) {
        assert!((ta.params() - tb.params()).amax() < 1e-6);
    }
}

#[test]
fn cloud_order_does_not_matter() {
    let spec = ScenarioSpec {
        base: BaseSource::Generated { points: 600 },
        noise_fraction: 0.1,
        ..ScenarioSpec::default()
    };
    let instance = make_instance(&spec, 21).unwrap();
    let forward = align(&instance.clouds, &spec.config).unwrap();
    let order = [2, 0, 1];
    let permuted: Vec<_> = order.iter().map(|&k| instance.clouds[k].clone()).collect();
    let backward = align(&permuted, &spec.config).unwrap();
    let mut restored = vec![RigidTransform::identity(); 3];
    for (slot, &k) in order.iter().enumerate() {
        restored[k] = backward.transforms[slot];
    }
    let a = instance.e3d(&forward.transforms).unwrap();
    let b = instance.e3d(&restored).unwrap();
    assert!((a - b).abs() <= 0.1 * a.max(b), "{a} vs {b}");
}

#[test]
fn correspondences_after_alignment() {
    let base = generate_base_cloud(400, 9);
    let shift = RigidTransform::from_translation(Vector3::new(0.5, 0.0, 0.0));
    let clouds = vec![base.clone(), PointCloud::new(1, shift.apply_all(base.points())).unwrap()];
    let poses = [RigidTransform::identity(), shift.inverse()];
    let matches = extract_correspondences(&clouds, &poses, 1e-6);
    assert_eq!(matches.len(), 400);
    assert!(matches.iter().all(|m| m.index_a == m.index_b && m.set_a != m.set_b));
    assert!(extract_correspondences(&clouds, &[RigidTransform::identity(); 2], 1e-6).is_empty());
}
