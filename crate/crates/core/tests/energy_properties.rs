mod common;

use common::median;
use gravalign::energy::{build_residuals, gpe_exact, gpe_tree, world_points};
use gravalign::bhtree::{BhTree, DEFAULT_DEPTH_CAP};
use gravalign::geometry::{PointCloud, RigidTransform};
use gravalign::harness::{make_instance, BaseSource, ScenarioSpec};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_clouds(seed: u64, sizes: &[usize]) -> Vec<PointCloud<3>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sizes
        .iter()
        .enumerate()
        .map(|(l, &n)| {
            let offset = Vector3::new(rng.random_range(-0.5..0.5), 0.0, rng.random_range(-0.5..0.5));
            let pts = (0..n)
                .map(|_| offset + Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3)))
                .collect();
            let masses = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
            PointCloud::with_masses(l, pts, masses).unwrap()
        })
        .collect()
}

#[test]
fn tree_error_shrinks_with_theta() {
    let thetas = [1.0, 2.0, 4.0, 8.0, 12.0, 16.0];
    let mut errors = vec![Vec::new(); thetas.len()];
    for seed in 0..10 {
        let clouds = random_clouds(seed, &[300, 250, 200]);
        let ts = vec![RigidTransform::identity(); 3];
        let exact = gpe_exact(&clouds, &ts).unwrap();
        for (k, &theta) in thetas.iter().enumerate() {
            errors[k].push((gpe_tree(&clouds, &ts, theta).unwrap() - exact).abs() / exact);
        }
    }
    let medians: Vec<f64> = errors.iter().map(|e| median(e)).collect();
    for pair in medians.windows(2) {
        assert!(pair[1] <= pair[0], "{medians:?}");
    }
    assert!(medians[4] < 0.02, "{medians:?}");
}

#[test]
fn exact_energy_symmetries() {
    let clouds = random_clouds(4, &[60, 40, 50]);
    let ts = vec![RigidTransform::identity(); 3];
    let e = gpe_exact(&clouds, &ts).unwrap();

    // cloud order does not matter
    let permuted = vec![clouds[2].clone(), clouds[0].clone(), clouds[1].clone()];
    assert!((gpe_exact(&permuted, &ts).unwrap() - e).abs() <= 1e-12 * e);

    // a common rigid motion does not change any distance
    let motion = RigidTransform::from_axis_angle(Vector3::new(0.3, -0.2, 0.9), Vector3::new(5.0, -2.0, 1.0));
    let moved = vec![motion; 3];
    assert!((gpe_exact(&clouds, &moved).unwrap() - e).abs() <= 1e-10 * e);

    // scaling every mass by k scales the energy by k^2
    let k = 3.0;
    let heavy: Vec<_> = clouds
        .iter()
        .map(|c| c.replace_masses(c.masses().iter().map(|m| m * k).collect()).unwrap())
        .collect();
    assert!((gpe_exact(&heavy, &ts).unwrap() - k * k * e).abs() <= 1e-12 * k * k * e);
}

#[test]
fn tree_energy_is_invariant_under_common_translation() {
    let clouds = random_clouds(5, &[200, 200]);
    let shift = RigidTransform::from_translation(Vector3::new(0.25, 0.5, -0.125));
    let a = gpe_tree(&clouds, &[RigidTransform::identity(); 2], 1e9).unwrap();
    let b = gpe_tree(&clouds, &[shift; 2], 1e9).unwrap();
    assert!((a - b).abs() <= 1e-9 * a);
}

#[test]
fn residual_weights_sum_to_energy_masses() {
    let clouds = random_clouds(6, &[120, 90, 70]);
    let ts = vec![RigidTransform::identity(); 3];
    let world = world_points(&clouds, &ts);
    let sets: Vec<_> = world.iter().zip(&clouds).map(|(w, c)| (w.as_slice(), c.masses())).collect();
    let tree = BhTree::build(&sets, DEFAULT_DEPTH_CAP).unwrap();
    let terms = build_residuals(&clouds, &ts, &tree, 1, 12.0).unwrap();
    let weight: f64 = terms.iter().map(|t| t.weight).sum();
    let others: f64 = clouds[0].total_mass() + clouds[2].total_mass();
    assert!((weight - clouds[1].total_mass() * others).abs() <= 1e-9 * weight);
    assert!(terms.iter().all(|t| t.set_label == 1));
}

#[test]
fn tree_matches_exact_on_instances() {
    let spec = ScenarioSpec {
        base: BaseSource::Generated { points: 1000 },
        noise_fraction: 0.2,
        ..ScenarioSpec::default()
    };
    for seed in 0..3 {
        let instance = make_instance(&spec, seed).unwrap();
        let ts = vec![RigidTransform::identity(); 3];
        let exact = gpe_exact(&instance.clouds, &ts).unwrap();
        let approx = gpe_tree(&instance.clouds, &ts, 12.0).unwrap();
        assert!((approx - exact).abs() / exact < 0.02);
        let full = gpe_tree(&instance.clouds, &ts, 1e9).unwrap();
        assert!((full - exact).abs() / exact < 1e-9);
    }
}
