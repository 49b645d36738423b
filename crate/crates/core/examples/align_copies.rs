//! Align three noisy, rotated copies of the built-in surface.
use gravalign::harness::{make_instance, ScenarioSpec};
use gravalign::metrics::transform_error;
use gravalign::{align, AlignConfig};

fn main() -> gravalign::Result<()> {
    let spec = ScenarioSpec {
        noise_fraction: 0.2,
        ..ScenarioSpec::default()
    };
    let instance = make_instance(&spec, 3)?;
    let before = instance.e3d(&vec![gravalign::RigidTransform::identity(); 3])?;
    let result = align(&instance.clouds, &AlignConfig::default())?;
    println!(
        "e3d {before:.4} -> {:.5} after {} iterations ({:.1} s, converged: {})",
        instance.e3d(&result.transforms)?,
        result.outer_iterations,
        result.wall_time,
        result.converged
    );
    // poses are only defined up to a common motion; compare relative to cloud 0
    let t0 = result.transforms[0].inverse();
    let g0 = &instance.ground_truth[0];
    for l in 1..3 {
        let estimated = t0.compose(&result.transforms[l]);
        let truth = g0.compose(&instance.ground_truth[l].inverse());
        let (deg, dist) = transform_error(&estimated, &truth);
        println!("cloud {l} relative to cloud 0: {deg:.3} deg, {dist:.4} units off");
    }
    Ok(())
}
