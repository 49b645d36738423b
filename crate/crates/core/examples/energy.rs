//! Exact versus tree-approximated potential energy.
use gravalign::energy::{gpe_exact, gpe_tree};
use gravalign::harness::{make_instance, BaseSource, ScenarioSpec};
use gravalign::RigidTransform;

fn main() -> gravalign::Result<()> {
    let spec = ScenarioSpec {
        base: BaseSource::Generated { points: 1500 },
        ..ScenarioSpec::default()
    };
    let instance = make_instance(&spec, 11)?;
    let identity = vec![RigidTransform::identity(); instance.clouds.len()];
    let exact = gpe_exact(&instance.clouds, &identity)?;
    println!("exact energy at the initial poses: {exact:.6e}");
    for theta in [1.0, 3.0, 7.0, 12.0, 1e9] {
        let tree = gpe_tree(&instance.clouds, &identity, theta)?;
        println!("theta {theta:>6}: {tree:.6e} (relative error {:.2e})", (tree - exact).abs() / exact);
    }
    let truth_inverse: Vec<_> = instance.ground_truth.iter().map(|t| t.inverse()).collect();
    println!("exact energy at the true poses:    {:.6e}", gpe_exact(&instance.clouds, &truth_inverse)?);
    Ok(())
}
