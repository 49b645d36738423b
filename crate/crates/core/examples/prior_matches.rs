//! Effect of a few known correspondences on a heavily corrupted instance.
use gravalign::harness::{make_instance, ScenarioSpec};
use gravalign::{align, AlignConfig};

fn main() -> gravalign::Result<()> {
    for prior_matches in [0, 8] {
        let spec = ScenarioSpec {
            noise_fraction: 1.0,
            prior_matches,
            prior_weight: 100.0,
            ..ScenarioSpec::default()
        };
        let instance = make_instance(&spec, 5)?;
        let result = align(&instance.clouds, &AlignConfig::default())?;
        println!(
            "{prior_matches} prior matches: e3d {:.5} in {} iterations",
            instance.e3d(&result.transforms)?,
            result.outer_iterations
        );
    }
    Ok(())
}
