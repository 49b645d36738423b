//! Write two clouds as PLY, load them back, align and save the result.
use std::fs::File;

use gravalign::harness::io::{load_result, write_ply};
use gravalign::harness::{load_cloud, make_instance, save_result, BaseSource, ScenarioSpec};
use gravalign::{align, AlignConfig};

fn main() -> gravalign::Result<()> {
    let dir = std::env::temp_dir().join("gravalign-example");
    std::fs::create_dir_all(&dir)?;
    let spec = ScenarioSpec {
        base: BaseSource::Generated { points: 2000 },
        copies: 2,
        ..ScenarioSpec::default()
    };
    let instance = make_instance(&spec, 1)?;
    let mut clouds = Vec::new();
    for (l, cloud) in instance.clouds.iter().enumerate() {
        let path = dir.join(format!("cloud{l}.ply"));
        write_ply(cloud, File::create(&path)?)?;
        clouds.push(load_cloud(&path, l)?);
    }
    let result = align(&clouds, &AlignConfig::default())?;
    let out = dir.join("result.json");
    save_result(&out, &result)?;
    let doc = load_result(&out)?;
    println!("{}: {} iterations, converged {}", out.display(), doc.iterations, doc.converged);
    for (l, pose) in doc.clouds.iter().enumerate() {
        println!("cloud {l}: axis-angle {:?}, translation {:?}", pose.rotation_axis_angle, pose.translation);
    }
    Ok(())
}
