use std::fs;
use std::path::Path;
use std::process::Command;

use gravalign::geometry::{PointCloud, RigidTransform};
use gravalign::harness::benchmark::{grid, write_benchmark, Scenario, CSV_HEADER};
use gravalign::harness::io::{load_cloud, load_result, save_result, write_ply};
use gravalign::harness::{generate_base_cloud, BaseSource, ScenarioSpec};
use gravalign::{align, AlignConfig};
use nalgebra::Vector3;

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gravalign"))
}

fn write_xyz(path: &Path, cloud: &PointCloud<3>) {
    let text: String = cloud.points().iter().map(|p| format!("{} {} {}\n", p.x, p.y, p.z)).collect();
    fs::write(path, text).unwrap();
}

#[test]
fn ply_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ply");
    let cloud = generate_base_cloud(50, 1);
    write_ply(&cloud, fs::File::create(&path).unwrap()).unwrap();
    let back = load_cloud(&path, 4).unwrap();
    assert_eq!(back.id(), 4);
    for (a, b) in back.points().iter().zip(cloud.points()) {
        assert!((a - b).amax() < 1e-12);
    }
}

#[test]
fn result_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let base = generate_base_cloud(200, 2);
    let shift = RigidTransform::from_axis_angle(Vector3::new(0.0, 0.0, 0.1), Vector3::new(0.05, 0.0, 0.0));
    let clouds = vec![base.clone(), shift.apply_cloud(&base)];
    let result = align(&clouds, &AlignConfig::default()).unwrap();
    let path = dir.path().join("r.json");
    save_result(&path, &result).unwrap();
    let doc = load_result(&path).unwrap();
    assert_eq!(doc.iterations, result.outer_iterations);
    assert_eq!(doc.gpe_trace, result.gpe_trace);
    for (a, b) in doc.transforms::<3>().unwrap().iter().zip(&result.transforms) {
        assert!((a.params() - b.params()).amax() < 1e-12);
    }
}

#[test]
fn benchmark_is_reproducible() {
    let template = ScenarioSpec {
        base: BaseSource::Generated { points: 300 },
        repetitions: 2,
        seed: 5,
        ..ScenarioSpec::default()
    };
    let cells = &grid(Scenario::Theta, &template)[..2];
    let strip = |buf: Vec<u8>| -> Vec<String> {
        String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_benchmark(cells, &mut a).unwrap();
    write_benchmark(cells, &mut b).unwrap();
    let (a, b) = (strip(a), strip(b));
    assert_eq!(a.len(), 5);
    assert_eq!(a, b);
}

#[test]
fn cli_align_writes_result_json() {
    let dir = tempfile::tempdir().unwrap();
    let base = generate_base_cloud(300, 3);
    let moved = RigidTransform::from_axis_angle(Vector3::new(0.1, 0.0, 0.0), Vector3::zeros()).apply_cloud(&base);
    let (a, b, out) = (dir.path().join("a.xyz"), dir.path().join("b.xyz"), dir.path().join("out.json"));
    write_xyz(&a, &base);
    write_xyz(&b, &moved);
    let run = cli()
        .env("MBGA_THREADS", "1")
        .args(["align", "--max-iters", "20", "--out"])
        .args([&out, &a, &b])
        .output()
        .unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let doc = load_result(&out).unwrap();
    assert_eq!(doc.clouds.len(), 2);
    assert!(doc.iterations <= 20);
}

#[test]
fn cli_signature_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("c.xyz");
    write_xyz(&file, &generate_base_cloud(400, 4));
    let output = cli().args(["signature", "--quantile", "0.75"]).arg(&file).output().unwrap();
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "index,descriptor,mass");
    assert_eq!(lines.len(), 401);
    let boosted = lines[1..].iter().filter(|l| l.ends_with(",10")).count();
    assert_eq!(boosted, 100);
}

#[test]
fn cli_benchmark_streams_rows() {
    let output = cli()
        .args(["benchmark", "--scenario", "theta", "--points", "300", "--reps", "1"])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let text = String::from_utf8(output.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines.len(), 5);
    let params: Vec<&str> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(params, ["3", "5", "7", "12"]);
}

#[test]
fn cli_rejects_bad_input() {
    let bad_threads = cli().env("MBGA_THREADS", "many").args(["signature", "x.xyz"]).output().unwrap();
    assert!(!bad_threads.status.success());
    assert!(String::from_utf8_lossy(&bad_threads.stderr).contains("MBGA_THREADS"));

    let missing = cli().args(["signature", "/nonexistent/cloud.xyz"]).output().unwrap();
    assert!(!missing.status.success());

    let dir = tempfile::tempdir().unwrap();
    let odd = dir.path().join("c.obj");
    fs::write(&odd, "v 0 0 0\n").unwrap();
    let unsupported = cli().arg("signature").arg(&odd).output().unwrap();
    assert!(!unsupported.status.success());

    let one_file = cli().args(["align", "only.xyz"]).output().unwrap();
    assert!(!one_file.status.success());
}
