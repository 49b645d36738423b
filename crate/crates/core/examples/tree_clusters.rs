//! Build a joint tree over two sets and look at what a query sees.
use gravalign::bhtree::{BhTree, DEFAULT_DEPTH_CAP};
use gravalign::harness::generate_base_cloud;
use gravalign::RigidTransform;
use nalgebra::Vector3;

fn main() -> gravalign::Result<()> {
    let a = generate_base_cloud(2000, 1);
    let shift = RigidTransform::from_translation(Vector3::new(0.5, 0.0, 0.0));
    let b = shift.apply_cloud(&generate_base_cloud(2000, 2));
    let tree = BhTree::from_clouds(&[a.clone(), b], DEFAULT_DEPTH_CAP)?;
    println!(
        "{} nodes, max depth {}, visible mass {} / hiding set 0: {}",
        tree.num_nodes(),
        tree.max_depth(),
        tree.visible_mass(None),
        tree.visible_mass(Some(0))
    );

    // a point of set 0 only interacts with set 1, so set 0 is hidden
    let query = a.points()[0];
    for theta in [1.0, 3.0, 7.0, 12.0, 1e9] {
        let clusters = tree.fetch_clusters(&query, Some(0), theta);
        let mass: f64 = clusters.iter().map(|c| c.mass).sum();
        println!("theta {theta:>6}: {:>5} clusters carrying mass {mass}", clusters.len());
    }
    Ok(())
}
