//! Shape signature of every point and the masses it induces.
use gravalign::harness::generate_base_cloud;
use gravalign::signature::{compute_descriptors, masses_from_signature, quantile};

fn main() -> gravalign::Result<()> {
    let cloud = generate_base_cloud(5045, 1);
    let start = std::time::Instant::now();
    let descriptors = compute_descriptors(&cloud, 16.0)?;
    println!("{} descriptors in {:.2} s", descriptors.len(), start.elapsed().as_secs_f64());
    for q in [0.1, 0.5, 0.9, 0.99] {
        println!("quantile {q}: {:.4}", quantile(&descriptors, q));
    }
    let weighted = masses_from_signature(&cloud, &descriptors, 10.0, 0.9)?;
    let boosted = weighted.masses().iter().filter(|&&m| m > 1.0).count();
    println!("{boosted} points carry tenfold mass");
    Ok(())
}
