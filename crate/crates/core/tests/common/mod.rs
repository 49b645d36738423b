//! Helpers shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use gravalign::bhtree::BhTree;
use gravalign::geometry::Point;
use gravalign::signature::quantile;
use nalgebra::Vector3;
use proptest::prelude::*;

pub type Sets = Vec<(Vec<Point<3>>, Vec<f64>)>;

pub fn refs(sets: &Sets) -> Vec<(&[Point<3>], &[f64])> {
    sets.iter().map(|(p, m)| (p.as_slice(), m.as_slice())).collect()
}

pub const THETA_GRID: [f64; 9] = [1e-9, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 1e9];

/// One to four labelled sets of up to 60 points, with repeated points and
/// zero masses mixed in, plus a depth cap and a query position.
pub fn tree_case() -> impl Strategy<Value = (Sets, usize, Point<3>)> {
    let point = (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z));
    let set = prop::collection::vec((point.clone(), 0usize..6, prop::bool::weighted(0.15)), 1..60).prop_map(
        |raw| {
            let mut pts: Vec<Point<3>> = Vec::with_capacity(raw.len());
            let mut masses = Vec::with_capacity(raw.len());
            for (p, mass_class, duplicate) in raw {
                let p = match pts.last() {
                    Some(prev) if duplicate => *prev,
                    _ => p,
                };
                pts.push(p);
                masses.push(if mass_class == 0 { 0.0 } else { mass_class as f64 * 0.5 });
            }
            (pts, masses)
        },
    );
    (prop::collection::vec(set, 1..5), 1usize..=20, point)
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * scale.max(1e-300)
}

/// Mass conservation, shadowing exclusion, monotone refinement and the depth
/// cap for one tree and query.
pub fn check_tree_invariants(sets: &Sets, depth_cap: usize, query: &Point<3>) -> Result<(), String> {
    let tree = BhTree::build(&refs(sets), depth_cap).map_err(|e| e.to_string())?;
    if tree.max_depth() > depth_cap {
        return Err(format!("depth {} above cap {depth_cap}", tree.max_depth()));
    }
    let set_totals: Vec<f64> = sets.iter().map(|(_, m)| m.iter().sum()).collect();
    let total: f64 = set_totals.iter().sum();
    let excludes = std::iter::once(None).chain((0..sets.len()).map(Some));
    for exclude in excludes {
        let visible = total - exclude.map_or(0.0, |l| set_totals[l]);
        let mut previous = 0usize;
        for theta in THETA_GRID {
            let mut count = 0;
            let mut mass = 0.0;
            let mut failure = None;
            tree.for_each_cluster(query, exclude, theta, |id, cluster| {
                count += 1;
                mass += cluster.mass;
                let node = tree.node(id);
                // the cluster is the node's aggregate over the other sets only
                let mut expected_mass = 0.0;
                let mut moment = Vector3::zeros();
                for s in (0..sets.len()).filter(|&s| Some(s) != exclude) {
                    let m = node.set_mass(s);
                    expected_mass += m;
                    if let Some(com) = node.set_center_of_mass(s) {
                        moment += com * m;
                    }
                }
                if !close(cluster.mass, expected_mass, expected_mass) {
                    failure = Some(format!("node {id}: cluster mass {} vs {expected_mass}", cluster.mass));
                } else if cluster.mass <= 0.0 {
                    failure = Some(format!("node {id}: empty cluster emitted"));
                } else if (cluster.position - moment / expected_mass).norm() > 1e-9 * (1.0 + cluster.position.norm()) {
                    failure = Some(format!("node {id}: cluster position off"));
                }
                // and, from the raw points, nothing of the hidden set
                let brute: f64 = node
                    .points()
                    .filter(|&(s, _)| Some(s) != exclude)
                    .map(|(s, i)| sets[s].1[i])
                    .sum();
                if !close(cluster.mass, brute, brute) {
                    failure = Some(format!("node {id}: cluster mass {} vs points {brute}", cluster.mass));
                }
            });
            if let Some(f) = failure {
                return Err(format!("theta {theta}, exclude {exclude:?}: {f}"));
            }
            if !close(mass, visible, visible) {
                return Err(format!("theta {theta}, exclude {exclude:?}: cluster mass {mass} vs visible {visible}"));
            }
            if count < previous {
                return Err(format!("theta {theta}, exclude {exclude:?}: {count} clusters after {previous}"));
            }
            previous = count;
        }
    }
    Ok(())
}

/// Per-set node masses and centres of mass recomputed from the points each
/// node holds, and every point held by exactly one leaf inside its cell.
pub fn check_node_sums(sets: &Sets, depth_cap: usize) -> Result<(), String> {
    let tree = BhTree::build(&refs(sets), depth_cap).map_err(|e| e.to_string())?;
    let mut owners: Vec<Vec<usize>> = sets.iter().map(|(p, _)| vec![0; p.len()]).collect();
    for node in tree.nodes() {
        let half = node.half_width() * (1.0 + 1e-9);
        for s in 0..sets.len() {
            let mut mass = 0.0;
            let mut moment = Vector3::zeros();
            for (set, i) in node.points() {
                if set != s {
                    continue;
                }
                let p = sets[set].0[i];
                if (p - node.center()).amax() > half + 1e-12 {
                    return Err(format!("point ({set}, {i}) outside node {}", node.id()));
                }
                mass += sets[set].1[i];
                moment += p * sets[set].1[i];
            }
            if !close(node.set_mass(s), mass, mass.max(1.0)) {
                return Err(format!("node {} set {s}: mass {} vs {mass}", node.id(), node.set_mass(s)));
            }
            if let Some(com) = node.set_center_of_mass(s) {
                let expected = moment / mass;
                if (com - expected).norm() > 1e-9 * (1.0 + expected.norm()) {
                    return Err(format!("node {} set {s}: centre of mass off", node.id()));
                }
            }
        }
        if node.is_leaf() {
            for (set, i) in node.points() {
                owners[set][i] += 1;
            }
        }
    }
    if owners.iter().flatten().any(|&c| c != 1) {
        return Err("a point is not held by exactly one leaf".into());
    }
    Ok(())
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    quantile(v, 0.5)
}
