use std::collections::HashMap;

use crate::geometry::{Point, PointCloud, RigidTransform};

/// Point `index_a` of set `set_a` matches point `index_b` of set `set_b`,
/// with `set_a < set_b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Match {
    pub set_a: usize,
    pub index_a: usize,
    pub set_b: usize,
    pub index_b: usize,
}

/// Uniform hash grid with cell size equal to the search radius, so a radius
/// query only touches the 3^D surrounding cells.
struct Grid<'a, const D: usize> {
    cell: f64,
    points: &'a [Point<D>],
    buckets: HashMap<[i64; D], Vec<u32>>,
}

impl<'a, const D: usize> Grid<'a, D> {
    fn new(points: &'a [Point<D>], cell: f64) -> Self {
        let mut buckets: HashMap<[i64; D], Vec<u32>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i as u32);
        }
        Self { cell, points, buckets }
    }

    fn key(p: &Point<D>, cell: f64) -> [i64; D] {
        std::array::from_fn(|k| (p[k] / cell).floor() as i64)
    }

    /// Nearest point within `radius`; ties resolve to the lower index.
    fn nearest(&self, q: &Point<D>, radius: f64) -> Option<usize> {
        let base = Self::key(q, self.cell);
        let mut best: Option<(f64, usize)> = None;
        let neighbours = 3usize.pow(D as u32);
        for code in 0..neighbours {
            let mut key = base;
            let mut c = code;
            for k in key.iter_mut() {
                *k += (c % 3) as i64 - 1;
                c /= 3;
            }
            let Some(bucket) = self.buckets.get(&key) else {
                continue;
            };
            for &i in bucket {
                let d = (self.points[i as usize] - q).norm();
                if d > radius {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bd, bi)) => d < bd || (d == bd && (i as usize) < bi),
                };
                if better {
                    best = Some((d, i as usize));
                }
            }
        }
        best.map(|(_, i)| i)
    }
}

/// Mutual nearest neighbours within `radius` between every pair of aligned
/// clouds, sorted and free of duplicates.
pub fn extract_correspondences<const D: usize>(
    clouds: &[PointCloud<D>],
    transforms: &[RigidTransform<D>],
    radius: f64,
) -> Vec<Match> {
    if !(radius > 0.0) || clouds.len() != transforms.len() {
        return Vec::new();
    }
    let world: Vec<Vec<Point<D>>> = clouds
        .iter()
        .zip(transforms)
        .map(|(c, t)| t.apply_all(c.points()))
        .collect();
    let grids: Vec<Grid<'_, D>> = world.iter().map(|w| Grid::new(w, radius)).collect();
    let mut out = Vec::new();
    for a in 0..world.len() {
        for b in (a + 1)..world.len() {
            for (ia, p) in world[a].iter().enumerate() {
                let Some(ib) = grids[b].nearest(p, radius) else {
                    continue;
                };
                if grids[a].nearest(&world[b][ib], radius) == Some(ia) {
                    out.push(Match {
                        set_a: a,
                        index_a: ia,
                        set_b: b,
                        index_b: ib,
                    });
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}
