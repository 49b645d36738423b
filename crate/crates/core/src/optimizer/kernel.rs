//! Inner loop of the tree-backed residuals: Huber sums of one moved point
//! against a list of packed clusters `[x, y, z, mass]`.

/// Sums over the clusters of one point, with cluster masses as weights.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct RawSums {
    pub cost: f64,
    pub energy: f64,
    pub omega: f64,
    pub weighted: [f64; 3],
}

impl RawSums {
    #[inline]
    fn merge(&mut self, other: &RawSums) {
        self.cost += other.cost;
        self.energy += other.energy;
        self.omega += other.omega;
        for k in 0..3 {
            self.weighted[k] += other.weighted[k];
        }
    }
}

/// Adds the contribution of `packed[list[..]]` seen from `y` to `sums`.
#[inline]
pub(crate) fn accumulate(y: [f64; 3], list: &[u32], packed: &[[f64; 4]], eps: f64, sums: &mut RawSums) {
    #[cfg(target_arch = "x86_64")]
    {
        if avx2_available() {
            // SAFETY: the required features were detected at runtime
            let part = unsafe { avx2::accumulate(y, list, packed, eps) };
            sums.merge(&part);
            return;
        }
    }
    sums.merge(&scalar(y, list, packed, eps));
}

#[cfg(target_arch = "x86_64")]
fn avx2_available() -> bool {
    use std::sync::OnceLock;
    static AVAILABLE: OnceLock<bool> = OnceLock::new();
    *AVAILABLE.get_or_init(|| is_x86_feature_detected!("avx2") && is_x86_feature_detected!("fma"))
}

#[inline]
fn term(y: [f64; 3], c: &[f64; 4], eps: f64, sums: &mut RawSums) {
    let e = [y[0] - c[0], y[1] - c[1], y[2] - c[2]];
    let d2 = e[0] * e[0] + e[1] * e[1] + e[2] * e[2];
    let d = d2.sqrt();
    let w = c[3];
    let (rho, irls) = if d > eps {
        (eps * (d - 0.5 * eps), eps / d)
    } else {
        (0.5 * d2, 1.0)
    };
    let omega = w * irls;
    sums.cost += w * rho;
    sums.energy += w * d;
    sums.omega += omega;
    for (acc, ek) in sums.weighted.iter_mut().zip(e) {
        *acc += omega * ek;
    }
}

fn scalar(y: [f64; 3], list: &[u32], packed: &[[f64; 4]], eps: f64) -> RawSums {
    let mut sums = RawSums::default();
    for &i in list {
        term(y, &packed[i as usize], eps, &mut sums);
    }
    sums
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use super::{term, RawSums};
    use std::arch::x86_64::*;

    #[target_feature(enable = "avx2,fma")]
    unsafe fn hsum(v: __m256d) -> f64 {
        let lo = _mm256_castpd256_pd128(v);
        let hi = _mm256_extractf128_pd::<1>(v);
        let s = _mm_add_pd(lo, hi);
        _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)))
    }

    /// Four clusters per step: load four packed rows, transpose to x/y/z/m
    /// lanes, then evaluate the Huber terms branch-free.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn accumulate(y: [f64; 3], list: &[u32], packed: &[[f64; 4]], eps: f64) -> RawSums {
        let (yx, yy, yz) = (_mm256_set1_pd(y[0]), _mm256_set1_pd(y[1]), _mm256_set1_pd(y[2]));
        let veps = _mm256_set1_pd(eps);
        let half = _mm256_set1_pd(0.5);
        let one = _mm256_set1_pd(1.0);
        let half_eps = _mm256_set1_pd(0.5 * eps);
        let mut cost = _mm256_setzero_pd();
        let mut energy = _mm256_setzero_pd();
        let mut omega = _mm256_setzero_pd();
        let mut wx = _mm256_setzero_pd();
        let mut wy = _mm256_setzero_pd();
        let mut wz = _mm256_setzero_pd();

        let chunks = list.chunks_exact(4);
        let rest = chunks.remainder();
        for idx in chunks {
            // bounds are checked once here so the loads below are in range
            let rows = [
                &packed[idx[0] as usize],
                &packed[idx[1] as usize],
                &packed[idx[2] as usize],
                &packed[idx[3] as usize],
            ];
            let r0 = _mm256_loadu_pd(rows[0].as_ptr());
            let r1 = _mm256_loadu_pd(rows[1].as_ptr());
            let r2 = _mm256_loadu_pd(rows[2].as_ptr());
            let r3 = _mm256_loadu_pd(rows[3].as_ptr());
            // 4x4 transpose
            let t0 = _mm256_unpacklo_pd(r0, r1); // x0 x1 z0 z1
            let t1 = _mm256_unpackhi_pd(r0, r1); // y0 y1 m0 m1
            let t2 = _mm256_unpacklo_pd(r2, r3); // x2 x3 z2 z3
            let t3 = _mm256_unpackhi_pd(r2, r3); // y2 y3 m2 m3
            let cx = _mm256_permute2f128_pd::<0x20>(t0, t2);
            let cy = _mm256_permute2f128_pd::<0x20>(t1, t3);
            let cz = _mm256_permute2f128_pd::<0x31>(t0, t2);
            let cm = _mm256_permute2f128_pd::<0x31>(t1, t3);

            let ex = _mm256_sub_pd(yx, cx);
            let ey = _mm256_sub_pd(yy, cy);
            let ez = _mm256_sub_pd(yz, cz);
            let d2 = _mm256_fmadd_pd(ez, ez, _mm256_fmadd_pd(ey, ey, _mm256_mul_pd(ex, ex)));
            let d = _mm256_sqrt_pd(d2);
            let far = _mm256_cmp_pd::<_CMP_GT_OQ>(d, veps);
            let rho = _mm256_blendv_pd(
                _mm256_mul_pd(half, d2),
                _mm256_mul_pd(veps, _mm256_sub_pd(d, half_eps)),
                far,
            );
            let irls = _mm256_blendv_pd(one, _mm256_div_pd(veps, d), far);
            let om = _mm256_mul_pd(cm, irls);
            cost = _mm256_fmadd_pd(cm, rho, cost);
            energy = _mm256_fmadd_pd(cm, d, energy);
            omega = _mm256_add_pd(omega, om);
            wx = _mm256_fmadd_pd(om, ex, wx);
            wy = _mm256_fmadd_pd(om, ey, wy);
            wz = _mm256_fmadd_pd(om, ez, wz);
        }
        let mut sums = RawSums {
            cost: hsum(cost),
            energy: hsum(energy),
            omega: hsum(omega),
            weighted: [hsum(wx), hsum(wy), hsum(wz)],
        };
        for &i in rest {
            term(y, &packed[i as usize], eps, &mut sums);
        }
        sums
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn dispatch_matches_scalar() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let packed: Vec<[f64; 4]> = (0..103)
            .map(|_| [rng.random(), rng.random(), rng.random(), rng.random_range(0.5..2.0)])
            .collect();
        // includes clusters inside the quadratic zone and one at the point itself
        let y = packed[7];
        let list: Vec<u32> = (0..103).rev().collect();
        for eps in [1e-3, 0.3] {
            let mut fast = RawSums::default();
            accumulate([y[0], y[1], y[2]], &list, &packed, eps, &mut fast);
            let slow = scalar([y[0], y[1], y[2]], &list, &packed, eps);
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * (1.0 + b.abs());
            assert!(close(fast.cost, slow.cost));
            assert!(close(fast.energy, slow.energy));
            assert!(close(fast.omega, slow.omega));
            for k in 0..3 {
                assert!(close(fast.weighted[k], slow.weighted[k]));
            }
        }
    }
}
