//! Exact squared Euclidean distance transform on binary masks.
//!
//! Two separable passes. The column pass measures plain 1-D distance to the
//! nearest foreground row (two integer sweeps); the row pass runs the
//! lower-envelope-of-parabolas reduction over the squared column distances.
//! All intermediate values are integers held in f64, so results are exact:
//! every output equals the true minimum of `dy^2 + dx^2` over foreground
//! pixels, with no floating-point drift.

use crate::raster::Mask;

/// 1-D squared-distance reduction: d[q] = min over p of (q - p)^2 + f[p].
/// Entries of `f` may be infinite (no site in that column).
fn dt1d(f: &[f64], d: &mut [f64], hull: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    let n = f.len();
    hull.clear();
    bounds.clear();
    for q in 0..n {
        if f[q] == f64::INFINITY {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            match hull.last() {
                None => {
                    bounds.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let fp = f[p] + (p * p) as f64;
                    // Intersection of the parabolas rooted at p and q.
                    let s = (fq - fp) / (2.0 * (q as f64 - p as f64));
                    if s <= *bounds.last().unwrap() {
                        hull.pop();
                        bounds.pop();
                    } else {
                        bounds.push(s);
                        break;
                    }
                }
            }
        }
        hull.push(q);
    }
    if hull.is_empty() {
        d[..n].fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for q in 0..n {
        while k + 1 < hull.len() && bounds[k + 1] <= q as f64 {
            k += 1;
        }
        let p = hull[k];
        let dq = q as f64 - p as f64;
        d[q] = dq * dq + f[p];
    }
}

/// Per-pixel squared Euclidean distance to the nearest foreground pixel.
/// Row-major output; every entry is `f64::INFINITY` when the mask is empty.
pub fn squared_edt(mask: &Mask) -> Vec<f64> {
    let (h, w) = (mask.h, mask.w);
    let mut col = vec![f64::INFINITY; h * w];
    // Column pass: nearest foreground row above, then below, squared.
    for x in 0..w {
        let mut last: Option<usize> = None;
        for y in 0..h {
            if mask.get(y, x) == 1 {
                last = Some(y);
            }
            if let Some(r) = last {
                let d = (y - r) as f64;
                col[y * w + x] = d * d;
            }
        }
        last = None;
        for y in (0..h).rev() {
            if mask.get(y, x) == 1 {
                last = Some(y);
            }
            if let Some(r) = last {
                let d = (r - y) as f64;
                let sq = d * d;
                if sq < col[y * w + x] {
                    col[y * w + x] = sq;
                }
            }
        }
    }
    // Row pass: combine squared vertical distances across columns.
    let mut out = vec![f64::INFINITY; h * w];
    let mut hull = Vec::with_capacity(w);
    let mut bounds = Vec::with_capacity(w + 1);
    for y in 0..h {
        dt1d(&col[y * w..(y + 1) * w], &mut out[y * w..(y + 1) * w], &mut hull, &mut bounds);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force(mask: &Mask) -> Vec<f64> {
        let sites = mask.foreground();
        let mut out = vec![f64::INFINITY; mask.h * mask.w];
        for y in 0..mask.h {
            for x in 0..mask.w {
                for &(sy, sx) in &sites {
                    let dy = y as f64 - sy as f64;
                    let dx = x as f64 - sx as f64;
                    let d = dy * dy + dx * dx;
                    if d < out[y * mask.w + x] {
                        out[y * mask.w + x] = d;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn empty_mask_is_infinite_everywhere() {
        let d = squared_edt(&Mask::new(4, 6));
        assert!(d.iter().all(|&v| v == f64::INFINITY));
    }

    #[test]
    fn full_mask_is_zero_everywhere() {
        let m = Mask::from_fn(3, 5, |_, _| true);
        assert!(squared_edt(&m).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_site_gives_pythagorean_squares() {
        let mut m = Mask::new(8, 8);
        m.set(2, 3, 1);
        let d = squared_edt(&m);
        assert_eq!(d[2 * 8 + 3], 0.0);
        assert_eq!(d[5 * 8 + 7], (9 + 16) as f64);
        assert_eq!(d[0], (4 + 9) as f64);
    }

    #[test]
    fn matches_brute_force_exactly_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..300 {
            let h = rng.gen_range(1..24);
            let w = rng.gen_range(1..24);
            let density = [0.02, 0.1, 0.5, 0.9][trial % 4];
            let m = Mask::from_fn(h, w, |_, _| rng.gen_bool(density));
            let fast = squared_edt(&m);
            let slow = brute_force(&m);
            // Bitwise equality: both sides are integer-valued.
            assert_eq!(fast, slow, "trial {} ({}x{})", trial, h, w);
        }
    }

    proptest! {
        #[test]
        fn exact_on_arbitrary_shapes(h in 1usize..16, w in 1usize..16, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = Mask::from_fn(h, w, |_, _| rng.gen_bool(0.3));
            prop_assert_eq!(squared_edt(&m), brute_force(&m));
        }
    }
}
