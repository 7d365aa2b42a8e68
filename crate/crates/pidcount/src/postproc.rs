//! Probability maps to object counts: threshold, morphological cleanup,
//! 8-connectivity component labeling.
//!
//! Labeling is the classic two-pass scheme: a row-major scan hands out
//! provisional labels while a union-find structure records which of them
//! touch; a second pass rewrites every pixel with the root of its class,
//! renumbered 1..K in order of first appearance. The partition is the
//! contract; the numbering is made deterministic so outputs are comparable
//! across runs.

use crate::error::{Error, Result};
use crate::raster::Mask;
use crate::scalar::Scalar;
use crate::tensor::{Tensor, FOREGROUND_CHANNEL};

/// Area threshold reference: a component must cover at least this many
/// pixels in a 256x256 image to survive filtering.
pub const MIN_AREA_REFERENCE: usize = 9;
const REFERENCE_PIXELS: f64 = 256.0 * 256.0;

/// Post-processing knobs applied between the network and the counter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostprocParams {
    /// Foreground if probability exceeds this (ties go to background).
    pub prob_threshold: f64,
    /// Minimum component area in pixels. `None` scales
    /// [`MIN_AREA_REFERENCE`] by the image area relative to 256x256.
    pub min_area: Option<usize>,
    /// Apply a 3x3 opening before the area filter.
    pub opening: bool,
}

impl Default for PostprocParams {
    fn default() -> Self {
        PostprocParams { prob_threshold: 0.5, min_area: None, opening: true }
    }
}

impl PostprocParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.prob_threshold > 0.0 && self.prob_threshold < 1.0) {
            return Err(Error::Config(format!(
                "prob_threshold must lie strictly between 0 and 1, got {}",
                self.prob_threshold
            )));
        }
        Ok(())
    }

    /// Area threshold for an `h` x `w` image.
    pub fn effective_min_area(&self, h: usize, w: usize) -> usize {
        match self.min_area {
            Some(a) => a,
            None => {
                ((MIN_AREA_REFERENCE as f64) * (h * w) as f64 / REFERENCE_PIXELS).round() as usize
            }
        }
    }
}

/// Connected-component labeling result. Label 0 is background; components
/// are numbered 1..=count in order of first appearance in a row-major scan.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub h: usize,
    pub w: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl LabelMap {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.w + x]
    }

    /// Pixel count per component, indexed by label - 1.
    pub fn component_areas(&self) -> Vec<usize> {
        let mut areas = vec![0usize; self.count];
        for &l in &self.labels {
            if l > 0 {
                areas[(l - 1) as usize] += 1;
            }
        }
        areas
    }
}

/// Thresholds the foreground-channel probability of a `[n, 2, h, w]` batch
/// into one binary mask per image. A pixel is foreground iff its probability
/// strictly exceeds the threshold, so at 0.5 this equals per-pixel argmax
/// with exact ties going to background.
pub fn binarize<T: Scalar>(probs: &Tensor<T>, threshold: f64) -> Result<Vec<Mask>> {
    let (n, c, h, w) = probs.dims4()?;
    if c != 2 {
        return Err(Error::Shape(format!("binarize expects 2 channels, got {}", c)));
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let fg = &probs.data[(i * 2 + FOREGROUND_CHANNEL) * plane..][..plane];
        let data = fg.iter().map(|&p| (p.to_f64() > threshold) as u8).collect();
        out.push(Mask { h, w, data });
    }
    Ok(out)
}

fn erode3x3(mask: &Mask) -> Mask {
    // Out-of-bounds neighbors count as background, so foreground touching
    // the border erodes.
    Mask::from_fn(mask.h, mask.w, |y, x| {
        if y == 0 || x == 0 || y + 1 == mask.h || x + 1 == mask.w {
            return false;
        }
        for dy in 0..3 {
            for dx in 0..3 {
                if mask.get(y + dy - 1, x + dx - 1) == 0 {
                    return false;
                }
            }
        }
        true
    })
}

fn dilate3x3(mask: &Mask) -> Mask {
    Mask::from_fn(mask.h, mask.w, |y, x| {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let ny = y as i64 + dy;
                let nx = x as i64 + dx;
                if ny >= 0
                    && nx >= 0
                    && (ny as usize) < mask.h
                    && (nx as usize) < mask.w
                    && mask.get(ny as usize, nx as usize) == 1
                {
                    return true;
                }
            }
        }
        false
    })
}

/// Debris removal: optional 3x3 opening, then deletion of 8-connected
/// components smaller than the (scaled) area threshold.
pub fn morph_filter(mask: &Mask, params: &PostprocParams) -> Mask {
    let opened = if params.opening { dilate3x3(&erode3x3(mask)) } else { mask.clone() };
    let min_area = params.effective_min_area(mask.h, mask.w);
    if min_area <= 1 {
        return opened;
    }
    let labels = label_components_8(&opened);
    let areas = labels.component_areas();
    let mut out = Mask::new(mask.h, mask.w);
    for (i, &l) in labels.labels.iter().enumerate() {
        if l > 0 && areas[(l - 1) as usize] >= min_area {
            out.data[i] = 1;
        }
    }
    out
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        UnionFind { parent: vec![0] } // label 0 reserved for background
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller root wins, keeping labels stable under scan order.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels 8-connected foreground components in two passes.
pub fn label_components_8(mask: &Mask) -> LabelMap {
    let (h, w) = (mask.h, mask.w);
    let mut provisional = vec![0u32; h * w];
    let mut uf = UnionFind::new();
    for y in 0..h {
        for x in 0..w {
            if mask.get(y, x) == 0 {
                continue;
            }
            // Already-scanned 8-neighbors: NW, N, NE, W.
            let mut best = 0u32;
            let mut neighbors = [0u32; 4];
            let mut n_cnt = 0;
            let mut consider = |label: u32| {
                if label > 0 {
                    neighbors[n_cnt] = label;
                    n_cnt += 1;
                }
            };
            if y > 0 {
                if x > 0 {
                    consider(provisional[(y - 1) * w + x - 1]);
                }
                consider(provisional[(y - 1) * w + x]);
                if x + 1 < w {
                    consider(provisional[(y - 1) * w + x + 1]);
                }
            }
            if x > 0 {
                consider(provisional[y * w + x - 1]);
            }
            for &n in &neighbors[..n_cnt] {
                if best == 0 || n < best {
                    best = n;
                }
            }
            if best == 0 {
                provisional[y * w + x] = uf.make();
            } else {
                provisional[y * w + x] = best;
                for &n in &neighbors[..n_cnt] {
                    uf.union(best, n);
                }
            }
        }
    }
    // Second pass: resolve roots and renumber consecutively by first
    // appearance.
    let mut rename: Vec<u32> = vec![0; uf.parent.len()];
    let mut labels = vec![0u32; h * w];
    let mut count = 0u32;
    for (i, &p) in provisional.iter().enumerate() {
        if p == 0 {
            continue;
        }
        let root = uf.find(p);
        if rename[root as usize] == 0 {
            count += 1;
            rename[root as usize] = count;
        }
        labels[i] = rename[root as usize];
    }
    LabelMap { h, w, labels, count: count as usize }
}

/// One image's counting result.
#[derive(Debug, Clone)]
pub struct CountOutcome {
    pub count: usize,
    pub labels: LabelMap,
    /// The post-filter binary mask the labels were computed on.
    pub mask: Mask,
}

/// Full pipeline for a `[n, 2, h, w]` probability batch: binarize, filter,
/// label, count. One outcome per image.
pub fn count_objects<T: Scalar>(
    probs: &Tensor<T>,
    params: &PostprocParams,
) -> Result<Vec<CountOutcome>> {
    params.validate()?;
    let masks = binarize(probs, params.prob_threshold)?;
    Ok(masks
        .into_iter()
        .map(|raw| {
            let mask = morph_filter(&raw, params);
            let labels = label_components_8(&mask);
            CountOutcome { count: labels.count, labels, mask }
        })
        .collect())
}

/// Counts components of an already-binary mask with the same filter chain.
pub fn count_mask(mask: &Mask, params: &PostprocParams) -> Result<CountOutcome> {
    params.validate()?;
    let filtered = morph_filter(mask, params);
    let labels = label_components_8(&filtered);
    Ok(CountOutcome { count: labels.count, labels, mask: filtered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Reference labeler: depth-first flood fill, 8-connectivity, components
    /// numbered in row-major discovery order (the same canonical numbering
    /// the two-pass algorithm promises).
    fn flood_fill_labels(mask: &Mask) -> LabelMap {
        let (h, w) = (mask.h, mask.w);
        let mut labels = vec![0u32; h * w];
        let mut count = 0u32;
        for start in 0..h * w {
            if mask.data[start] == 0 || labels[start] != 0 {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            labels[start] = count;
            while let Some(p) = stack.pop() {
                let (y, x) = (p / w, p % w);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                            continue;
                        }
                        let q = ny as usize * w + nx as usize;
                        if mask.data[q] == 1 && labels[q] == 0 {
                            labels[q] = count;
                            stack.push(q);
                        }
                    }
                }
            }
        }
        LabelMap { h, w, labels, count: count as usize }
    }

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> Mask {
        Mask::from_fn(h, w, |_, _| rng.gen_bool(p))
    }

    #[test]
    fn binarize_thresholds_and_breaks_ties_to_background() {
        let probs = Tensor::<f64>::new(vec![1, 2, 1, 3], vec![0.4, 0.5, 0.9, 0.6, 0.5, 0.1])
            .unwrap();
        let masks = binarize(&probs, 0.5).unwrap();
        assert_eq!(masks[0].data, vec![1, 0, 0]);
    }

    #[test]
    fn binarize_at_half_matches_argmax_oracle_off_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (h, w) = (9, 13);
        let fg: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut data = fg.iter().map(|p| 1.0 - p).collect::<Vec<_>>();
        data.extend_from_slice(&fg);
        let probs = Tensor::<f64>::new(vec![1, 2, h, w], data).unwrap();
        let mask = binarize(&probs, 0.5).unwrap().remove(0);
        for (i, &p) in fg.iter().enumerate() {
            let argmax_fg = p > 1.0 - p;
            if p != 0.5 {
                assert_eq!(mask.data[i] == 1, argmax_fg);
            }
        }
    }

    #[test]
    fn binarize_rejects_wrong_channel_count() {
        let probs = Tensor::<f64>::new(vec![1, 3, 1, 1], vec![0.2, 0.3, 0.5]).unwrap();
        assert!(binarize(&probs, 0.5).is_err());
    }

    #[test]
    fn isolated_pixel_is_removed_by_area_filter() {
        let mut mask = Mask::new(8, 8);
        mask.set(3, 3, 1);
        let params =
            PostprocParams { opening: false, min_area: Some(2), ..PostprocParams::default() };
        assert!(morph_filter(&mask, &params).is_all_background());
    }

    #[test]
    fn opening_preserves_a_solid_square() {
        let mut mask = Mask::new(9, 9);
        for y in 2..7 {
            for x in 2..7 {
                mask.set(y, x, 1);
            }
        }
        let params =
            PostprocParams { opening: true, min_area: Some(0), ..PostprocParams::default() };
        assert_eq!(morph_filter(&mask, &params), mask);
    }

    #[test]
    fn opening_removes_thin_debris() {
        let mut mask = Mask::new(8, 8);
        mask.set(1, 1, 1);
        mask.set(4, 2, 1);
        mask.set(4, 3, 1);
        let params =
            PostprocParams { opening: true, min_area: Some(0), ..PostprocParams::default() };
        assert!(morph_filter(&mask, &params).is_all_background());
    }

    #[test]
    fn min_area_scales_with_image_size() {
        let params = PostprocParams::default();
        assert_eq!(params.effective_min_area(256, 256), MIN_AREA_REFERENCE);
        assert_eq!(params.effective_min_area(512, 512), 4 * MIN_AREA_REFERENCE);
        // Desk-scale images are far below the reference area: threshold
        // rounds to zero, disabling the filter.
        assert_eq!(params.effective_min_area(32, 32), 0);
    }

    #[test]
    fn diagonal_touch_is_one_component_under_8_connectivity() {
        let mask = Mask::from_data(2, 2, vec![1, 0, 0, 1]).unwrap();
        assert_eq!(label_components_8(&mask).count, 1);

        // A 4-connectivity scan sees two components, pinning down which rule
        // is in force.
        let four_connected_count = {
            let mut labels = vec![0u32; 4];
            let mut count = 0;
            for start in 0..4 {
                if mask.data[start] == 0 || labels[start] != 0 {
                    continue;
                }
                count += 1;
                let mut stack = vec![start];
                labels[start] = count;
                while let Some(p) = stack.pop() {
                    let (y, x) = (p / 2, p % 2);
                    let mut neighbors = Vec::new();
                    if y > 0 {
                        neighbors.push(p - 2);
                    }
                    if y < 1 {
                        neighbors.push(p + 2);
                    }
                    if x > 0 {
                        neighbors.push(p - 1);
                    }
                    if x < 1 {
                        neighbors.push(p + 1);
                    }
                    for q in neighbors {
                        if mask.data[q] == 1 && labels[q] == 0 {
                            labels[q] = count;
                            stack.push(q);
                        }
                    }
                }
            }
            count
        };
        assert_eq!(four_connected_count, 2);
    }

    #[test]
    fn empty_mask_has_zero_components() {
        let lm = label_components_8(&Mask::new(5, 5));
        assert_eq!(lm.count, 0);
        assert!(lm.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn labeling_matches_flood_fill_on_a_thousand_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for trial in 0..1000 {
            let density = 0.2 + 0.6 * (trial % 7) as f64 / 6.0;
            let mask = random_mask(&mut rng, 16, 16, density);
            let fast = label_components_8(&mask);
            let oracle = flood_fill_labels(&mask);
            assert_eq!(fast, oracle, "trial {}", trial);
        }
    }

    #[test]
    fn labels_are_consecutive_from_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mask = random_mask(&mut rng, 24, 24, 0.35);
        let lm = label_components_8(&mask);
        let mut seen = vec![false; lm.count + 1];
        for &l in &lm.labels {
            assert!((l as usize) <= lm.count);
            seen[l as usize] = true;
        }
        assert!(seen.iter().skip(1).all(|&s| s), "every label 1..=K appears");
        let areas = lm.component_areas();
        assert_eq!(areas.iter().sum::<usize>(), mask.area());
    }

    #[test]
    fn count_objects_on_flat_probability_fields() {
        // Channel 0 (background) = 1, channel 1 (foreground) = 0.
        let mut data = vec![1.0; 16];
        data.extend(vec![0.0; 16]);
        let all_bg = Tensor::<f64>::new(vec![1, 2, 4, 4], data).unwrap();
        let params = PostprocParams { opening: false, ..PostprocParams::default() };
        assert_eq!(count_objects(&all_bg, &params).unwrap()[0].count, 0);

        let mut data = vec![0.0; 16];
        data.extend(vec![1.0; 16]);
        let all_fg = Tensor::<f64>::new(vec![1, 2, 4, 4], data).unwrap();
        assert_eq!(count_objects(&all_fg, &params).unwrap()[0].count, 1);
    }

    #[test]
    fn count_objects_recovers_three_hand_drawn_blobs() {
        let (h, w) = (16, 16);
        let mut mask = Mask::new(h, w);
        for (cy, cx) in [(3usize, 3usize), (3, 11), (11, 6)] {
            for dy in 0..3 {
                for dx in 0..3 {
                    mask.set(cy + dy - 1, cx + dx - 1, 1);
                }
            }
        }
        let mut data = Vec::with_capacity(2 * h * w);
        data.extend(mask.data.iter().map(|&v| if v == 1 { 0.1 } else { 0.9 }));
        data.extend(mask.data.iter().map(|&v| if v == 1 { 0.9 } else { 0.1 }));
        let probs = Tensor::<f64>::new(vec![1, 2, h, w], data).unwrap();
        let outcome = count_objects(&probs, &PostprocParams::default()).unwrap().remove(0);
        assert_eq!(outcome.count, 3);
    }

    #[test]
    fn invalid_threshold_is_rejected() {
        let params = PostprocParams { prob_threshold: 1.0, ..PostprocParams::default() };
        assert!(params.validate().is_err());
        let params = PostprocParams { prob_threshold: 0.0, ..PostprocParams::default() };
        assert!(params.validate().is_err());
    }

    proptest! {
        #[test]
        fn partition_always_matches_flood_fill(
            h in 1usize..20,
            w in 1usize..20,
            seed in 0u64..1000,
            density in 0.05f64..0.95,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = random_mask(&mut rng, h, w, density);
            prop_assert_eq!(label_components_8(&mask), flood_fill_labels(&mask));
        }

        #[test]
        fn surviving_components_meet_the_area_threshold(
            seed in 0u64..1000,
            min_area in 1usize..12,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mask = random_mask(&mut rng, 16, 16, 0.4);
            let params = PostprocParams {
                opening: false,
                min_area: Some(min_area),
                ..PostprocParams::default()
            };
            let filtered = morph_filter(&mask, &params);
            let lm = label_components_8(&filtered);
            for area in lm.component_areas() {
                prop_assert!(area >= min_area);
            }
            // Area filtering never increases the component count.
            prop_assert!(lm.count <= label_components_8(&mask).count);
        }
    }
}
