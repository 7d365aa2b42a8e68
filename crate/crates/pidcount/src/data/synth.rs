//! Synthetic blob datasets: dense elliptical "cells" on a dark background,
//! built so the ground-truth component count is the blob count by
//! construction. Blobs may come close enough to look like touching cells,
//! but every placement keeps at least one background pixel between blobs
//! (checked against the 8-neighborhood), so connected-component counting
//! over the mask can never merge two of them.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{ImageBuf, Mask};

use super::Sample;

/// Generator settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_images: usize,
    pub image_size: usize,
    /// Inclusive range of blobs per image.
    pub count_range: (usize, usize),
    pub seed: u64,
    /// Standard deviation of the additive Gaussian pixel noise.
    pub noise_sigma: f64,
    /// Inclusive range of ellipse semi-axes, in pixels.
    pub radius_range: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_images: 64,
            image_size: 32,
            count_range: (3, 12),
            seed: 1,
            noise_sigma: 0.05,
            radius_range: (1.5, 3.0),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_images == 0 {
            return Err(Error::Config("n_images must be at least 1".into()));
        }
        if self.count_range.0 < 1 || self.count_range.0 > self.count_range.1 {
            return Err(Error::Config(format!(
                "count range {}..{} is invalid (need 1 <= min <= max)",
                self.count_range.0, self.count_range.1
            )));
        }
        let (r_lo, r_hi) = self.radius_range;
        if !(r_lo >= 0.75 && r_hi >= r_lo) {
            return Err(Error::Config(format!(
                "radius range {}..{} is invalid (need 0.75 <= min <= max)",
                r_lo, r_hi
            )));
        }
        if (self.image_size as f64) < 2.0 * r_hi + 2.0 {
            return Err(Error::Config(format!(
                "image size {} is too small for blobs of radius up to {}",
                self.image_size, r_hi
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        Ok(())
    }
}

const BACKGROUND_LEVEL: f64 = 0.12;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; the lower bound keeps ln() finite.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Pixels covered by an axis-aligned ellipse, row-major.
fn ellipse_pixels(cy: f64, cx: f64, ry: f64, rx: f64, size: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let y_lo = ((cy - ry).floor().max(0.0)) as usize;
    let y_hi = ((cy + ry).ceil().min((size - 1) as f64)) as usize;
    let x_lo = ((cx - rx).floor().max(0.0)) as usize;
    let x_hi = ((cx + rx).ceil().min((size - 1) as f64)) as usize;
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let dy = (y as f64 - cy) / ry;
            let dx = (x as f64 - cx) / rx;
            if dy * dy + dx * dx <= 1.0 {
                out.push((y, x));
            }
        }
    }
    out
}

/// True if placing these pixels would make the new blob 8-adjacent to (or
/// overlap) existing foreground.
fn collides(pixels: &[(usize, usize)], mask: &Mask) -> bool {
    let (h, w) = (mask.h as i64, mask.w as i64);
    for &(y, x) in pixels {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let ny = y as i64 + dy;
                let nx = x as i64 + dx;
                if ny >= 0 && nx >= 0 && ny < h && nx < w && mask.get(ny as usize, nx as usize) == 1
                {
                    return true;
                }
            }
        }
    }
    false
}

/// Generates `n_images` samples plus their true blob counts. Deterministic
/// in the seed. Fails if a requested blob count cannot be packed into the
/// image after a bounded number of attempts.
pub fn synth_blobs(cfg: &SynthConfig) -> Result<Vec<(Sample, usize)>> {
    cfg.validate()?;
    let size = cfg.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.n_images);
    for i in 0..cfg.n_images {
        let n_blobs = rng.gen_range(cfg.count_range.0..=cfg.count_range.1);
        let mut mask = Mask::new(size, size);
        let mut shading = vec![0.0f64; size * size];
        let mut placed = 0;
        let mut attempts = 0;
        while placed < n_blobs {
            attempts += 1;
            if attempts > 400 * n_blobs {
                return Err(Error::Data(format!(
                    "could not place {} blobs in a {}x{} image (gave up after {} attempts); \
                     lower the count or radius range",
                    n_blobs, size, size, attempts
                )));
            }
            let ry = rng.gen_range(cfg.radius_range.0..=cfg.radius_range.1);
            let rx = rng.gen_range(cfg.radius_range.0..=cfg.radius_range.1);
            let cy = rng.gen_range(ry..(size as f64 - 1.0 - ry));
            let cx = rng.gen_range(rx..(size as f64 - 1.0 - rx));
            let pixels = ellipse_pixels(cy, cx, ry, rx, size);
            if pixels.is_empty() || collides(&pixels, &mask) {
                continue;
            }
            let brightness = rng.gen_range(0.65..0.9);
            for &(y, x) in &pixels {
                mask.set(y, x, 1);
                shading[y * size + x] = brightness;
            }
            placed += 1;
        }
        let mut image = ImageBuf::new(size, size, 1);
        for p in 0..size * size {
            let base = if mask.data[p] == 1 { shading[p] } else { BACKGROUND_LEVEL };
            let v = base + cfg.noise_sigma * gaussian(&mut rng);
            image.data[p] = v.clamp(0.0, 1.0) as f32;
        }
        let sample = Sample { id: format!("synth_{:04}", i), image, mask };
        out.push((sample, n_blobs));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent component counter: recursive flood fill over the
    /// 8-neighborhood.
    fn flood_count(mask: &Mask) -> usize {
        let (h, w) = (mask.h, mask.w);
        let mut seen = vec![false; h * w];
        let mut count = 0;
        for start in 0..h * w {
            if mask.data[start] == 0 || seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(p) = stack.pop() {
                let (y, x) = (p / w, p % w);
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny as usize >= h || nx as usize >= w {
                            continue;
                        }
                        let q = ny as usize * w + nx as usize;
                        if mask.data[q] == 1 && !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn single_blob_images_have_exactly_one_component() {
        let cfg = SynthConfig { n_images: 20, count_range: (1, 1), ..SynthConfig::default() };
        for (sample, count) in synth_blobs(&cfg).unwrap() {
            assert_eq!(count, 1);
            assert_eq!(flood_count(&sample.mask), 1, "{}", sample.id);
        }
    }

    #[test]
    fn same_seed_gives_bit_identical_datasets() {
        let cfg = SynthConfig { n_images: 6, ..SynthConfig::default() };
        let a = synth_blobs(&cfg).unwrap();
        let b = synth_blobs(&cfg).unwrap();
        assert_eq!(a, b);
        let c = synth_blobs(&SynthConfig { seed: 2, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn component_count_always_equals_the_recorded_count() {
        let cfg = SynthConfig {
            n_images: 100,
            image_size: 64,
            count_range: (5, 20),
            seed: 7,
            ..SynthConfig::default()
        };
        for (sample, count) in synth_blobs(&cfg).unwrap() {
            assert_eq!(flood_count(&sample.mask), count, "{}", sample.id);
            assert!(sample.image.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn impossible_packing_is_an_error() {
        let cfg = SynthConfig {
            n_images: 1,
            image_size: 16,
            count_range: (60, 60),
            ..SynthConfig::default()
        };
        assert!(synth_blobs(&cfg).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_counts =
            SynthConfig { count_range: (0, 5), ..SynthConfig::default() };
        assert!(bad_counts.validate().is_err());
        let bad_radius =
            SynthConfig { radius_range: (0.1, 3.0), ..SynthConfig::default() };
        assert!(bad_radius.validate().is_err());
        let too_small =
            SynthConfig { image_size: 4, ..SynthConfig::default() };
        assert!(too_small.validate().is_err());
    }
}
