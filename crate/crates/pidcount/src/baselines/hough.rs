//! Circle detection by Hough voting: Sobel edges vote for every center a
//! fixed radius away, and accumulator peaks that survive non-max
//! suppression become detections. Deterministic for fixed input and
//! parameters; no randomness anywhere.

use crate::error::{Error, Result};
use crate::raster::ImageBuf;

/// A detected circle: integer center (row, column) and radius in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Circle {
    pub cy: usize,
    pub cx: usize,
    pub r: usize,
}

/// Voting and peak-picking settings.
///
/// `edge_threshold` is relative to the strongest gradient in the image;
/// `peak_threshold` is the pooled vote count normalized by circle
/// circumference, so 1.0 means roughly every boundary pixel voted near
/// the peak (the two-sided Sobel ring pushes clean circles well above 1).
/// Defaults suit blobs in 32 to 64 px frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoughParams {
    pub r_min: usize,
    pub r_max: usize,
    pub r_step: usize,
    pub edge_threshold: f64,
    pub peak_threshold: f64,
    pub nms_radius: f64,
}

impl Default for HoughParams {
    fn default() -> Self {
        HoughParams {
            r_min: 2,
            r_max: 8,
            r_step: 1,
            edge_threshold: 0.25,
            peak_threshold: 0.8,
            nms_radius: 3.0,
        }
    }
}

impl HoughParams {
    pub fn validate(&self) -> Result<()> {
        if self.r_min < 1 {
            return Err(Error::Config("r_min must be at least 1".into()));
        }
        if self.r_max <= self.r_min {
            return Err(Error::Config(format!(
                "r_max must exceed r_min, got {}..{}",
                self.r_min, self.r_max
            )));
        }
        if self.r_step < 1 {
            return Err(Error::Config("r_step must be at least 1".into()));
        }
        for (name, v) in [("edge_threshold", self.edge_threshold), ("peak_threshold", self.peak_threshold)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{} must be finite and > 0, got {}", name, v)));
            }
        }
        if !(self.nms_radius >= 0.0 && self.nms_radius.is_finite()) {
            return Err(Error::Config(format!(
                "nms_radius must be finite and >= 0, got {}",
                self.nms_radius
            )));
        }
        Ok(())
    }
}

/// Sobel x and y derivatives of a grayscale plane, replicated edges.
fn sobel_xy(gray: &[f32], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |y: i64, x: i64| -> f64 {
        let y = y.clamp(0, h as i64 - 1) as usize;
        let x = x.clamp(0, w as i64 - 1) as usize;
        gray[y * w + x] as f64
    };
    let mut gxs = vec![0.0; h * w];
    let mut gys = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y, x - 1)
                - at(y + 1, x - 1);
            let gy = at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                - at(y - 1, x - 1)
                - 2.0 * at(y - 1, x)
                - at(y - 1, x + 1);
            gxs[y as usize * w + x as usize] = gx;
            gys[y as usize * w + x as usize] = gy;
        }
    }
    (gxs, gys)
}

/// Sobel gradient magnitude of an image's grayscale view, replicated
/// edges.
pub fn sobel_magnitude(image: &ImageBuf) -> Vec<f64> {
    let (gxs, gys) = sobel_xy(&image.to_gray(), image.h, image.w);
    gxs.iter().zip(&gys).map(|(&gx, &gy)| (gx * gx + gy * gy).sqrt()).collect()
}

/// Detects circles and returns them strongest-first. A flat image has no
/// edges and therefore no detections.
pub fn hough_circle_count(image: &ImageBuf, params: &HoughParams) -> Result<Vec<Circle>> {
    params.validate()?;
    let (h, w) = (image.h, image.w);
    let (gxs, gys) = sobel_xy(&image.to_gray(), h, w);
    let mag: Vec<f64> =
        gxs.iter().zip(&gys).map(|(&gx, &gy)| (gx * gx + gy * gy).sqrt()).collect();
    let peak = mag.iter().cloned().fold(0.0f64, f64::max);
    if peak == 0.0 {
        return Ok(Vec::new());
    }
    // Edge pixels with their unit gradient direction.
    let edges: Vec<(usize, usize, f64, f64)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (y, x)))
        .filter(|&(y, x)| mag[y * w + x] / peak >= params.edge_threshold)
        .map(|(y, x)| {
            let m = mag[y * w + x];
            (y, x, gys[y * w + x] / m, gxs[y * w + x] / m)
        })
        .collect();

    // One accumulator plane per radius. Each edge pixel votes only along
    // its gradient line (both ways, so polarity does not matter); an
    // off-radius plane then collects a couple of stray votes per cell
    // instead of whole phantom rings.
    let radii: Vec<usize> = (params.r_min..=params.r_max).step_by(params.r_step).collect();
    let mut scored: Vec<(f64, usize, usize, usize)> = Vec::new();
    for &r in &radii {
        let mut acc = vec![0u32; h * w];
        let circumference = 2.0 * std::f64::consts::PI * r as f64;
        for &(y, x, uy, ux) in &edges {
            for sign in [1.0, -1.0] {
                let cy = (y as f64 + sign * r as f64 * uy).round() as i64;
                let cx = (x as f64 + sign * r as f64 * ux).round() as i64;
                if cy >= 0 && cx >= 0 && cy < h as i64 && cx < w as i64 {
                    acc[cy as usize * w + cx as usize] += 1;
                }
            }
        }
        // Direction quantization smears each vote by about a pixel, so
        // peaks are scored on 3x3 sums; integer votes keep the
        // comparisons exact.
        let mut pooled = vec![0u32; h * w];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut sum = 0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny >= 0 && nx >= 0 && ny < h as i64 && nx < w as i64 {
                            sum += acc[ny as usize * w + nx as usize];
                        }
                    }
                }
                pooled[y as usize * w + x as usize] = sum;
            }
        }
        for y in 0..h {
            for x in 0..w {
                let votes = pooled[y * w + x];
                if votes == 0 {
                    continue;
                }
                let score = votes as f64 / circumference;
                if score < params.peak_threshold {
                    continue;
                }
                // Local maximum within the plane (ties keep both; the
                // suppression pass below resolves them).
                let mut is_peak = true;
                'nbrs: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        if pooled[ny as usize * w + nx as usize] > votes {
                            is_peak = false;
                            break 'nbrs;
                        }
                    }
                }
                if is_peak {
                    scored.push((score, y, x, r));
                }
            }
        }
    }

    // Strongest first; ties resolve by position then radius so the result
    // order is total.
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then(a.3.cmp(&b.3))
    });
    let mut kept: Vec<Circle> = Vec::new();
    for (_, y, x, r) in scored {
        // A candidate dies if its center falls inside a stronger detection
        // (off-radius planes echo real circles there) or within nms_radius
        // of one, whichever reaches further.
        let clear = kept.iter().all(|c| {
            let dy = y as f64 - c.cy as f64;
            let dx = x as f64 - c.cx as f64;
            let sup = params.nms_radius.max(c.r as f64);
            dy * dy + dx * dx > sup * sup
        });
        if clear {
            kept.push(Circle { cy: y, cx: x, r });
        }
    }
    Ok(kept)
}
