//! Marker-based watershed counting: Otsu binarization, Euclidean distance
//! transform of the foreground, distance peaks as markers, then a
//! priority-flood that grows each marker downhill until the regions meet.
//! Touching objects split at the neck between their distance peaks.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::edt::squared_edt;
use crate::error::{Error, Result};
use crate::postproc::{morph_filter, LabelMap, PostprocParams};
use crate::raster::ImageBuf;

use super::otsu::otsu_mask;

/// Marker extraction settings.
///
/// `sigma` smooths the distance field before peak picking (0 disables),
/// `min_distance` is the minimum spacing between two accepted markers in
/// pixels. Defaults suit blob radii of roughly 1.5 to 8 px.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WatershedParams {
    pub sigma: f64,
    pub min_distance: f64,
}

impl Default for WatershedParams {
    fn default() -> Self {
        WatershedParams { sigma: 1.0, min_distance: 3.0 }
    }
}

impl WatershedParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be finite and >= 0, got {}", self.sigma)));
        }
        if !(self.min_distance >= 0.0 && self.min_distance.is_finite()) {
            return Err(Error::Config(format!(
                "min_distance must be finite and >= 0, got {}",
                self.min_distance
            )));
        }
        Ok(())
    }
}

/// Separable Gaussian blur with replicated edges; kernel radius 3 sigma.
fn gaussian_smooth(field: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return field.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity(2 * radius as usize + 1);
    for i in -radius..=radius {
        kernel.push((-0.5 * (i as f64 / sigma).powi(2)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in kernel.iter_mut() {
        *k /= norm;
    }
    let mut rows = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sx = (x as i64 + ki as i64 - radius).clamp(0, w as i64 - 1) as usize;
                acc += k * field[y * w + sx];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                let sy = (y as i64 + ki as i64 - radius).clamp(0, h as i64 - 1) as usize;
                acc += k * rows[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Distance peaks at least `min_distance` apart, strongest first.
fn find_markers(dt: &[f64], h: usize, w: usize, min_distance: f64) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(usize, usize)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let v = dt[y * w + x];
            if v <= 0.0 {
                continue;
            }
            let mut peak = true;
            'nbrs: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dy == 0 && dx == 0 {
                        continue;
                    }
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    if dt[ny as usize * w + nx as usize] > v {
                        peak = false;
                        break 'nbrs;
                    }
                }
            }
            if peak {
                candidates.push((y, x));
            }
        }
    }
    candidates.sort_by(|&(ay, ax), &(by, bx)| {
        dt[by * w + bx]
            .partial_cmp(&dt[ay * w + ax])
            .unwrap()
            .then(ay.cmp(&by))
            .then(ax.cmp(&bx))
    });
    let mut kept: Vec<(usize, usize)> = Vec::new();
    let d2_min = min_distance * min_distance;
    for (y, x) in candidates {
        let far_enough = kept.iter().all(|&(ky, kx)| {
            let dy = y as f64 - ky as f64;
            let dx = x as f64 - kx as f64;
            dy * dy + dx * dx >= d2_min
        });
        if far_enough {
            kept.push((y, x));
        }
    }
    kept
}

/// Counts objects by watershed. Returns the region count and the label
/// map; labels follow marker order (strongest peak = 1). A constant image
/// or an empty post-cleanup mask counts zero.
pub fn watershed_count(
    gray: &ImageBuf,
    params: &WatershedParams,
    post: &PostprocParams,
) -> Result<(usize, LabelMap)> {
    params.validate()?;
    post.validate()?;
    let empty = || LabelMap { h: gray.h, w: gray.w, labels: vec![0; gray.h * gray.w], count: 0 };
    let mask = match otsu_mask(gray) {
        Ok(m) => morph_filter(&m, post),
        Err(Error::Data(_)) => return Ok((0, empty())),
        Err(e) => return Err(e),
    };
    if mask.is_all_background() {
        return Ok((0, empty()));
    }
    let (h, w) = (mask.h, mask.w);
    // Otsu always leaves both classes occupied and the cleanup steps only
    // shrink the mask, so some background exists and the distances below
    // are finite.
    let dt: Vec<f64> = squared_edt(&mask.inverted()).iter().map(|&d| d.sqrt()).collect();
    let smoothed = gaussian_smooth(&dt, h, w, params.sigma);
    // Peaks are picked on the smoothed field but flooding descends the raw
    // distances, so region borders stay at the true necks.
    let markers = find_markers(
        &smoothed.iter().zip(&dt).map(|(&s, &d)| if d > 0.0 { s } else { 0.0 }).collect::<Vec<_>>(),
        h,
        w,
        params.min_distance,
    );

    let mut labels = vec![0u32; h * w];
    // Max-heap on (distance, then top-left-most): highest ground floods
    // first, ties resolve deterministically.
    let mut heap: BinaryHeap<(u64, Reverse<usize>, Reverse<usize>, u32)> = BinaryHeap::new();
    for (i, &(y, x)) in markers.iter().enumerate() {
        heap.push((dt[y * w + x].to_bits(), Reverse(y), Reverse(x), i as u32 + 1));
    }
    while let Some((_, Reverse(y), Reverse(x), label)) = heap.pop() {
        if labels[y * w + x] != 0 {
            continue;
        }
        labels[y * w + x] = label;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if dy == 0 && dx == 0 {
                    continue;
                }
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let (ny, nx) = (ny as usize, nx as usize);
                if mask.get(ny, nx) == 1 && labels[ny * w + nx] == 0 {
                    heap.push((dt[ny * w + nx].to_bits(), Reverse(ny), Reverse(nx), label));
                }
            }
        }
    }
    let count = markers.len();
    Ok((count, LabelMap { h, w, labels, count }))
}
