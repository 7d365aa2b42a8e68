//! Otsu's global threshold: pick the 8-bit bin boundary that maximizes the
//! between-class intensity variance.
//!
//! The argmax is decided in exact integer arithmetic. With bin counts h[i],
//! prefix weight w0 and prefix first moment s0 at threshold t, the
//! between-class variance is proportional to
//!
//!     f(t) = (s0*W - S*w0)^2 / (w0 * (W - w0))
//!
//! where W and S are the totals. Candidates are compared by cross-
//! multiplying these fractions with 256-bit products, so the winner (ties
//! broken toward the lowest bin) never depends on floating-point rounding.

use crate::error::{Error, Result};
use crate::raster::{ImageBuf, Mask};

/// 256-bin intensity histogram of an image's grayscale view; values are
/// clamped to [0, 1] and quantized with round-half-away.
pub fn histogram_256(image: &ImageBuf) -> [u64; 256] {
    histogram_of(&image.to_gray())
}

fn histogram_of(gray: &[f32]) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in gray {
        hist[quantize(v) as usize] += 1;
    }
    hist
}

pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Full 128x128 -> 256-bit product, returned as (high, low) limbs.
fn mul_wide(a: u128, b: u128) -> (u128, u128) {
    const MASK: u128 = (1u128 << 64) - 1;
    let (ah, al) = (a >> 64, a & MASK);
    let (bh, bl) = (b >> 64, b & MASK);
    let ll = al * bl;
    let lh = al * bh;
    let hl = ah * bl;
    let hh = ah * bh;
    let (mid, mid_carry) = lh.overflowing_add(hl);
    let (lo, lo_carry) = ll.overflowing_add(mid << 64);
    let hi = hh
        + (mid >> 64)
        + if mid_carry { 1u128 << 64 } else { 0 }
        + u128::from(lo_carry);
    (hi, lo)
}

/// Orders n1/d1 against n2/d2 (all nonnegative, d > 0) exactly.
fn cmp_ratios(n1: u128, d1: u128, n2: u128, d2: u128) -> std::cmp::Ordering {
    mul_wide(n1, d2).cmp(&mul_wide(n2, d1))
}

/// The bin index t maximizing between-class variance, where class 0 is
/// bins 0..=t and class 1 is bins t+1..=255. Ties break to the lowest t.
/// A histogram with all its mass in one bin has no two-class split and is
/// rejected as degenerate.
pub fn otsu_bin(hist: &[u64; 256]) -> Result<u8> {
    let total: u128 = hist.iter().map(|&h| h as u128).sum();
    let sum: u128 = hist.iter().enumerate().map(|(i, &h)| i as u128 * h as u128).sum();
    if total == 0 || hist.iter().filter(|&&h| h > 0).count() < 2 {
        return Err(Error::Data(
            "constant image: no threshold separates two intensity classes".into(),
        ));
    }

    let mut best: Option<(u128, u128, u8)> = None;
    let mut w0: u128 = 0;
    let mut s0: u128 = 0;
    for t in 0..255u16 {
        w0 += hist[t as usize] as u128;
        s0 += t as u128 * hist[t as usize] as u128;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let a = s0 * total;
        let b = sum * w0;
        let diff = a.max(b) - a.min(b);
        let num = match diff.checked_mul(diff) {
            Some(n) => n,
            // Unreachable below ~10^8-pixel images; keep a deterministic
            // float path rather than failing.
            None => return Ok(otsu_bin_f64(hist)),
        };
        let den = w0 * w1;
        let better = match best {
            None => true,
            Some((bn, bd, _)) => cmp_ratios(num, den, bn, bd) == std::cmp::Ordering::Greater,
        };
        if better {
            best = Some((num, den, t as u8));
        }
    }
    Ok(best.expect("two occupied bins guarantee a candidate").2)
}

fn otsu_bin_f64(hist: &[u64; 256]) -> u8 {
    let total: f64 = hist.iter().map(|&h| h as f64).sum();
    let sum: f64 = hist.iter().enumerate().map(|(i, &h)| i as f64 * h as f64).sum();
    let (mut w0, mut s0) = (0.0, 0.0);
    let mut best = (f64::NEG_INFINITY, 0u8);
    for t in 0..255usize {
        w0 += hist[t] as f64;
        s0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let diff = s0 * total - sum * w0;
        let f = diff * diff / (w0 * w1);
        if f > best.0 {
            best = (f, t as u8);
        }
    }
    best.1
}

/// Threshold as a float in (0, 1): the midpoint between the winning bin
/// and the next one.
pub fn otsu_threshold(image: &ImageBuf) -> Result<f64> {
    let bin = otsu_bin(&histogram_256(image))?;
    Ok((bin as f64 + 0.5) / 255.0)
}

/// Binarizes with the Otsu split; foreground is the class above the
/// threshold. The comparison happens on quantized bins, so it is exactly
/// consistent with the histogram the threshold came from.
pub fn otsu_mask(image: &ImageBuf) -> Result<Mask> {
    let gray = image.to_gray();
    let bin = otsu_bin(&histogram_of(&gray))?;
    let data = gray.iter().map(|&v| (quantize(v) > bin) as u8).collect();
    Mask::from_data(image.h, image.w, data)
}
