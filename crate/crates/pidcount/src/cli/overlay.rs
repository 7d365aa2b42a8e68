//! Error overlays: the input image in grayscale with prediction
//! agreement painted on top. True positives green, false positives red,
//! false negatives blue, true negatives left as the image.

use std::path::Path;

use crate::error::Result;
use crate::raster::{ImageBuf, Mask};

pub const TP_COLOR: [u8; 3] = [0, 170, 0];
pub const FP_COLOR: [u8; 3] = [200, 40, 40];
pub const FN_COLOR: [u8; 3] = [60, 90, 220];

/// Fraction of the class color blended over the grayscale base.
const BLEND: f32 = 0.55;

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Builds the RGB overlay buffer; `pred` and `gt` must match the image size.
pub fn overlay_rgb(image: &ImageBuf, pred: &Mask, gt: &Mask) -> Result<Vec<u8>> {
    if pred.h != image.h || pred.w != image.w || gt.h != image.h || gt.w != image.w {
        return Err(crate::error::Error::Shape(format!(
            "overlay needs matching sizes, got image {}x{}, pred {}x{}, gt {}x{}",
            image.h, image.w, pred.h, pred.w, gt.h, gt.w
        )));
    }
    let gray = image.to_gray();
    let mut out = Vec::with_capacity(image.h * image.w * 3);
    for y in 0..image.h {
        for x in 0..image.w {
            let base = to_byte(gray[y * image.w + x]);
            let class = match (pred.get(y, x), gt.get(y, x)) {
                (1, 1) => Some(TP_COLOR),
                (1, 0) => Some(FP_COLOR),
                (0, 1) => Some(FN_COLOR),
                _ => None,
            };
            match class {
                Some(c) => {
                    for ch in 0..3 {
                        let v = base as f32 * (1.0 - BLEND) + c[ch] as f32 * BLEND;
                        out.push(v.round() as u8);
                    }
                }
                None => out.extend_from_slice(&[base, base, base]),
            }
        }
    }
    Ok(out)
}

pub fn write_overlay(image: &ImageBuf, pred: &Mask, gt: &Mask, path: &Path) -> Result<()> {
    let rgb = overlay_rgb(image, pred, gt)?;
    image::RgbImage::from_raw(image.w as u32, image.h as u32, rgb)
        .expect("raw buffer sized from dimensions")
        .save(path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(h: usize, w: usize) -> ImageBuf {
        let mut img = ImageBuf::new(h, w, 1);
        for y in 0..h {
            for x in 0..w {
                img.set(0, y, x, x as f32 / (w - 1) as f32);
            }
        }
        img
    }

    #[test]
    fn pixel_classes_get_their_colors() {
        let img = gradient_image(2, 2);
        let pred = Mask::from_fn(2, 2, |y, x| (y, x) == (0, 0) || (y, x) == (0, 1));
        let gt = Mask::from_fn(2, 2, |y, x| (y, x) == (0, 0) || (y, x) == (1, 0));
        let rgb = overlay_rgb(&img, &pred, &gt).unwrap();
        let px = |y: usize, x: usize| -> [u8; 3] {
            let i = (y * 2 + x) * 3;
            [rgb[i], rgb[i + 1], rgb[i + 2]]
        };
        // TP at (0,0): green dominates.
        assert!(px(0, 0)[1] > px(0, 0)[0] && px(0, 0)[1] > px(0, 0)[2]);
        // FP at (0,1): red dominates.
        assert!(px(0, 1)[0] > px(0, 1)[1] && px(0, 1)[0] > px(0, 1)[2]);
        // FN at (1,0): blue dominates.
        assert!(px(1, 0)[2] > px(1, 0)[0] && px(1, 0)[2] > px(1, 0)[1]);
        // TN at (1,1): pure gray, equal channels.
        let tn = px(1, 1);
        assert!(tn[0] == tn[1] && tn[1] == tn[2]);
    }

    #[test]
    fn exact_blend_arithmetic() {
        let mut img = ImageBuf::new(1, 1, 1);
        img.set(0, 0, 0, 1.0);
        let pred = Mask::from_fn(1, 1, |_, _| true);
        let gt = Mask::from_fn(1, 1, |_, _| true);
        let rgb = overlay_rgb(&img, &pred, &gt).unwrap();
        let expect = |c: u8| (255.0 * 0.45 + c as f32 * 0.55).round() as u8;
        assert_eq!(rgb, vec![expect(0), expect(170), expect(0)]);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let img = gradient_image(4, 4);
        let pred = Mask::new(4, 4);
        let gt = Mask::new(2, 2);
        assert!(overlay_rgb(&img, &pred, &gt).is_err());
    }

    #[test]
    fn writes_a_decodable_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("overlay.png");
        let img = gradient_image(8, 8);
        let pred = Mask::from_fn(8, 8, |y, _| y < 4);
        let gt = Mask::from_fn(8, 8, |_, x| x < 4);
        write_overlay(&img, &pred, &gt, &path).unwrap();
        let back = image::open(&path).unwrap().to_rgb8();
        assert_eq!((back.width(), back.height()), (8, 8));
    }
}
