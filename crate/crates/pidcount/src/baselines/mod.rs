//! Classical counting baselines: Otsu thresholding, marker-based watershed,
//! and Hough circle detection. Each one maps a grayscale image to a
//! (count, predicted mask) pair so it can run through the same metrics
//! pipeline as the network.
//!
//! None of the underlying methods prescribe parameter values, so everything
//! tunable lives in [`BaselineParams`]; the defaults were tuned once on
//! small synthetic blob images (32 to 64 px) and frozen.

mod hough;
mod otsu;
mod watershed;

pub use hough::{hough_circle_count, sobel_magnitude, Circle, HoughParams};
pub use otsu::{histogram_256, otsu_bin, otsu_mask, otsu_threshold};
pub use watershed::{watershed_count, WatershedParams};

use crate::error::{Error, Result};
use crate::postproc::{label_components_8, morph_filter, PostprocParams};
use crate::raster::{ImageBuf, Mask};

/// Which classical method to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    Otsu,
    Watershed,
    Hough,
}

impl BaselineMethod {
    pub const ALL: [BaselineMethod; 3] =
        [BaselineMethod::Otsu, BaselineMethod::Watershed, BaselineMethod::Hough];

    pub fn name(&self) -> &'static str {
        match self {
            BaselineMethod::Otsu => "otsu",
            BaselineMethod::Watershed => "watershed",
            BaselineMethod::Hough => "hough",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "otsu" => Ok(BaselineMethod::Otsu),
            "watershed" => Ok(BaselineMethod::Watershed),
            "hough" => Ok(BaselineMethod::Hough),
            other => Err(Error::Config(format!(
                "unknown baseline '{}' (expected otsu, watershed, or hough)",
                other
            ))),
        }
    }
}

/// Settings for all three baselines plus the shared mask cleanup.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    pub hough: HoughParams,
    pub watershed: WatershedParams,
    pub post: PostprocParams,
}

impl Default for BaselineParams {
    fn default() -> Self {
        BaselineParams {
            hough: HoughParams::default(),
            watershed: WatershedParams::default(),
            post: PostprocParams::default(),
        }
    }
}

impl BaselineParams {
    pub fn validate(&self) -> Result<()> {
        self.hough.validate()?;
        self.watershed.validate()?;
        self.post.validate()
    }
}

/// Runs one baseline on one image and returns its object count together
/// with the mask it would submit for segmentation scoring.
///
/// A constant image has no two-class split, so the threshold-based methods
/// return a zero count with an empty mask instead of failing; this keeps
/// whole-dataset runs alive when a frame is blank.
pub fn baseline_predict(
    method: BaselineMethod,
    image: &ImageBuf,
    params: &BaselineParams,
) -> Result<(usize, Mask)> {
    params.validate()?;
    match method {
        BaselineMethod::Otsu => {
            let mask = match otsu_mask(image) {
                Ok(m) => m,
                Err(Error::Data(_)) => return Ok((0, Mask::new(image.h, image.w))),
                Err(e) => return Err(e),
            };
            let mask = morph_filter(&mask, &params.post);
            let labels = label_components_8(&mask);
            Ok((labels.count, mask))
        }
        BaselineMethod::Watershed => {
            let (count, labels) = watershed_count(image, &params.watershed, &params.post)?;
            let mask = Mask::from_fn(labels.h, labels.w, |y, x| labels.get(y, x) > 0);
            Ok((count, mask))
        }
        BaselineMethod::Hough => {
            let circles = hough_circle_count(image, &params.hough)?;
            let mask = Mask::from_fn(image.h, image.w, |y, x| {
                circles.iter().any(|c| {
                    let dy = y as i64 - c.cy as i64;
                    let dx = x as i64 - c.cx as i64;
                    dy * dy + dx * dx <= (c.r * c.r) as i64
                })
            });
            Ok((circles.len(), mask))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk_image(h: usize, w: usize, cy: f64, cx: f64, r: f64) -> ImageBuf {
        let mut img = ImageBuf::new(h, w, 1);
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                img.set(0, y, x, if d2 <= r * r { 0.9 } else { 0.1 });
            }
        }
        img
    }

    #[test]
    fn all_methods_count_one_clean_disk() {
        let img = disk_image(32, 32, 16.0, 16.0, 6.0);
        let params = BaselineParams::default();
        for method in BaselineMethod::ALL {
            let (count, mask) = baseline_predict(method, &img, &params).unwrap();
            assert_eq!(count, 1, "{} miscounted", method.name());
            assert!(mask.area() > 0, "{} produced an empty mask", method.name());
        }
    }

    #[test]
    fn constant_images_count_zero_everywhere() {
        let img = ImageBuf::from_data(32, 32, 1, vec![0.3; 32 * 32]).unwrap();
        let params = BaselineParams::default();
        for method in BaselineMethod::ALL {
            let (count, mask) = baseline_predict(method, &img, &params).unwrap();
            assert_eq!(count, 0, "{} found objects in a blank frame", method.name());
            assert!(mask.is_all_background());
        }
    }

    #[test]
    fn method_names_parse_back() {
        for method in BaselineMethod::ALL {
            assert_eq!(BaselineMethod::parse(method.name()).unwrap(), method);
        }
        assert!(BaselineMethod::parse("sift").is_err());
    }
}
