//! Plain raster containers shared by the data pipeline, post-processing,
//! metrics, and baselines: a binary mask and a float image.
//!
//! Images are stored planar (channel-major), masks as bytes restricted to
//! {0, 1}. Both are row-major within a plane.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Binary H x W mask; 1 marks foreground.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Mask {
    /// All-background mask.
    pub fn new(h: usize, w: usize) -> Self {
        Mask { h, w, data: vec![0; h * w] }
    }

    /// Wraps raw bytes; every value must be 0 or 1.
    pub fn from_data(h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::Shape(format!(
                "mask data length {} does not match {}x{}",
                data.len(),
                h,
                w
            )));
        }
        if let Some(bad) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Validation(format!("mask values must be 0 or 1, found {}", bad)));
        }
        Ok(Mask { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(f(y, x) as u8);
            }
        }
        Mask { h, w, data }
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize) -> usize {
        y * self.w + x
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: u8) {
        debug_assert!(v <= 1);
        self.data[y * self.w + x] = v;
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_all_background(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Foreground/background swapped.
    pub fn inverted(&self) -> Mask {
        Mask { h: self.h, w: self.w, data: self.data.iter().map(|&v| 1 - v).collect() }
    }

    /// Row-major (y, x) coordinates of foreground pixels.
    pub fn foreground(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(y, x) == 1 {
                    out.push((y, x));
                }
            }
        }
        out
    }
}

/// Float image, planar channel layout, values expected in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageBuf {
    pub fn new(h: usize, w: usize, channels: usize) -> Self {
        ImageBuf { h, w, channels, data: vec![0.0; h * w * channels] }
    }

    pub fn from_data(h: usize, w: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w * channels {
            return Err(Error::Shape(format!(
                "image data length {} does not match {}x{}x{}",
                data.len(),
                h,
                w,
                channels
            )));
        }
        Ok(ImageBuf { h, w, channels, data })
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.h + y) * self.w + x] = v;
    }

    /// Single-channel view: identity for grayscale, Rec. 601 luma for RGB.
    pub fn to_gray(&self) -> Vec<f32> {
        match self.channels {
            1 => self.data.clone(),
            3 => {
                let plane = self.h * self.w;
                (0..plane)
                    .map(|i| {
                        0.299 * self.data[i]
                            + 0.587 * self.data[plane + i]
                            + 0.114 * self.data[2 * plane + i]
                    })
                    .collect()
            }
            n => {
                // Mean over channels; only 1 and 3 appear in practice.
                let plane = self.h * self.w;
                (0..plane)
                    .map(|i| {
                        (0..n).map(|c| self.data[c * plane + i]).sum::<f32>() / n as f32
                    })
                    .collect()
            }
        }
    }
}

/// Stacks images into an `[n, c, h, w]` batch tensor. All images must share
/// dimensions and channel count.
pub fn batch_tensor<T: Scalar>(images: &[&ImageBuf]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Shape("cannot batch zero images".into()))?;
    let (h, w, c) = (first.h, first.w, first.channels);
    let mut data = Vec::with_capacity(images.len() * c * h * w);
    for img in images {
        if img.h != h || img.w != w || img.channels != c {
            return Err(Error::Shape(format!(
                "batch mixes {}x{}x{} with {}x{}x{} images",
                c, h, w, img.channels, img.h, img.w
            )));
        }
        data.extend(img.data.iter().map(|&v| T::from_f64(v as f64)));
    }
    Tensor::new(vec![images.len(), c, h, w], data)
}

/// Concatenates masks into one flat 0/1 target vector matching a batch
/// tensor's pixel order.
pub fn batch_targets(masks: &[&Mask]) -> Result<Vec<u8>> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Shape("cannot batch zero masks".into()))?;
    let (h, w) = (first.h, first.w);
    let mut out = Vec::with_capacity(masks.len() * h * w);
    for m in masks {
        if m.h != h || m.w != w {
            return Err(Error::Shape(format!(
                "batch mixes {}x{} with {}x{} masks",
                h, w, m.h, m.w
            )));
        }
        out.extend_from_slice(&m.data);
    }
    Ok(out)
}
