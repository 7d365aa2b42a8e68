//! Minimal raster line charts written straight to PNG: Bresenham
//! polylines, tick marks, and a built-in 5x7 bitmap font. No plotting
//! dependency, fully deterministic output.

use std::path::Path;

use crate::error::{Error, Result};

pub const TRAIN_COLOR: [u8; 3] = [31, 119, 180];
pub const VAL_COLOR: [u8; 3] = [214, 96, 28];

const BG: [u8; 3] = [255, 255, 255];
const AXIS: [u8; 3] = [40, 40, 40];
const GRID: [u8; 3] = [225, 225, 225];

/// One polyline: a label for the legend, a color, and one value per epoch.
pub struct Series<'a> {
    pub label: &'a str,
    pub color: [u8; 3],
    pub values: &'a [f64],
}

pub struct Canvas {
    pub w: usize,
    pub h: usize,
    data: Vec<u8>,
}

impl Canvas {
    pub fn new(w: usize, h: usize) -> Self {
        let mut data = Vec::with_capacity(w * h * 3);
        for _ in 0..w * h {
            data.extend_from_slice(&BG);
        }
        Canvas { w, h, data }
    }

    pub fn from_rgb(w: usize, h: usize, data: Vec<u8>) -> Self {
        debug_assert_eq!(data.len(), w * h * 3);
        Canvas { w, h, data }
    }

    pub fn put(&mut self, x: i64, y: i64, color: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            let i = (y as usize * self.w + x as usize) * 3;
            self.data[i..i + 3].copy_from_slice(&color);
        }
    }

    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.put(x, y, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    /// Draws uppercase text; unsupported characters render as blanks.
    pub fn text(&mut self, x: i64, y: i64, s: &str, color: [u8; 3]) {
        let mut cx = x;
        for ch in s.chars() {
            let glyph = glyph(ch.to_ascii_uppercase());
            for (row, bits) in glyph.iter().enumerate() {
                for col in 0..5 {
                    if bits & (0x10 >> col) != 0 {
                        self.put(cx + col as i64, y + row as i64, color);
                    }
                }
            }
            cx += 6;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        image::RgbImage::from_raw(self.w as u32, self.h as u32, self.data.clone())
            .expect("raw buffer sized from dimensions")
            .save(path)?;
        Ok(())
    }
}

/// Width in pixels of a string in the built-in font.
pub fn text_width(s: &str) -> i64 {
    s.chars().count() as i64 * 6
}

fn glyph(c: char) -> [u8; 7] {
    match c {
        '0' => [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E],
        '1' => [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E],
        '2' => [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F],
        '3' => [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E],
        '4' => [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02],
        '5' => [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E],
        '6' => [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E],
        '7' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08],
        '8' => [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E],
        '9' => [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C],
        'A' => [0x0E, 0x11, 0x11, 0x11, 0x1F, 0x11, 0x11],
        'B' => [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E],
        'C' => [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E],
        'D' => [0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C],
        'E' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F],
        'F' => [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10],
        'G' => [0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F],
        'H' => [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11],
        'I' => [0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E],
        'J' => [0x07, 0x02, 0x02, 0x02, 0x02, 0x12, 0x0C],
        'K' => [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11],
        'L' => [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F],
        'M' => [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11],
        'N' => [0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11],
        'O' => [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'P' => [0x1E, 0x11, 0x11, 0x1E, 0x10, 0x10, 0x10],
        'Q' => [0x0E, 0x11, 0x11, 0x11, 0x15, 0x12, 0x0D],
        'R' => [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11],
        'S' => [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E],
        'T' => [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04],
        'U' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E],
        'V' => [0x11, 0x11, 0x11, 0x11, 0x11, 0x0A, 0x04],
        'W' => [0x11, 0x11, 0x11, 0x15, 0x15, 0x15, 0x0A],
        'X' => [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11],
        'Y' => [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04],
        'Z' => [0x1F, 0x01, 0x02, 0x04, 0x08, 0x10, 0x1F],
        '.' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C],
        '-' => [0x00, 0x00, 0x00, 0x0E, 0x00, 0x00, 0x00],
        ':' => [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00],
        '/' => [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10],
        '_' => [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F],
        _ => [0; 7],
    }
}

fn format_tick(v: f64) -> String {
    if v == v.round() && v.abs() < 1e6 {
        format!("{}", v as i64)
    } else {
        let s = format!("{:.3}", v);
        let s = s.trim_end_matches('0');
        s.trim_end_matches('.').to_string()
    }
}

/// Renders series against epoch number (x starts at 1) into a PNG.
pub fn line_chart(title: &str, y_label: &str, series: &[Series<'_>], path: &Path) -> Result<()> {
    let n = series.first().map(|s| s.values.len()).unwrap_or(0);
    if n == 0 || series.iter().any(|s| s.values.len() != n) {
        return Err(Error::Validation("chart series must be non-empty and equally long".into()));
    }
    let (w, h) = (640usize, 440usize);
    let (left, right, top, bottom) = (64i64, 18i64, 30i64, 44i64);
    let plot_w = w as i64 - left - right;
    let plot_h = h as i64 - top - bottom;
    let mut canvas = Canvas::new(w, h);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &v in s.values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Validation("chart values must be finite".into()));
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = (hi - lo) * 0.05;
    let (lo, hi) = (lo - pad, hi + pad);

    let x_of = |epoch: usize| -> i64 {
        if n == 1 {
            left + plot_w / 2
        } else {
            left + (epoch as f64 / (n - 1) as f64 * plot_w as f64).round() as i64
        }
    };
    let y_of = |v: f64| -> i64 { top + plot_h - ((v - lo) / (hi - lo) * plot_h as f64).round() as i64 };

    // Horizontal grid plus y tick labels.
    for t in 0..=4 {
        let v = lo + (hi - lo) * t as f64 / 4.0;
        let y = y_of(v);
        canvas.line(left, y, left + plot_w, y, GRID);
        let label = format_tick(v);
        canvas.text(left - 6 - text_width(&label), y - 3, &label, AXIS);
    }
    // X ticks on up to six round epochs.
    let step = ((n as f64 / 6.0).ceil() as usize).max(1);
    let mut epoch = 1;
    while epoch <= n {
        let x = x_of(epoch - 1);
        canvas.line(x, top + plot_h, x, top + plot_h + 4, AXIS);
        let label = format_tick(epoch as f64);
        canvas.text(x - text_width(&label) / 2, top + plot_h + 8, &label, AXIS);
        epoch += step;
    }
    // Axes.
    canvas.line(left, top, left, top + plot_h, AXIS);
    canvas.line(left, top + plot_h, left + plot_w, top + plot_h, AXIS);
    canvas.text(left, 8, title, AXIS);
    canvas.text(left + plot_w / 2 - text_width("EPOCH") / 2, h as i64 - 14, "EPOCH", AXIS);
    canvas.text(8, top - 10, y_label, AXIS);

    // Legend in the top-right corner.
    let mut ly = top + 6;
    for s in series {
        let lx = left + plot_w - text_width(s.label) - 26;
        canvas.line(lx, ly + 3, lx + 14, ly + 3, s.color);
        canvas.text(lx + 18, ly, s.label, s.color);
        ly += 12;
    }

    for s in series {
        for i in 1..n {
            canvas.line(x_of(i - 1), y_of(s.values[i - 1]), x_of(i), y_of(s.values[i]), s.color);
        }
        if n == 1 {
            canvas.put(x_of(0), y_of(s.values[0]), s.color);
        }
    }
    canvas.save(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_writes_a_decodable_png() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.png");
        let train = [0.9, 0.5, 0.3, 0.2, 0.18];
        let val = [0.95, 0.6, 0.4, 0.3, 0.29];
        line_chart(
            "LOSS",
            "LOSS",
            &[
                Series { label: "TRAIN", color: TRAIN_COLOR, values: &train },
                Series { label: "VAL", color: VAL_COLOR, values: &val },
            ],
            &path,
        )
        .unwrap();
        let img = image::open(&path).unwrap().to_rgb8();
        assert_eq!((img.width(), img.height()), (640, 440));
        // Both series colors appear somewhere.
        let has = |c: [u8; 3]| img.pixels().any(|p| p.0 == c);
        assert!(has(TRAIN_COLOR) && has(VAL_COLOR));
    }

    #[test]
    fn single_epoch_and_flat_series_still_render() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.png");
        line_chart(
            "IOU",
            "IOU",
            &[Series { label: "VAL", color: VAL_COLOR, values: &[0.5] }],
            &path,
        )
        .unwrap();
        assert!(path.exists());
        let flat = dir.path().join("flat.png");
        line_chart(
            "IOU",
            "IOU",
            &[Series { label: "VAL", color: VAL_COLOR, values: &[0.5, 0.5, 0.5] }],
            &flat,
        )
        .unwrap();
        assert!(flat.exists());
    }

    #[test]
    fn empty_or_ragged_series_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        assert!(line_chart("X", "X", &[], &path).is_err());
        let a = [1.0, 2.0];
        let b = [1.0];
        assert!(line_chart(
            "X",
            "X",
            &[
                Series { label: "A", color: TRAIN_COLOR, values: &a },
                Series { label: "B", color: VAL_COLOR, values: &b },
            ],
            &path,
        )
        .is_err());
    }

    #[test]
    fn tick_formatting_trims_zeros() {
        assert_eq!(format_tick(3.0), "3");
        assert_eq!(format_tick(0.25), "0.25");
        assert_eq!(format_tick(0.1000), "0.1");
        assert_eq!(format_tick(-1.5), "-1.5");
    }

    #[test]
    fn every_needed_glyph_is_nonblank() {
        for c in "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZ.-:/_".chars() {
            assert_ne!(glyph(c), [0; 7], "missing glyph for {c}");
        }
        assert_eq!(glyph(' '), [0; 7]);
    }
}
