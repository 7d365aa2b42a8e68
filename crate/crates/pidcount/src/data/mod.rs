//! Dataset plumbing: paired image/mask loading, resizing, the eight
//! isometry augmentations, the 3:1:1 split, and synthetic blob generation.
//!
//! On disk a dataset is a directory with `images/<id>.png` (8-bit grayscale
//! or RGB) and `masks/<id>.png` (8-bit grayscale, foreground at gray value
//! 128 or above). Synthetic datasets add a `counts.csv` of `id,true_count`
//! rows.

mod synth;

pub use synth::{synth_blobs, SynthConfig};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{ImageBuf, Mask};

/// One image with its ground-truth mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageBuf,
    pub mask: Mask,
}

/// Which splits carry augmented variants instead of originals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentFlags {
    pub train: bool,
    pub val: bool,
    pub test: bool,
}

/// A 3:1:1 partition of a dataset.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub seed: u64,
    pub augmented: AugmentFlags,
}

/// What gets the 8x expansion after splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AugmentPolicy {
    /// Train and validation augmented, test kept original.
    #[default]
    TrainVal,
    /// All three splits augmented.
    Paper,
    /// No augmentation anywhere.
    Off,
}

impl AugmentPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trainval" => Ok(AugmentPolicy::TrainVal),
            "paper" => Ok(AugmentPolicy::Paper),
            "off" => Ok(AugmentPolicy::Off),
            other => Err(Error::Config(format!(
                "unknown augment policy '{}' (expected trainval, paper, or off)",
                other
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AugmentPolicy::TrainVal => "trainval",
            AugmentPolicy::Paper => "paper",
            AugmentPolicy::Off => "off",
        }
    }
}

fn decode_image(path: &Path) -> Result<ImageBuf> {
    let img = image::open(path)?;
    let buf = match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = (g.width() as usize, g.height() as usize);
            let data = g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
            ImageBuf { h, w, channels: 1, data }
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let raw = rgb.into_raw();
            let mut data = vec![0.0f32; 3 * h * w];
            for i in 0..h * w {
                for c in 0..3 {
                    data[c * h * w + i] = raw[i * 3 + c] as f32 / 255.0;
                }
            }
            ImageBuf { h, w, channels: 3, data }
        }
    };
    Ok(buf)
}

fn decode_mask(path: &Path) -> Result<Mask> {
    let gray = image::open(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data = gray.into_raw().into_iter().map(|v| (v >= 128) as u8).collect();
    Ok(Mask { h, w, data })
}

/// Loads every image/mask pair under `dir`, sorted by id. Returns the
/// samples plus warnings about files that were skipped (present but not
/// decodable as images). Unpaired files are an error naming the orphan.
pub fn load_dataset(dir: &Path) -> Result<(Vec<Sample>, Vec<String>)> {
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    for d in [&images_dir, &masks_dir] {
        if !d.is_dir() {
            return Err(Error::Data(format!("dataset directory {} is missing", d.display())));
        }
    }
    let list_files = |d: &Path| -> Result<BTreeMap<String, std::path::PathBuf>> {
        let mut out = BTreeMap::new();
        for entry in std::fs::read_dir(d)? {
            let path = entry?.path();
            if path.is_file() {
                out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), path);
            }
        }
        Ok(out)
    };
    let image_files = list_files(&images_dir)?;
    let mask_files = list_files(&masks_dir)?;

    let mut warnings = Vec::new();
    let mut samples = Vec::new();
    let mut paired: Vec<&String> = Vec::new();
    for (name, path) in &image_files {
        let id = Path::new(name).file_stem().unwrap_or_default().to_string_lossy().into_owned();
        let image = match decode_image(path) {
            Ok(img) => img,
            Err(Error::Image(_)) => {
                warnings.push(format!("skipping non-image file {}", path.display()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let mask_path = match mask_files.get(name) {
            Some(p) => p,
            None => {
                return Err(Error::Data(format!(
                    "image '{}' has no matching mask in {}",
                    id,
                    masks_dir.display()
                )))
            }
        };
        paired.push(name);
        let mask = decode_mask(mask_path)?;
        if mask.h != image.h || mask.w != image.w {
            return Err(Error::Data(format!(
                "mask for '{}' is {}x{} but the image is {}x{}",
                id, mask.h, mask.w, image.h, image.w
            )));
        }
        samples.push(Sample { id, image, mask });
    }
    for (name, path) in &mask_files {
        if paired.iter().any(|&p| p == name) {
            continue;
        }
        match decode_mask(path) {
            Ok(_) => {
                let id = Path::new(name).file_stem().unwrap_or_default().to_string_lossy();
                return Err(Error::Data(format!(
                    "mask '{}' has no matching image in {}",
                    id,
                    images_dir.display()
                )));
            }
            Err(Error::Image(_)) => {
                warnings.push(format!("skipping non-image file {}", path.display()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok((samples, warnings))
}

/// Loads images without masks: from `dir/images/` when that subdirectory
/// exists, otherwise from `dir` itself. Returns (id, image) pairs sorted
/// by filename plus warnings for skipped non-image files.
pub fn load_images(dir: &Path) -> Result<(Vec<(String, ImageBuf)>, Vec<String>)> {
    let images_dir = if dir.join("images").is_dir() { dir.join("images") } else { dir.to_path_buf() };
    if !images_dir.is_dir() {
        return Err(Error::Data(format!("image directory {} is missing", images_dir.display())));
    }
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(&images_dir)? {
        let path = entry?.path();
        if path.is_file() {
            files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), path);
        }
    }
    let mut warnings = Vec::new();
    let mut out = Vec::new();
    for (name, path) in &files {
        let id = Path::new(name).file_stem().unwrap_or_default().to_string_lossy().into_owned();
        match decode_image(path) {
            Ok(img) => out.push((id, img)),
            Err(Error::Image(_)) => {
                warnings.push(format!("skipping non-image file {}", path.display()));
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, warnings))
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes samples in the standard dataset layout.
pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    std::fs::create_dir_all(&images_dir)?;
    std::fs::create_dir_all(&masks_dir)?;
    for s in samples {
        let (h, w) = (s.image.h as u32, s.image.w as u32);
        let image_path = images_dir.join(format!("{}.png", s.id));
        match s.image.channels {
            1 => {
                let raw: Vec<u8> = s.image.data.iter().map(|&v| quantize(v)).collect();
                image::GrayImage::from_raw(w, h, raw)
                    .expect("raw buffer sized from dimensions")
                    .save(&image_path)?;
            }
            3 => {
                let plane = s.image.h * s.image.w;
                let mut raw = vec![0u8; 3 * plane];
                for i in 0..plane {
                    for c in 0..3 {
                        raw[i * 3 + c] = quantize(s.image.data[c * plane + i]);
                    }
                }
                image::RgbImage::from_raw(w, h, raw)
                    .expect("raw buffer sized from dimensions")
                    .save(&image_path)?;
            }
            n => {
                return Err(Error::Data(format!(
                    "sample '{}' has {} channels; only 1 and 3 can be written",
                    s.id, n
                )))
            }
        }
        let mask_raw: Vec<u8> = s.mask.data.iter().map(|&v| v * 255).collect();
        image::GrayImage::from_raw(w, h, mask_raw)
            .expect("raw buffer sized from dimensions")
            .save(masks_dir.join(format!("{}.png", s.id)))?;
    }
    Ok(())
}

/// Writes `counts.csv` (`id,true_count` per row).
pub fn write_counts_csv(path: &Path, rows: &[(String, usize)]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "id,true_count")?;
    for (id, count) in rows {
        writeln!(f, "{},{}", id, count)?;
    }
    Ok(())
}

pub fn read_counts_csv(path: &Path) -> Result<Vec<(String, usize)>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let (id, count) = line.split_once(',').ok_or_else(|| {
            Error::Data(format!("{}:{}: expected 'id,count'", path.display(), i + 1))
        })?;
        let count = count.trim().parse::<usize>().map_err(|_| {
            Error::Data(format!("{}:{}: '{}' is not a count", path.display(), i + 1, count))
        })?;
        rows.push((id.to_string(), count));
    }
    Ok(rows)
}

/// Resizes a sample to `size` x `size`: bilinear for the image (half-pixel
/// center alignment, edges clamped), nearest neighbor for the mask so it
/// stays binary. `size` must be a positive multiple of 16.
pub fn resize(sample: &Sample, size: usize) -> Result<Sample> {
    if size < 16 || size % 16 != 0 {
        return Err(Error::Config(format!(
            "target size must be a multiple of 16 and at least 16, got {}",
            size
        )));
    }
    if sample.image.h == size && sample.image.w == size {
        return Ok(sample.clone());
    }
    let (h, w) = (sample.image.h, sample.image.w);
    let scale_y = h as f64 / size as f64;
    let scale_x = w as f64 / size as f64;

    let mut image = ImageBuf::new(size, size, sample.image.channels);
    for c in 0..image.channels {
        for oy in 0..size {
            let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = (sy - y0 as f64) as f32;
            for ox in 0..size {
                let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = (sx - x0 as f64) as f32;
                let v00 = sample.image.get(c, y0, x0);
                let v01 = sample.image.get(c, y0, x1);
                let v10 = sample.image.get(c, y1, x0);
                let v11 = sample.image.get(c, y1, x1);
                let top = v00 + fx * (v01 - v00);
                let bot = v10 + fx * (v11 - v10);
                image.set(c, oy, ox, top + fy * (bot - top));
            }
        }
    }

    let mask = Mask::from_fn(size, size, |oy, ox| {
        let sy = (oy as f64 + 0.5) * scale_y - 0.5;
        let sx = (ox as f64 + 0.5) * scale_x - 0.5;
        let iy = ((sy + 0.5).floor() as i64).clamp(0, h as i64 - 1) as usize;
        let ix = ((sx + 0.5).floor() as i64).clamp(0, w as i64 - 1) as usize;
        sample.mask.get(iy, ix) == 1
    });

    Ok(Sample { id: sample.id.clone(), image, mask })
}

/// Index maps for the eight isometries of a square: output (y, x) to input
/// coordinates. Rotations are clockwise; the mirror flips horizontally and
/// is applied after the rotation.
fn isometry(rot: usize, mirror: bool, n: usize, y: usize, x: usize) -> (usize, usize) {
    let x = if mirror { n - 1 - x } else { x };
    match rot {
        0 => (y, x),
        90 => (n - 1 - x, y),
        180 => (n - 1 - y, n - 1 - x),
        270 => (x, n - 1 - y),
        _ => unreachable!("rotations are multiples of 90"),
    }
}

/// The paper's 8x augmentation: four rotations, each plain and mirrored.
/// Ids get a `_r<deg>` / `_r<deg>m` suffix. Requires a square sample.
pub fn augment8(sample: &Sample) -> Result<Vec<Sample>> {
    let n = sample.image.h;
    if sample.image.w != n {
        return Err(Error::Config(format!(
            "augmentation needs square samples, got {}x{}",
            n, sample.image.w
        )));
    }
    let mut out = Vec::with_capacity(8);
    for &mirror in &[false, true] {
        for &rot in &[0usize, 90, 180, 270] {
            let mut image = ImageBuf::new(n, n, sample.image.channels);
            let mut mask = Mask::new(n, n);
            for y in 0..n {
                for x in 0..n {
                    let (sy, sx) = isometry(rot, mirror, n, y, x);
                    for c in 0..image.channels {
                        image.set(c, y, x, sample.image.get(c, sy, sx));
                    }
                    mask.set(y, x, sample.mask.get(sy, sx));
                }
            }
            let suffix = if mirror { format!("_r{}m", rot) } else { format!("_r{}", rot) };
            out.push(Sample { id: format!("{}{}", sample.id, suffix), image, mask });
        }
    }
    Ok(out)
}

/// Largest-remainder apportionment of `n` originals into 3:1:1.
fn split_sizes(n: usize) -> (usize, usize, usize) {
    let weights = [3usize, 1, 1];
    let mut sizes = [0usize; 3];
    let mut rems = [0usize; 3];
    let mut used = 0;
    for i in 0..3 {
        sizes[i] = n * weights[i] / 5;
        rems[i] = n * weights[i] % 5;
        used += sizes[i];
    }
    for _ in used..n {
        // Hand the spare unit to the largest remainder; ties favor the
        // earlier split (train, then val, then test).
        let mut best = 0;
        for i in 1..3 {
            if rems[i] > rems[best] {
                best = i;
            }
        }
        sizes[best] += 1;
        rems[best] = 0;
    }
    (sizes[0], sizes[1], sizes[2])
}

/// Splits originals 3:1:1 by seeded shuffle, then applies the augmentation
/// policy. Samples are sorted by id first, so membership depends only on
/// the ids and the seed.
pub fn split(samples: Vec<Sample>, seed: u64, policy: AugmentPolicy) -> Result<DatasetSplit> {
    if samples.len() < 5 {
        return Err(Error::Config(format!(
            "a 3:1:1 split needs at least 5 samples, got {}",
            samples.len()
        )));
    }
    let mut originals = samples;
    originals.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    originals.shuffle(&mut rng);

    let (n_train, n_val, _) = split_sizes(originals.len());
    let rest = originals.split_off(n_train);
    let train = originals;
    let mut val = rest;
    let test = val.split_off(n_val);

    let augmented = AugmentFlags {
        train: policy != AugmentPolicy::Off,
        val: policy != AugmentPolicy::Off,
        test: policy == AugmentPolicy::Paper,
    };
    let expand = |set: Vec<Sample>, on: bool| -> Result<Vec<Sample>> {
        if !on {
            return Ok(set);
        }
        let mut out = Vec::with_capacity(set.len() * 8);
        for s in &set {
            out.extend(augment8(s)?);
        }
        Ok(out)
    };
    Ok(DatasetSplit {
        train: expand(train, augmented.train)?,
        val: expand(val, augmented.val)?,
        test: expand(test, augmented.test)?,
        seed,
        augmented,
    })
}
