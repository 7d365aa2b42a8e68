//! Run configuration: a flat `key = value` text format shared by every
//! subcommand, with '#' comments. Unknown keys and malformed values are
//! rejected with the offending line number. Every artifact-producing run
//! writes its fully resolved configuration next to its outputs, and that
//! file parses back to the identical [`RunConfig`].

use std::path::Path;

use crate::baselines::{BaselineParams, HoughParams, WatershedParams};
use crate::data::{AugmentPolicy, SynthConfig};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::postproc::PostprocParams;
use crate::train::HyperParams;

/// Everything a run needs; one instance covers all subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub hyper: HyperParams,
    pub post: PostprocParams,
    pub hough: HoughParams,
    pub watershed: WatershedParams,
    pub synth: SynthConfig,
    /// Seed for weight initialization (shuffling uses `hyper.seed`).
    pub init_seed: u64,
    /// Seed for the train/val/test partition of a flat dataset.
    pub split_seed: u64,
    pub augment: AugmentPolicy,
    /// Square side images are resized to on load; 0 keeps native size.
    pub image_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            hyper: HyperParams::default(),
            post: PostprocParams::default(),
            hough: HoughParams::default(),
            watershed: WatershedParams::default(),
            synth: SynthConfig::default(),
            init_seed: 0,
            split_seed: 0,
            augment: AugmentPolicy::default(),
            image_size: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("'{}' is not a valid value for {}", value, key)))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("'{}' is not a valid value for {} (true/false)", value, key))),
    }
}

impl RunConfig {
    /// Applies one key/value pair. Used for both config-file lines and
    /// command-line overrides, so the two can never drift apart.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "variant" => self.model.variant = Variant::parse(value)?,
            "in_channels" => self.model.in_channels = parse_num(key, value)?,
            "base_width" => self.model.base_width = parse_num(key, value)?,
            "reduce_kernel" => self.model.reduce_kernel = parse_num(key, value)?,
            "lr" => self.hyper.lr = parse_num(key, value)?,
            "beta1" => self.hyper.beta1 = parse_num(key, value)?,
            "beta2" => self.hyper.beta2 = parse_num(key, value)?,
            "eps" => self.hyper.eps = parse_num(key, value)?,
            "batch_size" => self.hyper.batch_size = parse_num(key, value)?,
            "epochs" => self.hyper.epochs = parse_num(key, value)?,
            "train_seed" => self.hyper.seed = parse_num(key, value)?,
            "init_seed" => self.init_seed = parse_num(key, value)?,
            "split_seed" => self.split_seed = parse_num(key, value)?,
            "augment" => self.augment = AugmentPolicy::parse(value)?,
            "image_size" => self.image_size = parse_num(key, value)?,
            "prob_threshold" => self.post.prob_threshold = parse_num(key, value)?,
            "min_area" => {
                self.post.min_area =
                    if value == "auto" { None } else { Some(parse_num(key, value)?) }
            }
            "opening" => self.post.opening = parse_bool(key, value)?,
            "hough_r_min" => self.hough.r_min = parse_num(key, value)?,
            "hough_r_max" => self.hough.r_max = parse_num(key, value)?,
            "hough_r_step" => self.hough.r_step = parse_num(key, value)?,
            "hough_edge_threshold" => self.hough.edge_threshold = parse_num(key, value)?,
            "hough_peak_threshold" => self.hough.peak_threshold = parse_num(key, value)?,
            "hough_nms_radius" => self.hough.nms_radius = parse_num(key, value)?,
            "watershed_sigma" => self.watershed.sigma = parse_num(key, value)?,
            "watershed_min_distance" => self.watershed.min_distance = parse_num(key, value)?,
            "synth_n" => self.synth.n_images = parse_num(key, value)?,
            "synth_size" => self.synth.image_size = parse_num(key, value)?,
            "synth_count_min" => self.synth.count_range.0 = parse_num(key, value)?,
            "synth_count_max" => self.synth.count_range.1 = parse_num(key, value)?,
            "synth_seed" => self.synth.seed = parse_num(key, value)?,
            "synth_noise_sigma" => self.synth.noise_sigma = parse_num(key, value)?,
            "synth_radius_min" => self.synth.radius_range.0 = parse_num(key, value)?,
            "synth_radius_max" => self.synth.radius_range.1 = parse_num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{}'", key))),
        }
        Ok(())
    }

    /// Full listing in a stable order; parses back to an equal config.
    pub fn render(&self) -> String {
        let min_area = match self.post.min_area {
            None => "auto".to_string(),
            Some(a) => a.to_string(),
        };
        format!(
            "# model\n\
             variant = {}\n\
             in_channels = {}\n\
             base_width = {}\n\
             reduce_kernel = {}\n\
             \n# training\n\
             lr = {}\n\
             beta1 = {}\n\
             beta2 = {}\n\
             eps = {}\n\
             batch_size = {}\n\
             epochs = {}\n\
             train_seed = {}\n\
             init_seed = {}\n\
             \n# data\n\
             split_seed = {}\n\
             augment = {}\n\
             image_size = {}\n\
             \n# post-processing\n\
             prob_threshold = {}\n\
             min_area = {}\n\
             opening = {}\n\
             \n# baselines\n\
             hough_r_min = {}\n\
             hough_r_max = {}\n\
             hough_r_step = {}\n\
             hough_edge_threshold = {}\n\
             hough_peak_threshold = {}\n\
             hough_nms_radius = {}\n\
             watershed_sigma = {}\n\
             watershed_min_distance = {}\n\
             \n# synthesis\n\
             synth_n = {}\n\
             synth_size = {}\n\
             synth_count_min = {}\n\
             synth_count_max = {}\n\
             synth_seed = {}\n\
             synth_noise_sigma = {}\n\
             synth_radius_min = {}\n\
             synth_radius_max = {}\n",
            self.model.variant.name(),
            self.model.in_channels,
            self.model.base_width,
            self.model.reduce_kernel,
            self.hyper.lr,
            self.hyper.beta1,
            self.hyper.beta2,
            self.hyper.eps,
            self.hyper.batch_size,
            self.hyper.epochs,
            self.hyper.seed,
            self.init_seed,
            self.split_seed,
            self.augment.name(),
            self.image_size,
            self.post.prob_threshold,
            min_area,
            self.post.opening,
            self.hough.r_min,
            self.hough.r_max,
            self.hough.r_step,
            self.hough.edge_threshold,
            self.hough.peak_threshold,
            self.hough.nms_radius,
            self.watershed.sigma,
            self.watershed.min_distance,
            self.synth.n_images,
            self.synth.image_size,
            self.synth.count_range.0,
            self.synth.count_range.1,
            self.synth.seed,
            self.synth.noise_sigma,
            self.synth.radius_range.0,
            self.synth.radius_range.1,
        )
    }

    pub fn baseline_params(&self) -> BaselineParams {
        BaselineParams { hough: self.hough, watershed: self.watershed, post: self.post }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.hyper.validate()?;
        self.post.validate()?;
        self.hough.validate()?;
        self.watershed.validate()?;
        self.synth.validate()?;
        if self.image_size != 0 && (self.image_size < 16 || self.image_size % 16 != 0) {
            return Err(Error::Config(format!(
                "image_size must be 0 (native) or a multiple of 16 that is at least 16, got {}",
                self.image_size
            )));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}

/// Parses config text applied on top of defaults. Errors cite 1-based
/// line numbers.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("config line {}: expected 'key = value', got '{}'", i + 1, line))
        })?;
        cfg.apply(key.trim(), value.trim())
            .map_err(|e| Error::Config(format!("config line {}: {}", i + 1, e)))?;
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {}", path.display(), e)))?;
    parse_config(&text)
}
