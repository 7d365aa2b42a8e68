//! The encoder-decoder segmentation network and its ablation variants.
//!
//! Four encoder blocks halve the resolution each; block `b` works at
//! `2^(b-1) * C` channels ("width" `C`). Every block ends in a
//! variant-specific down-sampling path:
//!
//! * **PID**: the block output is decomposed into its four pixel-interval
//!   sub-maps (a lossless rearrangement) and concatenated with a
//!   max-pool -> conv -> ReLU branch; a reduction convolution brings the
//!   stacked `5C_b` channels back to `C_b`.
//! * **M1**: max-pool -> conv -> ReLU only (no PID).
//! * **M2**: PID sub-maps plus reduction convolution only (no max pooling in
//!   the down path).
//! * **UNET**: plain max pooling, classic U-Net shape with one same-level
//!   skip per decoder stage.
//!
//! The bottleneck doubles to `16C` at 1/16 resolution. Each decoder level
//! up-samples with a stride-2 transposed convolution, concatenates the
//! up-sampled features with skip connections (for PID/M1/M2: every shallower
//! encoder output max-pooled down to the level's resolution, giving 5, 4, 3,
//! then 2 concatenated parts), and applies two conv + ReLU pairs. A 1x1
//! convolution and a channel softmax produce two-class probabilities at full
//! resolution.

mod topology;

pub use topology::{BlockDesc, OpDesc, OpKind, Topology};

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{load_checkpoint, save_checkpoint, Graph, NodeId, Tensor};

/// Encoder/decoder depth; the architecture is fixed at four levels.
pub const LEVELS: usize = 4;
/// Two-class output: background and foreground.
pub const CLASSES: usize = 2;

/// Network variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Full network: PID plus max-pool branch in every down path.
    Pid,
    /// Ablation: max pooling only.
    M1,
    /// Ablation: PID only.
    M2,
    /// Plain U-Net reference.
    Unet,
}

impl Variant {
    /// Canonical method name as it appears in reports.
    pub fn name(self) -> &'static str {
        match self {
            Variant::Pid => "pidnet",
            Variant::M1 => "m1",
            Variant::M2 => "m2",
            Variant::Unet => "unet",
        }
    }

    /// Parses a user-facing variant string (`pid`/`pidnet`, `m1`, `m2`, `unet`).
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pid" | "pidnet" => Ok(Variant::Pid),
            "m1" => Ok(Variant::M1),
            "m2" => Ok(Variant::M2),
            "unet" => Ok(Variant::Unet),
            other => Err(Error::Config(format!(
                "unknown variant '{}' (expected pid, m1, m2, or unet)",
                other
            ))),
        }
    }

    pub const ALL: [Variant; 4] = [Variant::Pid, Variant::M1, Variant::M2, Variant::Unet];
}

/// Model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Input image channels (1 for grayscale, 3 for RGB).
    pub in_channels: usize,
    /// Channel width `C` of the first encoder block.
    pub base_width: usize,
    /// Kernel size of the reduction convolution after PID concatenation
    /// (3, or 1 for a pure channel mix).
    pub reduce_kernel: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { variant: Variant::Pid, in_channels: 1, base_width: 16, reduce_kernel: 3 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 1 | 3) {
            return Err(Error::Config(format!(
                "in_channels must be 1 or 3, got {}",
                self.in_channels
            )));
        }
        if self.base_width == 0 {
            return Err(Error::Config("base_width must be at least 1".into()));
        }
        if !matches!(self.reduce_kernel, 1 | 3) {
            return Err(Error::Config(format!(
                "reduce_kernel must be 1 or 3, got {}",
                self.reduce_kernel
            )));
        }
        Ok(())
    }

    /// Channels produced by encoder block `b` (1-based).
    fn enc_width(&self, b: usize) -> usize {
        self.base_width << (b - 1)
    }

    /// Channels produced by decoder level `i` (1-based).
    fn dec_width(&self, i: usize) -> usize {
        self.base_width << (LEVELS - i)
    }

    /// Channel count after the concatenation of decoder level `i`.
    fn concat_width(&self, i: usize) -> usize {
        let d = self.dec_width(i);
        match self.variant {
            Variant::Unet => 2 * d,
            // Up-sampled features plus every shallower skip pooled to this
            // resolution: d + C * (2^(LEVELS+1-i) - 1).
            _ => d + self.base_width * ((1 << (LEVELS + 1 - i)) - 1),
        }
    }
}

enum LayerKind {
    Conv { in_ch: usize, out_ch: usize, kernel: usize },
    ConvT { in_ch: usize, out_ch: usize },
}

struct LayerSpec {
    name: String,
    kind: LayerKind,
}

/// Parameterized layers in creation order; initialization, checkpoint
/// validation, and the forward pass all follow this single schedule.
fn layer_specs(cfg: &ModelConfig) -> Vec<LayerSpec> {
    fn conv(specs: &mut Vec<LayerSpec>, name: String, in_ch: usize, out_ch: usize, kernel: usize) {
        specs.push(LayerSpec { name, kind: LayerKind::Conv { in_ch, out_ch, kernel } });
    }
    let c = cfg.base_width;
    let mut specs = Vec::new();
    for b in 1..=LEVELS {
        let cb = cfg.enc_width(b);
        let cin = if b == 1 { cfg.in_channels } else { cfg.enc_width(b - 1) };
        conv(&mut specs, format!("enc{b}.conv1"), cin, cb, 3);
        conv(&mut specs, format!("enc{b}.conv2"), cb, cb, 3);
        match cfg.variant {
            Variant::Pid => {
                conv(&mut specs, format!("enc{b}.down.conv"), cb, cb, 3);
                conv(&mut specs, format!("enc{b}.down.reduce"), 5 * cb, cb, cfg.reduce_kernel);
            }
            Variant::M1 => conv(&mut specs, format!("enc{b}.down.conv"), cb, cb, 3),
            Variant::M2 => conv(&mut specs, format!("enc{b}.down.reduce"), 4 * cb, cb, cfg.reduce_kernel),
            Variant::Unet => {}
        }
    }
    conv(&mut specs, "bottleneck.conv1".into(), 8 * c, 16 * c, 3);
    conv(&mut specs, "bottleneck.conv2".into(), 16 * c, 16 * c, 3);
    for i in 1..=LEVELS {
        let d = cfg.dec_width(i);
        let up_in = if i == 1 { 16 * c } else { cfg.dec_width(i - 1) };
        specs.push(LayerSpec {
            name: format!("dec{i}.up"),
            kind: LayerKind::ConvT { in_ch: up_in, out_ch: d },
        });
        conv(&mut specs, format!("dec{i}.conv1"), cfg.concat_width(i), d, 3);
        conv(&mut specs, format!("dec{i}.conv2"), d, d, 3);
    }
    conv(&mut specs, "classifier".into(), c, CLASSES, 1);
    specs
}

/// Builds the structural description matching [`layer_specs`] and the
/// forward pass.
fn build_topology(cfg: &ModelConfig) -> Topology {
    let c = cfg.base_width;
    let mut blocks = Vec::new();
    let conv_pair = |cin: usize, cout: usize| {
        vec![
            OpDesc { kind: OpKind::Conv { kernel: 3 }, in_channels: cin, out_channels: cout },
            OpDesc { kind: OpKind::Relu, in_channels: cout, out_channels: cout },
            OpDesc { kind: OpKind::Conv { kernel: 3 }, in_channels: cout, out_channels: cout },
            OpDesc { kind: OpKind::Relu, in_channels: cout, out_channels: cout },
        ]
    };
    for b in 1..=LEVELS {
        let cb = cfg.enc_width(b);
        let cin = if b == 1 { cfg.in_channels } else { cfg.enc_width(b - 1) };
        blocks.push(BlockDesc { name: format!("enc{b}"), ops: conv_pair(cin, cb) });
        let down_ops = match cfg.variant {
            Variant::Pid => vec![
                OpDesc { kind: OpKind::MaxPool, in_channels: cb, out_channels: cb },
                OpDesc { kind: OpKind::Conv { kernel: 3 }, in_channels: cb, out_channels: cb },
                OpDesc { kind: OpKind::Relu, in_channels: cb, out_channels: cb },
                OpDesc { kind: OpKind::Pid, in_channels: cb, out_channels: 4 * cb },
                OpDesc { kind: OpKind::Concat { parts: 2 }, in_channels: 5 * cb, out_channels: 5 * cb },
                OpDesc {
                    kind: OpKind::Conv { kernel: cfg.reduce_kernel },
                    in_channels: 5 * cb,
                    out_channels: cb,
                },
            ],
            Variant::M1 => vec![
                OpDesc { kind: OpKind::MaxPool, in_channels: cb, out_channels: cb },
                OpDesc { kind: OpKind::Conv { kernel: 3 }, in_channels: cb, out_channels: cb },
                OpDesc { kind: OpKind::Relu, in_channels: cb, out_channels: cb },
            ],
            Variant::M2 => vec![
                OpDesc { kind: OpKind::Pid, in_channels: cb, out_channels: 4 * cb },
                OpDesc {
                    kind: OpKind::Conv { kernel: cfg.reduce_kernel },
                    in_channels: 4 * cb,
                    out_channels: cb,
                },
            ],
            Variant::Unet => {
                vec![OpDesc { kind: OpKind::MaxPool, in_channels: cb, out_channels: cb }]
            }
        };
        blocks.push(BlockDesc { name: format!("enc{b}.down"), ops: down_ops });
    }
    blocks.push(BlockDesc {
        name: "bottleneck".into(),
        ops: {
            let mut ops = Vec::new();
            ops.push(OpDesc { kind: OpKind::Conv { kernel: 3 }, in_channels: 8 * c, out_channels: 16 * c });
            ops.push(OpDesc { kind: OpKind::Relu, in_channels: 16 * c, out_channels: 16 * c });
            ops.push(OpDesc { kind: OpKind::Conv { kernel: 3 }, in_channels: 16 * c, out_channels: 16 * c });
            ops.push(OpDesc { kind: OpKind::Relu, in_channels: 16 * c, out_channels: 16 * c });
            ops
        },
    });
    if cfg.variant != Variant::Unet {
        // Hierarchy skips: encoder block j is pooled LEVELS-1-j times so a
        // copy exists at every deeper decoder resolution.
        let mut ops = Vec::new();
        for j in 1..LEVELS {
            let cj = cfg.enc_width(j);
            for _ in 0..(LEVELS - j) {
                ops.push(OpDesc { kind: OpKind::MaxPool, in_channels: cj, out_channels: cj });
            }
        }
        blocks.push(BlockDesc { name: "skip_pyramid".into(), ops });
    }
    for i in 1..=LEVELS {
        let d = cfg.dec_width(i);
        let up_in = if i == 1 { 16 * c } else { cfg.dec_width(i - 1) };
        let parts = match cfg.variant {
            Variant::Unet => 2,
            _ => LEVELS + 2 - i,
        };
        let cat = cfg.concat_width(i);
        let mut ops = vec![
            OpDesc { kind: OpKind::ConvTranspose, in_channels: up_in, out_channels: d },
            OpDesc { kind: OpKind::Concat { parts }, in_channels: cat, out_channels: cat },
        ];
        ops.extend([
            OpDesc { kind: OpKind::Conv { kernel: 3 }, in_channels: cat, out_channels: d },
            OpDesc { kind: OpKind::Relu, in_channels: d, out_channels: d },
            OpDesc { kind: OpKind::Conv { kernel: 3 }, in_channels: d, out_channels: d },
            OpDesc { kind: OpKind::Relu, in_channels: d, out_channels: d },
        ]);
        blocks.push(BlockDesc { name: format!("dec{i}"), ops });
    }
    blocks.push(BlockDesc {
        name: "classifier".into(),
        ops: vec![
            OpDesc { kind: OpKind::Conv { kernel: 1 }, in_channels: c, out_channels: CLASSES },
            OpDesc { kind: OpKind::Softmax, in_channels: CLASSES, out_channels: CLASSES },
        ],
    });
    Topology { variant: cfg.variant, in_channels: cfg.in_channels, base_width: c, blocks }
}

/// A built network: named parameter tensors plus the structural description.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    /// Parameter names, aligned with `values`.
    pub names: Vec<String>,
    /// Parameter tensors (all with `requires_grad` set).
    pub values: Vec<Tensor<T>>,
    pub topology: Topology,
    index: HashMap<String, usize>,
}

/// Everything the forward pass hands back: the probability node, the logit
/// node feeding it (the training loss reads this one), the parameter leaf
/// ids (aligned with `Model::values`), and shape bookkeeping for structural
/// tests.
pub struct ForwardPass {
    pub probs: NodeId,
    pub logits: NodeId,
    pub param_nodes: Vec<NodeId>,
    pub trace: ForwardTrace,
}

/// Shapes observed during one forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardTrace {
    pub enc_skip_shapes: Vec<Vec<usize>>,
    pub bottleneck_input_shape: Vec<usize>,
    pub decoder_concat_parts: Vec<usize>,
    pub decoder_concat_channels: Vec<usize>,
    pub output_shape: Vec<usize>,
}

impl<T: Scalar> Model<T> {
    /// Builds a network with seeded uniform initialization: each layer's
    /// weights are drawn from `±sqrt(1 / fan_in)` (fan-in = input channels
    /// times kernel area), biases start at zero. The same seed always
    /// produces bit-identical parameters.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut values = Vec::new();
        for spec in layer_specs(&config) {
            let (shape, fan_in, bias_len) = match spec.kind {
                LayerKind::Conv { in_ch, out_ch, kernel } => {
                    (vec![out_ch, in_ch, kernel, kernel], in_ch * kernel * kernel, out_ch)
                }
                LayerKind::ConvT { in_ch, out_ch } => {
                    (vec![in_ch, out_ch, 3, 3], in_ch * 9, out_ch)
                }
            };
            let bound = T::from_f64((1.0 / fan_in as f64).sqrt());
            let numel: usize = shape.iter().product();
            let data: Vec<T> = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
            names.push(format!("{}.weight", spec.name));
            values.push(Tensor::new(shape, data)?.with_grad());
            names.push(format!("{}.bias", spec.name));
            values.push(Tensor::zeros(&[bias_len]).with_grad());
        }
        let index = names.iter().cloned().zip(0..).collect();
        Ok(Model { config, names, values, topology: build_topology(&config), index })
    }

    /// Total number of scalar parameters.
    pub fn num_parameters(&self) -> usize {
        self.values.iter().map(|v| v.numel()).sum()
    }

    fn param_node(&self, nodes: &[NodeId], name: &str) -> NodeId {
        nodes[*self.index.get(name).expect("parameter name from layer_specs")]
    }

    fn conv(
        &self,
        g: &mut Graph<T>,
        nodes: &[NodeId],
        x: NodeId,
        layer: &str,
    ) -> Result<NodeId> {
        let w = self.param_node(nodes, &format!("{layer}.weight"));
        let b = self.param_node(nodes, &format!("{layer}.bias"));
        let kernel = g.value(w).shape[2];
        g.conv2d(x, w, b, 1, kernel / 2)
    }

    fn conv_relu(
        &self,
        g: &mut Graph<T>,
        nodes: &[NodeId],
        x: NodeId,
        layer: &str,
    ) -> Result<NodeId> {
        let c = self.conv(g, nodes, x, layer)?;
        g.relu(c)
    }

    /// Runs the network on a `[n, in_channels, h, w]` batch (extents must be
    /// positive multiples of 16) and returns two-class probabilities of shape
    /// `[n, 2, h, w]` along with parameter leaf ids for gradient collection.
    pub fn forward(&self, g: &mut Graph<T>, input: Tensor<T>) -> Result<ForwardPass> {
        let (_, c, h, w) = input.dims4()?;
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {}",
                self.config.in_channels, c
            )));
        }
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::Shape(format!(
                "input extents must be positive multiples of 16, got {}x{}",
                h, w
            )));
        }
        let nodes: Vec<NodeId> = self.values.iter().map(|v| g.leaf(v.clone())).collect();
        let mut trace = ForwardTrace {
            enc_skip_shapes: Vec::new(),
            bottleneck_input_shape: Vec::new(),
            decoder_concat_parts: Vec::new(),
            decoder_concat_channels: Vec::new(),
            output_shape: Vec::new(),
        };

        let mut x = g.leaf(input);
        let mut skips = Vec::with_capacity(LEVELS);
        for b in 1..=LEVELS {
            x = self.conv_relu(g, &nodes, x, &format!("enc{b}.conv1"))?;
            x = self.conv_relu(g, &nodes, x, &format!("enc{b}.conv2"))?;
            skips.push(x);
            trace.enc_skip_shapes.push(g.value(x).shape.clone());
            x = match self.config.variant {
                Variant::Pid => {
                    let pool = g.maxpool2d(x)?;
                    let branch = self.conv_relu(g, &nodes, pool, &format!("enc{b}.down.conv"))?;
                    let pid = g.pid_downsample(x)?;
                    let cat = g.concat_channels(&[pid, branch])?;
                    self.conv(g, &nodes, cat, &format!("enc{b}.down.reduce"))?
                }
                Variant::M1 => {
                    let pool = g.maxpool2d(x)?;
                    self.conv_relu(g, &nodes, pool, &format!("enc{b}.down.conv"))?
                }
                Variant::M2 => {
                    let pid = g.pid_downsample(x)?;
                    self.conv(g, &nodes, pid, &format!("enc{b}.down.reduce"))?
                }
                Variant::Unet => g.maxpool2d(x)?,
            };
        }

        trace.bottleneck_input_shape = g.value(x).shape.clone();
        x = self.conv_relu(g, &nodes, x, "bottleneck.conv1")?;
        x = self.conv_relu(g, &nodes, x, "bottleneck.conv2")?;

        // pyramid[j] holds encoder skip j pooled 0, 1, ... times; decoder
        // level i picks the copy matching its resolution.
        let mut pyramid: Vec<Vec<NodeId>> = Vec::new();
        if self.config.variant != Variant::Unet {
            for (j, &skip) in skips.iter().enumerate() {
                let mut chain = vec![skip];
                let mut cur = skip;
                for _ in 0..(LEVELS - 1 - j) {
                    cur = g.maxpool2d(cur)?;
                    chain.push(cur);
                }
                pyramid.push(chain);
            }
        }

        for i in 1..=LEVELS {
            let up = {
                let wn = self.param_node(&nodes, &format!("dec{i}.up.weight"));
                let bn = self.param_node(&nodes, &format!("dec{i}.up.bias"));
                g.conv_transpose2d(x, wn, bn)?
            };
            let parts: Vec<NodeId> = match self.config.variant {
                Variant::Unet => vec![up, skips[LEVELS - i]],
                _ => {
                    let deepest = LEVELS - i;
                    let mut v = vec![up];
                    for j in 0..=deepest {
                        v.push(pyramid[j][deepest - j]);
                    }
                    v
                }
            };
            let cat = g.concat_channels(&parts)?;
            trace.decoder_concat_parts.push(parts.len());
            trace.decoder_concat_channels.push(g.value(cat).shape[1]);
            x = self.conv_relu(g, &nodes, cat, &format!("dec{i}.conv1"))?;
            x = self.conv_relu(g, &nodes, x, &format!("dec{i}.conv2"))?;
        }

        let logits = self.conv(g, &nodes, x, "classifier")?;
        let probs = g.softmax_channels(logits)?;
        trace.output_shape = g.value(probs).shape.clone();
        Ok(ForwardPass { probs, logits, param_nodes: nodes, trace })
    }

    /// Writes all parameters to a checkpoint file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let entries: Vec<(&str, &Tensor<T>)> = self
            .names
            .iter()
            .map(|n| n.as_str())
            .zip(self.values.iter())
            .collect();
        save_checkpoint(path, &entries)
    }

    /// Loads a checkpoint, recovering the configuration from the stored
    /// parameter names and shapes.
    pub fn load(path: &Path) -> Result<Self> {
        let entries = load_checkpoint::<T>(path)?;
        let mut map: HashMap<String, Tensor<T>> = HashMap::new();
        for (name, tensor) in entries {
            if map.insert(name.clone(), tensor).is_some() {
                return Err(Error::Data(format!("checkpoint lists parameter '{}' twice", name)));
            }
        }
        let config = infer_config(&map)?;
        let mut model = Model::new(config, 0)?;
        if map.len() != model.values.len() {
            return Err(Error::Data(format!(
                "checkpoint has {} parameters, the {} variant needs {}",
                map.len(),
                config.variant.name(),
                model.values.len()
            )));
        }
        for (name, value) in model.names.iter().zip(model.values.iter_mut()) {
            let stored = map
                .get(name)
                .ok_or_else(|| Error::Data(format!("checkpoint is missing parameter '{}'", name)))?;
            if stored.shape != value.shape {
                return Err(Error::Data(format!(
                    "checkpoint parameter '{}' has shape {:?}, expected {:?}",
                    name, stored.shape, value.shape
                )));
            }
            value.data = stored.data.clone();
        }
        Ok(model)
    }
}

/// Recovers the model configuration from checkpoint contents.
fn infer_config<T: Scalar>(map: &HashMap<String, Tensor<T>>) -> Result<ModelConfig> {
    let w1 = map
        .get("enc1.conv1.weight")
        .ok_or_else(|| Error::Data("checkpoint is missing enc1.conv1.weight".into()))?;
    if w1.shape.len() != 4 {
        return Err(Error::Data(format!(
            "enc1.conv1.weight has rank {}, expected 4",
            w1.shape.len()
        )));
    }
    let base_width = w1.shape[0];
    let in_channels = w1.shape[1];
    let (variant, reduce_kernel) = match map.get("enc1.down.reduce.weight") {
        Some(rw) => {
            let variant = if rw.shape[1] == 5 * base_width {
                Variant::Pid
            } else if rw.shape[1] == 4 * base_width {
                Variant::M2
            } else {
                return Err(Error::Data(format!(
                    "enc1.down.reduce.weight has {} input channels, expected {} or {}",
                    rw.shape[1],
                    4 * base_width,
                    5 * base_width
                )));
            };
            (variant, rw.shape[2])
        }
        None if map.contains_key("enc1.down.conv.weight") => (Variant::M1, 3),
        None => (Variant::Unet, 3),
    };
    let config = ModelConfig { variant, in_channels, base_width, reduce_kernel };
    config.validate().map_err(|e| Error::Data(format!("checkpoint implies invalid config: {e}")))?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_input(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(vec![n, c, h, w], data).unwrap()
    }

    fn small_config(variant: Variant) -> ModelConfig {
        ModelConfig { variant, in_channels: 1, base_width: 4, reduce_kernel: 3 }
    }

    #[test]
    fn same_seed_gives_bit_identical_parameters() {
        let cfg = ModelConfig { base_width: 16, ..Default::default() };
        let a: Model<f32> = Model::new(cfg, 7).unwrap();
        let b: Model<f32> = Model::new(cfg, 7).unwrap();
        assert_eq!(a.names, b.names);
        for (x, y) in a.values.iter().zip(&b.values) {
            assert!(x.data.iter().zip(&y.data).all(|(u, v)| u.to_bits() == v.to_bits()));
        }
        let c: Model<f32> = Model::new(cfg, 8).unwrap();
        assert!(a.values[0].data != c.values[0].data);
    }

    #[test]
    fn forward_shapes_and_bottleneck_for_all_variants() {
        for variant in Variant::ALL {
            for &width in &[4usize, 8] {
                for &size in &[32usize, 64] {
                    let cfg = ModelConfig { variant, base_width: width, ..small_config(variant) };
                    let model: Model<f32> = Model::new(cfg, 3).unwrap();
                    let mut g = Graph::new();
                    let pass = model.forward(&mut g, random_input(1, 1, size, size, 5)).unwrap();
                    assert_eq!(
                        pass.trace.bottleneck_input_shape,
                        vec![1, 8 * width, size / 16, size / 16],
                        "variant {:?} width {} size {}",
                        variant,
                        width,
                        size
                    );
                    assert_eq!(pass.trace.output_shape, vec![1, 2, size, size]);
                    let parts = &pass.trace.decoder_concat_parts;
                    match variant {
                        Variant::Unet => assert_eq!(parts, &[2, 2, 2, 2]),
                        _ => assert_eq!(parts, &[5, 4, 3, 2]),
                    }
                }
            }
        }
    }

    #[test]
    fn topology_matches_forward_trace() {
        for variant in Variant::ALL {
            let cfg = small_config(variant);
            let model: Model<f32> = Model::new(cfg, 3).unwrap();
            let mut g = Graph::new();
            let pass = model.forward(&mut g, random_input(1, 1, 32, 32, 5)).unwrap();
            assert_eq!(
                model.topology.decoder_concat_parts(),
                pass.trace.decoder_concat_parts,
                "variant {:?}",
                variant
            );
        }
    }

    #[test]
    fn variant_contracts_hold_in_topology() {
        let pid: Model<f32> = Model::new(small_config(Variant::Pid), 1).unwrap();
        let m1: Model<f32> = Model::new(small_config(Variant::M1), 1).unwrap();
        let m2: Model<f32> = Model::new(small_config(Variant::M2), 1).unwrap();
        let unet: Model<f32> = Model::new(small_config(Variant::Unet), 1).unwrap();

        let has_pid = |m: &Model<f32>| {
            m.topology.blocks.iter().any(|b| b.ops.iter().any(|o| o.kind == OpKind::Pid))
        };
        let down_has_maxpool = |m: &Model<f32>| {
            m.topology
                .down_blocks()
                .any(|b| b.ops.iter().any(|o| o.kind == OpKind::MaxPool))
        };
        assert!(has_pid(&pid) && down_has_maxpool(&pid));
        assert!(!has_pid(&m1) && down_has_maxpool(&m1));
        assert!(has_pid(&m2) && !down_has_maxpool(&m2));
        // M2 keeps max pooling in the skip pyramid only.
        assert!(m2.topology.contains(&OpKind::MaxPool));
        assert!(!has_pid(&unet) && down_has_maxpool(&unet));
    }

    #[test]
    fn softmax_output_sums_to_one_per_pixel() {
        let model: Model<f32> = Model::new(small_config(Variant::Pid), 2).unwrap();
        let mut g = Graph::new();
        let pass = model.forward(&mut g, random_input(2, 1, 32, 32, 9)).unwrap();
        let probs = g.value(pass.probs);
        let plane = 32 * 32;
        for n in 0..2 {
            for p in 0..plane {
                let total =
                    probs.data[n * 2 * plane + p] + probs.data[(n * 2 + 1) * plane + p];
                assert!((total - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gradient_reaches_every_parameter() {
        for variant in Variant::ALL {
            let model: Model<f32> = Model::new(small_config(variant), 11).unwrap();
            let mut g = Graph::new();
            let input = random_input(2, 1, 32, 32, 13);
            let pass = model.forward(&mut g, input).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let target: Vec<u8> = (0..2 * 32 * 32).map(|_| rng.gen_range(0..2) as u8).collect();
            let loss = g.cross_entropy(pass.probs, &target).unwrap();
            g.backward(loss).unwrap();
            for (name, &node) in model.names.iter().zip(&pass.param_nodes) {
                let grad = g.grad(node).unwrap_or_else(|| panic!("no grad for {}", name));
                assert!(
                    grad.iter().any(|&v| v != 0.0),
                    "variant {:?}: parameter {} got an all-zero gradient",
                    variant,
                    name
                );
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let model: Model<f32> = Model::new(small_config(Variant::Pid), 1).unwrap();
        let mut g = Graph::new();
        // Wrong channel count.
        let bad = random_input(1, 3, 32, 32, 1);
        assert!(model.forward(&mut g, bad).is_err());
        // Extents not a multiple of 16.
        let mut g2 = Graph::new();
        let bad2 = random_input(1, 1, 24, 24, 1);
        assert!(model.forward(&mut g2, bad2).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = ModelConfig::default();
        cfg.in_channels = 2;
        assert!(cfg.validate().is_err());
        cfg = ModelConfig::default();
        cfg.base_width = 0;
        assert!(cfg.validate().is_err());
        cfg = ModelConfig::default();
        cfg.reduce_kernel = 5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn checkpoint_roundtrip_restores_config_and_values() {
        let dir = tempfile::tempdir().unwrap();
        for variant in Variant::ALL {
            let cfg = ModelConfig { variant, in_channels: 1, base_width: 4, reduce_kernel: 1 };
            let model: Model<f32> = Model::new(cfg, 21).unwrap();
            let path = dir.path().join(format!("{}.ckpt", variant.name()));
            model.save(&path).unwrap();
            let loaded: Model<f32> = Model::load(&path).unwrap();
            // reduce_kernel only survives for variants that have a reduce conv.
            match variant {
                Variant::Pid | Variant::M2 => assert_eq!(loaded.config, cfg),
                _ => {
                    assert_eq!(loaded.config.variant, variant);
                    assert_eq!(loaded.config.base_width, 4);
                    assert_eq!(loaded.config.in_channels, 1);
                }
            }
            assert_eq!(loaded.names, model.names);
            for (a, b) in loaded.values.iter().zip(&model.values) {
                assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn topology_dump_is_readable_text() {
        let model: Model<f32> = Model::new(small_config(Variant::Pid), 1).unwrap();
        let dump = model.topology.to_string();
        assert!(dump.contains("variant: pidnet"));
        assert!(dump.contains("enc1.down:"));
        assert!(dump.contains("pid 4->16"));
        assert!(dump.contains("concat[5]"));
        assert!(dump.contains("convT3x3/s2"));
    }
}
