//! Structural description of a built network.
//!
//! The topology is derived from the configuration alone (it does not change
//! with input size) and serves two purposes: tests assert variant contracts
//! on it (which down-sampling ops appear where, how many parts feed each
//! decoder concatenation), and its `Display` form is the human-readable
//! model dump printed by the CLI.

use std::fmt;

use super::Variant;

/// One primitive operation inside a block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpKind {
    Conv { kernel: usize },
    ConvTranspose,
    Relu,
    MaxPool,
    Pid,
    Concat { parts: usize },
    Softmax,
}

/// Operation with its channel counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpDesc {
    pub kind: OpKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

/// Named group of operations (encoder block, down path, decoder level, ...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockDesc {
    pub name: String,
    pub ops: Vec<OpDesc>,
}

/// Ordered block list for one model configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub variant: Variant,
    pub in_channels: usize,
    pub base_width: usize,
    pub blocks: Vec<BlockDesc>,
}

impl Topology {
    /// Blocks whose name marks them as part of an encoder down-sampling path.
    pub fn down_blocks(&self) -> impl Iterator<Item = &BlockDesc> {
        self.blocks.iter().filter(|b| b.name.ends_with(".down"))
    }

    /// Number of parts feeding the concatenation of each decoder level, in
    /// level order.
    pub fn decoder_concat_parts(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .filter(|b| b.name.starts_with("dec"))
            .filter_map(|b| {
                b.ops.iter().find_map(|op| match op.kind {
                    OpKind::Concat { parts } => Some(parts),
                    _ => None,
                })
            })
            .collect()
    }

    /// True if any op of the given kind appears in any block.
    pub fn contains(&self, kind: &OpKind) -> bool {
        self.blocks.iter().any(|b| b.ops.iter().any(|op| &op.kind == kind))
    }
}

impl fmt::Display for OpDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            OpKind::Conv { kernel } => {
                write!(f, "conv{k}x{k} {}->{}", self.in_channels, self.out_channels, k = kernel)
            }
            OpKind::ConvTranspose => {
                write!(f, "convT3x3/s2 {}->{}", self.in_channels, self.out_channels)
            }
            OpKind::Relu => write!(f, "relu"),
            OpKind::MaxPool => write!(f, "maxpool2x2 {}", self.in_channels),
            OpKind::Pid => write!(f, "pid {}->{}", self.in_channels, self.out_channels),
            OpKind::Concat { parts } => {
                write!(f, "concat[{}] ->{}", parts, self.out_channels)
            }
            OpKind::Softmax => write!(f, "softmax {}", self.in_channels),
        }
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant: {}", self.variant.name())?;
        writeln!(f, "input channels: {}, base width: {}", self.in_channels, self.base_width)?;
        for block in &self.blocks {
            write!(f, "{}:", block.name)?;
            for (i, op) in block.ops.iter().enumerate() {
                if i == 0 {
                    write!(f, " {}", op)?;
                } else {
                    write!(f, "; {}", op)?;
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}
