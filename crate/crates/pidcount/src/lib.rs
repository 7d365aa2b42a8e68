//! Dense tiny-object segmentation and counting.
//!
//! The pipeline, end to end:
//!
//! 1. **Data**: load `images/` + `masks/` pairs (or synthesize blob datasets),
//!    resize, expand by the eight rotation/mirror symmetries, split 3:1:1.
//! 2. **Model**: an encoder-decoder segmentation network whose encoder
//!    down-samples by pixel-interval decomposition (PID) alongside max
//!    pooling, with multi-scale skip connections into each decoder level.
//!    Ablation variants (M1: pooling only, M2: PID only) and a plain U-Net
//!    share the implementation.
//! 3. **Training**: cross-entropy on two-channel softmax output, Adam,
//!    fully reproducible from a seed; best checkpoint by validation IoU.
//! 4. **Counting**: threshold, optional morphological opening and area
//!    filter, then 8-connectivity labeling.
//! 5. **Evaluation**: accuracy, Dice, Jaccard, precision, counting accuracy,
//!    and exact Hausdorff distance, per image and aggregated.
//! 6. **Baselines**: Otsu thresholding, marker-based watershed, and a Hough
//!    circle transform, evaluated through the same metrics.
//!
//! The numeric core is generic over the scalar type ([`Scalar`]); training
//! runs in f32 while gradient checks can run the identical code in f64.
//! Concrete aliases for both widths live at the crate root.

pub mod baselines;
pub mod cli;
pub mod config;
pub mod data;
pub mod edt;
pub mod error;
pub mod metrics;
pub mod model;
pub mod postproc;
pub mod raster;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig, Variant};
pub use raster::{ImageBuf, Mask};
pub use scalar::Scalar;
pub use tensor::{Graph, NodeId, Tensor};

/// f32 tensor used by the production training path.
pub type Tensor32 = Tensor<f32>;
/// f64 tensor used by high-precision checks.
pub type Tensor64 = Tensor<f64>;
/// f32 computation graph.
pub type Graph32 = Graph<f32>;
/// f64 computation graph.
pub type Graph64 = Graph<f64>;
