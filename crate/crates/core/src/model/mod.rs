//! The SegET encoder–center–decoder network.
//!
//! Encoder blocks downsample with stride-2 convolutions (no pooling) and tap a
//! reduced-channel skip before each downsample. The center runs parallel
//! dilated convolutions over the bottleneck and stacks them with its input.
//! Decoder blocks upsample bilinearly and merge the matching skip; the outputs
//! of all decoder blocks are fused progressively into the last one before the
//! 1×1 logit head.

pub mod checkpoint;
mod config;
mod describe;
mod gradcheck;
mod layers;
mod network;

pub use checkpoint::{CheckpointError, CheckpointMeta};
pub use config::NetworkConfig;
pub use describe::{LayerRow, NetworkDescription};
pub use gradcheck::network_gradcheck;
pub use layers::ConvBlock;
pub use network::{Center, DecoderBlock, EncoderBlock, ForwardOptions, Fusion, SegEtNetwork};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("input extents {h}x{w} must both be divisible by {factor} (2^depth)")]
    Indivisible { h: usize, w: usize, factor: usize },
    #[error("network expects {expected} input channels, got {got}")]
    InputChannels { expected: usize, got: usize },
    #[error("backward called before any forward pass")]
    NoForward,
}
