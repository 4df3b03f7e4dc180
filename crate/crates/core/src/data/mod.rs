//! Volume ingestion, patching, splitting and image output.

mod fuse;
mod image;
mod mrc;
mod normalize;
mod patches;
pub mod synth;

pub use fuse::{fuse_maps, fuse_pixel, Structure};
pub use image::{read_pgm, write_fused_ppm, write_gray_pgm, write_mask_pgm, GrayImage};
pub use mrc::{parse_mrc, MrcMode, MrcVolume, HEADER_LEN};
pub use normalize::{normalize, NormalizeScope};
pub use patches::{
    attach_weights, covering_origins, extract_patches, oversample_positive, render_manifest, split_train_val,
    window_origins, Patch, Provenance, SplitIndices, Stitcher,
};
pub use synth::{synthesize, SynthConfig, SynthDataset};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("MRC file is {len} bytes, shorter than the 1024-byte header")]
    MrcShort { len: usize },
    #[error("unsupported MRC mode {mode} (header byte {offset})")]
    MrcMode { mode: i32, offset: usize },
    #[error("invalid MRC header field {field} = {value} at byte {offset}")]
    MrcField {
        field: &'static str,
        offset: usize,
        value: i64,
    },
    #[error("MRC payload at byte {offset} needs {need} bytes but {have} remain ({} short)", need.saturating_sub(*have))]
    MrcTruncated { offset: usize, need: usize, have: usize },
    #[error("window {window} exceeds the {h}x{w} slice")]
    Window { window: usize, h: usize, w: usize },
    #[error("class index {value} at pixel {index} has no palette entry")]
    ClassIndex { index: usize, value: u8 },
    #[error("unknown structure {0:?}")]
    UnknownStructure(String),
    #[error("PGM: {0}")]
    Pgm(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}
