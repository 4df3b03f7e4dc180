//! SegET: an encoder-center-decoder network for segmenting electron
//! tomography slices, with the tensor kernels, losses, optimizer and data
//! handling it needs.

pub mod data;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;
