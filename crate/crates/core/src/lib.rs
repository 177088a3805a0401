//! Slice-sequential volume segmentation: a dilated-convolution backbone with
//! atrous spatial pyramid pooling feeds a ConvLSTM encoder-decoder head that
//! carries context from slice to slice.
//!
//! Everything runs on the CPU on top of the small autodiff engine in
//! [`tensorcore`].

pub mod convlstm;
pub mod data;
pub mod metrics;
pub mod model;
pub mod tensorcore;
pub mod training;

mod error;

pub use data::{MaskVolume, Volume};
pub use error::{Error, Result};
pub use model::{Checkpoint, ModelConfig};
pub use tensorcore::{Graph, Tensor, Var};
