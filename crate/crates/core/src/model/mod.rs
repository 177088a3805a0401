//! The segmentation network: per-slice backbone with ASPP, recurrent
//! encoder-decoder head, loss, and checkpoint storage.

mod checkpoint;
mod config;
mod io;
mod loss;
mod net;
mod params;

pub use checkpoint::{Checkpoint, TrainingMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{AsppConfig, BackboneConfig, EncoderStage, HeadConfig, ModelConfig, SkipLink, StageSpec};
pub use io::{read_named_tensors, write_named_tensors, NAMED_TENSORS_MAGIC};
pub use loss::{bce_loss, predict_masks};
pub use net::{aspp_forward, backbone_forward, head_forward, infer_logits, recognet_forward};
pub use params::{param_specs, BoundParams, Init, ParamSpec, ParamStore, CLASSIFIER_INIT_SCALE};
