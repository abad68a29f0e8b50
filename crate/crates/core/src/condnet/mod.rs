//! Slice-to-slice encoder/decoder network mapping MRI slices to normalized
//! conductor slices, trained with per-pixel cross-entropy and Adam.
//!
//! Every encoder reads one input image. Each level is conv, batch norm,
//! ReLU, then 2x2 max pooling. The pooled features of the deepest level are
//! concatenated into the hub. Every decoder upsamples with a 2x2 stride-2
//! transposed convolution (batch norm, ReLU), applies a conv block (batch
//! norm, ReLU) and appends the matching pre-pooling encoder features of all
//! encoders. A final convolution and logistic sigmoid give one
//! full-resolution map per decoder.

mod config;
mod infer;
pub mod layers;
mod network;
mod train;
mod weights;

pub use config::{LedgerEntry, NetConfig, ShapeLedger};
pub use infer::{infer_volume, predict_direction, SliceModel};
pub use layers::{Mode, Tensor};
pub use network::{Network, Param, Trace};
pub use train::{adam_step, train, train_with, validation_count, AdamConfig, AdamState, LossCurve, TrainConfig};
pub use weights::{decode_weights, encode_weights, load_weights, save_weights};
