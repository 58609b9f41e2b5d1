//! Residual blocks, the encoder-decoder segmentation network, its loss and optimizer.

mod adam;
mod blocks;
mod check;
mod checkpoint;
mod config;
mod loss;
mod model;

pub use adam::{Adam, AdamConfig};
pub use blocks::{AttentionSettings, BlockOutput, SameBlock, StridedBlock};
pub use check::{micro_gradcheck, MICRO_POINTS, MICRO_TOLERANCE};
pub use checkpoint::Checkpoint;
pub use config::{LayerConfig, NetworkConfig};
pub use loss::{
    argmax, aux_targets, classification_loss, composite_loss, softmax_rows, LossConfig, LossTerms,
};
pub use model::{
    dropout, input_features, ClassificationNet, Encoder, Pyramid, PyramidLevel, SegmentationNet,
    SegmentationOutput, INPUT_CHANNELS, MIN_POINTS,
};
