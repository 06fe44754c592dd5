//! PointNet-style classifier with activation recording and exact gradients.

mod checkpoint;
pub mod layers;
mod model;
mod objective;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, TrainingMetadata,
};
pub use layers::{layer_index, layer_kind, LayerKind, Widths, GLOBAL_FEATURE_LAYER, LAYER_NAMES, LOGITS_LAYER, NUM_LAYERS};
pub use model::{dropout_parameters, ActivationRecord, Dense, Gradients, PointNet, Seeds, Tape};
pub use objective::{input_gradient, Objective, ObjectiveValue};
pub use train::{accuracy, argmax, log_softmax, predict, train, Adam, EpochStats, TrainConfig};

/// Builds a freshly initialized model.
pub fn build_model(num_classes: usize, widths: Widths, seed: u64) -> crate::Result<PointNet<f32>> {
    PointNet::new(num_classes, widths, seed)
}
