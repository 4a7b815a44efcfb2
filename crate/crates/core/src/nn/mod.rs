//! Dense MLP engine: matrices, layers, backpropagation, Adam and basic losses.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;
mod ops;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use matrix::Matrix;
pub use mlp::{Activation, DenseLayer, LayerGrad, Mlp, MlpGrads};
pub use ops::{
    dropout_mask, l2_normalize_rows, l2_normalize_rows_backward, mse, one_hot, smooth_labels,
    softmax_cross_entropy, softmax_rows, Normalized,
};
