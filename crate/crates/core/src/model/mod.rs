//! Self-organizing projections and a small transformer masked autoencoder
//! over cluster tokens, with reverse-mode gradients and AdamW training.
//!
//! Each cluster `i` of signal dimensions is projected to a token by its own
//! linear map. The encoder sees only the visible tokens (plus learned
//! per-cluster positional embeddings); the decoder fills the masked slots
//! with a learned mask token and reconstructs each masked cluster through
//! that cluster's output head.

mod align;
mod mae;
mod params;
pub mod tape;
mod train;

pub use align::{alignment_metric, unpermuted_weights};
pub use mae::{
    cluster_inputs, encode, loss_and_gradients, mae_forward, masked_count, masked_loss, masked_mse, sample_mask,
    so_layer_forward, MaeOutput, MaskPattern,
};
pub use params::{decays, Block, Linear, MaeParams, ModelConfig, Norm, Params, SelfOrgWeights, Weights};
pub use train::{
    train, write_history_csv, EpochHook, EpochRecord, TrainConfig, TrainMeta, TrainOptions, TrainState,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
