//! Trains the self-organizing layer and masked autoencoder on synthetic
//! blocks, in single or double precision.
//!
//!     cargo run --release --example train_mae -- f32

use urlost::data::latent_block_signals;
use urlost::model::{train, ModelConfig, TrainConfig, TrainOptions, TrainState};
use urlost::spectral::ClusterAssignment;
use urlost::{Precision, Real};

fn run<T: Real>(cfg: &TrainConfig) -> urlost::Result<TrainState<T>> {
    // Unequal clusters are fine: each gets its own projection and head.
    let sizes = [3, 5, 4, 6, 2, 5, 4, 3];
    let blocks = latent_block_signals(256, &sizes, 0.3, 1)?;
    let clusters = ClusterAssignment::from_labels(&blocks.dim_labels, sizes.len())?;
    let model = ModelConfig { d_model: 32, encoder_depth: 2, decoder_depth: 1, heads: 4, d_decoder: 32, mlp_ratio: 2, shared: false };
    train::<T>(&blocks.signals, &clusters, &model, cfg, TrainOptions::default())
}

fn main() -> urlost::Result<()> {
    let precision: Precision = std::env::args().nth(1).as_deref().unwrap_or("f64").parse().map_err(urlost::Error::InvalidConfig)?;
    let cfg = TrainConfig {
        epochs: 25,
        batch_size: 32,
        learning_rate: Some(2e-3),
        warmup_epochs: 3,
        mask_ratio: 0.5,
        seed: 3,
        precision,
        ..Default::default()
    };
    let history = match precision {
        Precision::F32 => run::<f32>(&cfg)?.meta.history,
        Precision::F64 => run::<f64>(&cfg)?.meta.history,
    };
    for r in history.iter().filter(|r| r.epoch % 5 == 0 || r.epoch == 1) {
        println!("epoch {:3}  loss {:.5}  lr {:.2e}", r.epoch, r.loss, r.lr);
    }
    Ok(())
}
