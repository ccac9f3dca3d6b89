//! Two noisy presentations of the same stimuli: how often does the first
//! response's nearest neighbour among second responses belong to the same
//! stimulus?
//!
//!     cargo run --release --example pair_decoding

use urlost::data::LatentBlockModel;
use urlost::eval::{pair_decoding_accuracy, Similarity};
use urlost::model::{encode, train, ModelConfig, TrainConfig, TrainOptions};
use urlost::rng;
use urlost::spectral::ClusterAssignment;
use urlost::{MinMaxScaler, SignalMatrix};

fn main() -> urlost::Result<()> {
    let sizes = [6; 12];
    let world = LatentBlockModel::new(&sizes, 6, 0.8, 3)?;
    let mut r = rng::stream(3, 0);
    let fit = SignalMatrix::raw(world.render(&world.draw_factors(512, &mut r), &mut r))?;
    let stimuli = world.draw_factors(100, &mut r);
    let first = SignalMatrix::raw(world.render(&stimuli, &mut r))?;
    let second = SignalMatrix::raw(world.render(&stimuli, &mut r))?;

    let scaler = MinMaxScaler::fit(&fit)?;
    let (fit, first, second) = (scaler.transform(&fit)?, scaler.transform(&first)?, scaler.transform(&second)?);
    let clusters = ClusterAssignment::from_labels(&world.dim_labels(), sizes.len())?;
    let model = ModelConfig { d_model: 32, encoder_depth: 1, decoder_depth: 1, heads: 4, d_decoder: 16, mlp_ratio: 2, shared: false };
    let cfg = TrainConfig { epochs: 20, batch_size: 32, learning_rate: Some(2e-3), mask_ratio: 0.5, seed: 2, ..Default::default() };
    let w = train::<f64>(&fit, &clusters, &model, &cfg, TrainOptions::default())?.params;
    let (a, b) = (encode(&first, &clusters, &w, &model)?, encode(&second, &clusters, &w, &model)?);

    println!("chance {:.3}", 1.0 / 100.0);
    for kind in [Similarity::Cosine, Similarity::Correlation] {
        println!(
            "{kind:?}: raw {:.3}, learned {:.3}",
            pair_decoding_accuracy(first.values(), second.values(), kind)?,
            pair_decoding_accuracy(&a, &b, kind)?
        );
    }
    Ok(())
}
