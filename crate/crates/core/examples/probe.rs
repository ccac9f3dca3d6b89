//! Linear probing of learned representations, against the raw signals
//! and an untrained encoder, then a k-fold run that refits everything
//! inside each fold.
//!
//!     cargo run --release --example probe

use urlost::data::{factor_labels, LatentBlockModel};
use urlost::eval::{kfold_cv, linear_probe, ProbeConfig, RawPipeline, UrlostPipeline};
use urlost::model::{encode, train, ModelConfig, TrainConfig, TrainOptions, Weights};
use urlost::rng;
use urlost::spectral::{ClusterAssignment, ClusterParams};
use urlost::{MinMaxScaler, SignalMatrix};

fn main() -> urlost::Result<()> {
    // 16 blocks mixing 4 shared factors; the class is the strongest factor.
    let sizes = [8; 16];
    let world = LatentBlockModel::new(&sizes, 4, 1.0, 5)?;
    let draw = |n, stream| -> urlost::Result<(SignalMatrix, Vec<usize>)> {
        let mut r = rng::substream(5, 0, stream);
        let z = world.draw_factors(n, &mut r);
        Ok((SignalMatrix::raw(world.render(&z, &mut r))?, factor_labels(&z, 4)))
    };
    let (train_raw, y) = draw(512, 1)?;
    let (test_raw, yt) = draw(512, 2)?;
    let scaler = MinMaxScaler::fit(&train_raw)?;
    let (x, xt) = (scaler.transform(&train_raw)?, scaler.transform(&test_raw)?);

    let clusters = ClusterAssignment::from_labels(&world.dim_labels(), sizes.len())?;
    let model = ModelConfig { d_model: 32, encoder_depth: 1, decoder_depth: 1, heads: 4, d_decoder: 16, mlp_ratio: 2, shared: false };
    let cfg = TrainConfig { epochs: 30, batch_size: 32, learning_rate: Some(2e-3), warmup_epochs: 3, mask_ratio: 0.5, seed: 1, ..Default::default() };
    let probe = ProbeConfig { standardize: true, ..Default::default() };

    let trained = train::<f64>(&x, &clusters, &model, &cfg, TrainOptions::default())?.params;
    let untrained = Weights::<f64>::init(&model, clusters.sizes(), cfg.seed)?;
    for (name, w) in [("untrained", &untrained), ("trained", &trained)] {
        let r = linear_probe(&encode(&x, &clusters, w, &model)?, &y, &encode(&xt, &clusters, w, &model)?, &yt, &probe)?;
        println!("{name:>10} encoder: {:.3}", r.accuracy);
    }
    let r = linear_probe(x.values(), &y, xt.values(), &yt, &probe)?;
    println!("{:>10} signals: {:.3}", "raw", r.accuracy);

    // k-fold on the training split: affinity, clustering and training are
    // redone per fold, so nothing is fit on held-out samples.
    let pipeline = UrlostPipeline {
        cluster: ClusterParams { m: 16, ..Default::default() },
        model,
        train: TrainConfig { epochs: 10, ..cfg },
        ..Default::default()
    };
    for p in [&pipeline as &dyn urlost::eval::RepresentationPipeline, &RawPipeline] {
        let r = kfold_cv(&train_raw, &y, 4, p, &probe, 9)?;
        let folds: Vec<String> = r.folds.iter().map(|f| format!("{:.3}", f.accuracy)).collect();
        println!("4-fold {:>12}: {:.3} (folds {})", r.task, r.accuracy, folds.join(" "));
    }
    Ok(())
}
