//! Locally permuted images: every 4x4 patch has its own fixed shuffle.
//! Watches the per-patch projections line up once the shuffles are undone.
//!
//!     cargo run --release --example alignment

use ndarray::Array4;
use rand::Rng;
use urlost::data::{apply_local_permutations, make_local_permutations, LabeledImageSet, LocalPermutationMode};
use urlost::model::{alignment_metric, train, EpochRecord, ModelConfig, TrainConfig, TrainOptions, Weights};
use urlost::rng;
use urlost::spectral::ClusterAssignment;

// Flat backgrounds with overlapping discs and half-plane boxes: edges at
// every position and orientation.
fn shapes(n: usize, side: usize, seed: u64) -> LabeledImageSet {
    let mut r = rng::stream(seed, 0);
    let mut images = Array4::<u8>::zeros((n, side, side, 3));
    let s = side as f64;
    for i in 0..n {
        let mut paint = |col: [u8; 3], inside: &dyn Fn(f64, f64) -> bool| {
            for y in 0..side {
                for x in 0..side {
                    if inside(x as f64, y as f64) {
                        for c in 0..3 {
                            images[[i, y, x, c]] = col[c];
                        }
                    }
                }
            }
        };
        let colour = |r: &mut rng::StreamRng| [0; 3].map(|_: u8| r.random_range(0..=255u8));
        paint(colour(&mut r), &|_, _| true);
        for _ in 0..r.random_range(2..6) {
            let col = colour(&mut r);
            let (cx, cy, rad) = (r.random_range(0.0..s), r.random_range(0.0..s), r.random_range(2.0..s / 2.0));
            let (nx, ny) = (r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            if r.random_bool(0.5) {
                paint(col, &|x, y| (x - cx).powi(2) + (y - cy).powi(2) < rad * rad);
            } else {
                let half = 1.5 * rad;
                paint(col, &|x, y| (x - cx) * nx + (y - cy) * ny > 0.0 && (x - cx).abs() < half && (y - cy).abs() < half);
            }
        }
    }
    LabeledImageSet::new(images, vec![0; n], 1).unwrap()
}

fn main() -> urlost::Result<()> {
    let (side, patch) = (16, 4);
    let set = shapes(1024, side, 1);
    let perms = make_local_permutations(2, patch, side, side, 3, LocalPermutationMode::Random)?;
    let signals = apply_local_permutations(&set, patch, &perms)?;
    // The output is patch-major, so each patch is one contiguous cluster.
    let clusters = ClusterAssignment::contiguous(perms.len(), patch * patch * 3);

    let model = ModelConfig { d_model: 32, encoder_depth: 1, decoder_depth: 1, heads: 4, d_decoder: 32, mlp_ratio: 2, shared: false };
    let cfg = TrainConfig { epochs: 30, batch_size: 32, learning_rate: Some(2e-3), warmup_epochs: 3, seed: 4, ..Default::default() };
    let at_init = alignment_metric(&Weights::<f64>::init(&model, clusters.sizes(), cfg.seed)?.so, &perms)?;
    println!("alignment at init {at_init:.4}");

    let mut hook = |rec: &mut EpochRecord, w: &Weights<f64>| -> urlost::Result<()> {
        let a = alignment_metric(&w.so, &perms)?;
        rec.metrics.insert("alignment".into(), a);
        if rec.epoch % 5 == 0 {
            println!("epoch {:3}  loss {:.5}  alignment {a:.4}", rec.epoch, rec.loss);
        }
        Ok(())
    };
    let opts = TrainOptions { on_epoch: Some(&mut hook), ..Default::default() };
    train::<f64>(&signals, &clusters, &model, &cfg, opts)?;
    Ok(())
}
