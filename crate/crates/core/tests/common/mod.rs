#![allow(dead_code)]

use ndarray::Array2;
use urlost::model::{MaskPattern, ModelConfig, Weights};
use urlost::rng;

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, 0);
    Array2::from_shape_fn((rows, cols), |_| rng::normal(&mut r))
}

pub fn uniform(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    use rand::Rng;
    let mut r = rng::stream(seed, 0);
    Array2::from_shape_fn((rows, cols), |_| r.random::<f64>())
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 8,
        encoder_depth: 1,
        decoder_depth: 1,
        heads: 2,
        d_decoder: 8,
        mlp_ratio: 2,
        shared: false,
    }
}

/// Tiny model with every tensor redrawn at a scale where all paths matter.
pub fn tiny_model(sizes: &[usize], seed: u64) -> Weights<f64> {
    let mut p = Weights::<f64>::init(&tiny_config(), sizes, seed).unwrap();
    let mut k = 0;
    p.for_each_mut(&mut |t| {
        k += 1;
        *t = gaussian(t.nrows(), t.ncols(), seed * 1000 + k) * 0.5;
    });
    p
}

pub fn masks(m: usize, sets: &[&[usize]]) -> Vec<MaskPattern> {
    sets.iter()
        .map(|s| MaskPattern { masked: s.to_vec(), ratio: s.len() as f64 / m as f64, seed: 0 })
        .collect()
}

/// Per tensor: max over entries of |analytic - numeric| / max(|analytic|, |numeric|, floor).
pub fn gradient_check(
    params: &Weights<f64>,
    loss: impl Fn(&Weights<f64>) -> f64,
    analytic: &Weights<f64>,
    floor: f64,
) -> Vec<(String, f64)> {
    let h = 1e-5;
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let grads: Vec<Array2<f64>> = analytic.named().into_iter().map(|(_, g)| g.clone()).collect();
    let mut out = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let len = grads[k].len();
        let mut worst: f64 = 0.0;
        for e in 0..len {
            let shifted = |delta: f64| {
                let mut p = params.clone();
                let mut idx = 0;
                p.for_each_mut(&mut |t| {
                    if idx == k {
                        t.as_slice_mut().unwrap()[e] += delta;
                    }
                    idx += 1;
                });
                loss(&p)
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            let a = grads[k].as_slice().unwrap()[e];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
        out.push((name.clone(), worst));
    }
    out
}

/// Smooth random 32x32x3 images: each is a few low-frequency waves shared
/// across channels plus a little per-pixel noise. Labels cycle through 0..10.
pub fn smooth_images(n: usize, seed: u64) -> urlost::data::LabeledImageSet {
    use rand::Rng;
    let mut r = rng::stream(seed, 0);
    let mut images = ndarray::Array4::<u8>::zeros((n, 32, 32, 3));
    for i in 0..n {
        let waves: Vec<[f64; 4]> = (0..3)
            .map(|_| {
                [
                    r.random_range(0.0..3.0),
                    r.random_range(0.0..3.0),
                    r.random_range(0.0..std::f64::consts::TAU),
                    r.random_range(0.3..1.0),
                ]
            })
            .collect();
        let tint: Vec<f64> = (0..3).map(|_| r.random_range(0.7..1.0)).collect();
        for y in 0..32 {
            for x in 0..32 {
                let (u, v) = (x as f64 / 32.0, y as f64 / 32.0);
                let s: f64 = waves
                    .iter()
                    .map(|w| w[3] * (std::f64::consts::TAU * (w[0] * u + w[1] * v) + w[2]).cos())
                    .sum();
                for (c, t) in tint.iter().enumerate() {
                    let val = 127.5 + 40.0 * t * s + 8.0 * rng::normal(&mut r);
                    images[[i, y, x, c]] = val.clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    urlost::data::LabeledImageSet::new(images, (0..n).map(|i| i % 10).collect(), 10).unwrap()
}

/// Writes `smooth_images` as a CIFAR batch file.
pub fn write_cifar(path: &std::path::Path, n: usize, seed: u64) {
    std::fs::write(path, smooth_images(n, seed).to_cifar_bytes().unwrap()).unwrap();
}

/// Every file under `dir`, relative path and contents, sorted.
pub fn snapshot(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    fn walk(root: &std::path::Path, d: &std::path::Path, out: &mut Vec<(String, Vec<u8>)>) {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.push((p.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
