//! Builds the retina lattice and samples a synthetic image on it.
//!
//!     cargo run --release --example foveation

use ndarray::Array3;
use urlost::data::{build_retina_lattice, foveate, upsample, LatticeConfig};

fn main() -> urlost::Result<()> {
    let lattice = build_retina_lattice(&LatticeConfig::retina())?;
    let (lo, hi) = lattice.sigmas.iter().fold((f64::MAX, 0.0f64), |(a, b), &s| (a.min(s), b.max(s)));
    println!("{} kernels, radius {lo:.2} to {hi:.2} px", lattice.len());

    // A bright disc on a dark background, 32x32, upsampled to 96x96.
    let image = Array3::from_shape_fn((32, 32, 3), |(y, x, c)| {
        let r = ((x as f64 - 15.5).powi(2) + (y as f64 - 15.5).powi(2)).sqrt();
        if r < 6.0 { 200 + 20 * c as u8 } else { 30 }
    });
    let big = upsample(image.view(), 3)?;
    let g = foveate(big.view(), &lattice)?;

    // Responses fall off with eccentricity as kernels leave the disc.
    let mut rings: Vec<(f64, f64, usize)> = Vec::new();
    for (k, &e) in lattice.eccentricities.iter().enumerate() {
        match rings.last_mut() {
            Some(last) if last.0 == e => {
                last.1 += g[[k, 0]];
                last.2 += 1;
            }
            _ => rings.push((e, g[[k, 0]], 1)),
        }
    }
    println!("{:>12} {:>8} {:>10}", "eccentricity", "kernels", "mean red");
    for (e, sum, n) in rings.iter().step_by(3) {
        println!("{e:12.2} {n:8} {:10.3}", sum / *n as f64);
    }
    Ok(())
}
