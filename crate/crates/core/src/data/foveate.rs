//! Gaussian-kernel sampling of an image on a retina lattice.

use ndarray::{Array2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use super::cifar::{upsample, LabeledImageSet};
use super::lattice::SamplingLattice;
use crate::error::{invalid, Error, Result};
use crate::signal::{Normalization, SignalMatrix};

/// Truncation radius in units of sigma.
const TRUNCATION: f64 = 3.0;

/// A discrete kernel: flat pixel offsets (`y * width + x`) and weights that
/// sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    pub pixels: Vec<usize>,
    pub weights: Vec<f64>,
}

impl GaussianKernel {
    /// Weights `exp(-d^2 / (2 sigma^2))` over pixels within `3 sigma` of
    /// `center`, clipped to the image and renormalized. A kernel too narrow
    /// to cover any pixel center degenerates to the nearest pixel.
    pub fn new(center: [f64; 2], sigma: f64, height: usize, width: usize) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::InvalidLattice(format!("kernel sigma {sigma} is not positive")));
        }
        let [cx, cy] = center;
        let radius = TRUNCATION * sigma;
        let x0 = (cx - radius).ceil().max(0.0);
        let x1 = (cx + radius).floor().min(width as f64 - 1.0);
        let y0 = (cy - radius).ceil().max(0.0);
        let y1 = (cy + radius).floor().min(height as f64 - 1.0);

        let mut pixels = Vec::new();
        let mut weights = Vec::new();
        if x0 <= x1 && y0 <= y1 {
            let two_var = 2.0 * sigma * sigma;
            for y in (y0 as usize)..=(y1 as usize) {
                for x in (x0 as usize)..=(x1 as usize) {
                    let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                    if d2 <= radius * radius {
                        pixels.push(y * width + x);
                        weights.push((-d2 / two_var).exp());
                    }
                }
            }
        }
        if pixels.is_empty() {
            let inside = cx > -0.5 && cx < width as f64 - 0.5 && cy > -0.5 && cy < height as f64 - 0.5;
            if !inside {
                return Err(Error::InvalidLattice(format!(
                    "kernel at ({cx:.3}, {cy:.3}) with sigma {sigma:.3} does not reach the {width}x{height} image"
                )));
            }
            let x = cx.round() as usize;
            let y = cy.round() as usize;
            return Ok(Self {
                pixels: vec![y * width + x],
                weights: vec![1.0],
            });
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(Self { pixels, weights })
    }
}

/// Precomputed kernels for one lattice and image size.
#[derive(Debug, Clone)]
pub struct FoveationSampler {
    height: usize,
    width: usize,
    kernels: Vec<GaussianKernel>,
}

impl FoveationSampler {
    pub fn new(lattice: &SamplingLattice, height: usize, width: usize) -> Result<Self> {
        if lattice.is_empty() {
            return Err(Error::InvalidLattice("lattice has no kernels".into()));
        }
        if lattice.sigmas.len() != lattice.centers.len() {
            return Err(Error::InvalidLattice(format!(
                "{} centers but {} sigmas",
                lattice.centers.len(),
                lattice.sigmas.len()
            )));
        }
        let kernels = lattice
            .centers
            .iter()
            .zip(&lattice.sigmas)
            .enumerate()
            .map(|(i, (&c, &s))| {
                GaussianKernel::new(c, s, height, width).map_err(|e| match e {
                    Error::InvalidLattice(msg) => Error::InvalidLattice(format!("kernel {i}: {msg}")),
                    e => e,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            height,
            width,
            kernels,
        })
    }

    pub fn kernels(&self) -> &[GaussianKernel] {
        &self.kernels
    }

    /// Responses `G[i, c] = sum K_i[n, m] I[n, m, c] / 255`, kernels by channels.
    pub fn sample(&self, image: ArrayView3<'_, u8>) -> Result<Array2<f64>> {
        let (h, w, c) = image.dim();
        if (h, w) != (self.height, self.width) {
            return Err(invalid(format!(
                "sampler built for {}x{}, image is {h}x{w}",
                self.height, self.width
            )));
        }
        let mut out = Array2::<f64>::zeros((self.kernels.len(), c));
        for (k, kernel) in self.kernels.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for (&p, &wt) in kernel.pixels.iter().zip(&kernel.weights) {
                    acc += wt * image[[p / w, p % w, ch]] as f64;
                }
                out[[k, ch]] = acc / 255.0;
            }
        }
        Ok(out)
    }
}

/// Samples one (already upsampled) image on `lattice`.
pub fn foveate(image: ArrayView3<'_, u8>, lattice: &SamplingLattice) -> Result<Array2<f64>> {
    let (h, w, _) = image.dim();
    FoveationSampler::new(lattice, h, w)?.sample(image)
}

/// Foveated signals with their lattice. Dimension `k * C + c` holds kernel
/// `k`, channel `c`.
#[derive(Debug, Clone)]
pub struct FoveatedSignalSet {
    pub signals: SignalMatrix,
    pub labels: Vec<usize>,
    pub lattice: SamplingLattice,
    pub channels: usize,
}

impl FoveatedSignalSet {
    /// Eccentricity of each signal dimension.
    pub fn dim_eccentricities(&self) -> Vec<f64> {
        self.lattice
            .eccentricities
            .iter()
            .flat_map(|&e| std::iter::repeat_n(e, self.channels))
            .collect()
    }
}

/// Upsamples every image by `factor` and samples it on `lattice`.
pub fn foveate_dataset(
    set: &LabeledImageSet,
    lattice: &SamplingLattice,
    factor: usize,
) -> Result<FoveatedSignalSet> {
    let (h, w, c) = set.dims();
    let sampler = FoveationSampler::new(lattice, h * factor, w * factor)?;
    let dk = lattice.len();
    let mut values = Array2::<f64>::zeros((set.len(), dk * c));
    for (i, mut row) in values.axis_iter_mut(Axis(0)).enumerate() {
        let up = upsample(set.image(i), factor)?;
        let g = sampler.sample(up.view())?;
        for (dst, src) in row.iter_mut().zip(g.iter()) {
            *dst = *src;
        }
    }
    Ok(FoveatedSignalSet {
        signals: SignalMatrix::new(values, Normalization::UnitRange)?,
        labels: set.labels().to_vec(),
        lattice: lattice.clone(),
        channels: c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::lattice::{build_retina_lattice, LatticeConfig};
    use ndarray::{array, Array3};

    #[test]
    fn default_lattice_kernels_are_normalized_and_constant_preserving() {
        let lattice = build_retina_lattice(&LatticeConfig::retina()).unwrap();
        let sampler = FoveationSampler::new(&lattice, 96, 96).unwrap();
        for k in sampler.kernels() {
            let s: f64 = k.weights.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let img = Array3::<u8>::from_elem((96, 96, 3), 131);
        let g = sampler.sample(img.view()).unwrap();
        assert_eq!(g.dim(), (1038, 3));
        assert!(g.iter().all(|v| (v - 131.0 / 255.0).abs() < 1e-12));
    }

    #[test]
    fn delta_kernel_reads_one_pixel() {
        let lattice = SamplingLattice {
            centers: vec![[2.0, 1.0]],
            sigmas: vec![1e-3],
            eccentricities: vec![0.0],
        };
        let mut img = Array3::<u8>::zeros((4, 4, 1));
        img[[1, 2, 0]] = 51;
        img[[1, 3, 0]] = 255;
        let g = foveate(img.view(), &lattice).unwrap();
        assert!((g[[0, 0]] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_hand_weights() {
        // Center (0.5, 0.5), sigma 1: all four pixels at squared distance 0.5,
        // so truncation keeps them and the weights are equal.
        let lattice = SamplingLattice {
            centers: vec![[0.5, 0.5]],
            sigmas: vec![1.0],
            eccentricities: vec![0.0],
        };
        let img = array![[[10u8], [20]], [[30], [40]]];
        let g = foveate(img.view(), &lattice).unwrap();
        assert!((g[[0, 0]] - 25.0 / 255.0).abs() < 1e-12);

        // Center (0, 0), sigma 1: weights 1, e^{-1/2}, e^{-1/2}, e^{-1}.
        let lattice = SamplingLattice {
            centers: vec![[0.0, 0.0]],
            sigmas: vec![1.0],
            eccentricities: vec![0.0],
        };
        let g = foveate(img.view(), &lattice).unwrap();
        let (a, b, c) = (1.0, (-0.5f64).exp(), (-1.0f64).exp());
        let expected = (a * 10.0 + b * 20.0 + b * 30.0 + c * 40.0) / (a + 2.0 * b + c) / 255.0;
        assert!((g[[0, 0]] - expected).abs() < 1e-12);
    }

    #[test]
    fn kernel_outside_image_is_rejected() {
        let lattice = SamplingLattice {
            centers: vec![[100.0, 100.0]],
            sigmas: vec![1.0],
            eccentricities: vec![0.0],
        };
        let img = Array3::<u8>::zeros((4, 4, 1));
        assert!(matches!(foveate(img.view(), &lattice), Err(Error::InvalidLattice(_))));
    }
}
