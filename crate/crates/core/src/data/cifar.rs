//! CIFAR-10 binary batches.
//!
//! Each record is 3073 bytes: one label byte followed by 3072 pixel bytes
//! stored channel-planar (1024 red, 1024 green, 1024 blue), each plane
//! row-major.

use std::path::Path;

use ndarray::{s, Array2, Array3, Array4, ArrayView3, Axis};

use crate::error::{invalid, Error, Result};
use crate::signal::{Normalization, SignalMatrix};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_CHANNELS: usize = 3;
pub const CIFAR_CLASSES: usize = 10;
pub const CIFAR_RECORD_BYTES: usize = 1 + CIFAR_SIDE * CIFAR_SIDE * CIFAR_CHANNELS;

/// Images stored as N x H x W x C bytes with one class label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    images: Array4<u8>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl LabeledImageSet {
    pub fn new(images: Array4<u8>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len_of(Axis(0)) != labels.len() {
            return Err(invalid(format!(
                "{} images but {} labels",
                images.len_of(Axis(0)),
                labels.len()
            )));
        }
        if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(invalid(format!(
                "label {l} of image {i} outside [0, {num_classes})"
            )));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Array4<u8> {
        &self.images
    }

    pub fn image(&self, i: usize) -> ArrayView3<'_, u8> {
        self.images.index_axis(Axis(0), i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// (H, W, C)
    pub fn dims(&self) -> (usize, usize, usize) {
        let (_, h, w, c) = self.images.dim();
        (h, w, c)
    }

    /// First `n` images (or all if fewer).
    pub fn take(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            images: self.images.slice(s![..n, .., .., ..]).to_owned(),
            labels: self.labels[..n].to_vec(),
            num_classes: self.num_classes,
        }
    }

    pub fn concat(sets: &[LabeledImageSet]) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| invalid("cannot concatenate zero image sets"))?;
        let views: Vec<_> = sets.iter().map(|s| s.images.view()).collect();
        let images = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| invalid(format!("image sets have different shapes: {e}")))?;
        let labels = sets.iter().flat_map(|s| s.labels.iter().copied()).collect();
        Self::new(images, labels, first.num_classes)
    }

    /// Pixels flattened channel-planar (the on-disk order) and scaled to [0, 1].
    pub fn to_signals(&self) -> SignalMatrix {
        let (n, h, w, c) = self.images.dim();
        let mut out = Array2::<f64>::zeros((n, h * w * c));
        for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        row[ch * h * w + y * w + x] = self.images[[i, y, x, ch]] as f64 / 255.0;
                    }
                }
            }
        }
        SignalMatrix::new(out, Normalization::UnitRange).expect("bytes scale into [0, 1]")
    }

    /// Grayscale average-pooled images, `factor` x `factor` blocks, flattened
    /// row-major and scaled to [0, 1].
    pub fn to_pooled_gray(&self, factor: usize) -> Result<SignalMatrix> {
        let (n, h, w, c) = self.images.dim();
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(invalid(format!(
                "pool factor {factor} must divide image size {h}x{w}"
            )));
        }
        let (oh, ow) = (h / factor, w / factor);
        let norm = (factor * factor * c) as f64 * 255.0;
        let mut out = Array2::<f64>::zeros((n, oh * ow));
        for i in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let block = self.images.slice(s![
                        i,
                        oy * factor..(oy + 1) * factor,
                        ox * factor..(ox + 1) * factor,
                        ..
                    ]);
                    let sum: u32 = block.iter().map(|&v| v as u32).sum();
                    out[[i, oy * ow + ox]] = sum as f64 / norm;
                }
            }
        }
        SignalMatrix::new(out, Normalization::UnitRange)
    }

    /// Serializes in the CIFAR-10 binary layout. Only valid for 32x32x3
    /// images with labels below 256.
    pub fn to_cifar_bytes(&self) -> Result<Vec<u8>> {
        let (h, w, c) = self.dims();
        if (h, w, c) != (CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS) {
            return Err(invalid(format!("CIFAR records are 32x32x3, got {h}x{w}x{c}")));
        }
        let mut out = Vec::with_capacity(self.len() * CIFAR_RECORD_BYTES);
        for (i, &label) in self.labels.iter().enumerate() {
            out.push(u8::try_from(label).map_err(|_| invalid("label exceeds a byte"))?);
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        out.push(self.images[[i, y, x, ch]]);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Decodes a CIFAR-10 binary batch file.
pub fn load_cifar(path: impl AsRef<Path>) -> Result<LabeledImageSet> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_cifar(&bytes).map_err(|e| match e {
        Error::MalformedFile { reason, .. } => Error::MalformedFile {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

pub(crate) fn decode_cifar(bytes: &[u8]) -> Result<LabeledImageSet> {
    if bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::MalformedFile {
            path: Default::default(),
            reason: format!(
                "size {} is not a multiple of the {CIFAR_RECORD_BYTES}-byte record",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut images = Array4::<u8>::zeros((n, CIFAR_SIDE, CIFAR_SIDE, CIFAR_CHANNELS));
    let mut labels = Vec::with_capacity(n);
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::CorruptRecord {
                record: i,
                reason: format!("label byte {label} is not a CIFAR-10 class"),
            });
        }
        labels.push(label);
        let pixels = &record[1..];
        for ch in 0..CIFAR_CHANNELS {
            for y in 0..CIFAR_SIDE {
                for x in 0..CIFAR_SIDE {
                    images[[i, y, x, ch]] = pixels[ch * plane + y * CIFAR_SIDE + x];
                }
            }
        }
    }
    LabeledImageSet::new(images, labels, CIFAR_CLASSES)
}

/// Nearest-neighbour upsampling: `out[y, x] = image[y / factor, x / factor]`.
pub fn upsample<T: Copy + Default>(image: ArrayView3<'_, T>, factor: usize) -> Result<Array3<T>> {
    if factor == 0 {
        return Err(invalid("upsample factor must be at least 1"));
    }
    let (h, w, c) = image.dim();
    Ok(Array3::from_shape_fn((h * factor, w * factor, c), |(y, x, ch)| {
        image[[y / factor, x / factor, ch]]
    }))
}
