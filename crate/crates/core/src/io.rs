//! Binary matrix files and small byte-level helpers shared by the
//! checkpoint format.
//!
//! Layout: `"URLM"`, u32 version, u64 rows, u64 cols, u8 element tag
//! (4 = f32, 8 = f64), then `rows * cols` little-endian values, row-major.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::real::{Precision, Real};

pub const MATRIX_MAGIC: &[u8; 4] = b"URLM";
pub const MATRIX_VERSION: u32 = 1;

pub fn encode_matrix<T: Real>(m: &Array2<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(25 + m.len() * std::mem::size_of::<T>());
    out.extend_from_slice(MATRIX_MAGIC);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    out.push(T::PRECISION.tag());
    for v in m.iter() {
        v.write_le(&mut out);
    }
    out
}

/// Decodes a matrix file, converting its elements to `T`.
pub fn decode_matrix<T: Real>(bytes: &[u8]) -> std::result::Result<(Array2<T>, Precision), String> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MATRIX_MAGIC {
        return Err("bad magic".into());
    }
    let version = r.u32()?;
    if version != MATRIX_VERSION {
        return Err(format!("unsupported version {version}"));
    }
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let precision = Precision::from_tag(r.u8()?).ok_or("unknown element tag")?;
    let width = precision.tag() as usize;
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(width))
        .ok_or("dimensions overflow")?;
    if r.remaining() != expected {
        return Err(format!(
            "payload is {} bytes, header implies {expected}",
            r.remaining()
        ));
    }
    let payload = r.take(expected)?;
    let values: Vec<T> = match precision {
        Precision::F32 => payload.chunks_exact(4).map(|c| T::of(f32::read_le(c) as f64)).collect(),
        Precision::F64 => payload.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
    };
    let m = Array2::from_shape_vec((rows, cols), values).map_err(|e| e.to_string())?;
    Ok((m, precision))
}

pub fn write_matrix<T: Real>(path: impl AsRef<Path>, m: &Array2<T>) -> Result<()> {
    write_atomic(path, &encode_matrix(m))
}

pub fn read_matrix<T: Real>(path: impl AsRef<Path>) -> Result<Array2<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes)
        .map(|(m, _)| m)
        .map_err(|reason| Error::MalformedFile {
            path: path.to_path_buf(),
            reason,
        })
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written artifact.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(path, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.remaining() < n {
            return Err(format!("truncated at byte {}", self.pos));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_both_precisions() {
        let m = array![[1.0, -2.5, 3.25], [0.0, 1e-300, f64::MAX]];
        let bytes = encode_matrix(&m);
        assert_eq!(bytes.len(), 25 + 6 * 8);
        assert_eq!(&bytes[..4], b"URLM");
        let (back, p) = decode_matrix::<f64>(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(p, Precision::F64);

        let m32 = array![[1.5f32, 2.0], [3.0, -4.0]];
        let (back, p) = decode_matrix::<f64>(&encode_matrix(&m32)).unwrap();
        assert_eq!(p, Precision::F32);
        assert_eq!(back, array![[1.5, 2.0], [3.0, -4.0]]);
    }

    #[test]
    fn rejects_damaged_files() {
        let mut bytes = encode_matrix(&array![[1.0, 2.0]]);
        assert!(decode_matrix::<f64>(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode_matrix::<f64>(&bytes).is_err());
    }
}
