//! QVT1 binary tensor files.
//!
//! Layout: magic `QVT1`, one dtype byte (1 = f32 LE, 2 = f64 LE), one ndim
//! byte (1–4), `ndim` little-endian u32 extents, then the row-major payload.

use std::fs;
use std::path::Path;

use crate::nn::Tensor;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QVT1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32 = 1,
    F64 = 2,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

pub fn encode_tensor(t: &Tensor, dtype: Dtype) -> Result<Vec<u8>> {
    let ndim = t.dims().len();
    if !(1..=4).contains(&ndim) {
        return Err(Error::Shape(format!("QVT1 holds 1 to 4 dims, tensor has {ndim}")));
    }
    let mut out = Vec::with_capacity(6 + 4 * ndim + t.len() * dtype.width());
    out.extend_from_slice(MAGIC);
    out.push(dtype as u8);
    out.push(ndim as u8);
    for &d in t.dims() {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("extent {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match dtype {
        Dtype::F32 => t.data().iter().for_each(|&v| out.extend_from_slice(&(v as f32).to_le_bytes())),
        Dtype::F64 => t.data().iter().for_each(|&v| out.extend_from_slice(&v.to_le_bytes())),
    }
    Ok(out)
}

/// Decodes one record from the front of `bytes`, returning the tensor, its
/// stored dtype and the number of bytes consumed.
pub fn decode_tensor(bytes: &[u8]) -> Result<(Tensor, Dtype, usize)> {
    let need = |n: usize| {
        if bytes.len() < n {
            Err(Error::Length { expected: n, found: bytes.len() })
        } else {
            Ok(())
        }
    };
    need(4)?;
    if &bytes[..4] != MAGIC {
        return Err(Error::Format { offset: 0, message: "bad magic, expected `QVT1`".into() });
    }
    need(6)?;
    let dtype = match bytes[4] {
        1 => Dtype::F32,
        2 => Dtype::F64,
        other => return Err(Error::Format { offset: 4, message: format!("unknown dtype {other}") }),
    };
    let ndim = bytes[5] as usize;
    if !(1..=4).contains(&ndim) {
        return Err(Error::Format { offset: 5, message: format!("ndim {ndim} outside 1..=4") });
    }
    let header = 6 + 4 * ndim;
    need(header)?;
    let dims: Vec<usize> =
        bytes[6..header].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize).collect();
    let count: usize = dims.iter().product();
    let total = header + count * dtype.width();
    need(total)?;
    let payload = &bytes[header..total];
    let data = match dtype {
        Dtype::F32 => payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        Dtype::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Ok((Tensor::new(&dims, data)?, dtype, total))
}

pub fn write_tensor(path: &Path, t: &Tensor, dtype: Dtype) -> Result<()> {
    let bytes = encode_tensor(t, dtype)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a single-record QVT1 file. Trailing bytes are a format error.
pub fn read_tensor(path: &Path) -> Result<(Tensor, Dtype)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (t, dtype, used) = decode_tensor(&bytes)?;
    if used != bytes.len() {
        return Err(Error::Format {
            offset: used,
            message: format!("{} trailing bytes after payload", bytes.len() - used),
        });
    }
    Ok((t, dtype))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn f32_feature_stack_round_trip_is_bit_identical() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let raw = Tensor::uniform(&[9, 64, 64], -1.0, 1.0, &mut rng);
        // Values representable in f32, as if produced by an f32 pipeline.
        let t = raw.map(|v| v as f32 as f64);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stack.qvt");
        write_tensor(&path, &t, Dtype::F32).unwrap();
        let (back, dtype) = read_tensor(&path).unwrap();
        assert_eq!(dtype, Dtype::F32);
        assert_eq!(back.dims(), t.dims());
        assert!(back.data().iter().zip(t.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn header_errors_carry_offsets() {
        let good = encode_tensor(&Tensor::zeros(&[2, 2]), Dtype::F64).unwrap();
        let mut bad = good.clone();
        bad[3] = b'2';
        assert!(matches!(decode_tensor(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = good.clone();
        bad[4] = 3;
        assert!(matches!(decode_tensor(&bad), Err(Error::Format { offset: 4, .. })));
        let mut bad = good.clone();
        bad[5] = 5;
        assert!(matches!(decode_tensor(&bad), Err(Error::Format { offset: 5, .. })));
        assert!(matches!(decode_tensor(&good[..good.len() - 1]), Err(Error::Length { .. })));
        assert!(matches!(decode_tensor(&good[..7]), Err(Error::Length { .. })));
    }

    #[test]
    fn trailing_bytes_rejected_for_files() {
        let mut bytes = encode_tensor(&Tensor::zeros(&[3]), Dtype::F32).unwrap();
        bytes.push(0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.qvt");
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Format { offset: 22, .. })));
    }

    #[test]
    fn rejects_five_dims() {
        assert!(encode_tensor(&Tensor::zeros(&[1, 1, 1, 1, 1]), Dtype::F32).is_err());
    }

    proptest! {
        #[test]
        fn f64_round_trip(dims in proptest::collection::vec(1usize..5, 1..=4), seed in any::<u64>()) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::uniform(&dims, -1e6, 1e6, &mut rng);
            let bytes = encode_tensor(&t, Dtype::F64).unwrap();
            let (back, _, used) = decode_tensor(&bytes).unwrap();
            prop_assert_eq!(used, bytes.len());
            prop_assert_eq!(back, t);
        }
    }
}
