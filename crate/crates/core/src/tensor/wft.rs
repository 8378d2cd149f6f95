//! `WFT1` binary tensor format.
//!
//! ```text
//! "WFT1" | rank: u8 | rank × extent: u32 LE | dtype: u8 (4 = f32, 8 = f64) | payload
//! ```
//!
//! The payload is the row-major data in little-endian order. Decoding rejects
//! truncated or oversized buffers, ranks above [`MAX_RANK`], unknown dtype
//! codes and non-finite values.

use std::path::Path;

use super::{checked_numel, DType, Real, Tensor, MAX_RANK};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WFT1";

/// A decoded tensor in whichever precision it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Converts to `T`, casting when the stored precision differs.
    pub fn into_real<T: Real>(self) -> Tensor<T> {
        match self {
            AnyTensor::F32(t) => t.cast(),
            AnyTensor::F64(t) => t.cast(),
        }
    }
}

pub fn encoded_len<T: Real>(tensor: &Tensor<T>) -> usize {
    4 + 1 + 4 * tensor.rank() + 1 + tensor.numel() * T::DTYPE.size()
}

pub fn encode<T: Real>(tensor: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(tensor));
    encode_into(tensor, &mut out);
    out
}

pub fn encode_into<T: Real>(tensor: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.push(tensor.rank() as u8);
    for &e in tensor.shape() {
        let e = u32::try_from(e).expect("WFT1 extents must fit in u32");
        out.extend_from_slice(&e.to_le_bytes());
    }
    out.push(T::DTYPE.code());
    for &v in tensor.data() {
        v.write_le(out);
    }
}

/// Decodes one tensor from the start of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(AnyTensor, usize)> {
    let err = |msg: String| Error::Decode(msg);
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(err("missing WFT1 magic".into()));
    }
    let rank = bytes[4] as usize;
    if rank > MAX_RANK {
        return Err(err(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let header = 5 + 4 * rank + 1;
    if bytes.len() < header {
        return Err(err("truncated header".into()));
    }
    let shape: Vec<usize> = bytes[5..5 + 4 * rank]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let code = bytes[header - 1];
    let dtype = DType::from_code(code).ok_or_else(|| err(format!("unknown dtype code {code}")))?;
    let payload = checked_numel(&shape)
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or_else(|| err(format!("extents {shape:?} overflow")))?;
    let end = header
        .checked_add(payload)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| {
            err(format!(
                "payload needs {payload} bytes, {} available",
                bytes.len() - header
            ))
        })?;
    let body = &bytes[header..end];
    let tensor = match dtype {
        DType::F32 => AnyTensor::F32(read_payload(&shape, body)?),
        DType::F64 => AnyTensor::F64(read_payload(&shape, body)?),
    };
    Ok((tensor, end))
}

fn read_payload<T: Real>(shape: &[usize], body: &[u8]) -> Result<Tensor<T>> {
    let data: Vec<T> = body.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Decode("payload contains non-finite values".into()));
    }
    Tensor::new(shape, data)
}

/// Decodes a buffer holding exactly one tensor.
pub fn decode(bytes: &[u8]) -> Result<AnyTensor> {
    let (tensor, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Decode(format!(
            "{} trailing bytes after tensor",
            bytes.len() - used
        )));
    }
    Ok(tensor)
}

pub fn write_file<T: Real>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(tensor)).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: impl AsRef<Path>) -> Result<AnyTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_bit_exact() {
        let t = Tensor::<f32>::new(&[2, 1], vec![1.0, -2.0]).unwrap();
        let bytes = encode(&t);
        let mut expected = b"WFT1".to_vec();
        expected.push(2);
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.push(4);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), encoded_len(&t));
    }

    #[test]
    fn scalar_round_trip() {
        let t = Tensor::<f64>::scalar(3.25);
        assert_eq!(decode(&encode(&t)).unwrap(), AnyTensor::F64(t));
    }

    #[test]
    fn rejects_malformed() {
        let good = encode(&Tensor::<f64>::from_f64(&[3], &[1., 2., 3.]).unwrap());
        assert!(decode(&good[..good.len() - 1]).is_err());
        let mut extra = good.clone();
        extra.push(0);
        assert!(decode(&extra).is_err());
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(decode(&bad_magic).is_err());
        let mut bad_dtype = good.clone();
        bad_dtype[9] = 2;
        assert!(decode(&bad_dtype).is_err());
        let mut nan = good.clone();
        let n = nan.len();
        nan[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(decode(&nan).is_err());
        let huge = [b'W', b'F', b'T', b'1', 4, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 8];
        assert!(decode(&huge).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(
            shape in proptest::collection::vec(1usize..5, 0..=4),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|i| ((seed.wrapping_mul(i as u64 + 1) >> 40) as f32) * 1e-3 - 7.0).collect();
            let t = Tensor::new(&shape, data).unwrap();
            let bytes = encode(&t);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(encode(&back.into_real::<f32>()), bytes);
        }
    }
}
