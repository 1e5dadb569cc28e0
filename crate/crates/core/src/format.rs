//! The `FNT` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | bytes        | content                          |
//! |--------------|----------------------------------|
//! | 4            | magic `F N O T`                  |
//! | 2            | version, currently `1`           |
//! | 1            | dtype, `1` = f64                 |
//! | 1            | ndim                             |
//! | 8 × ndim     | dimensions as u64                |
//! | 8 × product  | row-major f64 payload            |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"FNOT";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u8 = 1;

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    if t.shape().len() > u8::MAX as usize {
        return Err(Error::Format(format!("too many dimensions: {}", t.shape().len())));
    }
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F64, t.shape().len() as u8])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut payload = Vec::with_capacity(8 * t.len());
    for x in t.data() {
        payload.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&payload)?;
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2)?;
    let version = u16::from_le_bytes(b2);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported FNT version {version}")));
    }
    r.read_exact(&mut b2)?;
    let (dtype, ndim) = (b2[0], b2[1] as usize);
    if dtype != DTYPE_F64 {
        return Err(Error::Format(format!("unsupported dtype {dtype}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    let mut b8 = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut b8)?;
        shape.push(usize::try_from(u64::from_le_bytes(b8)).map_err(|_| {
            Error::Format("dimension does not fit in usize".into())
        })?);
    }
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("dimension product overflows".into()))?;
    let mut payload = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::Format("payload too large".into()))?];
    r.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Tensor::new(shape, data)
}

pub fn save_tensor(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut r = BufReader::new(File::open(path)?);
    read_tensor(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut expected = b"FNOT".to_vec();
        expected.extend_from_slice(&[1, 0, 1, 2]);
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&1.0f64.to_le_bytes());
        expected.extend_from_slice(&(-2.5f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::ones(&[3]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_tensor(&mut bad.as_slice()), Err(Error::Format(_))));
        let short = &buf[..buf.len() - 1];
        assert!(read_tensor(&mut &short[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_preserves_bits(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n).map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2)).collect();
            let t = Tensor::new(dims, data).unwrap();
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back = read_tensor(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.shape(), t.shape());
            for (a, b) in back.data().iter().zip(t.data()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
