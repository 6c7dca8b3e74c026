//! Binary tensor serialization.
//!
//! A single tensor is stored as the magic `NDT1`, a little-endian `u32` rank,
//! one little-endian `u64` per dimension, then the row-major data as
//! little-endian `f64`. An archive groups named tensors: magic `NDA1`, a
//! `u32` entry count, then per entry a `u32` name length, the UTF-8 name and
//! one tensor record.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{Tensor, TensorError};

pub const TENSOR_MAGIC: &[u8; 4] = b"NDT1";
pub const ARCHIVE_MAGIC: &[u8; 4] = b"NDA1";

pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<(), TensorError> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor, TensorError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(TensorError::Format(format!("bad tensor magic {magic:?}")));
    }
    let rank = read_u32(r)? as usize;
    if rank == 0 || rank > 8 {
        return Err(TensorError::Format(format!("unsupported rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u64(r)? as usize);
    }
    let len: usize = shape.iter().product();
    let mut buf = vec![0u8; len * 8];
    r.read_exact(&mut buf)?;
    let data = buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(&shape, data)
}

pub fn write_archive<W: Write>(w: &mut W, entries: &[(&str, &Tensor)]) -> Result<(), TensorError> {
    w.write_all(ARCHIVE_MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, t) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        write_tensor(w, t)?;
    }
    Ok(())
}

pub fn read_archive<R: Read>(r: &mut R) -> Result<Vec<(String, Tensor)>, TensorError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != ARCHIVE_MAGIC {
        return Err(TensorError::Format(format!("bad archive magic {magic:?}")));
    }
    let count = read_u32(r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let n = read_u32(r)? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| TensorError::Format("entry name is not UTF-8".into()))?;
        out.push((name, read_tensor(r)?));
    }
    Ok(out)
}

pub fn save_archive(path: &Path, entries: &[(&str, &Tensor)]) -> Result<(), TensorError> {
    let mut buf = Vec::new();
    write_archive(&mut buf, entries)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_archive(path: &Path) -> Result<Vec<(String, Tensor)>, TensorError> {
    let bytes = fs::read(path)?;
    read_archive(&mut bytes.as_slice())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, TensorError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(&[1, 2], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(&buf[..4], b"NDT1");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..16], &1u64.to_le_bytes());
        assert_eq!(&buf[16..24], &2u64.to_le_bytes());
        assert_eq!(&buf[24..32], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 40);
    }

    #[test]
    fn truncated_input_errors() {
        let t = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn archive_round_trip_is_bit_exact(
            dims in proptest::collection::vec(1usize..4, 1..4),
            seed in any::<u64>(),
        ) {
            let len: usize = dims.iter().product();
            let data: Vec<f64> = (0..len)
                .map(|i| f64::from_bits(seed.wrapping_mul(i as u64 + 1) >> 2))
                .collect();
            let t = Tensor::new(&dims, data).unwrap();
            let mut buf = Vec::new();
            write_archive(&mut buf, &[("a", &t), ("bb", &t)]).unwrap();
            let back = read_archive(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.len(), 2);
            prop_assert_eq!(&back[1].0, "bb");
            let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back[0].1), bits(&t));
            prop_assert_eq!(back[0].1.shape(), t.shape());
        }
    }
}
