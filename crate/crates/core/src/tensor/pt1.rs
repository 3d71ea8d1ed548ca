//! The "PT1" tensor file format used repo-wide.
//!
//! Layout: magic bytes `PT1\n`, little-endian u32 rank, u32 extents, then the
//! raw little-endian f32 payload. Round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"PT1\n";

/// Writes one PT1 record.
pub fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one PT1 record.
pub fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("truncated PT1 record (magic)"))?;
    if &magic != MAGIC {
        return Err(Error::format("bad PT1 magic bytes"));
    }
    let rank = read_u32(r)? as usize;
    if rank > 8 {
        return Err(Error::format(format!("implausible PT1 rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("truncated PT1 record (payload)"))?;
    let data = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    // Bit-exactness matters more than hygiene here, so no finiteness check.
    Ok(Tensor::from_vec(shape, data))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::format("truncated PT1 record (header)"))?;
    Ok(u32::from_le_bytes(b))
}

/// Size in bytes of one PT1 record for the given shape.
pub fn record_size(shape: &[usize]) -> usize {
    4 + 4 + 4 * shape.len() + 4 * shape.iter().product::<usize>()
}

pub fn save(path: impl AsRef<Path>, t: &Tensor) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensor(&mut f, t)?;
    f.flush()?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_tensor(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bit_exact() {
        let t = Tensor::from_vec(vec![2, 3], vec![0.0, -1.5, 3.25, f32::MIN_POSITIVE, 1e30, -0.0]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        assert_eq!(buf.len(), record_size(t.shape()));
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_record_errors() {
        let t = Tensor::from_vec(vec![4], vec![1.0; 4]);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_tensor(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn bad_magic_errors() {
        let buf = b"NOPE\x01\x00\x00\x00\x01\x00\x00\x00\x00\x00\x80\x3f".to_vec();
        assert!(matches!(
            read_tensor(&mut buf.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn scalar_record() {
        let t = Tensor::scalar(7.0);
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let back = read_tensor(&mut buf.as_slice()).unwrap();
        assert_eq!(back.rank(), 0);
        assert_eq!(back.item(), 7.0);
    }
}
