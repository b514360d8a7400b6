//! `.ten` tensor container: `"TEN1"`, `u8` dtype (0 = f32), `u8` rank, little-endian
//! `u32` dims, then little-endian data.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imgproc::FrameTensor;

const MAGIC: &[u8; 4] = b"TEN1";
const DTYPE_F32: u8 = 0;

/// Dense `f32` array of arbitrary rank.
#[derive(Debug, Clone, PartialEq)]
pub struct TenArray {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl TenArray {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!("dims {:?} need {} values, got {}", dims, n, data.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn into_frame(self) -> Result<FrameTensor> {
        match self.dims[..] {
            [h, w, c] => FrameTensor::new(h, w, c, self.data),
            _ => Err(Error::ShapeMismatch(format!("expected rank 3, got dims {:?}", self.dims))),
        }
    }
}

impl From<&FrameTensor> for TenArray {
    fn from(f: &FrameTensor) -> Self {
        let (h, w, c) = f.shape();
        TenArray { dims: vec![h, w, c], data: f.data().to_vec() }
    }
}

pub fn encode(array: &TenArray, out: &mut impl Write) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&[DTYPE_F32, array.dims.len() as u8])?;
    for &d in &array.dims {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(array.data.len() * 4);
    for v in &array.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)
}

pub fn decode(input: &mut impl Read) -> Result<TenArray> {
    let bad = |m: &str| Error::BadFormat(format!(".ten: {m}"));
    let mut head = [0u8; 6];
    input.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
    if &head[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    if head[4] != DTYPE_F32 {
        return Err(bad("unsupported dtype"));
    }
    let rank = head[5] as usize;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut d = [0u8; 4];
        input.read_exact(&mut d).map_err(|_| bad("truncated dims"))?;
        dims.push(u32::from_le_bytes(d) as usize);
    }
    let n: usize = dims.iter().product();
    let mut raw = vec![0u8; n * 4];
    input.read_exact(&mut raw).map_err(|_| bad("truncated payload"))?;
    let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    Ok(TenArray { dims, data })
}

/// Writes via a temporary sibling file and an atomic rename.
pub fn write(path: &Path, array: &TenArray) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("ten.tmp");
    let mut buf = Vec::new();
    encode(array, &mut buf).map_err(|e| Error::io(&tmp, e))?;
    fs::write(&tmp, &buf).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<TenArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&mut bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let a = TenArray::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let mut buf = Vec::new();
        encode(&a, &mut buf).unwrap();
        let mut expected = b"TEN1".to_vec();
        expected.extend_from_slice(&[0, 2, 2, 0, 0, 0, 1, 0, 0, 0]);
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(decode(&mut &b"TEN2\0\0"[..]).is_err());
        assert!(decode(&mut &b"TEN1\0\x01\x05\0\0\0\0\0"[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(dims in proptest::collection::vec(1usize..5, 0..4), seed in any::<u32>()) {
            let n: usize = dims.iter().product();
            let data: Vec<f32> = (0..n).map(|i| (i as f32 * 0.37 + seed as f32).sin()).collect();
            let a = TenArray::new(dims, data).unwrap();
            let mut buf = Vec::new();
            encode(&a, &mut buf).unwrap();
            prop_assert_eq!(decode(&mut buf.as_slice()).unwrap(), a);
        }
    }
}
