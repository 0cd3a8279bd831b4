//! Little-endian binary tensor format: magic `DCTN`, `u32` rank, `u64` dims,
//! then the `f64` payload in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"DCTN";

impl<S: Scalar> Tensor<S> {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.rank() as u32).to_le_bytes())?;
        for &d in self.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in self.data() {
            w.write_all(&v.to_f64c().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format(format!("bad tensor magic {magic:?}")));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let rank = u32::from_le_bytes(b4) as usize;
        if rank > 16 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut b8 = [0u8; 8];
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut b8)?;
            shape.push(u64::from_le_bytes(b8) as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
        let mut data = Vec::with_capacity(numel.min(1 << 24));
        for _ in 0..numel {
            r.read_exact(&mut b8)?;
            data.push(S::lit(f64::from_le_bytes(b8)));
        }
        Tensor::new(shape, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let t = Tensor::<f64>::from_f64([2, 1], &[1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"DCTN");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..16], &2u64.to_le_bytes());
        assert_eq!(&buf[16..24], &1u64.to_le_bytes());
        assert_eq!(&buf[24..32], &1.5f64.to_le_bytes());
        assert_eq!(buf.len(), 4 + 4 + 16 + 16);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let t = Tensor::<f64>::from_f64([3], &[1.0, 2.0, 3.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            Tensor::<f64>::read_from(&mut bad.as_slice()),
            Err(Error::Format(_))
        ));
        let short = &buf[..buf.len() - 3];
        assert!(Tensor::<f64>::read_from(&mut &short[..]).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(shape in proptest::collection::vec(1usize..4, 0..4), seed in any::<u64>()) {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|i| ((i as u64 ^ seed) as f64).sin() * 1e3).collect();
            let t = Tensor::new(shape, data).unwrap();
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            let back = Tensor::<f64>::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
