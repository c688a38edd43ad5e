//! Binary parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"ADEV"  magic
//! u32      version (1)
//! u32      kind (1 regression, 2 generator, 3 discriminator)
//! u32 n, u32 d, u32 T
//! u32 count, then count × u32 hidden sizes
//! u32 block count, then per block: u64 length, length × f64
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{AdevError, Result};

const MAGIC: &[u8; 4] = b"ADEV";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u32)]
pub enum CheckpointKind {
    Regression = 1,
    Generator = 2,
    Discriminator = 3,
}

impl CheckpointKind {
    fn from_u32(v: u32) -> Result<Self> {
        match v {
            1 => Ok(CheckpointKind::Regression),
            2 => Ok(CheckpointKind::Generator),
            3 => Ok(CheckpointKind::Discriminator),
            other => Err(AdevError::Checkpoint(format!("unknown checkpoint kind {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub n: u32,
    pub d: u32,
    pub t: u32,
    pub hidden: Vec<u32>,
    pub blocks: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        for v in [VERSION, self.kind as u32, self.n, self.d, self.t, self.hidden.len() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for h in &self.hidden {
            out.extend_from_slice(&h.to_le_bytes());
        }
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&(b.len() as u64).to_le_bytes());
            for x in b {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(mut bytes: &[u8]) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut bytes, &mut magic)?;
        if &magic != MAGIC {
            return Err(AdevError::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut bytes)?;
        if version != VERSION {
            return Err(AdevError::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = CheckpointKind::from_u32(read_u32(&mut bytes)?)?;
        let n = read_u32(&mut bytes)?;
        let d = read_u32(&mut bytes)?;
        let t = read_u32(&mut bytes)?;
        let count = read_u32(&mut bytes)? as usize;
        let hidden = (0..count).map(|_| read_u32(&mut bytes)).collect::<Result<Vec<_>>>()?;
        let nblocks = read_u32(&mut bytes)? as usize;
        let mut blocks = Vec::with_capacity(nblocks);
        for _ in 0..nblocks {
            let mut len = [0u8; 8];
            read_exact(&mut bytes, &mut len)?;
            let len = u64::from_le_bytes(len) as usize;
            if len.saturating_mul(8) > bytes.len() {
                return Err(AdevError::Checkpoint("truncated parameter block".into()));
            }
            let mut b = Vec::with_capacity(len);
            for _ in 0..len {
                let mut x = [0u8; 8];
                read_exact(&mut bytes, &mut x)?;
                b.push(f64::from_le_bytes(x));
            }
            blocks.push(b);
        }
        if !bytes.is_empty() {
            return Err(AdevError::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { kind, n, d, t, hidden, blocks })
    }

    /// Writes atomically (temporary file in the target directory, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn read_exact(bytes: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    bytes.read_exact(buf).map_err(|_| AdevError::Checkpoint("unexpected end of checkpoint".into()))
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(bytes, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Writes `data` to `path` through a sibling temporary file and an atomic rename.
pub fn write_atomic(path: &Path, data: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(data)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| AdevError::Io(e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::Regression,
            n: 3,
            d: 2,
            t: 10,
            hidden: vec![32, 32],
            blocks: vec![vec![1.5, -0.0, f64::MIN_POSITIVE], vec![]],
        }
    }

    #[test]
    fn roundtrip_bytes_and_file() {
        let c = sample();
        assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.adev");
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
    }

    #[test]
    fn header_layout() {
        let b = sample().to_bytes();
        assert_eq!(&b[..4], b"ADEV");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
    }

    #[test]
    fn rejects_corruption() {
        let mut b = sample().to_bytes();
        b[0] = b'X';
        assert!(Checkpoint::from_bytes(&b).is_err());
        let b = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 3]).is_err());
    }
}
