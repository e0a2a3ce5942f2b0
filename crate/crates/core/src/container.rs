//! Self-describing binary container shared by model checkpoints and stack
//! models. Little-endian throughout:
//!
//! ```text
//! magic[4] | u32 version | u32 config length | config text (key=value lines)
//! records: u16 name length | name | u8 dtype | u8 rank | u32 dims[rank] | raw data
//! u32 CRC32 of every preceding byte
//! ```
//!
//! Dtype codes: 0 = f32, 1 = f64, 2 = u32, 3 = decision-tree node (see [`TreeNodeRecord`]).

use thiserror::Error;

pub const DTYPE_F32: u8 = 0;
pub const DTYPE_F64: u8 = 1;
pub const DTYPE_U32: u8 = 2;
pub const DTYPE_TREE_NODE: u8 = 3;

/// Packed tree node: `u32 feature (u32::MAX at leaves) | f64 threshold |
/// u32 left | u32 right | f64 value[2]` = 36 bytes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeNodeRecord {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: [f64; 2],
}

pub const TREE_NODE_BYTES: usize = 36;

pub fn dtype_width(dtype: u8) -> Option<usize> {
    match dtype {
        DTYPE_F32 | DTYPE_U32 => Some(4),
        DTYPE_F64 => Some(8),
        DTYPE_TREE_NODE => Some(TREE_NODE_BYTES),
        _ => None,
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContainerError {
    #[error("bad magic {found:?}, expected {expected:?} (format version {version})")]
    BadMagic { found: [u8; 4], expected: [u8; 4], version: u32 },
    #[error("format version {found} unsupported (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("truncated: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed container: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: u8,
    pub dims: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl Record {
    pub fn f64(name: impl Into<String>, dims: Vec<usize>, data: &[f64]) -> Self {
        Self { name: name.into(), dtype: DTYPE_F64, dims, bytes: data.iter().flat_map(|v| v.to_le_bytes()).collect() }
    }

    pub fn u32(name: impl Into<String>, data: &[u32]) -> Self {
        Self { name: name.into(), dtype: DTYPE_U32, dims: vec![data.len()], bytes: data.iter().flat_map(|v| v.to_le_bytes()).collect() }
    }

    pub fn tree(name: impl Into<String>, nodes: &[TreeNodeRecord]) -> Self {
        let mut bytes = Vec::with_capacity(nodes.len() * TREE_NODE_BYTES);
        for n in nodes {
            bytes.extend(n.feature.to_le_bytes());
            bytes.extend(n.threshold.to_le_bytes());
            bytes.extend(n.left.to_le_bytes());
            bytes.extend(n.right.to_le_bytes());
            bytes.extend(n.value[0].to_le_bytes());
            bytes.extend(n.value[1].to_le_bytes());
        }
        Self { name: name.into(), dtype: DTYPE_TREE_NODE, dims: vec![nodes.len()], bytes }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    fn expect(&self, dtype: u8) -> Result<(), ContainerError> {
        if self.dtype != dtype {
            return Err(ContainerError::Malformed(format!("record {} has dtype {}, expected {dtype}", self.name, self.dtype)));
        }
        Ok(())
    }

    pub fn as_f64(&self) -> Result<Vec<f64>, ContainerError> {
        self.expect(DTYPE_F64)?;
        Ok(self.bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    pub fn as_u32(&self) -> Result<Vec<u32>, ContainerError> {
        self.expect(DTYPE_U32)?;
        Ok(self.bytes.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }

    pub fn as_tree(&self) -> Result<Vec<TreeNodeRecord>, ContainerError> {
        self.expect(DTYPE_TREE_NODE)?;
        let f64_at = |c: &[u8], o: usize| f64::from_le_bytes(c[o..o + 8].try_into().expect("8 bytes"));
        let u32_at = |c: &[u8], o: usize| u32::from_le_bytes(c[o..o + 4].try_into().expect("4 bytes"));
        Ok(self
            .bytes
            .chunks_exact(TREE_NODE_BYTES)
            .map(|c| TreeNodeRecord {
                feature: u32_at(c, 0),
                threshold: f64_at(c, 4),
                left: u32_at(c, 12),
                right: u32_at(c, 16),
                value: [f64_at(c, 20), f64_at(c, 28)],
            })
            .collect())
    }
}

pub fn encode(magic: [u8; 4], version: u32, config: &str, records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(magic);
    out.extend(version.to_le_bytes());
    out.extend((config.len() as u32).to_le_bytes());
    out.extend(config.as_bytes());
    for r in records {
        out.extend((r.name.len() as u16).to_le_bytes());
        out.extend(r.name.as_bytes());
        out.push(r.dtype);
        out.push(r.dims.len() as u8);
        for &d in &r.dims {
            out.extend((d as u32).to_le_bytes());
        }
        out.extend(&r.bytes);
    }
    let crc = crc32fast::hash(&out);
    out.extend(crc.to_le_bytes());
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    end: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        if self.pos + n > self.end {
            return Err(ContainerError::Truncated { offset: self.pos, needed: n, len: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parse and verify. Structure is checked before the checksum so truncation
/// is reported as such.
pub fn decode(expected_magic: [u8; 4], version: u32, bytes: &[u8]) -> Result<(String, Vec<Record>), ContainerError> {
    if bytes.len() < 4 {
        return Err(ContainerError::Truncated { offset: 0, needed: 4, len: bytes.len() });
    }
    let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if magic != expected_magic {
        return Err(ContainerError::BadMagic { found: magic, expected: expected_magic, version });
    }
    if bytes.len() < 16 {
        return Err(ContainerError::Truncated { offset: 4, needed: 12, len: bytes.len() });
    }
    let mut cur = Cursor { bytes, pos: 4, end: bytes.len() - 4 };
    let found = cur.u32()?;
    if found != version {
        return Err(ContainerError::UnsupportedVersion { found, supported: version });
    }
    let clen = cur.u32()? as usize;
    let config = std::str::from_utf8(cur.take(clen)?)
        .map_err(|_| ContainerError::Malformed("config block is not UTF-8".into()))?
        .to_string();
    let mut records = Vec::new();
    while cur.pos < cur.end {
        let nlen = u16::from_le_bytes(cur.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(cur.take(nlen)?.to_vec()).map_err(|_| ContainerError::Malformed("record name is not UTF-8".into()))?;
        let head = cur.take(2)?;
        let (dtype, rank) = (head[0], head[1] as usize);
        let width = dtype_width(dtype).ok_or_else(|| ContainerError::Malformed(format!("record {name}: unknown dtype {dtype}")))?;
        let dims = (0..rank).map(|_| cur.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = dims.iter().product();
        let bytes = cur.take(n * width)?.to_vec();
        records.push(Record { name, dtype, dims, bytes });
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&bytes[..bytes.len() - 4]);
    if stored != computed {
        return Err(ContainerError::Checksum { stored, computed });
    }
    Ok((config, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip() {
        let node = TreeNodeRecord { feature: 2, threshold: 0.25, left: 1, right: 2, value: [0.3, 0.7] };
        let recs = vec![Record::f64("a", vec![2, 1], &[1.5, -2.0]), Record::u32("b", &[7, 9]), Record::tree("t", &[node])];
        let bytes = encode(*b"TEST", 3, "k=v\n", &recs);
        let (cfg, back) = decode(*b"TEST", 3, &bytes).unwrap();
        assert_eq!(cfg, "k=v\n");
        assert_eq!(back, recs);
        assert_eq!(back[2].as_tree().unwrap(), vec![node]);
        assert_eq!(back[0].as_f64().unwrap(), vec![1.5, -2.0]);
        assert!(back[0].as_u32().is_err());
        assert!(matches!(decode(*b"TEST", 4, &bytes), Err(ContainerError::UnsupportedVersion { found: 3, .. })));
    }
}
