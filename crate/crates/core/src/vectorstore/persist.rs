//! Binary index file.
//!
//! ```text
//! magic          8 bytes   "CQAVIDX\0"
//! format version u32 LE
//! provider id    u32 LE length + UTF-8 bytes
//! dimension      u32 LE
//! doc count      u64 LE
//! vectors        doc count × dimension f32 LE, row-major
//! doc block      u64 LE length + JSON {"version", "embed_text", "docs"}
//! checksum       SHA-256 of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{norm, EmbedText, IndexError, StoredDoc, VectorIndex};
use crate::usefulness::EmbeddingProvider;

pub const MAGIC: &[u8; 8] = b"CQAVIDX\0";
pub const FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct DocBlock {
    version: u64,
    embed_text: EmbedText,
    docs: Vec<StoredDoc>,
}

pub(super) fn encode(index: &VectorIndex) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + index.matrix.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(index.provider_id.len() as u32).to_le_bytes());
    out.extend_from_slice(index.provider_id.as_bytes());
    out.extend_from_slice(&(index.dimension as u32).to_le_bytes());
    out.extend_from_slice(&(index.docs.len() as u64).to_le_bytes());
    for x in &index.matrix {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let block = serde_json::to_vec(&DocBlock {
        version: index.version,
        embed_text: index.embed_text,
        docs: index.docs.clone(),
    })
    .expect("doc block serializes");
    out.extend_from_slice(&(block.len() as u64).to_le_bytes());
    out.extend_from_slice(&block);
    let checksum = Sha256::digest(&out);
    out.extend_from_slice(&checksum);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IndexError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| IndexError::Corrupt("unexpected end of data".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, IndexError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IndexError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub(super) fn decode(bytes: &[u8]) -> Result<VectorIndex, IndexError> {
    if bytes.len() < MAGIC.len() + CHECKSUM_LEN {
        return Err(IndexError::ChecksumMismatch);
    }
    let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(IndexError::ChecksumMismatch);
    }

    let mut cur = Cursor { bytes: body, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(IndexError::Corrupt("bad magic".into()));
    }
    let format = cur.u32()?;
    if format != FORMAT_VERSION {
        return Err(IndexError::Corrupt(format!("unsupported format version {format}")));
    }
    let id_len = cur.u32()? as usize;
    let provider_id = std::str::from_utf8(cur.take(id_len)?)
        .map_err(|_| IndexError::Corrupt("provider id is not UTF-8".into()))?
        .to_string();
    let dimension = cur.u32()? as usize;
    let count = usize::try_from(cur.u64()?).map_err(|_| IndexError::Corrupt("doc count".into()))?;
    let n_floats = count
        .checked_mul(dimension)
        .ok_or_else(|| IndexError::Corrupt("matrix size overflows".into()))?;
    let raw = cur.take(n_floats.checked_mul(4).ok_or_else(|| IndexError::Corrupt("matrix size".into()))?)?;
    let matrix: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let block_len = usize::try_from(cur.u64()?).map_err(|_| IndexError::Corrupt("doc block".into()))?;
    let block: DocBlock = serde_json::from_slice(cur.take(block_len)?)
        .map_err(|e| IndexError::Corrupt(format!("doc block: {e}")))?;
    if cur.pos != body.len() {
        return Err(IndexError::Corrupt("trailing bytes".into()));
    }
    if block.docs.len() != count {
        return Err(IndexError::Corrupt(format!(
            "header says {count} docs, doc block has {}",
            block.docs.len()
        )));
    }

    let norms = if dimension == 0 {
        vec![0.0; count]
    } else {
        matrix.chunks_exact(dimension).map(norm).collect()
    };
    Ok(VectorIndex {
        docs: block.docs,
        matrix,
        norms,
        dimension,
        provider_id,
        version: block.version,
        embed_text: block.embed_text,
    })
}

/// Write the index to `path`. The file is written next to its destination
/// and renamed into place.
pub fn save_index(index: &VectorIndex, path: &Path) -> Result<(), IndexError> {
    let bytes = encode(index);
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<VectorIndex, IndexError> {
    decode(&fs::read(path)?)
}

/// Load an index and check it matches the session's embedding provider.
pub fn load_index_for(path: &Path, provider: &dyn EmbeddingProvider) -> Result<VectorIndex, IndexError> {
    let index = load_index(path)?;
    index.check_provider(provider)?;
    Ok(index)
}
