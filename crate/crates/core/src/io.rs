use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

const DIGEST_LEN: usize = 32;

/// Self-checking binary container used by checkpoints and example caches:
/// magic, u32 version, length-prefixed JSON blocks, a raw f64 payload and
/// a trailing SHA-256 of everything before it.
pub(crate) struct FrameWriter {
    out: Vec<u8>,
}

impl FrameWriter {
    pub(crate) fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut out = Vec::new();
        out.extend_from_slice(magic);
        out.extend_from_slice(&version.to_le_bytes());
        Self { out }
    }

    pub(crate) fn json<T: serde::Serialize>(&mut self, value: &T) {
        let block = serde_json::to_vec(value).expect("frame block serialize");
        self.out.extend_from_slice(&(block.len() as u32).to_le_bytes());
        self.out.extend_from_slice(&block);
    }

    pub(crate) fn values<'a>(&mut self, values: impl IntoIterator<Item = &'a f64>) {
        for v in values {
            self.out.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub(crate) fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.out);
        self.out.extend_from_slice(&digest);
        self.out
    }
}

pub(crate) struct FrameReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> FrameReader<'a> {
    /// Verifies the digest, magic and version. `what` names the file kind
    /// in diagnostics.
    pub(crate) fn open(bytes: &'a [u8], magic: &[u8; 8], version: u32, what: &str) -> Result<Self> {
        if bytes.len() < magic.len() + 4 + DIGEST_LEN {
            return Err(Error::Corrupt(format!("{} bytes is too short for a {what}", bytes.len())));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Corrupt(format!("{what} checksum mismatch (truncated or modified file)")));
        }
        let mut r = Self { bytes: body, pos: 0 };
        if r.take(magic.len(), "magic")? != magic {
            return Err(Error::Corrupt(format!("not a {what} file")));
        }
        let found = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
        if found != version {
            return Err(Error::Version { found, expected: version });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Corrupt(format!("file ends inside the {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn json<T: serde::de::DeserializeOwned>(&mut self, what: &str) -> Result<T> {
        let n = u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize;
        serde_json::from_slice(self.take(n, what)?).map_err(|e| Error::Corrupt(format!("{what}: {e}")))
    }

    /// The remaining payload, which must hold exactly `n` values.
    pub(crate) fn values(self, n: usize) -> Result<Vec<f64>> {
        let blob = &self.bytes[self.pos..];
        if blob.len() != 8 * n {
            return Err(Error::Corrupt(format!("{} payload bytes, expected {}", blob.len(), 8 * n)));
        }
        Ok(blob.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}
