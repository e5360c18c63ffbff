//! Named-tensor checkpoint files.
//!
//! ```text
//! magic    8 bytes   "MSNFCKPT"
//! version  u32 LE    1
//! hlen     u64 LE    byte length of the JSON header
//! header   hlen      {"format", "version", "config", "tensors": [{name, numel, shape, offset}]}
//! payload            f32 LE, tensors concatenated in header order
//! ```
//! Offsets are relative to the start of the payload and must be contiguous.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 8] = b"MSNFCKPT";
pub const VERSION: u32 = 1;
const FORMAT: &str = "misinfo-checkpoint";
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub numel: u64,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: serde_json::Value,
    tensors: Vec<ManifestEntry>,
}

/// In-memory archive: config snapshot plus tensors in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSummary {
    pub version: u32,
    pub config: serde_json::Value,
    pub entries: Vec<ManifestEntry>,
    pub total_parameters: u64,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, config: serde_json::Value) -> Result<Self> {
        Ok(Self {
            config,
            tensors: store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        })
    }

    pub fn with_prefix(mut self, prefix: &str) -> Self {
        for (n, _) in &mut self.tensors {
            *n = format!("{prefix}{n}");
        }
        self
    }

    pub fn strip_prefix(mut self, prefix: &str) -> Result<Self> {
        for (n, _) in &mut self.tensors {
            *n = n
                .strip_prefix(prefix)
                .ok_or_else(|| Error::UnknownParameter(n.clone()))?
                .to_string();
        }
        Ok(self)
    }

    pub fn total_parameters(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }

    /// Writes every tensor into `store` after validating the whole archive
    /// against it; on any error `store` is untouched.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (name, t) in &self.tensors {
            let current = store.get(name)?;
            if current.shape() != t.shape() {
                return Err(Error::ParameterShape {
                    name: name.clone(),
                    expected: current.shape().to_vec(),
                    found: t.shape().to_vec(),
                });
            }
            if !seen.insert(name.as_str()) {
                return Err(Error::CorruptHeader(format!("duplicate tensor `{name}`")));
            }
        }
        if let Some(missing) = store.names().find(|n| !seen.contains(n)) {
            return Err(Error::MissingParameter(missing.to_string()));
        }
        for (name, t) in &self.tensors {
            *store.get_mut(name)? = t.clone();
        }
        Ok(())
    }

    fn header(&self) -> Header {
        let mut offset = 0u64;
        let tensors = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = ManifestEntry {
                    name: name.clone(),
                    numel: t.len() as u64,
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += 4 * t.len() as u64;
                e
            })
            .collect();
        Header {
            format: FORMAT.to_string(),
            version: VERSION,
            config: self.config.clone(),
            tensors,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header = serde_json::to_vec(&self.header()).map_err(std::io::Error::other)?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for (_, t) in &self.tensors {
            let mut buf = Vec::with_capacity(t.len() * 4);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, payload_start) = parse_header(bytes)?;
        let expected = validate_layout(&header.tensors)?;
        let found = (bytes.len() - payload_start) as u64;
        check_payload_len(expected, found)?;
        let payload = &bytes[payload_start..];
        let tensors = header
            .tensors
            .into_iter()
            .map(|e| {
                let start = e.offset as usize;
                let data = payload[start..start + 4 * e.numel as usize]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                let t = Tensor::new(e.shape, data).map_err(|_| Error::CorruptHeader(format!("bad shape for `{}`", e.name)))?;
                Ok((e.name, t))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config: header.config,
            tensors,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Header, usize)> {
    if bytes.len() < PREAMBLE || &bytes[..8] != MAGIC {
        return Err(Error::CorruptHeader("missing checkpoint magic".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::CorruptHeader(format!("unsupported format version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let end = PREAMBLE
        .checked_add(hlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::CorruptHeader(format!("header length {hlen} exceeds file")))?;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..end])
        .map_err(|e| Error::CorruptHeader(format!("header is not valid JSON: {e}")))?;
    if header.format != FORMAT || header.version != version {
        return Err(Error::CorruptHeader("header format/version disagree with preamble".into()));
    }
    Ok((header, end))
}

/// Returns the expected payload length.
fn validate_layout(entries: &[ManifestEntry]) -> Result<u64> {
    let mut expected = 0u64;
    for e in entries {
        if e.shape.is_empty() || e.shape.contains(&0) || numel(&e.shape) as u64 != e.numel {
            return Err(Error::CorruptHeader(format!(
                "tensor `{}` element count {} disagrees with shape {:?}",
                e.name, e.numel, e.shape
            )));
        }
        if e.offset != expected {
            return Err(Error::OffsetOverlap {
                name: e.name.clone(),
                offset: e.offset,
                expected,
            });
        }
        expected += 4 * e.numel;
    }
    Ok(expected)
}

fn check_payload_len(expected: u64, found: u64) -> Result<()> {
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    if found > expected {
        return Err(Error::CorruptHeader(format!("{} unexpected trailing bytes", found - expected)));
    }
    Ok(())
}

/// Validates a checkpoint file without reading its payload into memory.
pub fn verify_checkpoint(path: &Path) -> Result<CheckpointSummary> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_len = f.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut pre = [0u8; PREAMBLE];
    f.read_exact(&mut pre)
        .map_err(|_| Error::CorruptHeader("file shorter than preamble".into()))?;
    let hlen = u64::from_le_bytes(pre[12..20].try_into().expect("8 bytes"));
    if PREAMBLE as u64 + hlen > file_len {
        return Err(Error::CorruptHeader(format!("header length {hlen} exceeds file")));
    }
    let mut buf = pre.to_vec();
    buf.resize(PREAMBLE + hlen as usize, 0);
    f.read_exact(&mut buf[PREAMBLE..]).map_err(|e| Error::io(path, e))?;
    let (header, start) = parse_header(&buf)?;
    let expected = validate_layout(&header.tensors)?;
    check_payload_len(expected, file_len - start as u64)?;
    Ok(CheckpointSummary {
        version: header.version,
        config: header.config,
        total_parameters: header.tensors.iter().map(|e| e.numel).sum(),
        entries: header.tensors,
    })
}

/// Hex SHA-256 of a byte string; used to fingerprint encoder checkpoints.
pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut f, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(hasher.finalize()))
}
