//! Persisted sentence vectors.
//!
//! ```text
//! magic    8 bytes   "MSNFVECS"
//! version  u32 LE    1
//! hlen     u64 LE    byte length of the JSON header
//! header   hlen      {"format", "version", "dataset", "encoder_fingerprint", "hidden_size", "count", "ids"}
//! payload            count × hidden_size f32 LE, row-major, rows in `ids` order
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Record;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::LabelledVectors;

pub const MAGIC: &[u8; 8] = b"MSNFVECS";
pub const VERSION: u32 = 1;
const FORMAT: &str = "misinfo-vectors";
const PREAMBLE: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dataset: String,
    encoder_fingerprint: String,
    hidden_size: usize,
    count: usize,
    ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorCache {
    pub dataset: String,
    /// Content hash of the encoder checkpoint that produced the vectors.
    pub encoder_fingerprint: String,
    pub hidden_size: usize,
    pub ids: Vec<String>,
    /// `count × hidden_size`, row-major.
    pub values: Vec<f32>,
}

impl VectorCache {
    pub fn new(dataset: &str, encoder_fingerprint: &str, hidden_size: usize, ids: Vec<String>, values: Vec<f32>) -> Result<Self> {
        if hidden_size == 0 || values.len() != ids.len() * hidden_size {
            return Err(Error::Shape {
                op: "vector_cache",
                lhs: vec![ids.len(), hidden_size],
                rhs: vec![values.len()],
            });
        }
        Ok(Self {
            dataset: dataset.to_string(),
            encoder_fingerprint: encoder_fingerprint.to_string(),
            hidden_size,
            ids,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.hidden_size..(i + 1) * self.hidden_size]
    }

    /// True when this cache holds exactly `records`, in order, for `fingerprint`.
    pub fn matches(&self, dataset: &str, fingerprint: &str, records: &[Record]) -> bool {
        self.dataset == dataset
            && self.encoder_fingerprint == fingerprint
            && self.ids.len() == records.len()
            && self.ids.iter().zip(records).all(|(a, r)| *a == r.id)
    }

    /// Vectors and classes for `records`, looked up by id.
    pub fn select(&self, records: &[Record]) -> Result<LabelledVectors> {
        let index: HashMap<&str, usize> = self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let mut data = Vec::with_capacity(records.len() * self.hidden_size);
        for r in records {
            let &i = index
                .get(r.id.as_str())
                .ok_or_else(|| Error::Dataset(format!("record `{}` missing from vector cache", r.id)))?;
            data.extend_from_slice(self.row(i));
        }
        let vectors = Tensor::from_parts(vec![records.len(), self.hidden_size], data);
        LabelledVectors::new(vectors, records.iter().map(|r| r.label.class()).collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            format: FORMAT.into(),
            version: VERSION,
            dataset: self.dataset.clone(),
            encoder_fingerprint: self.encoder_fingerprint.clone(),
            hidden_size: self.hidden_size,
            count: self.ids.len(),
            ids: self.ids.clone(),
        })?;
        let mut out = Vec::with_capacity(PREAMBLE + header.len() + self.values.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < PREAMBLE || &bytes[..8] != MAGIC {
            return Err(Error::CorruptHeader("missing vector cache magic".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(Error::CorruptHeader(format!("unsupported vector cache version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let end = PREAMBLE
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::CorruptHeader(format!("header length {hlen} exceeds file")))?;
        let h: Header = serde_json::from_slice(&bytes[PREAMBLE..end])
            .map_err(|e| Error::CorruptHeader(format!("vector cache header: {e}")))?;
        if h.format != FORMAT || h.count != h.ids.len() {
            return Err(Error::CorruptHeader("vector cache header is inconsistent".into()));
        }
        let expected = (h.count * h.hidden_size * 4) as u64;
        let found = (bytes.len() - end) as u64;
        if found < expected {
            return Err(Error::Truncated { expected, found });
        }
        if found > expected {
            return Err(Error::CorruptHeader(format!("{} unexpected trailing bytes", found - expected)));
        }
        let values = bytes[end..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(&h.dataset, &h.encoder_fingerprint, h.hidden_size, h.ids, values)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
