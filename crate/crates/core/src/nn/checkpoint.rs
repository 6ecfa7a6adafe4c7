//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `IARAPCKP`, a little-endian `u32` header length,
//! a JSON header (format version, kind, network specs, layer shapes, free-form
//! metadata, parameter count), then the parameters as little-endian `f64` in
//! storage order (row-major weights followed by bias, layer by layer).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{MlpSpec, ParameterBlock};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"IARAPCKP";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: serde_json::Value,
    pub block: ParameterBlock,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    kind: String,
    nets: Vec<MlpSpec>,
    layers: Vec<(usize, usize)>,
    meta: serde_json::Value,
    param_count: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind.clone(),
            nets: self.block.nets().to_vec(),
            layers: self.block.layers().iter().map(|l| (l.inputs, l.outputs)).collect(),
            meta: self.meta.clone(),
            param_count: self.block.len(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + 8 * self.block.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for v in self.block.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("missing checkpoint magic"));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                header.format_version
            )));
        }
        let payload = &bytes[12 + hlen..];
        if payload.len() != 8 * header.param_count {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter bytes, found {}",
                8 * header.param_count,
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let block = ParameterBlock::with_values(header.nets, data)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let shapes: Vec<(usize, usize)> = block.layers().iter().map(|l| (l.inputs, l.outputs)).collect();
        if shapes != header.layers {
            return Err(bad("layer shapes disagree with network specs"));
        }
        Ok(Self {
            kind: header.kind,
            meta: header.meta,
            block,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
