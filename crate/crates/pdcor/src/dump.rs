//! The DCFD feature-dump container: a single file holding per-layer
//! feature matrices for one model.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "DCFD" | version u32 | manifest_len u32 | manifest JSON | payload
//! ```
//!
//! The manifest lists layers with name, shape, dtype and byte offset into
//! the payload. `f32` is permitted on disk; everything is promoted to
//! `f64` in memory for computation.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batch::SampleBatch;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DCFD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(&self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// One persisted layer: a named `n x p` feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DumpLayer {
    pub name: String,
    pub dtype: Dtype,
    pub data: SampleBatch,
}

/// A model's per-layer feature matrices plus identifying metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub model_name: String,
    pub sample_ids: Vec<u64>,
    pub layers: Vec<DumpLayer>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    model_name: String,
    sample_ids: Vec<u64>,
    layers: Vec<LayerMeta>,
}

#[derive(Serialize, Deserialize)]
struct LayerMeta {
    name: String,
    n: u64,
    p: u64,
    dtype: Dtype,
    offset: u64,
}

impl FeatureDump {
    pub fn new(model_name: &str, sample_ids: Vec<u64>, layers: Vec<DumpLayer>) -> Result<Self> {
        let dump = Self {
            model_name: model_name.to_string(),
            sample_ids,
            layers,
        };
        dump.validate()?;
        Ok(dump)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Manifest("dump has no layers".into()));
        }
        let n = self.layers[0].data.n();
        for l in &self.layers {
            if l.data.n() != n {
                return Err(Error::Manifest(format!(
                    "layer {} has {} samples, expected {n}",
                    l.name,
                    l.data.n()
                )));
            }
        }
        if self.sample_ids.len() != n {
            return Err(Error::Manifest(format!(
                "{} sample ids for {n} samples",
                self.sample_ids.len()
            )));
        }
        let mut names: Vec<&str> = self.layers.iter().map(|l| l.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Manifest("duplicate layer names".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.layers[0].data.n()
    }

    pub fn layer(&self, name: &str) -> Result<&DumpLayer> {
        self.layers
            .iter()
            .find(|l| l.name == name)
            .ok_or_else(|| Error::LayerNotFound(name.to_string()))
    }

    pub fn layer_names(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.name.as_str()).collect()
    }

    /// Serialize to the container byte layout.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut payload: Vec<u8> = Vec::new();
        let mut metas = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let offset = payload.len() as u64;
            match l.dtype {
                Dtype::F64 => {
                    for v in l.data.as_array().iter() {
                        payload.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Dtype::F32 => {
                    for v in l.data.as_array().iter() {
                        payload.extend_from_slice(&(*v as f32).to_le_bytes());
                    }
                }
            }
            metas.push(LayerMeta {
                name: l.name.clone(),
                n: l.data.n() as u64,
                p: l.data.p() as u64,
                dtype: l.dtype,
                offset,
            });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            model_name: self.model_name.clone(),
            sample_ids: self.sample_ids.clone(),
            layers: metas,
        };
        let manifest_json = serde_json::to_vec(&manifest)?;

        let mut out = Vec::with_capacity(12 + manifest_json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest_json.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest_json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    /// Parse the container byte layout, verifying magic, version, offsets
    /// and payload bounds.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[0..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let manifest_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() < 12 + manifest_len {
            return Err(Error::Manifest("manifest extends past end of file".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&bytes[12..12 + manifest_len])
            .map_err(|e| Error::Manifest(e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: manifest.format_version,
                supported: FORMAT_VERSION,
            });
        }
        let payload = &bytes[12 + manifest_len..];

        // bounds and overlap checks before decoding anything
        let mut ranges: Vec<(u64, u64, &str)> = Vec::with_capacity(manifest.layers.len());
        for m in &manifest.layers {
            let len = m
                .n
                .checked_mul(m.p)
                .and_then(|e| e.checked_mul(m.dtype.size() as u64))
                .ok_or_else(|| Error::Manifest(format!("layer {} size overflows", m.name)))?;
            let end = m
                .offset
                .checked_add(len)
                .ok_or_else(|| Error::Manifest(format!("layer {} offset overflows", m.name)))?;
            if end > payload.len() as u64 {
                return Err(Error::TruncatedPayload {
                    layer: m.name.clone(),
                    needed: end,
                    available: payload.len() as u64,
                });
            }
            ranges.push((m.offset, end, &m.name));
        }
        let mut sorted = ranges.clone();
        sorted.sort_by_key(|r| r.0);
        for w in sorted.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(Error::OffsetOverlap {
                    a: w[0].2.to_string(),
                    b: w[1].2.to_string(),
                });
            }
        }

        let mut layers = Vec::with_capacity(manifest.layers.len());
        for m in &manifest.layers {
            let n = m.n as usize;
            let p = m.p as usize;
            let start = m.offset as usize;
            let mut values = Vec::with_capacity(n * p);
            match m.dtype {
                Dtype::F64 => {
                    for i in 0..n * p {
                        let b = &payload[start + 8 * i..start + 8 * (i + 1)];
                        values.push(f64::from_le_bytes(b.try_into().unwrap()));
                    }
                }
                Dtype::F32 => {
                    for i in 0..n * p {
                        let b = &payload[start + 4 * i..start + 4 * (i + 1)];
                        values.push(f32::from_le_bytes(b.try_into().unwrap()) as f64);
                    }
                }
            }
            layers.push(DumpLayer {
                name: m.name.clone(),
                dtype: m.dtype,
                data: SampleBatch::from_rows(n, p, values)
                    .map_err(|e| Error::Manifest(format!("layer {}: {e}", m.name)))?,
            });
        }
        FeatureDump::new(&manifest.model_name, manifest.sample_ids, layers)
    }
}

pub fn write_dump(path: &Path, dump: &FeatureDump) -> Result<()> {
    let bytes = dump.to_bytes()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_dump(path: &Path) -> Result<FeatureDump> {
    let bytes = fs::read(path)?;
    FeatureDump::from_bytes(&bytes)
}

/// Read a one-layer dump from a headerless CSV of numbers (one sample per
/// line). Sample ids are the line numbers.
pub fn read_csv_as_dump(path: &Path, layer_name: &str) -> Result<FeatureDump> {
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let row = row.map_err(|e| {
            Error::InvalidInput(format!("csv line {}: {e}", lineno + 1))
        })?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::InvalidInput(format!(
                    "csv line {} has {} fields, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("csv file has no data rows".into()));
    }
    let n = rows.len();
    let p = rows[0].len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    FeatureDump::new(
        "csv",
        (0..n as u64).collect(),
        vec![DumpLayer {
            name: layer_name.to_string(),
            dtype: Dtype::F64,
            data: SampleBatch::from_rows(n, p, flat)?,
        }],
    )
}
