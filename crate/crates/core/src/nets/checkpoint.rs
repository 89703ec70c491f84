//! Checkpoint files: one line of compact JSON header, a `\n`, then the
//! parameters as little-endian `f32`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, NetParams, ParamSpec, Real};
use crate::error::{Error, Result};
use crate::rng::Seed;

pub const FORMAT: &str = "tmlab-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub model: ModelConfig,
    pub layout: Vec<ParamSpec>,
    pub seed: Seed,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<f32>,
}

impl Checkpoint {
    pub fn from_model<F: Real>(model: &Model<F>, seed: Seed, step: u64) -> Self {
        let params = model.params();
        Self {
            header: CheckpointHeader {
                format: FORMAT.into(),
                version: 1,
                dtype: "f32le".into(),
                model: model.config().clone(),
                layout: params.layout().to_vec(),
                seed,
                step,
            },
            values: params.values.iter().map(|v| v.to_f32().unwrap()).collect(),
        }
    }

    pub fn into_model<F: Real>(self) -> Result<Model<F>> {
        let values = self.values.iter().map(|&v| F::from_f32(v).unwrap()).collect();
        let params = NetParams::from_parts(values, self.header.layout)?;
        Model::from_params(self.header.model, params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec(&self.header).expect("header serializes");
        out.push(b'\n');
        out.reserve(4 * self.values.len());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint("missing header terminator".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[..nl])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.format != FORMAT || header.dtype != "f32le" || header.version != 1 {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{} ({})",
                header.format, header.version, header.dtype
            )));
        }
        let payload = &bytes[nl + 1..];
        let expected: usize = header.layout.iter().map(ParamSpec::size).sum();
        if payload.len() != 4 * expected {
            return Err(Error::Checkpoint(format!(
                "payload has {} bytes, layout needs {}",
                payload.len(),
                4 * expected
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { header, values })
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(&self.to_bytes())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Self::from_bytes(&buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
