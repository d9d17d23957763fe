//! Binary checkpoint format.
//!
//! ```text
//! "WPRT" u32 version
//! chunk*  where chunk = tag[4] payload
//!   "CONF" u64 len, JSON metadata
//!   "TENS" u16 name_len, name, u32 ndim, u64 dims[ndim], f32 data (LE, row-major)
//!   "END " sha256 of every preceding byte
//! ```
//!
//! Files are parsed and verified completely before a model is built, so a
//! damaged file never yields a partially loaded model.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cubemap;
use crate::error::{Error, Result};
use crate::feature_field::FieldConfig;
use crate::param::ParamSet;
use crate::transport::{MlpConfig, TransportModel};

pub const MAGIC: &[u8; 4] = b"WPRT";
pub const VERSION: u32 = 1;
/// Wavelet coefficients of the lighting are taken from raw radiance, with
/// no solid-angle weighting.
pub const RAW_RADIANCE: &str = "raw_radiance";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub field: FieldConfig,
    pub mlp: MlpConfig,
    pub scene_hash: String,
    pub coefficient_convention: String,
    pub cubemap_convention: String,
    pub steps_completed: usize,
    /// Effective training configuration.
    pub train_config: serde_json::Value,
}

impl CheckpointMeta {
    pub fn new(field: FieldConfig, mlp: MlpConfig, scene_hash: &str) -> Self {
        CheckpointMeta {
            field,
            mlp,
            scene_hash: scene_hash.to_string(),
            coefficient_convention: RAW_RADIANCE.into(),
            cubemap_convention: cubemap::CONVENTION.into(),
            steps_completed: 0,
            train_config: serde_json::Value::Null,
        }
    }

    /// Refuses checkpoints whose lighting conventions differ from ours.
    pub fn check_conventions(&self) -> Result<()> {
        if self.coefficient_convention != RAW_RADIANCE {
            return Err(Error::format(
                "checkpoint",
                format!("coefficient convention {:?} is not supported", self.coefficient_convention),
            ));
        }
        if self.cubemap_convention != cubemap::CONVENTION {
            return Err(Error::format(
                "checkpoint",
                format!("cubemap convention {:?} differs from {:?}", self.cubemap_convention, cubemap::CONVENTION),
            ));
        }
        Ok(())
    }

    pub fn check_scene(&self, scene_hash: &str) -> Result<()> {
        if self.scene_hash != scene_hash {
            return Err(Error::SceneMismatch {
                expected: self.scene_hash.clone(),
                found: scene_hash.to_string(),
            });
        }
        Ok(())
    }
}

pub fn encode(model: &TransportModel<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(meta)?;
    out.extend_from_slice(b"CONF");
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in model.tensors() {
        out.extend_from_slice(b"TENS");
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for d in &t.shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(b"END ");
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format("checkpoint", "file is truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(TransportModel<f32>, CheckpointMeta)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::format("checkpoint", "missing WPRT magic"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let mut meta: Option<CheckpointMeta> = None;
    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    loop {
        let start = r.pos;
        match r.take(4)? {
            b"CONF" => {
                let len = r.u64()? as usize;
                meta = Some(serde_json::from_slice(r.take(len)?)?);
            }
            b"TENS" => {
                let nlen = r.u16()? as usize;
                let name = std::str::from_utf8(r.take(nlen)?)
                    .map_err(|_| Error::format("checkpoint", "tensor name is not UTF-8"))?
                    .to_string();
                let ndim = r.u32()? as usize;
                if ndim > 8 {
                    return Err(Error::format("checkpoint", format!("tensor {name} has {ndim} dimensions")));
                }
                let mut shape = Vec::with_capacity(ndim);
                for _ in 0..ndim {
                    shape.push(r.u64()? as usize);
                }
                let count = shape
                    .iter()
                    .try_fold(1usize, |a, d| a.checked_mul(*d))
                    .filter(|c| c.checked_mul(4).is_some_and(|b| b <= bytes.len()))
                    .ok_or_else(|| Error::format("checkpoint", format!("tensor {name} is too large")))?;
                let data = r
                    .take(count * 4)?
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                tensors.insert(name, (shape, data));
            }
            b"END " => {
                let digest = Sha256::digest(&bytes[..start]);
                if r.take(32)? != digest.as_slice() {
                    return Err(Error::format("checkpoint", "checksum mismatch"));
                }
                if r.pos != bytes.len() {
                    return Err(Error::format("checkpoint", "trailing bytes after end marker"));
                }
                break;
            }
            tag => {
                return Err(Error::format("checkpoint", format!("unknown chunk tag {:?}", String::from_utf8_lossy(tag))));
            }
        }
    }
    let meta = meta.ok_or_else(|| Error::format("checkpoint", "missing config chunk"))?;
    let mut model = TransportModel::<f32>::zeros(meta.field.clone())?;
    if model.mlp.config() != &meta.mlp {
        return Err(Error::format("checkpoint", "decoder shape does not match the feature configuration"));
    }
    let expected: Vec<(String, Vec<usize>)> = model.tensors().iter().map(|t| (t.name.to_string(), t.shape.clone())).collect();
    if tensors.len() != expected.len() {
        return Err(Error::format("checkpoint", format!("expected {} tensors, found {}", expected.len(), tensors.len())));
    }
    for ((name, shape), dst) in expected.iter().zip(model.tensors_mut()) {
        let (s, data) = tensors
            .get(name)
            .ok_or_else(|| Error::format("checkpoint", format!("missing tensor {name}")))?;
        if s != shape {
            return Err(Error::format("checkpoint", format!("tensor {name} has shape {s:?}, expected {shape:?}")));
        }
        dst.data.copy_from_slice(data);
    }
    Ok((model, meta))
}

pub fn save(path: &Path, model: &TransportModel<f32>, meta: &CheckpointMeta) -> Result<()> {
    let bytes = encode(model, meta)?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(TransportModel<f32>, CheckpointMeta)> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Content hash of a checkpoint file's bytes.
pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
