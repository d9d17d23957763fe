//! Scenes, environments and checkpoints found under an assets directory.
//!
//! ```text
//! assets/scenes/<id>.json | assets/scenes/<id>/scene.json
//! assets/envs/<id>/{posx,negx,posy,negy,posz,negz}.pfm | assets/envs/<id>.hdr | .pfm
//! assets/checkpoints/<id>.wprt
//! ```
//!
//! The registry is built once at startup and never changes afterwards.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use prt_client::{CheckpointInfo, EnvInfo, SceneInfo};
use prt_core::cubemap::Cubemap;
use prt_core::error::{Error, Result};
use prt_core::param::ParamSet;
use prt_core::scene::Scene;
use prt_core::train::checkpoint::{self, CheckpointMeta};
use prt_core::transport::TransportModel;
use sha2::{Digest, Sha256};

/// Face resolution used when an environment is given as an equirect image.
pub const EQUIRECT_FACE_RES: usize = 64;

pub struct SceneEntry {
    pub scene: Scene,
    pub path: PathBuf,
}

pub struct EnvEntry {
    pub cubemap: Cubemap,
    pub hash: String,
}

pub struct CheckpointEntry {
    pub model: TransportModel<f32>,
    pub meta: CheckpointMeta,
    pub hash: String,
}

#[derive(Default)]
pub struct Registry {
    pub scenes: BTreeMap<String, Arc<SceneEntry>>,
    pub envs: BTreeMap<String, Arc<EnvEntry>>,
    pub checkpoints: BTreeMap<String, Arc<CheckpointEntry>>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| !p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.')))
        .collect();
    v.sort();
    Ok(v)
}

fn stem(p: &Path) -> Option<String> {
    p.file_stem().and_then(|s| s.to_str()).map(str::to_string)
}

fn has_ext(p: &Path, exts: &[&str]) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
}

/// Content hash of an environment's texels.
pub fn cubemap_hash(c: &Cubemap) -> String {
    let mut h = Sha256::new();
    h.update((c.face_res() as u64).to_le_bytes());
    for t in c.texels() {
        for v in t {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl Registry {
    /// Loads everything under `assets`. Files that fail to load are
    /// skipped with a warning so one bad file does not take the service
    /// down; a missing directory yields an empty listing.
    pub fn scan(assets: &Path) -> Result<Registry> {
        let mut reg = Registry::default();
        for p in sorted_entries(&assets.join("scenes"))? {
            let (id, file) = if p.is_dir() {
                (p.file_name().and_then(|n| n.to_str()).map(str::to_string), p.join("scene.json"))
            } else if has_ext(&p, &["json"]) {
                (stem(&p), p.clone())
            } else {
                continue;
            };
            let Some(id) = id else { continue };
            if !file.exists() {
                continue;
            }
            match Scene::load(&file) {
                Ok(scene) => {
                    reg.scenes.insert(id, Arc::new(SceneEntry { scene, path: file }));
                }
                Err(e) => log::warn!("skipping scene {}: {e}", file.display()),
            }
        }
        for p in sorted_entries(&assets.join("envs"))? {
            if !(p.is_dir() || has_ext(&p, &["hdr", "pfm"])) {
                continue;
            }
            let Some(id) = (if p.is_dir() { p.file_name().and_then(|n| n.to_str()).map(str::to_string) } else { stem(&p) }) else {
                continue;
            };
            match Cubemap::load(&p, EQUIRECT_FACE_RES) {
                Ok(cubemap) => {
                    let hash = cubemap_hash(&cubemap);
                    reg.envs.insert(id, Arc::new(EnvEntry { cubemap, hash }));
                }
                Err(e) => log::warn!("skipping environment {}: {e}", p.display()),
            }
        }
        for p in sorted_entries(&assets.join("checkpoints"))? {
            if !has_ext(&p, &["wprt"]) {
                continue;
            }
            let Some(id) = stem(&p) else { continue };
            let loaded = std::fs::read(&p).map_err(|e| Error::io(&p, e)).and_then(|bytes| {
                let (model, meta) = checkpoint::decode(&bytes)?;
                meta.check_conventions()?;
                Ok(CheckpointEntry {
                    model,
                    meta,
                    hash: checkpoint::hash_bytes(&bytes),
                })
            });
            match loaded {
                Ok(c) => {
                    reg.checkpoints.insert(id, Arc::new(c));
                }
                Err(e) => log::warn!("skipping checkpoint {}: {e}", p.display()),
            }
        }
        log::info!(
            "loaded {} scenes, {} environments, {} checkpoints",
            reg.scenes.len(),
            reg.envs.len(),
            reg.checkpoints.len()
        );
        Ok(reg)
    }

    pub fn scene_infos(&self) -> Vec<SceneInfo> {
        self.scenes
            .iter()
            .map(|(id, e)| SceneInfo {
                id: id.clone(),
                hash: e.scene.hash().to_string(),
                triangles: e.scene.triangle_count(),
                objects: e.scene.object_names().to_vec(),
                camera_presets: e.scene.camera_presets().iter().map(|p| p.name.clone()).collect(),
            })
            .collect()
    }

    pub fn env_infos(&self) -> Vec<EnvInfo> {
        self.envs
            .iter()
            .map(|(id, e)| EnvInfo {
                id: id.clone(),
                face_res: e.cubemap.face_res(),
                hash: e.hash.clone(),
            })
            .collect()
    }

    pub fn checkpoint_infos(&self) -> Vec<CheckpointInfo> {
        self.checkpoints
            .iter()
            .map(|(id, c)| CheckpointInfo {
                id: id.clone(),
                hash: c.hash.clone(),
                scene_hash: c.meta.scene_hash.clone(),
                steps_completed: c.meta.steps_completed,
                wavelet_face_res: c.meta.field.wavelet_face_res,
                max_wavelets: c.meta.field.wavelet_count(),
                parameters: c.model.param_count(),
            })
            .collect()
    }
}
