//! Training-set generation and loading.
//!
//! A dataset directory holds:
//!
//! * `dataset.json`: metadata and the effective generation config;
//! * `manifest.jsonl`: one row per image (`image`, `gbuffer`, `env_id`,
//!   `rotation_deg`, `camera`, optional `direct`);
//! * `images/*.pfm`: path-traced indirect-only renders;
//! * `gbuffers/*.gbuf`: one primary-ray G-buffer per camera;
//! * `envs/<id>/`: each environment as six PFM faces at the training
//!   resolution (rotations are applied on load).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::brdf::BrdfParams;
use crate::cubemap::{self, Cubemap};
use crate::error::{Error, Result};
use crate::imageio::{self, Image};
use crate::math::Vec3;
use crate::pathtracer::{self, Mode, PathTracerConfig};
use crate::rng;
use crate::scene::{Camera, GBuffer, Scene};
use crate::transport::{encode_pixel, PixelInput};

const GBUF_MAGIC: &[u8; 4] = b"WGBF";
const GBUF_VERSION: u32 = 1;
const GBUF_FLOATS: usize = 17;
pub const DATASET_VERSION: u32 = 1;

/// G-buffer pixel as stored on disk (single precision).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GBufferPixel {
    pub hit: bool,
    pub position_normalized: [f32; 3],
    pub normal: [f32; 3],
    pub wr: [f32; 3],
    pub kd: [f32; 3],
    pub ks: [f32; 3],
    pub roughness: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GBufferImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<GBufferPixel>,
}

fn f3(v: Vec3) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

fn d3(v: [f32; 3]) -> [f64; 3] {
    v.map(|x| x as f64)
}

impl GBufferImage {
    pub fn from_gbuffer(g: &GBuffer) -> Self {
        let pixels = g
            .samples
            .iter()
            .map(|s| match (&s.brdf, s.hit) {
                (Some(b), true) => GBufferPixel {
                    hit: true,
                    position_normalized: f3(s.position_normalized),
                    normal: f3(s.normal),
                    wr: f3(s.wr),
                    kd: b.kd.map(|x| x as f32),
                    ks: b.ks.map(|x| x as f32),
                    roughness: b.roughness as f32,
                },
                _ => GBufferPixel::default(),
            })
            .collect();
        GBufferImage {
            width: g.width,
            height: g.height,
            pixels,
        }
    }

    pub fn hit_count(&self) -> usize {
        self.pixels.iter().filter(|p| p.hit).count()
    }

    /// Decoder input for pixel `i`, or `None` for background pixels.
    pub fn pixel_input(&self, i: usize) -> Option<PixelInput> {
        let p = &self.pixels[i];
        if !p.hit {
            return None;
        }
        let brdf = BrdfParams {
            kd: d3(p.kd),
            ks: d3(p.ks),
            roughness: p.roughness as f64,
        };
        Some(PixelInput {
            position: d3(p.position_normalized),
            encoding: encode_pixel(Vec3::from_array(d3(p.wr)), Vec3::from_array(d3(p.normal)), &brdf),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len() * GBUF_FLOATS * 4);
        out.extend_from_slice(GBUF_MAGIC);
        out.extend_from_slice(&GBUF_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for p in &self.pixels {
            let mut vals = [0f32; GBUF_FLOATS];
            vals[0] = if p.hit { 1.0 } else { 0.0 };
            vals[1..4].copy_from_slice(&p.position_normalized);
            vals[4..7].copy_from_slice(&p.normal);
            vals[7..10].copy_from_slice(&p.wr);
            vals[10..13].copy_from_slice(&p.kd);
            vals[13..16].copy_from_slice(&p.ks);
            vals[16] = p.roughness;
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let err = |m: String| Error::format("g-buffer", m);
        if bytes.len() < 16 || &bytes[0..4] != GBUF_MAGIC {
            return Err(err("missing WGBF header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != GBUF_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: GBUF_VERSION,
            });
        }
        let (w, h) = (word(8) as usize, word(12) as usize);
        let need = 16 + w * h * GBUF_FLOATS * 4;
        if bytes.len() != need {
            return Err(err(format!("expected {need} bytes for {w}x{h}, found {}", bytes.len())));
        }
        let pixels = bytes[16..]
            .chunks_exact(GBUF_FLOATS * 4)
            .map(|c| {
                let v: Vec<f32> = c.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
                GBufferPixel {
                    hit: v[0] != 0.0,
                    position_normalized: [v[1], v[2], v[3]],
                    normal: [v[4], v[5], v[6]],
                    wr: [v[7], v[8], v[9]],
                    kd: [v[10], v[11], v[12]],
                    ks: [v[13], v[14], v[15]],
                    roughness: v[16],
                }
            })
            .collect();
        Ok(GBufferImage {
            width: w,
            height: h,
            pixels,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub image: String,
    pub gbuffer: String,
    pub env_id: String,
    pub rotation_deg: f64,
    pub camera: Camera,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direct: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub width: usize,
    pub height: usize,
    pub spp: usize,
    pub max_bounces: usize,
    pub seed: u64,
    /// Cubemap face resolution used for both rendering and training.
    pub face_res: usize,
    /// Extra rotations about +Y applied to each environment (0 is always
    /// included).
    pub rotations_deg: Vec<f64>,
    /// Lighting conditions rendered per camera; 0 renders every camera under
    /// every condition.
    pub envs_per_view: usize,
    /// Also store direct-only renders (used by evaluation).
    pub store_direct: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            width: 64,
            height: 64,
            spp: 256,
            max_bounces: 8,
            seed: 0,
            face_res: 16,
            rotations_deg: vec![120.0, 240.0],
            envs_per_view: 0,
            store_direct: false,
        }
    }
}

impl DatasetConfig {
    pub fn rotations(&self) -> Vec<f64> {
        let mut r = vec![0.0];
        for &d in &self.rotations_deg {
            if !r.contains(&d) {
                r.push(d);
            }
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub scene_hash: String,
    pub cubemap_convention: String,
    pub env_ids: Vec<String>,
    pub config: DatasetConfig,
    pub images: usize,
    pub views: usize,
}

/// A lighting condition: an environment and a rotation about +Y.
#[derive(Debug, Clone, PartialEq)]
pub struct Lighting {
    pub env_id: String,
    pub rotation_deg: f64,
}

pub fn lighting_key(env_id: &str, rotation_deg: f64) -> String {
    format!("{env_id}@{rotation_deg}")
}

/// Resamples to the training resolution and rounds to the stored precision.
pub fn prepare_env(env: &Cubemap, face_res: usize) -> Result<Cubemap> {
    Ok(env.resampled(face_res)?.quantized_f32())
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.') && !id.starts_with('.')
}

/// Path-traces indirect-only images for camera/lighting pairs and writes
/// them with G-buffers and a manifest into `out_dir`.
pub fn generate_training_set(scene: &Scene, envs: &[(String, Cubemap)], cameras: &[Camera], out_dir: &Path, cfg: &DatasetConfig) -> Result<Vec<ManifestRow>> {
    if envs.is_empty() || cameras.is_empty() {
        return Err(Error::InvalidArgument("need at least one environment and one camera".into()));
    }
    if !cfg.face_res.is_power_of_two() {
        return Err(Error::InvalidArgument("face_res must be a power of two".into()));
    }
    for (id, _) in envs {
        if !valid_id(id) {
            return Err(Error::InvalidArgument(format!("invalid environment id {id:?}")));
        }
    }
    let io = |p: &Path, e| Error::io(p, e);
    for sub in ["images", "gbuffers", "envs"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| io(&d, e))?;
    }
    let mut base = BTreeMap::new();
    for (id, env) in envs {
        let prepared = prepare_env(env, cfg.face_res)?;
        prepared.save_faces(&out_dir.join("envs").join(id))?;
        if base.insert(id.clone(), prepared).is_some() {
            return Err(Error::InvalidArgument(format!("duplicate environment id {id}")));
        }
    }
    let mut conditions = Vec::new();
    for (id, _) in envs {
        for rot in cfg.rotations() {
            conditions.push(Lighting {
                env_id: id.clone(),
                rotation_deg: rot,
            });
        }
    }
    let mut lit: BTreeMap<String, Cubemap> = BTreeMap::new();
    for c in &conditions {
        lit.insert(lighting_key(&c.env_id, c.rotation_deg), base[&c.env_id].rotate_about_up(c.rotation_deg));
    }
    let per_view = if cfg.envs_per_view == 0 {
        conditions.len()
    } else {
        cfg.envs_per_view.min(conditions.len())
    };

    let mut rows = Vec::new();
    let mut manifest = String::new();
    for (v, cam) in cameras.iter().enumerate() {
        let mut cam = cam.clone();
        cam.width = cfg.width;
        cam.height = cfg.height;
        let gname = format!("gbuffers/view_{v:04}.gbuf");
        GBufferImage::from_gbuffer(&scene.trace_primary(&cam)?).write(&out_dir.join(&gname))?;
        for j in 0..per_view {
            let cond = &conditions[(v * per_view + j) % conditions.len()];
            let idx = rows.len();
            let env = &lit[&lighting_key(&cond.env_id, cond.rotation_deg)];
            let pt = PathTracerConfig {
                spp: cfg.spp,
                max_bounces: cfg.max_bounces,
                mode: Mode::IndirectOnly,
                seed: rng::mix(cfg.seed, idx as u64, 0),
                ..Default::default()
            };
            let img = pathtracer::render(scene, &cam, env, &pt)?;
            let iname = format!("images/img_{idx:05}.pfm");
            imageio::write_pfm(&out_dir.join(&iname), &img)?;
            let direct = if cfg.store_direct {
                let dcfg = PathTracerConfig {
                    mode: Mode::DirectOnly,
                    seed: rng::mix(cfg.seed, idx as u64, 1),
                    ..pt.clone()
                };
                let d = pathtracer::render(scene, &cam, env, &dcfg)?;
                let dname = format!("images/direct_{idx:05}.pfm");
                imageio::write_pfm(&out_dir.join(&dname), &d)?;
                Some(dname)
            } else {
                None
            };
            let row = ManifestRow {
                image: iname,
                gbuffer: gname.clone(),
                env_id: cond.env_id.clone(),
                rotation_deg: cond.rotation_deg,
                camera: cam.clone(),
                direct,
            };
            manifest.push_str(&serde_json::to_string(&row)?);
            manifest.push('\n');
            log::info!("rendered training image {}/{}", idx + 1, cameras.len() * per_view);
            rows.push(row);
        }
    }
    let mpath = out_dir.join("manifest.jsonl");
    std::fs::write(&mpath, manifest).map_err(|e| io(&mpath, e))?;
    let meta = DatasetMeta {
        version: DATASET_VERSION,
        scene_hash: scene.hash().to_string(),
        cubemap_convention: cubemap::CONVENTION.to_string(),
        env_ids: envs.iter().map(|(id, _)| id.clone()).collect(),
        config: cfg.clone(),
        images: rows.len(),
        views: cameras.len(),
    };
    let dpath = out_dir.join("dataset.json");
    std::fs::write(&dpath, serde_json::to_string_pretty(&meta)?).map_err(|e| io(&dpath, e))?;
    Ok(rows)
}

/// SHA-256 of the manifest file.
pub fn manifest_hash(dir: &Path) -> Result<String> {
    let p = dir.join("manifest.jsonl");
    let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let p = dir.join("manifest.jsonl");
    let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1))))
        .collect()
}

/// A dataset loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dir: PathBuf,
    pub meta: DatasetMeta,
    pub rows: Vec<ManifestRow>,
    pub images: Vec<Image>,
    pub directs: Vec<Option<Image>>,
    /// G-buffers keyed by file name.
    pub gbuffers: BTreeMap<String, GBufferImage>,
    pub envs: BTreeMap<String, Cubemap>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let mp = dir.join("dataset.json");
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?)?;
        if meta.version != DATASET_VERSION {
            return Err(Error::VersionMismatch {
                found: meta.version,
                expected: DATASET_VERSION,
            });
        }
        let rows = read_manifest(dir)?;
        let mut images = Vec::with_capacity(rows.len());
        let mut directs = Vec::with_capacity(rows.len());
        let mut gbuffers = BTreeMap::new();
        let mut envs = BTreeMap::new();
        for row in &rows {
            let img = imageio::read_pfm(&dir.join(&row.image))?;
            if !gbuffers.contains_key(&row.gbuffer) {
                gbuffers.insert(row.gbuffer.clone(), GBufferImage::read(&dir.join(&row.gbuffer))?);
            }
            let g = &gbuffers[&row.gbuffer];
            if g.width != img.width || g.height != img.height {
                return Err(Error::format("dataset", format!("{} and {} differ in size", row.image, row.gbuffer)));
            }
            images.push(img);
            directs.push(match &row.direct {
                Some(d) => Some(imageio::read_pfm(&dir.join(d))?),
                None => None,
            });
            if !envs.contains_key(&row.env_id) {
                if !valid_id(&row.env_id) {
                    return Err(Error::format("manifest", format!("invalid environment id {:?}", row.env_id)));
                }
                envs.insert(row.env_id.clone(), Cubemap::load_faces(&dir.join("envs").join(&row.env_id))?);
            }
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            meta,
            rows,
            images,
            directs,
            gbuffers,
            envs,
        })
    }

    pub fn gbuffer(&self, row: usize) -> &GBufferImage {
        &self.gbuffers[&self.rows[row].gbuffer]
    }

    /// Lighting of row `row` at the dataset resolution, rotation applied.
    pub fn lighting(&self, row: usize) -> Cubemap {
        let r = &self.rows[row];
        self.envs[&r.env_id].rotate_about_up(r.rotation_deg)
    }

    /// Distinct lighting conditions with the rows rendered under each, in
    /// first-appearance order.
    pub fn lighting_groups(&self) -> Vec<(Lighting, Vec<usize>)> {
        let mut groups: Vec<(Lighting, Vec<usize>)> = Vec::new();
        for (i, r) in self.rows.iter().enumerate() {
            match groups
                .iter_mut()
                .find(|(l, _)| l.env_id == r.env_id && l.rotation_deg == r.rotation_deg)
            {
                Some((_, v)) => v.push(i),
                None => groups.push((
                    Lighting {
                        env_id: r.env_id.clone(),
                        rotation_deg: r.rotation_deg,
                    },
                    vec![i],
                )),
            }
        }
        groups
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn tiny_cfg() -> DatasetConfig {
        DatasetConfig {
            width: 8,
            height: 8,
            spp: 2,
            face_res: 4,
            rotations_deg: vec![120.0],
            envs_per_view: 1,
            store_direct: true,
            ..Default::default()
        }
    }

    fn generate(dir: &Path) -> Vec<ManifestRow> {
        let scene = fixtures::fixture_scene();
        let envs = vec![("probe".to_string(), fixtures::indoor_probe(1, 8).unwrap())];
        let cams = fixtures::Trajectory::fixture(3).cameras(8, 8);
        generate_training_set(&scene, &envs, &cams, dir, &tiny_cfg()).unwrap()
    }

    #[test]
    fn gbuffer_round_trip_and_errors() {
        let scene = fixtures::fixture_scene();
        let mut cam = scene.camera_presets()[0].camera.clone();
        cam.width = 6;
        cam.height = 5;
        let g = GBufferImage::from_gbuffer(&scene.trace_primary(&cam).unwrap());
        let bytes = g.encode();
        assert_eq!(bytes.len(), 16 + 30 * 17 * 4);
        assert_eq!(GBufferImage::decode(&bytes).unwrap(), g);
        assert!(GBufferImage::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(GBufferImage::decode(&bad), Err(Error::VersionMismatch { .. })));
        assert!(g.hit_count() > 0);
    }

    #[test]
    fn generation_is_deterministic_and_loadable() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let rows = generate(a.path());
        generate(b.path());
        assert_eq!(rows.len(), 3);
        assert_eq!(manifest_hash(a.path()).unwrap(), manifest_hash(b.path()).unwrap());
        for r in &rows {
            let x = std::fs::read(a.path().join(&r.image)).unwrap();
            let y = std::fs::read(b.path().join(&r.image)).unwrap();
            assert_eq!(x, y);
        }
        // Cycling pairs cameras with distinct conditions.
        assert_eq!(rows[0].rotation_deg, 0.0);
        assert_eq!(rows[1].rotation_deg, 120.0);
        let ds = Dataset::load(a.path()).unwrap();
        assert_eq!(ds.images.len(), 3);
        assert_eq!(ds.lighting_groups().len(), 2);
        assert_eq!(ds.lighting(0).face_res(), 4);
        assert!(ds.directs.iter().all(|d| d.is_some()));
    }
}
