//! Validation and execution of render requests.

use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use prt_client::{CameraSpec, FieldError, Layer, RenderRequest, Selection, MAX_DIRECT_SPP, MAX_IMAGE_SIDE};
use prt_core::error::Error;
use prt_core::imageio;
use prt_core::render::{self, RenderSettings};
use prt_core::scene::Camera;
use prt_core::wavelet::SelectionMode;
use sha2::{Digest, Sha256};

use crate::error::ApiError;
use crate::registry::{CheckpointEntry, EnvEntry, Registry, SceneEntry};

/// A request whose ids resolved and whose parameters are in range.
pub struct Job {
    pub request: RenderRequest,
    pub scene: Arc<SceneEntry>,
    pub env: Arc<EnvEntry>,
    pub checkpoint: Arc<CheckpointEntry>,
    pub camera: Camera,
    /// Strong validator: a hash of everything the image depends on.
    pub etag: String,
}

pub struct Rendered {
    pub png: Vec<u8>,
    pub wavelets_used: usize,
}

fn resolve_camera(spec: &CameraSpec, scene: &SceneEntry) -> Result<Camera, Vec<FieldError>> {
    let mut errs = Vec::new();
    let mut err = |f: &str, m: String| {
        errs.push(FieldError {
            field: format!("camera.{f}"),
            message: m,
        })
    };
    if spec.width == 0 || spec.width > MAX_IMAGE_SIDE {
        err("width", format!("must be in 1..={MAX_IMAGE_SIDE}"));
    }
    if spec.height == 0 || spec.height > MAX_IMAGE_SIDE {
        err("height", format!("must be in 1..={MAX_IMAGE_SIDE}"));
    }
    let mut cam = match &spec.preset {
        Some(name) => match scene.scene.preset(name) {
            Some(c) => c.clone(),
            None => {
                err("preset", format!("scene has no camera preset {name:?}"));
                return Err(errs);
            }
        },
        None => {
            let missing: Vec<&str> = [
                ("position", spec.position.is_none()),
                ("look_at", spec.look_at.is_none()),
                ("fov_deg", spec.fov_deg.is_none()),
            ]
            .into_iter()
            .filter_map(|(n, m)| m.then_some(n))
            .collect();
            for m in &missing {
                err(m, "required when no preset is given".into());
            }
            if !missing.is_empty() {
                return Err(errs);
            }
            Camera {
                position: spec.position.unwrap(),
                look_at: spec.look_at.unwrap(),
                up: [0.0, 1.0, 0.0],
                fov_deg: spec.fov_deg.unwrap(),
                width: 1,
                height: 1,
            }
        }
    };
    if let Some(p) = spec.position {
        cam.position = p;
    }
    if let Some(p) = spec.look_at {
        cam.look_at = p;
    }
    if let Some(u) = spec.up {
        cam.up = u;
    }
    if let Some(f) = spec.fov_deg {
        cam.fov_deg = f;
    }
    cam.width = spec.width;
    cam.height = spec.height;
    if !errs.is_empty() {
        return Err(errs);
    }
    if let Err(e) = cam.validate() {
        errs.push(FieldError {
            field: "camera".into(),
            message: e.to_string(),
        });
        return Err(errs);
    }
    Ok(cam)
}

impl Job {
    pub fn validate(reg: &Registry, request: RenderRequest) -> Result<Job, ApiError> {
        let scene = reg
            .scenes
            .get(&request.scene)
            .cloned()
            .ok_or_else(|| ApiError::not_found("unknown_scene", "scene", &request.scene))?;
        let checkpoint = reg
            .checkpoints
            .get(&request.checkpoint)
            .cloned()
            .ok_or_else(|| ApiError::not_found("unknown_checkpoint", "checkpoint", &request.checkpoint))?;
        let env = reg
            .envs
            .get(&request.env)
            .cloned()
            .ok_or_else(|| ApiError::not_found("unknown_env", "environment", &request.env))?;
        let mut errs = Vec::new();
        if checkpoint.meta.scene_hash != scene.scene.hash() {
            errs.push(FieldError {
                field: "checkpoint".into(),
                message: format!("checkpoint was trained on a different scene than {:?}", request.scene),
            });
        }
        let total = checkpoint.meta.field.wavelet_count();
        if request.num_wavelets == 0 || request.num_wavelets > total {
            errs.push(FieldError {
                field: "num_wavelets".into(),
                message: format!("must be in 1..={total}"),
            });
        }
        if !request.rotation_deg.is_finite() {
            errs.push(FieldError {
                field: "rotation_deg".into(),
                message: "must be finite".into(),
            });
        }
        let needs_direct = request.include_direct || request.layer == Layer::Direct;
        if needs_direct && (request.direct_spp == 0 || request.direct_spp > MAX_DIRECT_SPP) {
            errs.push(FieldError {
                field: "direct_spp".into(),
                message: format!("must be in 1..={MAX_DIRECT_SPP}"),
            });
        }
        let camera = match resolve_camera(&request.camera, &scene) {
            Ok(c) => Some(c),
            Err(e) => {
                errs.extend(e);
                None
            }
        };
        if !errs.is_empty() {
            return Err(ApiError::invalid(errs));
        }
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&request).map_err(|e| ApiError::internal(e.to_string()))?);
        h.update(checkpoint.hash.as_bytes());
        h.update(scene.scene.hash().as_bytes());
        h.update(env.hash.as_bytes());
        let etag = format!("\"{}\"", hex::encode(h.finalize()));
        Ok(Job {
            request,
            scene,
            env,
            checkpoint,
            camera: camera.expect("validated"),
            etag,
        })
    }

    /// Pure function of the job; `cancel` aborts between pixel batches.
    pub fn execute(&self, cancel: &AtomicBool) -> Result<Rendered, ApiError> {
        let r = &self.request;
        let model = &self.checkpoint.model;
        let lighting = render::prepare_lighting(&self.env.cubemap, model.field.config().wavelet_face_res, r.rotation_deg)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        let settings = RenderSettings {
            num_wavelets: Some(r.num_wavelets),
            selection: match r.selection {
                Selection::AreaWeighted => SelectionMode::AreaWeighted,
                Selection::Magnitude => SelectionMode::Magnitude,
            },
            include_direct: r.include_direct || r.layer == Layer::Direct,
            direct_spp: r.direct_spp,
            seed: r.seed,
        };
        let out = render::render_full(model, &self.scene.scene, &self.camera, &lighting, &settings, Some(cancel)).map_err(|e| match e {
            Error::Cancelled => ApiError::new(axum::http::StatusCode::SERVICE_UNAVAILABLE, "cancelled", "render was cancelled"),
            e => ApiError::internal(e.to_string()),
        })?;
        let img = match r.layer {
            Layer::Full => &out.full,
            Layer::Indirect => &out.indirect,
            Layer::Direct => out.direct.as_ref().expect("direct layer requested"),
        };
        Ok(Rendered {
            png: imageio::encode_png(img).map_err(|e| ApiError::internal(e.to_string()))?,
            wavelets_used: out.wavelets_used,
        })
    }
}
