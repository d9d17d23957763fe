//! JSON schema shared by the service and its clients.

use serde::{Deserialize, Serialize};

pub const HEADER_RENDER_MS: &str = "x-render-ms";
pub const HEADER_WAVELETS_USED: &str = "x-wavelets-used";

pub const MAX_IMAGE_SIDE: usize = 1024;
pub const MAX_DIRECT_SPP: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub id: String,
    pub hash: String,
    pub triangles: usize,
    pub objects: Vec<String>,
    pub camera_presets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvInfo {
    pub id: String,
    pub face_res: usize,
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointInfo {
    pub id: String,
    pub hash: String,
    pub scene_hash: String,
    pub steps_completed: usize,
    pub wavelet_face_res: usize,
    pub max_wavelets: usize,
    pub parameters: usize,
}

/// Which wavelets the renderer keeps.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Magnitude times the solid angle of the support.
    #[default]
    AreaWeighted,
    Magnitude,
}

/// Image layer returned by a render.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    /// Indirect plus direct when `include_direct` is set, else indirect.
    #[default]
    Full,
    Indirect,
    Direct,
}

/// A camera preset of the scene, or explicit pinhole parameters. Angles are
/// in degrees; positions in scene units.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub look_at: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub up: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fov_deg: Option<f64>,
    pub width: usize,
    pub height: usize,
}

impl CameraSpec {
    pub fn preset(name: &str, width: usize, height: usize) -> CameraSpec {
        CameraSpec {
            preset: Some(name.to_string()),
            width,
            height,
            ..Default::default()
        }
    }
}

fn default_wavelets() -> usize {
    64
}

fn default_direct_spp() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderRequest {
    pub scene: String,
    pub checkpoint: String,
    pub env: String,
    #[serde(default)]
    pub rotation_deg: f64,
    pub camera: CameraSpec,
    #[serde(default = "default_wavelets")]
    pub num_wavelets: usize,
    #[serde(default)]
    pub selection: Selection,
    #[serde(default)]
    pub include_direct: bool,
    #[serde(default = "default_direct_spp")]
    pub direct_spp: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub layer: Layer,
}

impl RenderRequest {
    pub fn new(scene: &str, checkpoint: &str, env: &str, camera: CameraSpec) -> RenderRequest {
        RenderRequest {
            scene: scene.into(),
            checkpoint: checkpoint.into(),
            env: env.into(),
            rotation_deg: 0.0,
            camera,
            num_wavelets: default_wavelets(),
            selection: Selection::default(),
            include_direct: false,
            direct_spp: default_direct_spp(),
            seed: 0,
            layer: Layer::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_defaults_fill_in() {
        let r: RenderRequest = serde_json::from_str(
            r#"{"scene":"s","checkpoint":"c","env":"e","camera":{"preset":"front","width":16,"height":16}}"#,
        )
        .unwrap();
        assert_eq!(r, RenderRequest::new("s", "c", "e", CameraSpec::preset("front", 16, 16)));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = r#"{"scene":"s","checkpoint":"c","env":"e","camera":{"width":1,"height":1},"wavelets":3}"#;
        assert!(serde_json::from_str::<RenderRequest>(bad).is_err());
    }

    #[test]
    fn request_round_trips() {
        let mut r = RenderRequest::new("s", "c", "e", CameraSpec::preset("top", 8, 4));
        r.selection = Selection::Magnitude;
        r.layer = Layer::Indirect;
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"magnitude\"") && json.contains("\"indirect\""));
        assert_eq!(serde_json::from_str::<RenderRequest>(&json).unwrap(), r);
    }
}
