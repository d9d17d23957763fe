//! Scene description, ray casting and G-buffer generation.

mod bvh;
mod camera;
mod obj;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use bvh::{intersect_brute_force, intersect_triangle, Aabb, Bvh, TriHit};
pub use camera::{Camera, CameraFrame};
pub use obj::{load_obj, parse_obj, Mesh};

use crate::brdf::BrdfParams;
use crate::error::{Error, Result};
use crate::math::Vec3;

/// Padding around the scene bounds, as a fraction of the largest extent on
/// each side, before mapping into the unit cube.
pub const NORMALIZATION_PADDING: f64 = 0.05;

#[derive(Debug, Clone)]
pub struct SceneObject {
    pub name: String,
    pub mesh: Mesh,
    pub brdf: BrdfParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPreset {
    pub name: String,
    #[serde(flatten)]
    pub camera: Camera,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectSpec {
    #[serde(default)]
    pub name: Option<String>,
    pub mesh: String,
    pub kd: [f64; 3],
    pub ks: [f64; 3],
    pub roughness: f64,
}

/// On-disk scene description; mesh paths are relative to the JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub camera_presets: Vec<CameraPreset>,
}

/// Affine map `x̂ = (x - center) * scale + 0.5` into the unit cube.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: Vec3,
    pub scale: f64,
}

impl Normalization {
    pub fn apply(&self, x: Vec3) -> Vec3 {
        (x - self.center) * self.scale + Vec3::splat(0.5)
    }

    pub fn invert(&self, xn: Vec3) -> Vec3 {
        (xn - Vec3::splat(0.5)) / self.scale + self.center
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    tris: Vec<[Vec3; 3]>,
    normals: Vec<[Vec3; 3]>,
    tri_object: Vec<u32>,
    brdfs: Vec<BrdfParams>,
    names: Vec<String>,
    bvh: Bvh,
    bounds: Aabb,
    normalization: Normalization,
    epsilon: f64,
    presets: Vec<CameraPreset>,
    hash: String,
}

/// Surface point found by a ray.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceHit {
    pub t: f64,
    pub position: Vec3,
    /// Shading normal facing the incoming ray.
    pub normal: Vec3,
    /// Geometric normal facing the incoming ray.
    pub geometric_normal: Vec3,
    pub object: u32,
    pub backface: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GBufferSample {
    pub hit: bool,
    pub backface: bool,
    pub position: Vec3,
    pub position_normalized: Vec3,
    pub normal: Vec3,
    pub wo: Vec3,
    pub wr: Vec3,
    pub brdf: Option<BrdfParams>,
}

#[derive(Debug, Clone)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<GBufferSample>,
}

impl Scene {
    pub fn from_objects(objects: Vec<SceneObject>, presets: Vec<CameraPreset>) -> Result<Scene> {
        if objects.is_empty() {
            return Err(Error::InvalidArgument("scene has no objects".into()));
        }
        let mut tris = Vec::new();
        let mut normals = Vec::new();
        let mut tri_object = Vec::new();
        let mut brdfs = Vec::new();
        let mut names = Vec::new();
        let mut hasher = Sha256::new();
        for (oi, obj) in objects.iter().enumerate() {
            // Re-validate: clamps roughness and rejects bad ranges.
            let brdf = BrdfParams::new(obj.brdf.kd, obj.brdf.ks, obj.brdf.roughness)?;
            for (p, n) in &obj.mesh.triangles {
                let pos = p.map(|i| obj.mesh.positions[i as usize]);
                let nor = n.map(|i| obj.mesh.normals[i as usize]);
                for v in pos.iter().chain(&nor) {
                    for x in v.to_array() {
                        hasher.update(x.to_le_bytes());
                    }
                }
                tris.push(pos);
                normals.push(nor);
                tri_object.push(oi as u32);
            }
            for x in brdf.kd.iter().chain(&brdf.ks).chain([&brdf.roughness]) {
                hasher.update(x.to_le_bytes());
            }
            brdfs.push(brdf);
            names.push(obj.name.clone());
        }
        if tris.is_empty() {
            return Err(Error::InvalidArgument("scene has no triangles".into()));
        }
        let bvh = Bvh::build(&tris);
        let bounds = bvh.bounds();
        let ext = bounds.extent();
        let largest = ext.max_component().max(1e-12);
        let normalization = Normalization {
            center: bounds.centroid(),
            scale: 1.0 / (largest * (1.0 + 2.0 * NORMALIZATION_PADDING)),
        };
        let epsilon = 1e-4 * ext.length().max(1e-12);
        let digest = hasher.finalize();
        Ok(Scene {
            tris,
            normals,
            tri_object,
            brdfs,
            names,
            bvh,
            bounds,
            normalization,
            epsilon,
            presets,
            hash: hex::encode(&digest[..16]),
        })
    }

    pub fn from_spec(spec: &SceneSpec, base_dir: &Path) -> Result<Scene> {
        if spec.objects.is_empty() {
            return Err(Error::InvalidArgument("scene has no objects".into()));
        }
        let mut objects = Vec::new();
        for (i, o) in spec.objects.iter().enumerate() {
            let path: PathBuf = base_dir.join(&o.mesh);
            let mesh = load_obj(&path)?;
            objects.push(SceneObject {
                name: o.name.clone().unwrap_or_else(|| format!("object{i}")),
                mesh,
                brdf: BrdfParams::new(o.kd, o.ks, o.roughness)?,
            });
        }
        Scene::from_objects(objects, spec.camera_presets.clone())
    }

    pub fn load(path: &Path) -> Result<Scene> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SceneSpec = serde_json::from_str(&text)?;
        Scene::from_spec(&spec, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn object_count(&self) -> usize {
        self.brdfs.len()
    }

    pub fn object_names(&self) -> &[String] {
        &self.names
    }

    pub fn triangle_count(&self) -> usize {
        self.tris.len()
    }

    pub fn triangles(&self) -> &[[Vec3; 3]] {
        &self.tris
    }

    pub fn brdf(&self, object: u32) -> &BrdfParams {
        &self.brdfs[object as usize]
    }

    pub fn bounds(&self) -> Aabb {
        self.bounds
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    /// Ray offset used for every secondary ray: `1e-4 × scene diagonal`.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn camera_presets(&self) -> &[CameraPreset] {
        &self.presets
    }

    pub fn preset(&self, name: &str) -> Option<&Camera> {
        self.presets.iter().find(|p| p.name == name).map(|p| &p.camera)
    }

    /// Content hash of geometry and materials.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn intersect(&self, org: Vec3, dir: Vec3, tmin: f64, tmax: f64) -> Option<SurfaceHit> {
        let h = self.bvh.intersect(&self.tris, org, dir, tmin, tmax)?;
        Some(self.surface(h, org, dir))
    }

    fn surface(&self, h: TriHit, org: Vec3, dir: Vec3) -> SurfaceHit {
        let tri = &self.tris[h.prim as usize];
        let ns = &self.normals[h.prim as usize];
        let position = org + dir * h.t;
        let ng = (tri[1] - tri[0]).cross(tri[2] - tri[0]).normalize();
        let wo = -dir;
        let backface = ng.dot(wo) < 0.0;
        let (normal, geometric_normal) = if backface {
            (-ng, -ng)
        } else {
            let interp = (ns[0] * h.bary[0] + ns[1] * h.bary[1] + ns[2] * h.bary[2]).try_normalize();
            match interp {
                Some(n) if n.dot(wo) > 0.0 => (n, ng),
                _ => (ng, ng),
            }
        };
        SurfaceHit {
            t: h.t,
            position,
            normal,
            geometric_normal,
            object: self.tri_object[h.prim as usize],
            backface,
        }
    }

    /// Visibility test along `d` for `epsilon < t < t_max`.
    pub fn occluded(&self, x: Vec3, d: Vec3, t_max: f64) -> bool {
        self.bvh.occluded(&self.tris, x, d, self.epsilon, t_max)
    }

    pub fn gbuffer_sample(&self, org: Vec3, dir: Vec3) -> GBufferSample {
        match self.intersect(org, dir, 0.0, f64::INFINITY) {
            None => GBufferSample {
                wo: -dir,
                ..Default::default()
            },
            Some(h) => {
                let wo = -dir;
                GBufferSample {
                    hit: true,
                    backface: h.backface,
                    position: h.position,
                    position_normalized: self.normalization.apply(h.position),
                    normal: h.normal,
                    wo,
                    wr: wo.reflect(h.normal).normalize(),
                    brdf: Some(*self.brdf(h.object)),
                }
            }
        }
    }

    /// One ray per pixel through pixel centers.
    pub fn trace_primary(&self, camera: &Camera) -> Result<GBuffer> {
        let frame = camera.validate()?;
        let (w, h) = (frame.width(), frame.height());
        let samples = (0..w * h)
            .into_par_iter()
            .map(|i| self.gbuffer_sample(frame.origin, frame.ray_dir(i % w, i / w)))
            .collect();
        Ok(GBuffer {
            width: w,
            height: h,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn fixture_loads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = fixtures::write_simple_scene(dir.path()).unwrap();
        let scene = Scene::load(&path).unwrap();
        assert_eq!(scene.object_count(), 2);
    }

    #[test]
    fn zero_roughness_is_clamped_and_empty_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write_simple_scene(dir.path()).unwrap();
        let spec = SceneSpec {
            objects: vec![ObjectSpec {
                name: None,
                mesh: "ground.obj".into(),
                kd: [0.5; 3],
                ks: [0.1; 3],
                roughness: 0.0,
            }],
            camera_presets: vec![],
        };
        let s = Scene::from_spec(&spec, dir.path()).unwrap();
        assert_eq!(s.brdf(0).roughness, crate::brdf::ROUGHNESS_MIN);
        let empty = SceneSpec {
            objects: vec![],
            camera_presets: vec![],
        };
        assert!(Scene::from_spec(&empty, dir.path()).is_err());
        let missing = SceneSpec {
            objects: vec![ObjectSpec {
                mesh: "nope.obj".into(),
                ..spec.objects[0].clone()
            }],
            camera_presets: vec![],
        };
        assert!(Scene::from_spec(&missing, dir.path()).is_err());
        let bad = SceneSpec {
            objects: vec![ObjectSpec {
                kd: [0.8; 3],
                ks: [0.5; 3],
                ..spec.objects[0].clone()
            }],
            camera_presets: vec![],
        };
        assert!(Scene::from_spec(&bad, dir.path()).is_err());
    }

    #[test]
    fn camera_inside_closed_box_hits_everywhere() {
        let scene = fixtures::closed_box_scene();
        let cam = Camera {
            position: [0.0, 0.0, 0.0],
            look_at: [0.3, 0.2, 1.0],
            up: [0.0, 1.0, 0.0],
            fov_deg: 120.0,
            width: 16,
            height: 16,
        };
        let g = scene.trace_primary(&cam).unwrap();
        assert!(g.samples.iter().all(|s| s.hit));
    }

    #[test]
    fn camera_facing_void_misses_everywhere() {
        let scene = fixtures::simple_scene();
        let cam = Camera {
            position: [0.0, 3.0, 0.0],
            look_at: [0.0, 5.0, 0.1],
            up: [0.0, 1.0, 0.0],
            fov_deg: 40.0,
            width: 8,
            height: 8,
        };
        let g = scene.trace_primary(&cam).unwrap();
        assert!(g.samples.iter().all(|s| !s.hit));
    }

    #[test]
    fn reflection_preserves_normal_component_and_hits_are_normalized() {
        let scene = fixtures::fixture_scene();
        let cam = &scene.camera_presets()[0].camera;
        let g = scene.trace_primary(cam).unwrap();
        let mut hits = 0;
        for s in g.samples.iter().filter(|s| s.hit) {
            hits += 1;
            assert!((s.wr.dot(s.normal) - s.wo.dot(s.normal)).abs() < 1e-6);
            assert!((s.wr.length() - 1.0).abs() < 1e-9);
            let p = s.position_normalized;
            assert!((0.0..=1.0).contains(&p.x) && (0.0..=1.0).contains(&p.y) && (0.0..=1.0).contains(&p.z));
            if !s.backface {
                assert!(s.normal.dot(s.wo) > 0.0);
            }
        }
        assert!(hits > 0);
    }

    #[test]
    fn occlusion_queries() {
        let scene = fixtures::simple_scene();
        let up = Vec3::new(0.0, 1.0, 0.0);
        // Ground corner far from the sphere: nothing above.
        assert!(!scene.occluded(Vec3::new(1.9, 0.0, 1.9), up, f64::INFINITY));
        // Ground point right under the sphere.
        assert!(scene.occluded(Vec3::new(0.0, 0.0, 0.0), up, f64::INFINITY));
        // A surface closer than epsilon is ignored.
        let eps = scene.epsilon();
        let below = Vec3::new(1.5, -eps * 0.5, 1.5);
        assert!(!scene.occluded(below, up, f64::INFINITY));
        assert!(!scene.occluded(Vec3::new(0.0, 0.0, 0.0), up, 0.1));
    }

    #[test]
    fn bvh_agrees_with_linear_scan_on_fixture() {
        use rand::{Rng, SeedableRng};
        let scene = fixtures::fixture_scene();
        assert!(scene.triangle_count() <= 2000);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let org = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-1.0..3.0), rng.random_range(-3.0..3.0));
            let dir = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let a = scene.bvh.intersect(&scene.tris, org, dir, 0.0, f64::INFINITY);
            let b = intersect_brute_force(&scene.tris, org, dir, 0.0, f64::INFINITY);
            assert_eq!(a.is_some(), b.is_some());
            if let (Some(a), Some(b)) = (a, b) {
                assert!((a.t - b.t).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn hash_is_stable_and_content_sensitive() {
        let a = fixtures::simple_scene();
        let b = fixtures::simple_scene();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), fixtures::fixture_scene().hash());
    }
}
