//! Built-in scenes, camera trajectories and procedural indoor light probes
//! used by tests, examples and the `fixture` CLI command.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brdf::BrdfParams;
use crate::cubemap::{self, Cubemap};
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::scene::Aabb;
use crate::scene::{Camera, CameraPreset, Mesh, ObjectSpec, Scene, SceneObject, SceneSpec};

pub fn quad(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> Mesh {
    let mut m = Mesh::default();
    m.push_flat(a, b, c);
    m.push_flat(a, c, d);
    m
}

/// UV sphere with smooth vertex normals.
pub fn uv_sphere(center: Vec3, radius: f64, segments: usize, rings: usize) -> Mesh {
    let mut m = Mesh::default();
    for r in 0..=rings {
        let theta = PI * r as f64 / rings as f64;
        for s in 0..=segments {
            let phi = 2.0 * PI * s as f64 / segments as f64;
            let n = Vec3::new(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin());
            m.positions.push(center + n * radius);
            m.normals.push(n);
        }
    }
    let row = segments as u32 + 1;
    for r in 0..rings as u32 {
        for s in 0..segments as u32 {
            let a = r * row + s;
            let b = a + row;
            // Counter-clockwise seen from outside.
            if r != 0 {
                m.triangles.push(([a, a + 1, b], [a, a + 1, b]));
            }
            if r + 1 != rings as u32 {
                m.triangles.push(([a + 1, b + 1, b], [a + 1, b + 1, b]));
            }
        }
    }
    m
}

fn object(name: &str, mesh: Mesh, kd: [f64; 3], ks: [f64; 3], roughness: f64) -> SceneObject {
    SceneObject {
        name: name.into(),
        mesh,
        brdf: BrdfParams::new(kd, ks, roughness).expect("fixture brdf"),
    }
}

fn v(x: f64, y: f64, z: f64) -> Vec3 {
    Vec3::new(x, y, z)
}

fn ground(half: f64) -> Mesh {
    quad(v(-half, 0.0, -half), v(-half, 0.0, half), v(half, 0.0, half), v(half, 0.0, -half))
}

fn simple_objects() -> Vec<SceneObject> {
    vec![
        object("ground", ground(2.0), [0.6; 3], [0.0; 3], 1.0),
        object("sphere", uv_sphere(v(0.0, 0.6, 0.0), 0.5, 24, 12), [0.5, 0.4, 0.3], [0.2; 3], 0.3),
    ]
}

/// Ground quad plus one sphere.
pub fn simple_scene() -> Scene {
    Scene::from_objects(simple_objects(), vec![]).unwrap()
}

fn write_scene(dir: &Path, objects: &[SceneObject], presets: Vec<CameraPreset>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut specs = Vec::new();
    for o in objects {
        let file = format!("{}.obj", o.name);
        let path = dir.join(&file);
        std::fs::write(&path, o.mesh.to_obj()).map_err(|e| Error::io(&path, e))?;
        specs.push(ObjectSpec {
            name: Some(o.name.clone()),
            mesh: file,
            kd: o.brdf.kd,
            ks: o.brdf.ks,
            roughness: o.brdf.roughness,
        });
    }
    let spec = SceneSpec {
        objects: specs,
        camera_presets: presets,
    };
    let path = dir.join("scene.json");
    std::fs::write(&path, serde_json::to_string_pretty(&spec)?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn write_simple_scene(dir: &Path) -> Result<PathBuf> {
    write_scene(dir, &simple_objects(), vec![])
}

/// Inward-facing cube `[-1, 1]³`.
pub fn closed_box_scene() -> Scene {
    let mut m = Mesh::default();
    let c = |x: f64, y: f64, z: f64| v(x, y, z);
    let faces = [
        [c(-1., -1., -1.), c(1., -1., -1.), c(1., -1., 1.), c(-1., -1., 1.)],
        [c(-1., 1., -1.), c(-1., 1., 1.), c(1., 1., 1.), c(1., 1., -1.)],
        [c(-1., -1., -1.), c(-1., 1., -1.), c(1., 1., -1.), c(1., -1., -1.)],
        [c(-1., -1., 1.), c(1., -1., 1.), c(1., 1., 1.), c(-1., 1., 1.)],
        [c(-1., -1., -1.), c(-1., -1., 1.), c(-1., 1., 1.), c(-1., 1., -1.)],
        [c(1., -1., -1.), c(1., 1., -1.), c(1., 1., 1.), c(1., -1., 1.)],
    ];
    for [a, b, cc, d] in faces {
        m.push_flat(a, b, cc);
        m.push_flat(a, cc, d);
    }
    Scene::from_objects(vec![object("box", m, [0.5; 3], [0.0; 3], 1.0)], vec![]).unwrap()
}

pub const FIXTURE_HALF: f64 = 1.5;

fn fixture_objects() -> Vec<SceneObject> {
    let h = FIXTURE_HALF;
    let wall = 1.2;
    vec![
        object("ground", ground(h), [0.6, 0.6, 0.55], [0.0; 3], 1.0),
        object(
            "back_wall",
            quad(v(-h, 0.0, -h), v(h, 0.0, -h), v(h, wall, -h), v(-h, wall, -h)),
            [0.5; 3],
            [0.0; 3],
            1.0,
        ),
        object(
            "left_wall",
            quad(v(-h, 0.0, -h), v(-h, wall, -h), v(-h, wall, h), v(-h, 0.0, h)),
            [0.6, 0.12, 0.1],
            [0.0; 3],
            1.0,
        ),
        object(
            "right_wall",
            quad(v(h, 0.0, -h), v(h, 0.0, h), v(h, wall, h), v(h, wall, -h)),
            [0.1, 0.55, 0.15],
            [0.0; 3],
            1.0,
        ),
        object(
            "sphere",
            uv_sphere(v(0.0, 0.55, 0.0), 0.55, 32, 16),
            [0.2, 0.15, 0.1],
            [0.6; 3],
            0.2,
        ),
    ]
}

pub fn fixture_presets(width: usize, height: usize) -> Vec<CameraPreset> {
    let target = v(0.0, 0.45, 0.0);
    vec![
        CameraPreset {
            name: "front".into(),
            camera: Camera::orbit(target, 0.0, 25.0, 4.2, 45.0, width, height),
        },
        CameraPreset {
            name: "left".into(),
            camera: Camera::orbit(target, -40.0, 35.0, 4.2, 45.0, width, height),
        },
        CameraPreset {
            name: "top".into(),
            camera: Camera::orbit(target, 15.0, 70.0, 4.2, 45.0, width, height),
        },
    ]
}

/// Glossy sphere (roughness 0.2) on a diffuse ground inside an open box
/// with coloured side walls.
pub fn fixture_scene() -> Scene {
    Scene::from_objects(fixture_objects(), fixture_presets(64, 64)).unwrap()
}

pub fn write_fixture_scene(dir: &Path) -> Result<PathBuf> {
    write_scene(dir, &fixture_objects(), fixture_presets(64, 64))
}

/// Cameras spread along a spiral on a sphere around `target`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub target: [f64; 3],
    pub distance: f64,
    pub azimuth_deg: [f64; 2],
    pub elevation_deg: [f64; 2],
    pub turns: f64,
    pub count: usize,
    pub fov_deg: f64,
    /// Phase offset in `[0, 1)` along the spiral; distinct offsets give
    /// disjoint camera sets.
    #[serde(default)]
    pub phase: f64,
}

impl Trajectory {
    pub fn fixture(count: usize) -> Trajectory {
        Trajectory {
            target: [0.0, 0.45, 0.0],
            distance: 4.2,
            azimuth_deg: [-60.0, 60.0],
            elevation_deg: [15.0, 65.0],
            turns: 3.0,
            count,
            fov_deg: 45.0,
            phase: 0.0,
        }
    }

    /// Orbit that keeps a bounding box in view.
    pub fn framing(bounds: &Aabb, count: usize) -> Trajectory {
        let fov_deg: f64 = 45.0;
        let radius = 0.5 * bounds.extent().length();
        Trajectory {
            target: bounds.centroid().to_array(),
            distance: 1.05 * radius / (0.5 * fov_deg.to_radians()).sin(),
            azimuth_deg: [-60.0, 60.0],
            elevation_deg: [15.0, 65.0],
            turns: 3.0,
            count,
            fov_deg,
            phase: 0.0,
        }
    }

    pub fn cameras(&self, width: usize, height: usize) -> Vec<Camera> {
        (0..self.count)
            .map(|i| {
                let t = (i as f64 + 0.5 + self.phase) / self.count as f64;
                let sweep = (t * self.turns).fract();
                // Ping-pong so consecutive turns stay continuous.
                let tri = if (t * self.turns) as usize % 2 == 0 { sweep } else { 1.0 - sweep };
                let az = self.azimuth_deg[0] + (self.azimuth_deg[1] - self.azimuth_deg[0]) * tri;
                let el = self.elevation_deg[0] + (self.elevation_deg[1] - self.elevation_deg[0]) * t.min(1.0);
                Camera::orbit(Vec3::from_array(self.target), az, el, self.distance, self.fov_deg, width, height)
            })
            .collect()
    }
}

/// Procedural interior light probe: the view from inside a furnished room
/// with diffuse walls, daylight windows and small ceiling lamps. Edges are
/// antialiased by supersampling each texel.
pub fn indoor_probe(seed: u64, face_res: usize) -> Result<Cubemap> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9) ^ 0xA5A5);
    let half = v(rng.random_range(2.0..4.0), rng.random_range(1.3..1.7), rng.random_range(2.0..4.0));
    // Viewer at 1.2m height in a room whose floor is at y = -eye.
    let eye = rng.random_range(1.0..1.4);
    let floor_y = -eye;
    let ceil_y = floor_y + 2.0 * half.y;
    let tint = |rng: &mut ChaCha8Rng, base: f64| {
        [base * rng.random_range(0.8..1.2), base * rng.random_range(0.8..1.1), base * rng.random_range(0.6..1.0)]
    };
    let base = rng.random_range(0.25..0.6);
    let wall_col = tint(&mut rng, base);
    let base = rng.random_range(0.1..0.3);
    let floor_col = tint(&mut rng, base);
    let base = rng.random_range(0.4..0.8);
    let ceil_col = tint(&mut rng, base);

    struct Window {
        axis: usize,
        sign: f64,
        c0: f64,
        c1: f64,
        y0: f64,
        y1: f64,
        radiance: [f64; 3],
    }
    let n_windows = rng.random_range(1..=2);
    let mut windows = Vec::new();
    for _ in 0..n_windows {
        let axis = if rng.random::<bool>() { 0 } else { 2 };
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let span = if axis == 0 { half.z } else { half.x };
        let w = rng.random_range(0.4..1.0);
        let c = rng.random_range(-span + w + 0.1..span - w - 0.1);
        let y0 = floor_y + rng.random_range(0.8..1.1);
        let sky = rng.random_range(6.0..20.0);
        windows.push(Window {
            axis,
            sign,
            c0: c - w,
            c1: c + w,
            y0,
            y1: y0 + rng.random_range(0.8..1.3),
            radiance: [sky * 0.85, sky * 0.95, sky * 1.1],
        });
    }
    let n_lamps = rng.random_range(1..=3);
    let lamps: Vec<(f64, f64, f64, f64)> = (0..n_lamps)
        .map(|_| {
            (
                rng.random_range(-half.x * 0.7..half.x * 0.7),
                rng.random_range(-half.z * 0.7..half.z * 0.7),
                rng.random_range(0.08..0.18),
                rng.random_range(60.0..250.0),
            )
        })
        .collect();
    let sun_patch = rng.random_range(1.5..4.0);

    let radiance = |d: Vec3| -> [f64; 3] {
        // Distance to each slab of the room box along d.
        let tx = if d.x != 0.0 { half.x / d.x.abs() } else { f64::INFINITY };
        let tz = if d.z != 0.0 { half.z / d.z.abs() } else { f64::INFINITY };
        let ty = if d.y > 0.0 {
            ceil_y / d.y
        } else if d.y < 0.0 {
            floor_y / d.y
        } else {
            f64::INFINITY
        };
        let t = tx.min(ty).min(tz);
        let p = d * t;
        if t == ty {
            if d.y > 0.0 {
                for &(lx, lz, r, power) in &lamps {
                    let dd = (p.x - lx).powi(2) + (p.z - lz).powi(2);
                    if dd < r * r {
                        return [power, power * 0.9, power * 0.75];
                    }
                }
                return ceil_col;
            }
            // Sunlit rectangle on the floor in front of the first window.
            let w = &windows[0];
            let (along, across) = if w.axis == 0 { (p.z, p.x * w.sign) } else { (p.x, p.z * w.sign) };
            let lim = if w.axis == 0 { half.x } else { half.z };
            if along > w.c0 && along < w.c1 && across > lim - 1.2 {
                return floor_col.map(|c| c * sun_patch * 4.0);
            }
            return floor_col;
        }
        let (axis, coord) = if t == tx { (0, p.z) } else { (2, p.x) };
        let sign = if axis == 0 { d.x.signum() } else { d.z.signum() };
        for w in &windows {
            if w.axis == axis && w.sign == sign && coord > w.c0 && coord < w.c1 && p.y > w.y0 && p.y < w.y1 {
                // Brighter sky towards the top of the window.
                let k = 0.8 + 0.4 * (p.y - w.y0) / (w.y1 - w.y0);
                return w.radiance.map(|c| c * k);
            }
        }
        // Gentle falloff away from the ceiling lamps.
        let k = 0.7 + 0.3 * ((p.y - floor_y) / (ceil_y - floor_y));
        wall_col.map(|c| c * k)
    };

    let ss = 4;
    let n = face_res;
    let mut texels = Vec::with_capacity(6 * n * n);
    for face in 0..6 {
        for tv in 0..n {
            for tu in 0..n {
                let mut acc = [0.0; 3];
                for sy in 0..ss {
                    for sx in 0..ss {
                        let s = 2.0 * (tu as f64 + (sx as f64 + 0.5) / ss as f64) / n as f64 - 1.0;
                        let t = 2.0 * (tv as f64 + (sy as f64 + 0.5) / ss as f64) / n as f64 - 1.0;
                        let c = radiance(cubemap::face_st_to_dir(face, s, t).normalize());
                        for ch in 0..3 {
                            acc[ch] += c[ch];
                        }
                    }
                }
                texels.push(acc.map(|x| x / (ss * ss) as f64));
            }
        }
    }
    Cubemap::from_texels(n, texels)
}

/// Asset tree used by the service: `scenes/fixture/scene.json` with its
/// meshes and a `trajectory.json` of training cameras, and `envs/probe<i>/` holding the faces of `count` probes.
pub fn write_assets(dir: &Path, count: usize, face_res: usize) -> Result<()> {
    let scene_dir = dir.join("scenes").join("fixture");
    write_fixture_scene(&scene_dir)?;
    let tp = scene_dir.join("trajectory.json");
    std::fs::write(&tp, serde_json::to_string_pretty(&Trajectory::fixture(48))?).map_err(|e| Error::io(&tp, e))?;
    for i in 0..count {
        indoor_probe(i as u64 + 1, face_res)?.save_faces(&dir.join("envs").join(format!("probe{i}")))?;
    }
    std::fs::create_dir_all(dir.join("checkpoints")).map_err(|e| Error::io(dir, e))
}
