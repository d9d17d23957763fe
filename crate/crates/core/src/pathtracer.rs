//! Monte-Carlo reference renderer.
//!
//! Paths start at the camera and scatter off GGX surfaces; the only light
//! is the distant environment. Every contribution is tagged by the number
//! of scattering events on its path: one event is *direct* lighting, two or
//! more are *indirect*. A primary ray that escapes (zero events) shows the
//! environment itself and is counted with the direct layer when
//! `background` is enabled, so that `full = direct + indirect` holds
//! pixel-for-pixel in expectation.
//!
//! Environment hits are estimated with next-event estimation and BRDF
//! sampling combined by the balance heuristic. Each `(pixel, sample)` pair
//! draws from its own random stream, so results do not depend on the
//! number of worker threads.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brdf;
use crate::cubemap::Cubemap;
use crate::envmap_sampling::EnvSampler;
use crate::error::Result;
use crate::imageio::Image;
use crate::math::Vec3;
use crate::rng;
use crate::scene::{Camera, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Full,
    DirectOnly,
    IndirectOnly,
}

impl Mode {
    fn accepts(self, scatter_events: usize) -> bool {
        match self {
            Mode::Full => true,
            Mode::DirectOnly => scatter_events <= 1,
            Mode::IndirectOnly => scatter_events >= 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathTracerConfig {
    pub spp: usize,
    /// Maximum number of scattering events per path.
    pub max_bounces: usize,
    pub mode: Mode,
    pub seed: u64,
    /// Russian roulette starts after this many scattering events.
    pub rr_start: usize,
    /// Per-sample radiance ceiling; `None` leaves estimates unbiased.
    pub radiance_clamp: Option<f64>,
    /// Whether camera rays that escape show the environment.
    pub background: bool,
    /// Jitter primary rays inside the pixel instead of using its center.
    pub jitter: bool,
}

impl Default for PathTracerConfig {
    fn default() -> Self {
        PathTracerConfig {
            spp: 256,
            max_bounces: 8,
            mode: Mode::Full,
            seed: 0,
            rr_start: 3,
            radiance_clamp: None,
            background: true,
            jitter: false,
        }
    }
}

/// Mean image plus the per-pixel standard error of that mean.
#[derive(Debug, Clone)]
pub struct RenderStats {
    pub image: Image,
    pub std_error: Vec<[f64; 3]>,
}

fn balance(a: f64, b: f64) -> f64 {
    if a + b > 0.0 {
        a / (a + b)
    } else {
        0.0
    }
}

struct Tracer<'a> {
    scene: &'a Scene,
    env: &'a Cubemap,
    sampler: &'a EnvSampler,
    cfg: &'a PathTracerConfig,
}

impl Tracer<'_> {
    fn radiance(&self, org: Vec3, dir: Vec3, r: &mut rng::StreamRng) -> [f64; 3] {
        let mode = self.cfg.mode;
        let eps = self.scene.epsilon();
        let mut out = [0.0; 3];
        let add = |out: &mut [f64; 3], c: [f64; 3], w: f64| {
            for ch in 0..3 {
                out[ch] += c[ch] * w;
            }
        };
        let mut throughput = [1.0; 3];
        let mut org = org;
        let mut dir = dir;
        let mut tmin = 0.0;
        let mut prev_pdf = 0.0;
        let mut events = 0usize;
        loop {
            let Some(hit) = self.scene.intersect(org, dir, tmin, f64::INFINITY) else {
                let le = self.env.lookup(dir);
                if events == 0 {
                    if self.cfg.background && mode != Mode::IndirectOnly {
                        add(&mut out, le, 1.0);
                    }
                } else if mode.accepts(events) {
                    let w = balance(prev_pdf, self.sampler.pdf(dir));
                    add(&mut out, [0, 1, 2].map(|c| throughput[c] * le[c]), w);
                }
                break;
            };
            events += 1;
            if events > self.cfg.max_bounces {
                break;
            }
            let p = self.scene.brdf(hit.object);
            let n = hit.normal;
            let ng = hit.geometric_normal;
            let wo = -dir;
            let x = hit.position;

            // Light sampling; draw the numbers even when unused so streams
            // stay aligned across modes.
            let (u1, u2): (f64, f64) = (r.random(), r.random());
            if mode.accepts(events) {
                let (wi, pdf_l) = self.sampler.sample(u1, u2);
                let cos = n.dot(wi);
                if cos > 0.0 && ng.dot(wi) > 0.0 && pdf_l > 0.0 && !self.scene.occluded(x, wi, f64::INFINITY) {
                    let f = brdf::eval(p, n, wi, wo);
                    let w = balance(pdf_l, brdf::pdf(p, n, wi, wo));
                    let le = self.env.lookup(wi);
                    let k = cos * w / pdf_l;
                    add(&mut out, [0, 1, 2].map(|c| throughput[c] * f[c] * le[c]), k);
                }
            }
            if mode == Mode::DirectOnly && events >= 1 {
                // Only the BRDF-sampled escape of this bounce can still count.
                let u = [r.random(), r.random(), r.random()];
                if let Some(s) = brdf::sample(p, n, wo, u) {
                    if ng.dot(s.wi) > 0.0 && !self.scene.occluded(x, s.wi, f64::INFINITY) {
                        let cos = n.dot(s.wi);
                        let w = balance(s.pdf, self.sampler.pdf(s.wi));
                        let le = self.env.lookup(s.wi);
                        add(&mut out, [0, 1, 2].map(|c| throughput[c] * s.value[c] * le[c] * cos / s.pdf), w);
                    }
                }
                break;
            }

            let u = [r.random(), r.random(), r.random()];
            let Some(s) = brdf::sample(p, n, wo, u) else {
                break;
            };
            if ng.dot(s.wi) <= 0.0 {
                break;
            }
            let cos = n.dot(s.wi);
            for c in 0..3 {
                throughput[c] *= s.value[c] * cos / s.pdf;
            }
            if !throughput.iter().all(|t| t.is_finite()) {
                break;
            }
            prev_pdf = s.pdf;
            org = x;
            dir = s.wi;
            tmin = eps;
            if events >= self.cfg.rr_start {
                let q = throughput.iter().cloned().fold(0.0, f64::max).min(1.0);
                if q <= 0.0 || r.random::<f64>() >= q {
                    break;
                }
                throughput = throughput.map(|t| t / q);
            }
        }
        if let Some(limit) = self.cfg.radiance_clamp {
            out = out.map(|c| c.min(limit));
        }
        out
    }
}

pub fn render_with_stats(scene: &Scene, camera: &Camera, env: &Cubemap, cfg: &PathTracerConfig) -> Result<RenderStats> {
    let frame = camera.validate()?;
    let sampler = EnvSampler::new(env);
    let tracer = Tracer {
        scene,
        env,
        sampler: &sampler,
        cfg,
    };
    let (w, h) = (frame.width(), frame.height());
    let spp = cfg.spp.max(1);
    let results: Vec<([f64; 3], [f64; 3])> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (px, py) = (i % w, i / w);
            let mut sum = [0.0; 3];
            let mut sum2 = [0.0; 3];
            for s in 0..spp {
                let mut r = rng::stream(cfg.seed, i as u64, s as u64);
                let dir = if cfg.jitter {
                    let (jx, jy) = (r.random(), r.random());
                    frame.ray_dir_jittered(px, py, jx, jy)
                } else {
                    frame.ray_dir(px, py)
                };
                let l = tracer.radiance(frame.origin, dir, &mut r);
                for c in 0..3 {
                    sum[c] += l[c];
                    sum2[c] += l[c] * l[c];
                }
            }
            let k = spp as f64;
            let mean = sum.map(|x| x / k);
            let se = [0, 1, 2].map(|c| {
                if spp < 2 {
                    0.0
                } else {
                    ((sum2[c] - k * mean[c] * mean[c]).max(0.0) / (k - 1.0) / k).sqrt()
                }
            });
            (mean, se)
        })
        .collect();
    let pixels = results.iter().map(|(m, _)| m.map(|x| x as f32)).collect();
    Ok(RenderStats {
        image: Image::from_pixels(w, h, pixels)?,
        std_error: results.into_iter().map(|(_, se)| se).collect(),
    })
}

pub fn render(scene: &Scene, camera: &Camera, env: &Cubemap, cfg: &PathTracerConfig) -> Result<Image> {
    Ok(render_with_stats(scene, camera, env, cfg)?.image)
}
