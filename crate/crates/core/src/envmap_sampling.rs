//! Importance sampling of cubemap lighting.
//!
//! Texels are chosen with probability proportional to luminance × solid
//! angle through a marginal CDF over rows (all faces stacked) and a
//! conditional CDF within each row. The direction is then drawn uniformly
//! in face-plane coordinates inside the texel, which gives the density
//! `P(texel) · (1 + s² + t²)^{3/2} / Δ²` per steradian.

use std::f64::consts::PI;

use crate::cubemap::{self, dir_to_face_st, Cubemap};
use crate::math::{luminance, Vec3};

#[derive(Debug, Clone)]
pub struct EnvSampler {
    face_res: usize,
    /// Per-texel probability.
    prob: Vec<f64>,
    /// Marginal CDF over the `6N` rows, length `6N + 1`.
    row_cdf: Vec<f64>,
    /// Conditional CDFs, `N + 1` entries per row.
    col_cdf: Vec<f64>,
    uniform: bool,
}

fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    // First bucket whose upper edge exceeds u, skipping empty buckets.
    let n = cdf.len() - 1;
    let mut i = cdf[1..].partition_point(|&c| c <= u).min(n - 1);
    while i > 0 && cdf[i + 1] == cdf[i] {
        i -= 1;
    }
    while cdf[i + 1] == cdf[i] && i + 1 < n {
        i += 1;
    }
    i
}

impl EnvSampler {
    pub fn new(env: &Cubemap) -> EnvSampler {
        let n = env.face_res();
        let rows = 6 * n;
        let mut weights = vec![0.0; rows * n];
        for face in 0..6 {
            for v in 0..n {
                for u in 0..n {
                    let w = luminance(env.get(face, u, v)) * cubemap::texel_solid_angle_unchecked(u, v, n);
                    weights[(face * n + v) * n + u] = w;
                }
            }
        }
        let total: f64 = weights.iter().sum();
        let uniform = !(total > 0.0) || !total.is_finite();
        if uniform {
            return EnvSampler {
                face_res: n,
                prob: vec![0.0; rows * n],
                row_cdf: vec![0.0; rows + 1],
                col_cdf: vec![0.0; rows * (n + 1)],
                uniform,
            };
        }
        let prob: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut row_cdf = Vec::with_capacity(rows + 1);
        let mut col_cdf = Vec::with_capacity(rows * (n + 1));
        let mut acc = 0.0;
        row_cdf.push(0.0);
        for r in 0..rows {
            let row = &prob[r * n..(r + 1) * n];
            let row_sum: f64 = row.iter().sum();
            acc += row_sum;
            row_cdf.push(acc);
            let mut c = 0.0;
            col_cdf.push(0.0);
            for &p in row {
                c += if row_sum > 0.0 { p / row_sum } else { 1.0 / n as f64 };
                col_cdf.push(c);
            }
            let last = col_cdf.len() - 1;
            col_cdf[last] = 1.0;
        }
        let last = row_cdf.len() - 1;
        row_cdf[last] = 1.0;
        EnvSampler {
            face_res: n,
            prob,
            row_cdf,
            col_cdf,
            uniform,
        }
    }

    pub fn is_uniform_fallback(&self) -> bool {
        self.uniform
    }

    pub fn texel_probability(&self, face: usize, u: usize, v: usize) -> f64 {
        if self.uniform {
            let n = self.face_res;
            return cubemap::texel_solid_angle_unchecked(u, v, n) / (4.0 * PI);
        }
        self.prob[(face * self.face_res + v) * self.face_res + u]
    }

    /// Draws a direction from two uniforms; returns it with its density.
    pub fn sample(&self, u1: f64, u2: f64) -> (Vec3, f64) {
        if self.uniform {
            let z = 1.0 - 2.0 * u1;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = 2.0 * PI * u2;
            return (Vec3::new(r * phi.cos(), r * phi.sin(), z), 1.0 / (4.0 * PI));
        }
        let n = self.face_res;
        let row = sample_cdf(&self.row_cdf, u1);
        let (r0, r1) = (self.row_cdf[row], self.row_cdf[row + 1]);
        // Reuse the leftover of u1 for the sub-texel row offset.
        let fv = ((u1 - r0) / (r1 - r0)).clamp(0.0, 1.0 - 1e-12);
        let ccdf = &self.col_cdf[row * (n + 1)..(row + 1) * (n + 1)];
        let col = sample_cdf(ccdf, u2);
        let (c0, c1) = (ccdf[col], ccdf[col + 1]);
        let fu = ((u2 - c0) / (c1 - c0)).clamp(0.0, 1.0 - 1e-12);
        let face = row / n;
        let v = row % n;
        let step = 2.0 / n as f64;
        let s = -1.0 + (col as f64 + fu) * step;
        let t = -1.0 + (v as f64 + fv) * step;
        let d = cubemap::face_st_to_dir(face, s, t).normalize();
        let pdf = self.density(face, col, v, s, t);
        (d, pdf)
    }

    fn density(&self, face: usize, u: usize, v: usize, s: f64, t: f64) -> f64 {
        let step = 2.0 / self.face_res as f64;
        let p = self.prob[(face * self.face_res + v) * self.face_res + u];
        p * (1.0 + s * s + t * t).powf(1.5) / (step * step)
    }

    /// Density in sr⁻¹ of drawing direction `d`.
    pub fn pdf(&self, d: Vec3) -> f64 {
        if self.uniform {
            return 1.0 / (4.0 * PI);
        }
        let n = self.face_res;
        let (face, s, t) = dir_to_face_st(d);
        let u = (((s + 1.0) * 0.5 * n as f64) as usize).min(n - 1);
        let v = (((t + 1.0) * 0.5 * n as f64) as usize).min(n - 1);
        self.density(face, u, v, s, t)
    }
}
