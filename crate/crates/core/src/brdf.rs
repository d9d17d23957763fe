//! Diffuse + GGX microfacet reflectance.
//!
//! Conventions (shared by the oracle and every consumer):
//! * microfacet width `alpha = roughness²`;
//! * Smith height-correlated masking-shadowing;
//! * Schlick Fresnel with `F0 = k_s` and grazing value
//!   `F90 = min(1, 50·lum(k_s))`, so `k_s = 0` switches the lobe off;
//! * the Lambertian term is weighted by `(1 - F(n·ωi))(1 - F(n·ωo))`,
//!   which keeps directional albedo at or below one.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{luminance, Vec3};

pub const ROUGHNESS_MIN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrdfParams {
    pub kd: [f64; 3],
    pub ks: [f64; 3],
    pub roughness: f64,
}

impl BrdfParams {
    /// Validates ranges. Roughness below [`ROUGHNESS_MIN`] is clamped with a
    /// warning; anything else out of range is an error.
    pub fn new(kd: [f64; 3], ks: [f64; 3], roughness: f64) -> Result<Self> {
        let unit = |v: &[f64; 3]| v.iter().all(|&x| (0.0..=1.0).contains(&x));
        if !unit(&kd) || !unit(&ks) {
            return Err(Error::InvalidArgument(format!(
                "kd {kd:?} and ks {ks:?} must lie in [0, 1]"
            )));
        }
        if (0..3).any(|c| kd[c] + ks[c] > 1.0 + 1e-9) {
            return Err(Error::InvalidArgument(format!(
                "kd + ks exceeds 1 (kd {kd:?}, ks {ks:?})"
            )));
        }
        if !(0.0..=1.0).contains(&roughness) {
            return Err(Error::InvalidArgument(format!(
                "roughness {roughness} outside [0, 1]"
            )));
        }
        let roughness = if roughness < ROUGHNESS_MIN {
            log::warn!("roughness {roughness} clamped to {ROUGHNESS_MIN}");
            ROUGHNESS_MIN
        } else {
            roughness
        };
        Ok(BrdfParams { kd, ks, roughness })
    }

    pub fn alpha(&self) -> f64 {
        self.roughness * self.roughness
    }

    fn f90(&self) -> f64 {
        (50.0 * luminance(self.ks)).min(1.0)
    }

    pub fn fresnel(&self, cos: f64) -> [f64; 3] {
        let w = (1.0 - cos.clamp(0.0, 1.0)).powi(5);
        let f90 = self.f90();
        self.ks.map(|f0| f0 + (f90 - f0) * w)
    }

    fn has_specular(&self) -> bool {
        self.ks.iter().any(|&k| k > 0.0)
    }

    fn has_diffuse(&self) -> bool {
        self.kd.iter().any(|&k| k > 0.0)
    }

    /// Probability of picking the specular lobe when sampling.
    fn specular_weight(&self) -> f64 {
        match (self.has_diffuse(), self.has_specular()) {
            (true, true) => {
                let s = luminance(self.ks);
                let d = luminance(self.kd);
                (s / (s + d)).clamp(0.25, 0.9)
            }
            (false, true) => 1.0,
            _ => 0.0,
        }
    }
}

/// GGX / Trowbridge-Reitz normal distribution for a given `alpha`.
pub fn ggx_d(n_dot_h: f64, alpha: f64) -> f64 {
    if n_dot_h <= 0.0 {
        return 0.0;
    }
    let a2 = alpha * alpha;
    let c2 = n_dot_h * n_dot_h;
    let denom = c2 * (a2 - 1.0) + 1.0;
    a2 / (PI * denom * denom)
}

fn smith_lambda(cos: f64, alpha: f64) -> f64 {
    let c2 = (cos * cos).max(1e-16);
    let tan2 = ((1.0 - c2) / c2).max(0.0);
    0.5 * (-1.0 + (1.0 + alpha * alpha * tan2).sqrt())
}

pub fn smith_g2(n_dot_i: f64, n_dot_o: f64, alpha: f64) -> f64 {
    1.0 / (1.0 + smith_lambda(n_dot_i, alpha) + smith_lambda(n_dot_o, alpha))
}

/// `f(ωi, ωo)` in sr⁻¹. Zero when either direction is below the surface.
pub fn eval(p: &BrdfParams, n: Vec3, wi: Vec3, wo: Vec3) -> [f64; 3] {
    let ni = n.dot(wi);
    let no = n.dot(wo);
    if ni <= 0.0 || no <= 0.0 {
        return [0.0; 3];
    }
    let fi = p.fresnel(ni);
    let fo = p.fresnel(no);
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = p.kd[c] / PI * (1.0 - fi[c]) * (1.0 - fo[c]);
    }
    if p.has_specular() {
        if let Some(h) = (wi + wo).try_normalize() {
            let alpha = p.alpha();
            let d = ggx_d(n.dot(h), alpha);
            let g = smith_g2(ni, no, alpha);
            let f = p.fresnel(h.dot(wi));
            let common = d * g / (4.0 * ni * no);
            if common.is_finite() {
                for c in 0..3 {
                    out[c] += common * f[c];
                }
            }
        }
    }
    out
}

/// Density (solid angle) of [`sample`] producing `wi`.
pub fn pdf(p: &BrdfParams, n: Vec3, wi: Vec3, wo: Vec3) -> f64 {
    let ni = n.dot(wi);
    let no = n.dot(wo);
    if ni <= 0.0 || no <= 0.0 {
        return 0.0;
    }
    let ps = p.specular_weight();
    let mut pdf = (1.0 - ps) * ni / PI;
    if ps > 0.0 {
        if let Some(h) = (wi + wo).try_normalize() {
            let nh = n.dot(h);
            let hw = h.dot(wo).abs();
            if hw > 0.0 {
                pdf += ps * ggx_d(nh, p.alpha()) * nh / (4.0 * hw);
            }
        }
    }
    pdf
}

#[derive(Debug, Clone, Copy)]
pub struct BrdfSample {
    pub wi: Vec3,
    pub value: [f64; 3],
    pub pdf: f64,
}

/// Samples the lobe mixture with three uniforms in `[0, 1)`.
pub fn sample(p: &BrdfParams, n: Vec3, wo: Vec3, u: [f64; 3]) -> Option<BrdfSample> {
    if n.dot(wo) <= 0.0 {
        return None;
    }
    let (t, b) = n.orthonormal_basis();
    let ps = p.specular_weight();
    let wi = if u[0] < ps {
        // Half vector from D(h)·(n·h).
        let a2 = p.alpha() * p.alpha();
        let cos2 = ((1.0 - u[1]) / (1.0 + (a2 - 1.0) * u[1])).clamp(0.0, 1.0);
        let cos = cos2.sqrt();
        let sin = (1.0 - cos2).sqrt();
        let phi = 2.0 * PI * u[2];
        let h = t * (sin * phi.cos()) + b * (sin * phi.sin()) + n * cos;
        wo.reflect(h)
    } else {
        let r = u[1].sqrt();
        let phi = 2.0 * PI * u[2];
        let z = (1.0 - u[1]).max(0.0).sqrt();
        t * (r * phi.cos()) + b * (r * phi.sin()) + n * z
    };
    let pdf = pdf(p, n, wi, wo);
    if !(pdf > 0.0) || !pdf.is_finite() {
        return None;
    }
    Some(BrdfSample {
        wi,
        value: eval(p, n, wi, wo),
        pdf,
    })
}
