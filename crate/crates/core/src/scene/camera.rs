use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;

fn default_up() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub look_at: [f64; 3],
    #[serde(default = "default_up")]
    pub up: [f64; 3],
    pub fov_deg: f64,
    pub width: usize,
    pub height: usize,
}

/// Orthonormal camera frame derived from a validated [`Camera`].
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub origin: Vec3,
    right: Vec3,
    up: Vec3,
    forward: Vec3,
    tan_half: f64,
    aspect: f64,
    width: usize,
    height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<CameraFrame> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidArgument("camera image size must be positive".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::InvalidArgument(format!(
                "fov {} outside (0, 180) degrees",
                self.fov_deg
            )));
        }
        let origin = Vec3::from_array(self.position);
        let forward = (Vec3::from_array(self.look_at) - origin)
            .try_normalize()
            .ok_or_else(|| Error::InvalidArgument("camera looks at its own position".into()))?;
        let right = forward
            .cross(Vec3::from_array(self.up))
            .try_normalize()
            .filter(|r| r.length() > 0.5)
            .ok_or_else(|| Error::InvalidArgument("camera up is parallel to view direction".into()))?;
        if forward.cross(Vec3::from_array(self.up)).length() < 1e-9 {
            return Err(Error::InvalidArgument("camera up is parallel to view direction".into()));
        }
        let up = right.cross(forward);
        Ok(CameraFrame {
            origin,
            right,
            up,
            forward,
            tan_half: (self.fov_deg.to_radians() * 0.5).tan(),
            aspect: self.width as f64 / self.height as f64,
            width: self.width,
            height: self.height,
        })
    }

    /// Camera on a sphere around `target`, azimuth measured from +Z towards
    /// +X and elevation from the horizontal plane, both in degrees.
    pub fn orbit(target: Vec3, azimuth_deg: f64, elevation_deg: f64, distance: f64, fov_deg: f64, width: usize, height: usize) -> Camera {
        let (sa, ca) = azimuth_deg.to_radians().sin_cos();
        let (se, ce) = elevation_deg.to_radians().sin_cos();
        let pos = target + Vec3::new(sa * ce, se, ca * ce) * distance;
        Camera {
            position: pos.to_array(),
            look_at: target.to_array(),
            up: default_up(),
            fov_deg,
            width,
            height,
        }
    }
}

impl CameraFrame {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Direction through the center of pixel `(px, py)`, row 0 at the top.
    pub fn ray_dir(&self, px: usize, py: usize) -> Vec3 {
        self.ray_dir_jittered(px, py, 0.5, 0.5)
    }

    pub fn ray_dir_jittered(&self, px: usize, py: usize, jx: f64, jy: f64) -> Vec3 {
        let sx = (2.0 * (px as f64 + jx) / self.width as f64 - 1.0) * self.tan_half * self.aspect;
        let sy = (1.0 - 2.0 * (py as f64 + jy) / self.height as f64) * self.tan_half;
        (self.forward + self.right * sx + self.up * sy).normalize()
    }
}
