//! Cubemap environment lighting.
//!
//! Faces are stored in the order +X, -X, +Y, -Y, +Z, -Z. Within a face,
//! texel `(u, v)` is column `u` and row `v`; its center sits at face-plane
//! coordinates `s = 2(u + 0.5)/N - 1`, `t = 2(v + 0.5)/N - 1`, and the face
//! plane maps to world directions as
//!
//! | face | direction      |
//! |------|----------------|
//! | +X   | ( 1, -t, -s)   |
//! | -X   | (-1, -t,  s)   |
//! | +Y   | ( s,  1,  t)   |
//! | -Y   | ( s, -1, -t)   |
//! | +Z   | ( s, -t,  1)   |
//! | -Z   | (-s, -t, -1)   |
//!
//! Texels hold radiance sampled at their centers. World +Y is up.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio::{self, Image};
use crate::math::{luminance, Vec3};

/// Identifier written into checkpoints so training and rendering agree.
pub const CONVENTION: &str = "faces:+x,-x,+y,-y,+z,-z;uv:opengl-st;centers";

pub const FACE_NAMES: [&str; 6] = ["posx", "negx", "posy", "negy", "posz", "negz"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Texel {
    pub face: usize,
    pub u: usize,
    pub v: usize,
}

/// Unit direction. Construction normalizes and rejects zero vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Direction(Vec3);

impl Direction {
    pub fn new(v: Vec3) -> Result<Self> {
        v.try_normalize()
            .map(Direction)
            .ok_or_else(|| Error::InvalidArgument(format!("cannot normalize direction {v:?}")))
    }

    pub fn vec(self) -> Vec3 {
        self.0
    }
}

pub fn face_st_to_dir(face: usize, s: f64, t: f64) -> Vec3 {
    match face {
        0 => Vec3::new(1.0, -t, -s),
        1 => Vec3::new(-1.0, -t, s),
        2 => Vec3::new(s, 1.0, t),
        3 => Vec3::new(s, -1.0, -t),
        4 => Vec3::new(s, -t, 1.0),
        5 => Vec3::new(-s, -t, -1.0),
        _ => panic!("face {face} out of range"),
    }
}

/// Face and face-plane coordinates in `[-1, 1]²` of a nonzero direction.
pub fn dir_to_face_st(d: Vec3) -> (usize, f64, f64) {
    let (ax, ay, az) = (d.x.abs(), d.y.abs(), d.z.abs());
    if ax >= ay && ax >= az {
        if d.x > 0.0 {
            (0, -d.z / ax, -d.y / ax)
        } else {
            (1, d.z / ax, -d.y / ax)
        }
    } else if ay >= az {
        if d.y > 0.0 {
            (2, d.x / ay, d.z / ay)
        } else {
            (3, d.x / ay, -d.z / ay)
        }
    } else if d.z > 0.0 {
        (4, d.x / az, -d.y / az)
    } else {
        (5, -d.x / az, -d.y / az)
    }
}

fn st_to_index(s: f64, n: usize) -> usize {
    (((s + 1.0) * 0.5 * n as f64).floor().max(0.0) as usize).min(n - 1)
}

pub fn texel_center_st(i: usize, n: usize) -> f64 {
    2.0 * (i as f64 + 0.5) / n as f64 - 1.0
}

pub fn dir_to_texel(d: Vec3, face_res: usize) -> Result<Texel> {
    if face_res == 0 {
        return Err(Error::InvalidArgument("face resolution must be positive".into()));
    }
    if !(d.length_squared() > 0.0) || !d.is_finite() {
        return Err(Error::InvalidArgument(format!("direction {d:?} has no length")));
    }
    let (face, s, t) = dir_to_face_st(d);
    Ok(Texel {
        face,
        u: st_to_index(s, face_res),
        v: st_to_index(t, face_res),
    })
}

fn check_texel(face: usize, u: usize, v: usize, face_res: usize) -> Result<()> {
    if face >= 6 || u >= face_res || v >= face_res {
        return Err(Error::OutOfRange(format!(
            "texel ({face}, {u}, {v}) at resolution {face_res}"
        )));
    }
    Ok(())
}

pub fn texel_to_dir(face: usize, u: usize, v: usize, face_res: usize) -> Result<Direction> {
    check_texel(face, u, v, face_res)?;
    let d = face_st_to_dir(face, texel_center_st(u, face_res), texel_center_st(v, face_res));
    Ok(Direction(d.normalize()))
}

/// Solid angle of the face-plane rectangle `[0,x] × [0,y]` at unit distance.
fn area_element(x: f64, y: f64) -> f64 {
    (x * y).atan2((x * x + y * y + 1.0).sqrt())
}

/// Exact solid angle of a rectangle on any face plane.
pub fn rect_solid_angle(s0: f64, s1: f64, t0: f64, t1: f64) -> f64 {
    area_element(s1, t1) - area_element(s0, t1) - area_element(s1, t0) + area_element(s0, t0)
}

pub fn texel_solid_angle(face: usize, u: usize, v: usize, face_res: usize) -> Result<f64> {
    check_texel(face, u, v, face_res)?;
    Ok(texel_solid_angle_unchecked(u, v, face_res))
}

pub(crate) fn texel_solid_angle_unchecked(u: usize, v: usize, n: usize) -> f64 {
    let step = 2.0 / n as f64;
    let s0 = -1.0 + u as f64 * step;
    let t0 = -1.0 + v as f64 * step;
    rect_solid_angle(s0, s0 + step, t0, t0 + step)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cubemap {
    face_res: usize,
    /// `6 * face_res²` texels, index `face * N² + v * N + u`.
    texels: Vec<[f64; 3]>,
}

impl Cubemap {
    pub fn new(face_res: usize) -> Result<Self> {
        Self::constant(face_res, [0.0; 3])
    }

    pub fn constant(face_res: usize, rgb: [f64; 3]) -> Result<Self> {
        if face_res == 0 {
            return Err(Error::InvalidArgument("face resolution must be positive".into()));
        }
        Self::from_texels(face_res, vec![rgb; 6 * face_res * face_res])
    }

    pub fn from_texels(face_res: usize, texels: Vec<[f64; 3]>) -> Result<Self> {
        if face_res == 0 || texels.len() != 6 * face_res * face_res {
            return Err(Error::InvalidArgument(format!(
                "{} texels for face resolution {face_res}",
                texels.len()
            )));
        }
        if let Some(bad) = texels
            .iter()
            .find(|c| c.iter().any(|&x| !x.is_finite() || x < 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "radiance must be finite and non-negative, found {bad:?}"
            )));
        }
        Ok(Cubemap { face_res, texels })
    }

    /// Builds a cubemap by evaluating `f` at every texel center direction.
    pub fn from_fn(face_res: usize, mut f: impl FnMut(Vec3) -> [f64; 3]) -> Result<Self> {
        let mut texels = Vec::with_capacity(6 * face_res * face_res);
        for face in 0..6 {
            for v in 0..face_res {
                for u in 0..face_res {
                    texels.push(f(texel_to_dir(face, u, v, face_res)?.vec()));
                }
            }
        }
        Self::from_texels(face_res, texels)
    }

    pub fn face_res(&self) -> usize {
        self.face_res
    }

    pub fn texels(&self) -> &[[f64; 3]] {
        &self.texels
    }

    pub fn index(&self, face: usize, u: usize, v: usize) -> usize {
        (face * self.face_res + v) * self.face_res + u
    }

    pub fn get(&self, face: usize, u: usize, v: usize) -> [f64; 3] {
        self.texels[self.index(face, u, v)]
    }

    pub fn face(&self, face: usize) -> &[[f64; 3]] {
        let n2 = self.face_res * self.face_res;
        &self.texels[face * n2..(face + 1) * n2]
    }

    /// Radiance of the texel containing `d` (piecewise-constant lookup).
    pub fn lookup(&self, d: Vec3) -> [f64; 3] {
        match dir_to_texel(d, self.face_res) {
            Ok(t) => self.get(t.face, t.u, t.v),
            Err(_) => [0.0; 3],
        }
    }

    /// Bilinear interpolation between texel centers, continuous across
    /// face seams.
    pub fn sample_bilinear(&self, d: Vec3) -> [f64; 3] {
        let n = self.face_res;
        let (face, s, t) = dir_to_face_st(d);
        let fu = (s + 1.0) * 0.5 * n as f64 - 0.5;
        let fv = (t + 1.0) * 0.5 * n as f64 - 0.5;
        let u0 = fu.floor();
        let v0 = fv.floor();
        let (du, dv) = (fu - u0, fv - v0);
        let mut acc = [0.0; 3];
        for (ou, wu) in [(0.0, 1.0 - du), (1.0, du)] {
            for (ov, wv) in [(0.0, 1.0 - dv), (1.0, dv)] {
                let w = wu * wv;
                if w == 0.0 {
                    continue;
                }
                let (iu, iv) = (u0 + ou, v0 + ov);
                let c = if iu >= 0.0 && iv >= 0.0 && (iu as usize) < n && (iv as usize) < n {
                    self.get(face, iu as usize, iv as usize)
                } else {
                    // Off this face: follow the extrapolated texel center onto
                    // whichever face it actually lands on.
                    let ss = 2.0 * (iu + 0.5) / n as f64 - 1.0;
                    let tt = 2.0 * (iv + 0.5) / n as f64 - 1.0;
                    self.lookup(face_st_to_dir(face, ss, tt))
                };
                for ch in 0..3 {
                    acc[ch] += w * c[ch];
                }
            }
        }
        acc
    }

    /// Radiance integrated over the sphere, per channel.
    pub fn irradiance_integral(&self) -> [f64; 3] {
        let n = self.face_res;
        let mut acc = [0.0; 3];
        for face in 0..6 {
            for v in 0..n {
                for u in 0..n {
                    let w = texel_solid_angle_unchecked(u, v, n);
                    let c = self.get(face, u, v);
                    for ch in 0..3 {
                        acc[ch] += w * c[ch];
                    }
                }
            }
        }
        acc
    }

    pub fn max_luminance(&self) -> f64 {
        self.texels.iter().map(|&c| luminance(c)).fold(0.0, f64::max)
    }

    pub fn scaled(&self, k: f64) -> Cubemap {
        assert!(k >= 0.0 && k.is_finite());
        Cubemap {
            face_res: self.face_res,
            texels: self.texels.iter().map(|c| c.map(|x| x * k)).collect(),
        }
    }

    /// Rotates the lighting by `degrees` about world +Y: the result seen in
    /// direction `d` equals the source seen in `R(-degrees) d`.
    pub fn rotate_about_up(&self, degrees: f64) -> Cubemap {
        if !degrees.is_finite() || degrees.rem_euclid(360.0) == 0.0 {
            return self.clone();
        }
        let (sin, cos) = (-degrees.to_radians()).sin_cos();
        let n = self.face_res;
        let mut texels = Vec::with_capacity(self.texels.len());
        for face in 0..6 {
            for v in 0..n {
                for u in 0..n {
                    let d = face_st_to_dir(face, texel_center_st(u, n), texel_center_st(v, n));
                    let src = Vec3::new(d.x * cos + d.z * sin, d.y, -d.x * sin + d.z * cos);
                    texels.push(self.sample_bilinear(src).map(|x| x.max(0.0)));
                }
            }
        }
        Cubemap {
            face_res: n,
            texels,
        }
    }

    /// Box-filters each face down by an integer factor.
    pub fn downsample(&self, factor: usize) -> Result<Cubemap> {
        if factor == 0 || self.face_res % factor != 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot downsample resolution {} by {factor}",
                self.face_res
            )));
        }
        let n = self.face_res / factor;
        let norm = 1.0 / (factor * factor) as f64;
        let mut texels = vec![[0.0; 3]; 6 * n * n];
        for face in 0..6 {
            for v in 0..self.face_res {
                for u in 0..self.face_res {
                    let c = self.get(face, u, v);
                    let t = &mut texels[(face * n + v / factor) * n + u / factor];
                    for ch in 0..3 {
                        t[ch] += c[ch] * norm;
                    }
                }
            }
        }
        Ok(Cubemap { face_res: n, texels })
    }

    /// Changes the face resolution: box filter when shrinking by an integer
    /// factor, bilinear resampling otherwise.
    pub fn resampled(&self, face_res: usize) -> Result<Cubemap> {
        if face_res == 0 {
            return Err(Error::InvalidArgument("face resolution must be positive".into()));
        }
        if face_res == self.face_res {
            return Ok(self.clone());
        }
        if self.face_res % face_res == 0 {
            return self.downsample(self.face_res / face_res);
        }
        Cubemap::from_fn(face_res, |d| self.sample_bilinear(d))
    }

    /// Rounds every texel to single precision, matching what `save_faces`
    /// stores.
    pub fn quantized_f32(&self) -> Cubemap {
        Cubemap {
            face_res: self.face_res,
            texels: self.texels.iter().map(|c| c.map(|x| x as f32 as f64)).collect(),
        }
    }

    /// Resamples an equirectangular (latitude-longitude) image. Column 0 is
    /// azimuth -pi about +Y measured from -Z towards +X; row 0 is straight up.
    pub fn from_equirect(img: &Image, face_res: usize) -> Result<Cubemap> {
        if img.width == 0 || img.height == 0 {
            return Err(Error::InvalidArgument("empty equirectangular image".into()));
        }
        let (w, h) = (img.width as f64, img.height as f64);
        let fetch = |x: i64, y: i64| -> [f64; 3] {
            let xx = x.rem_euclid(img.width as i64) as usize;
            let yy = y.clamp(0, img.height as i64 - 1) as usize;
            img.get(xx, yy).map(|c| (c as f64).max(0.0))
        };
        Cubemap::from_fn(face_res, |d| {
            let phi = d.x.atan2(-d.z);
            let theta = d.y.clamp(-1.0, 1.0).acos();
            let fx = (phi / (2.0 * PI) + 0.5) * w - 0.5;
            let fy = theta / PI * h - 0.5;
            let (x0, y0) = (fx.floor(), fy.floor());
            let (dx, dy) = (fx - x0, fy - y0);
            let (x0, y0) = (x0 as i64, y0 as i64);
            let mut acc = [0.0; 3];
            for (ox, wx) in [(0, 1.0 - dx), (1, dx)] {
                for (oy, wy) in [(0, 1.0 - dy), (1, dy)] {
                    let c = fetch(x0 + ox, y0 + oy);
                    for ch in 0..3 {
                        acc[ch] += wx * wy * c[ch];
                    }
                }
            }
            acc
        })
    }

    /// Loads lighting from a Radiance `.hdr` or `.pfm` equirectangular
    /// image (resampled to `face_res`), or from a directory holding the six
    /// faces as `posx.pfm … negz.pfm` (native resolution, `face_res`
    /// ignored).
    pub fn load(path: &Path, face_res: usize) -> Result<Cubemap> {
        if face_res == 0 {
            return Err(Error::InvalidArgument("face resolution must be positive".into()));
        }
        if path.is_dir() {
            return Self::load_faces(path);
        }
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        let img = match ext.as_deref() {
            Some("hdr") => read_radiance_hdr(path)?,
            Some("pfm") => imageio::read_pfm(path)?,
            _ => {
                return Err(Error::format(
                    "environment map",
                    format!("{}: expected .hdr, .pfm or a face directory", path.display()),
                ))
            }
        };
        Self::from_equirect(&img, face_res)
    }

    pub fn load_faces(dir: &Path) -> Result<Cubemap> {
        let mut texels = Vec::new();
        let mut res = None;
        for name in FACE_NAMES {
            let img = imageio::read_pfm(&dir.join(format!("{name}.pfm")))?;
            if img.width != img.height || res.is_some_and(|r| r != img.width) {
                return Err(Error::format("cubemap face", format!("{name} has mismatched size")));
            }
            res = Some(img.width);
            texels.extend(img.pixels.iter().map(|p| p.map(|c| c as f64)));
        }
        Self::from_texels(res.unwrap(), texels)
    }

    pub fn save_faces(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (face, name) in FACE_NAMES.iter().enumerate() {
            let pixels = self.face(face).iter().map(|c| c.map(|x| x as f32)).collect();
            let img = Image::from_pixels(self.face_res, self.face_res, pixels)?;
            imageio::write_pfm(&dir.join(format!("{name}.pfm")), &img)?;
        }
        Ok(())
    }

    /// Horizontal-cross layout (4N × 3N) for previews.
    pub fn cross_layout(&self) -> Image {
        let n = self.face_res;
        let mut img = Image::new(4 * n, 3 * n);
        // (face, column, row) of each face tile in the cross.
        let tiles = [(0, 2, 1), (1, 0, 1), (2, 1, 0), (3, 1, 2), (4, 1, 1), (5, 3, 1)];
        for (face, cx, cy) in tiles {
            for v in 0..n {
                for u in 0..n {
                    img.set(cx * n + u, cy * n + v, self.get(face, u, v).map(|x| x as f32));
                }
            }
        }
        img
    }
}

fn read_radiance_hdr(path: &Path) -> Result<Image> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = image::codecs::hdr::HdrDecoder::new(std::io::BufReader::new(file))?;
    let dynimg = image::DynamicImage::from_decoder(decoder)?;
    let rgb = dynimg.to_rgb32f();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let pixels = rgb.pixels().map(|p| p.0).collect();
    Image::from_pixels(w, h, pixels)
}
