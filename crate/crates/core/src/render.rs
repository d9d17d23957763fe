//! Relighting with a trained model: project the lighting onto Haar
//! wavelets, keep the strongest `K`, and shade each pixel as the dot
//! product of those coefficients with the predicted transport.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cubemap::Cubemap;
use crate::dataset;
use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::pathtracer::{self, Mode, PathTracerConfig};
use crate::scene::{Camera, Scene};
use crate::train::tonemap::tonemap_scalar;
use crate::transport::{PixelInput, TransportModel};
use crate::wavelet::{self, ChannelScore, SelectionMode};

/// Pixels evaluated per batch.
const CHUNK: usize = 64;
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    /// Number of wavelets kept; `None` keeps all of them.
    pub num_wavelets: Option<usize>,
    pub selection: SelectionMode,
    pub include_direct: bool,
    pub direct_spp: usize,
    pub seed: u64,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            num_wavelets: Some(64),
            selection: SelectionMode::AreaWeighted,
            include_direct: false,
            direct_spp: 64,
            seed: 0,
        }
    }
}

/// Rendered layers. `full` is `indirect + direct` (or `indirect` alone).
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub indirect: Image,
    pub direct: Option<Image>,
    pub full: Image,
    pub wavelets_used: usize,
    pub hit_mask: Vec<bool>,
}

/// Lighting as the model sees it: resampled to `face_res`, rounded to
/// single precision, then rotated about +Y.
pub fn prepare_lighting(env: &Cubemap, face_res: usize, rotation_deg: f64) -> Result<Cubemap> {
    Ok(dataset::prepare_env(env, face_res)?.rotate_about_up(rotation_deg))
}

/// Selected wavelets as `(flat index, raw-radiance coefficient)`.
pub fn select_wavelets(lighting: &Cubemap, count: Option<usize>, mode: SelectionMode) -> Result<Vec<(usize, [f64; 3])>> {
    let coeffs = wavelet::forward(lighting)?;
    let total = coeffs.len();
    let k = count.unwrap_or(total);
    if k > total {
        return Err(Error::OutOfRange(format!("{k} wavelets requested, {total} available")));
    }
    let n = lighting.face_res();
    let mut ranked = wavelet::ranked(&coeffs, mode, ChannelScore::Luminance);
    ranked.truncate(k);
    Ok(ranked.into_iter().map(|s| (s.index.flat(n), s.coeff)).collect())
}

/// Channelwise `Σ L_k · T_k`.
pub fn dot_product(l: &[[f64; 3]], t: &[[f64; 3]]) -> [f64; 3] {
    assert_eq!(l.len(), t.len(), "coefficient lists differ in length");
    let mut acc = [0.0; 3];
    for (a, b) in l.iter().zip(t) {
        for c in 0..3 {
            acc[c] += a[c] * b[c];
        }
    }
    acc
}

fn cancelled(flag: Option<&AtomicBool>) -> bool {
    flag.is_some_and(|f| f.load(Ordering::Relaxed))
}

/// Learned indirect image for precomputed decoder inputs. Background pixels
/// (`None`) show `background[i]`. Values stay signed.
pub fn shade_pixels(
    model: &TransportModel<f32>,
    inputs: &[Option<PixelInput>],
    selected: &[(usize, [f64; 3])],
    cancel: Option<&AtomicBool>,
) -> Result<Vec<Option<[f64; 3]>>> {
    let hits: Vec<(usize, &PixelInput)> = inputs.iter().enumerate().filter_map(|(i, p)| p.as_ref().map(|p| (i, p))).collect();
    let indices: Vec<usize> = selected.iter().map(|(k, _)| *k).collect();
    let nk = indices.len();
    let chunks: Vec<Result<Vec<(usize, [f64; 3])>>> = hits
        .par_chunks(CHUNK)
        .map(|chunk| {
            if cancelled(cancel) {
                return Err(Error::Cancelled);
            }
            if nk == 0 {
                return Ok(chunk.iter().map(|(i, _)| (*i, [0.0; 3])).collect());
            }
            let px: Vec<PixelInput> = chunk.iter().map(|(_, p)| (*p).clone()).collect();
            let (t, _) = model.forward(&px, &indices)?;
            Ok(chunk
                .iter()
                .enumerate()
                .map(|(r, (i, _))| {
                    let mut acc = [0.0; 3];
                    for (j, (_, l)) in selected.iter().enumerate() {
                        let tk = &t[(r * nk + j) * 3..(r * nk + j) * 3 + 3];
                        for c in 0..3 {
                            acc[c] += l[c] * tk[c] as f64;
                        }
                    }
                    (*i, acc)
                })
                .collect())
        })
        .collect();
    let mut out = vec![None; inputs.len()];
    for c in chunks {
        for (i, v) in c? {
            out[i] = Some(v);
        }
    }
    Ok(out)
}

/// Indirect layer for `camera`: learned transport on surface pixels and the
/// lighting itself on background pixels. `lighting` must already be at the
/// model's wavelet resolution.
pub fn render_indirect(
    model: &TransportModel<f32>,
    scene: &Scene,
    camera: &Camera,
    lighting: &Cubemap,
    settings: &RenderSettings,
    cancel: Option<&AtomicBool>,
) -> Result<(Image, usize, Vec<bool>)> {
    let res = model.field.config().wavelet_face_res;
    if lighting.face_res() != res {
        return Err(Error::InvalidArgument(format!(
            "lighting resolution {} differs from the model's {res}",
            lighting.face_res()
        )));
    }
    let selected = select_wavelets(lighting, settings.num_wavelets, settings.selection)?;
    let frame = camera.validate()?;
    let gbuf = dataset::GBufferImage::from_gbuffer(&scene.trace_primary(camera)?);
    let inputs: Vec<Option<PixelInput>> = (0..gbuf.pixels.len()).map(|i| gbuf.pixel_input(i)).collect();
    let shaded = shade_pixels(model, &inputs, &selected, cancel)?;
    let w = frame.width();
    let pixels = shaded
        .iter()
        .enumerate()
        .map(|(i, v)| match v {
            Some(c) => c.map(|x| x as f32),
            None => lighting.lookup(frame.ray_dir(i % w, i / w)).map(|x| x as f32),
        })
        .collect();
    let mask = inputs.iter().map(|p| p.is_some()).collect();
    Ok((Image::from_pixels(w, frame.height(), pixels)?, selected.len(), mask))
}

/// Indirect layer plus, optionally, path-traced direct lighting on surface
/// pixels. Negative values are kept; clamp only for display.
pub fn render_full(
    model: &TransportModel<f32>,
    scene: &Scene,
    camera: &Camera,
    lighting: &Cubemap,
    settings: &RenderSettings,
    cancel: Option<&AtomicBool>,
) -> Result<RenderOutput> {
    let (indirect, used, mask) = render_indirect(model, scene, camera, lighting, settings, cancel)?;
    if !settings.include_direct {
        return Ok(RenderOutput {
            full: indirect.clone(),
            indirect,
            direct: None,
            wavelets_used: used,
            hit_mask: mask,
        });
    }
    if cancelled(cancel) {
        return Err(Error::Cancelled);
    }
    let cfg = PathTracerConfig {
        spp: settings.direct_spp,
        mode: Mode::DirectOnly,
        seed: settings.seed,
        background: false,
        ..Default::default()
    };
    let direct = pathtracer::render(scene, camera, lighting, &cfg)?;
    let full = indirect.add(&direct)?;
    Ok(RenderOutput {
        indirect,
        direct: Some(direct),
        full,
        wavelets_used: used,
        hit_mask: mask,
    })
}

fn masked_pairs<'a>(img: &'a Image, reference: &'a Image, mask: Option<&'a [bool]>) -> Result<impl Iterator<Item = ([f32; 3], [f32; 3])> + 'a> {
    if img.width != reference.width || img.height != reference.height {
        return Err(Error::InvalidArgument("images differ in size".into()));
    }
    if let Some(m) = mask {
        if m.len() != img.pixels.len() {
            return Err(Error::InvalidArgument("mask size differs from the image".into()));
        }
    }
    Ok(img
        .pixels
        .iter()
        .zip(&reference.pixels)
        .enumerate()
        .filter(move |(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, (a, b))| (*a, *b)))
}

/// PSNR of display values (mu-law tonemap, then clamp to `[0, 1]`),
/// capped at 99 dB.
pub fn psnr(img: &Image, reference: &Image, peak: f64, mask: Option<&[bool]>) -> Result<f64> {
    let tm = |x: f32| tonemap_scalar(x as f64, 10.0, 1.0).clamp(0.0, 1.0);
    let mut se = 0.0;
    let mut n = 0usize;
    for (a, b) in masked_pairs(img, reference, mask)? {
        for c in 0..3 {
            let d = tm(a[c]) - tm(b[c]);
            se += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no pixels to compare".into()));
    }
    Ok(psnr_from_mse(se / n as f64, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

/// `‖img − ref‖ / ‖ref‖` on raw HDR values.
pub fn rel_l2(img: &Image, reference: &Image, mask: Option<&[bool]>) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in masked_pairs(img, reference, mask)? {
        for c in 0..3 {
            let d = a[c] as f64 - b[c] as f64;
            num += d * d;
            den += (b[c] as f64).powi(2);
        }
    }
    if den == 0.0 {
        return Ok(if num == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok((num / den).sqrt())
}

/// Plain L2 distance between two images.
pub fn l2_distance(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<f64> {
    let mut s = 0.0;
    for (x, y) in masked_pairs(a, b, mask)? {
        for c in 0..3 {
            s += (x[c] as f64 - y[c] as f64).powi(2);
        }
    }
    Ok(s.sqrt())
}
