//! Per-step sampling of wavelets and pixels.

use std::collections::HashMap;

use half::f16;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;

use crate::dataset::GBufferImage;
use crate::error::{Error, Result};
use crate::imageio::Image;
use crate::math::luminance;
use crate::wavelet::{self, ChannelScore, SelectionMode, WaveletCoeffs};

/// Half the wavelets are the largest coefficients by luminance magnitude;
/// the rest are drawn uniformly without replacement from the remainder.
/// Returns `(flat index, raw-radiance coefficient)` pairs.
pub fn sample_wavelets<R: Rng>(coeffs: &WaveletCoeffs, count: usize, rng: &mut R) -> Result<Vec<(usize, [f64; 3])>> {
    let total = coeffs.len();
    if count > total {
        return Err(Error::OutOfRange(format!("{count} wavelets requested, {total} available")));
    }
    let n = coeffs.face_res();
    let top = count / 2;
    let ranked = wavelet::ranked(coeffs, SelectionMode::Magnitude, ChannelScore::Luminance);
    let mut out: Vec<(usize, [f64; 3])> = ranked[..top].iter().map(|s| (s.index.flat(n), s.coeff)).collect();
    let rest: Vec<usize> = ranked[top..].iter().map(|s| s.index.flat(n)).collect();
    let mut picks = index::sample(rng, rest.len(), count - top).into_vec();
    picks.sort_unstable();
    let all = coeffs.as_slice();
    out.extend(picks.into_iter().map(|i| (rest[i], all[rest[i]])));
    Ok(out)
}

/// Normalized 1D Gaussian taps for radius `r`.
pub fn gaussian_taps(radius: usize, sigma: f64) -> Vec<f64> {
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable 9×9 Gaussian (sigma 2 px) with clamp-to-edge borders.
pub fn low_pass(values: &[f64], width: usize, height: usize) -> Vec<f64> {
    let taps = gaussian_taps(4, 2.0);
    let r = 4i64;
    let at = |x: i64, y: i64, buf: &[f64]| {
        let xx = x.clamp(0, width as i64 - 1) as usize;
        let yy = y.clamp(0, height as i64 - 1) as usize;
        buf[yy * width + xx]
    };
    let mut tmp = vec![0.0; values.len()];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            tmp[y as usize * width + x as usize] = (-r..=r).map(|d| taps[(d + r) as usize] * at(x + d, y, values)).sum();
        }
    }
    let mut out = vec![0.0; values.len()];
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            out[y as usize * width + x as usize] = (-r..=r).map(|d| taps[(d + r) as usize] * at(x, y + d, &tmp)).sum();
        }
    }
    out
}

fn image_luminance(img: &Image) -> Vec<f64> {
    img.pixels.iter().map(|p| luminance(p.map(|c| c as f64))).collect()
}

/// `|lum(I) − lowpass(lum(I))|` on surface pixels.
pub fn high_frequency_map(img: &Image, gbuf: &GBufferImage) -> Vec<f64> {
    let lum = image_luminance(img);
    let lp = low_pass(&lum, img.width, img.height);
    lum.iter()
        .zip(&lp)
        .zip(&gbuf.pixels)
        .map(|((a, b), g)| if g.hit { (a - b).abs() } else { 0.0 })
        .collect()
}

/// Specular luminance times the roughness complement.
pub fn specular_map(gbuf: &GBufferImage) -> Vec<f64> {
    gbuf.pixels
        .iter()
        .map(|p| {
            if p.hit {
                luminance(p.ks.map(|c| c as f64)) * (1.0 - p.roughness as f64)
            } else {
                0.0
            }
        })
        .collect()
}

pub fn uniform_map(gbuf: &GBufferImage) -> Vec<f64> {
    gbuf.pixels.iter().map(|p| if p.hit { 1.0 } else { 0.0 }).collect()
}

pub const VARIANCE_GRID: usize = 64;

fn bucket(p: [f32; 3]) -> u32 {
    let g = VARIANCE_GRID as f32;
    let c = p.map(|v| ((v * g).floor() as i64).clamp(0, VARIANCE_GRID as i64 - 1) as u32);
    c[0] + VARIANCE_GRID as u32 * (c[1] + VARIANCE_GRID as u32 * c[2])
}

/// For images of one lighting condition seen from different cameras: the
/// variance of radiance luminance across all hits landing in the same
/// position bucket, returned per pixel of each image in half precision.
pub fn view_variance_maps(images: &[&Image], gbufs: &[&GBufferImage]) -> Vec<Vec<f16>> {
    let mut stats: HashMap<u32, (f64, f64, f64)> = HashMap::new();
    for (img, g) in images.iter().zip(gbufs) {
        for (p, px) in img.pixels.iter().zip(&g.pixels) {
            if px.hit {
                let l = luminance(p.map(|c| c as f64));
                let e = stats.entry(bucket(px.position_normalized)).or_insert((0.0, 0.0, 0.0));
                e.0 += 1.0;
                e.1 += l;
                e.2 += l * l;
            }
        }
    }
    gbufs
        .iter()
        .map(|g| {
            g.pixels
                .iter()
                .map(|px| {
                    if !px.hit {
                        return f16::ZERO;
                    }
                    let (n, s, ss) = stats[&bucket(px.position_normalized)];
                    let var = if n < 2.0 { 0.0 } else { (ss / n - (s / n).powi(2)).max(0.0) };
                    f16::from_f64(var)
                })
                .collect()
        })
        .collect()
}

/// Discrete distribution with a fallback when all weights vanish.
#[derive(Debug, Clone)]
pub struct Pmf {
    dist: WeightedIndex<f64>,
}

impl Pmf {
    /// `None` when the weights are all zero or any is negative or non-finite.
    pub fn new(weights: &[f64]) -> Option<Pmf> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return None;
        }
        WeightedIndex::new(weights).ok().map(|dist| Pmf { dist })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        self.dist.sample(rng)
    }
}

/// The four pixel strategies over a pool of `(image, pixel)` entries.
#[derive(Debug, Clone)]
pub struct PixelSampler {
    entries: Vec<(usize, usize)>,
    strategies: Vec<Pmf>,
}

pub const STRATEGIES: [&str; 4] = ["view_variance", "high_frequency", "specular", "uniform"];

impl PixelSampler {
    /// `maps[s][e]` is the weight of entry `e` under strategy `s`. A strategy
    /// whose weights are unusable falls back to the last (uniform) one.
    pub fn new(entries: Vec<(usize, usize)>, maps: [Vec<f64>; 4]) -> Result<Self> {
        if maps.iter().any(|m| m.len() != entries.len()) {
            return Err(Error::InvalidArgument("importance maps differ in length".into()));
        }
        let uniform = Pmf::new(&maps[3])
            .or_else(|| Pmf::new(&vec![1.0; entries.len()]))
            .ok_or_else(|| Error::InvalidArgument("no pixels to sample".into()))?;
        let strategies = maps[..3]
            .iter()
            .zip(STRATEGIES)
            .map(|(m, name)| {
                Pmf::new(m).unwrap_or_else(|| {
                    log::debug!("{name} map is empty; sampling uniformly instead");
                    uniform.clone()
                })
            })
            .chain(std::iter::once(uniform.clone()))
            .collect();
        Ok(PixelSampler { entries, strategies })
    }

    /// `per_strategy` draws (with replacement) from each strategy.
    pub fn sample<R: Rng>(&self, rng: &mut R, per_strategy: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(4 * per_strategy);
        for s in &self.strategies {
            for _ in 0..per_strategy {
                out.push(self.entries[s.sample(rng)]);
            }
        }
        out
    }
}
