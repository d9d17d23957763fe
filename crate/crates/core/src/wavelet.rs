//! Orthonormal non-standard Haar transform on cubemap faces.
//!
//! Each face is decomposed independently with the quad-tree (non-standard)
//! scheme: every step replaces each 2×2 block `[a b; c d]` of the current
//! low-pass square by
//!
//! ```text
//! avg = (a + b + c + d) / 2      -> (i,        j)
//! du  = (a - b + c - d) / 2      -> (i + half, j)
//! dv  = (a + b - c - d) / 2      -> (i,        j + half)
//! dd  = (a - b - c + d) / 2      -> (i + half, j + half)
//! ```
//!
//! (coordinates are `(u, v)`), so the scaling coefficient ends up at `(0,0)`
//! and each detail coefficient keeps a unique 2D address.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::cubemap::{self, Cubemap};
use crate::error::{Error, Result};
use crate::math::luminance;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WaveletIndex {
    pub face: usize,
    pub u: usize,
    pub v: usize,
}

impl WaveletIndex {
    pub fn new(face: usize, u: usize, v: usize) -> Self {
        WaveletIndex { face, u, v }
    }

    /// Flat position `face * N² + v * N + u`.
    pub fn flat(self, face_res: usize) -> usize {
        (self.face * face_res + self.v) * face_res + self.u
    }

    pub fn from_flat(i: usize, face_res: usize) -> Self {
        let n2 = face_res * face_res;
        WaveletIndex {
            face: i / n2,
            u: i % face_res,
            v: (i % n2) / face_res,
        }
    }
}

/// Spatial support of a coefficient in texel units: `[u0, u0+size) × [v0, v0+size)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Support {
    pub u0: usize,
    pub v0: usize,
    pub size: usize,
}

pub fn support(idx: WaveletIndex, face_res: usize) -> Support {
    if idx.u == 0 && idx.v == 0 {
        return Support {
            u0: 0,
            v0: 0,
            size: face_res,
        };
    }
    let m = idx.u.max(idx.v);
    let half = 1usize << (usize::BITS - 1 - m.leading_zeros());
    let size = face_res / half;
    Support {
        u0: (idx.u % half) * size,
        v0: (idx.v % half) * size,
        size,
    }
}

pub fn support_area(idx: WaveletIndex, face_res: usize) -> Result<f64> {
    check_index(idx, face_res)?;
    let s = support(idx, face_res);
    let step = 2.0 / face_res as f64;
    let s0 = -1.0 + s.u0 as f64 * step;
    let t0 = -1.0 + s.v0 as f64 * step;
    let len = s.size as f64 * step;
    Ok(cubemap::rect_solid_angle(s0, s0 + len, t0, t0 + len))
}

fn check_index(idx: WaveletIndex, face_res: usize) -> Result<()> {
    if idx.face >= 6 || idx.u >= face_res || idx.v >= face_res {
        return Err(Error::OutOfRange(format!("wavelet index {idx:?} at resolution {face_res}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletCoeffs {
    face_res: usize,
    coeffs: Vec<[f64; 3]>,
}

impl WaveletCoeffs {
    pub fn from_raw(face_res: usize, coeffs: Vec<[f64; 3]>) -> Result<Self> {
        if !face_res.is_power_of_two() || coeffs.len() != 6 * face_res * face_res {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients for face resolution {face_res}",
                coeffs.len()
            )));
        }
        Ok(WaveletCoeffs { face_res, coeffs })
    }

    pub fn face_res(&self) -> usize {
        self.face_res
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn as_slice(&self) -> &[[f64; 3]] {
        &self.coeffs
    }

    pub fn get(&self, idx: WaveletIndex) -> [f64; 3] {
        self.coeffs[idx.flat(self.face_res)]
    }

    /// Sum of squared coefficients per channel.
    pub fn energy(&self) -> [f64; 3] {
        sum_squares(&self.coeffs)
    }
}

fn sum_squares(v: &[[f64; 3]]) -> [f64; 3] {
    let mut e = [0.0; 3];
    for c in v {
        for ch in 0..3 {
            e[ch] += c[ch] * c[ch];
        }
    }
    e
}

fn check_pow2(n: usize) -> Result<()> {
    if !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "face resolution {n} is not a power of two"
        )));
    }
    Ok(())
}

fn forward_face(data: &mut [[f64; 3]], n: usize, scratch: &mut Vec<[f64; 3]>) {
    let mut size = n;
    while size > 1 {
        let half = size / 2;
        scratch.clear();
        scratch.extend_from_slice(data);
        for j in 0..half {
            for i in 0..half {
                let a = scratch[(2 * j) * n + 2 * i];
                let b = scratch[(2 * j) * n + 2 * i + 1];
                let c = scratch[(2 * j + 1) * n + 2 * i];
                let d = scratch[(2 * j + 1) * n + 2 * i + 1];
                for ch in 0..3 {
                    data[j * n + i][ch] = 0.5 * (a[ch] + b[ch] + c[ch] + d[ch]);
                    data[j * n + i + half][ch] = 0.5 * (a[ch] - b[ch] + c[ch] - d[ch]);
                    data[(j + half) * n + i][ch] = 0.5 * (a[ch] + b[ch] - c[ch] - d[ch]);
                    data[(j + half) * n + i + half][ch] = 0.5 * (a[ch] - b[ch] - c[ch] + d[ch]);
                }
            }
        }
        size = half;
    }
}

fn inverse_face(data: &mut [[f64; 3]], n: usize, scratch: &mut Vec<[f64; 3]>) {
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        scratch.clear();
        scratch.extend_from_slice(data);
        for j in 0..half {
            for i in 0..half {
                let avg = scratch[j * n + i];
                let du = scratch[j * n + i + half];
                let dv = scratch[(j + half) * n + i];
                let dd = scratch[(j + half) * n + i + half];
                for ch in 0..3 {
                    data[(2 * j) * n + 2 * i][ch] = 0.5 * (avg[ch] + du[ch] + dv[ch] + dd[ch]);
                    data[(2 * j) * n + 2 * i + 1][ch] = 0.5 * (avg[ch] - du[ch] + dv[ch] - dd[ch]);
                    data[(2 * j + 1) * n + 2 * i][ch] = 0.5 * (avg[ch] + du[ch] - dv[ch] - dd[ch]);
                    data[(2 * j + 1) * n + 2 * i + 1][ch] =
                        0.5 * (avg[ch] - du[ch] - dv[ch] + dd[ch]);
                }
            }
        }
        size *= 2;
    }
}

/// Raw radiance in, coefficients out; no solid-angle weighting is applied.
pub fn forward(c: &Cubemap) -> Result<WaveletCoeffs> {
    let n = c.face_res();
    check_pow2(n)?;
    let mut coeffs = c.texels().to_vec();
    let mut scratch = Vec::with_capacity(n * n);
    for face in coeffs.chunks_exact_mut(n * n) {
        forward_face(face, n, &mut scratch);
    }
    Ok(WaveletCoeffs { face_res: n, coeffs })
}

/// Reconstructs texel values. Negative results (possible after truncating
/// coefficients) are returned as-is in the raw buffer.
pub fn inverse_raw(w: &WaveletCoeffs) -> Vec<[f64; 3]> {
    let n = w.face_res;
    let mut data = w.coeffs.clone();
    let mut scratch = Vec::with_capacity(n * n);
    for face in data.chunks_exact_mut(n * n) {
        inverse_face(face, n, &mut scratch);
    }
    data
}

/// Inverse transform into a cubemap of resolution `face_res`.
pub fn inverse(w: &WaveletCoeffs, face_res: usize) -> Result<Cubemap> {
    if face_res != w.face_res {
        return Err(Error::InvalidArgument(format!(
            "coefficients have resolution {}, requested {face_res}",
            w.face_res
        )));
    }
    let texels = inverse_raw(w)
        .into_iter()
        .map(|c| c.map(|x| if x < 0.0 && x > -1e-9 { 0.0 } else { x }))
        .collect();
    Cubemap::from_texels(face_res, texels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    Magnitude,
    #[default]
    AreaWeighted,
}

/// How an RGB coefficient is reduced to one ranking score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelScore {
    #[default]
    Luminance,
    MaxChannel,
}

impl ChannelScore {
    fn score(self, c: [f64; 3]) -> f64 {
        let a = c.map(f64::abs);
        match self {
            ChannelScore::Luminance => luminance(a),
            ChannelScore::MaxChannel => a[0].max(a[1]).max(a[2]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selected {
    pub index: WaveletIndex,
    pub coeff: [f64; 3],
    pub score: f64,
}

pub fn select_topk(w: &WaveletCoeffs, k: usize, mode: SelectionMode) -> Result<Vec<Selected>> {
    select_topk_with(w, k, mode, ChannelScore::Luminance)
}

/// The `k` best-scoring coefficients, sorted by descending score with ties
/// broken by `(face, u, v)`.
pub fn select_topk_with(
    w: &WaveletCoeffs,
    k: usize,
    mode: SelectionMode,
    channel: ChannelScore,
) -> Result<Vec<Selected>> {
    let total = w.len();
    if k == 0 || k > total {
        return Err(Error::OutOfRange(format!("k = {k} with {total} coefficients")));
    }
    let mut all = ranked(w, mode, channel);
    all.truncate(k);
    Ok(all)
}

/// Every coefficient in selection order.
pub fn ranked(w: &WaveletCoeffs, mode: SelectionMode, channel: ChannelScore) -> Vec<Selected> {
    let n = w.face_res;
    let areas = match mode {
        SelectionMode::Magnitude => None,
        SelectionMode::AreaWeighted => Some(support_areas(n)),
    };
    let mut all: Vec<Selected> = w
        .coeffs
        .iter()
        .enumerate()
        .map(|(i, &coeff)| {
            let index = WaveletIndex::from_flat(i, n);
            let mut score = channel.score(coeff);
            if let Some(areas) = &areas {
                score *= areas[i % (n * n)];
            }
            Selected { index, coeff, score }
        })
        .collect();
    all.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.index.cmp(&b.index))
    });
    all
}

/// Support areas for one face (identical on every face), flat `v * N + u`.
pub fn support_areas(face_res: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(face_res * face_res);
    for v in 0..face_res {
        for u in 0..face_res {
            out.push(support_area(WaveletIndex::new(0, u, v), face_res).unwrap());
        }
    }
    out
}

/// Fraction of total L2 energy (all channels) carried by `selected`.
pub fn retained_energy(w: &WaveletCoeffs, selected: &[Selected]) -> f64 {
    let total: f64 = w.energy().iter().sum();
    if total == 0.0 {
        return 1.0;
    }
    let kept: f64 = selected
        .iter()
        .map(|s| s.coeff.iter().map(|x| x * x).sum::<f64>())
        .sum();
    kept / total
}

/// Retained energy after keeping the top `k` for each `k` in `ks`.
pub fn energy_curve(w: &WaveletCoeffs, mode: SelectionMode, ks: &[usize]) -> Vec<(usize, f64)> {
    let order = ranked(w, mode, ChannelScore::Luminance);
    let total: f64 = w.energy().iter().sum();
    let mut prefix = Vec::with_capacity(order.len() + 1);
    let mut acc = 0.0;
    prefix.push(0.0);
    for s in &order {
        acc += s.coeff.iter().map(|x| x * x).sum::<f64>();
        prefix.push(acc);
    }
    ks.iter()
        .map(|&k| {
            let k = k.min(order.len());
            (k, if total == 0.0 { 1.0 } else { prefix[k] / total })
        })
        .collect()
}
