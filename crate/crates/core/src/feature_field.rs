//! Low-rank spatial-by-wavelet feature field.
//!
//! A feature vector for surface point `x` and wavelet `k` is
//!
//! ```text
//! h_k(x) = Uᵀ ((A · S(x)) ⊙ W[k])
//! ```
//!
//! where `S` is a multiresolution hash encoding of the normalized position,
//! `A` a linear adapter from the concatenated grid features to the rank `M`,
//! `W[k]` a per-wavelet row of `M` factors (looked up, not interpolated)
//! and `U` an `M × P` projection. All four are trained jointly.

use std::sync::atomic::{AtomicBool, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{ParamSet, TensorMut, TensorRef};
use crate::real::{gemm, MatRef, Real};

const PRIMES: [u32; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub per_level_scale: f64,
    /// Face resolution of the cubemap whose wavelets are indexed.
    pub wavelet_face_res: usize,
    /// Number of rank-one terms `M`.
    pub rank: usize,
    /// Output feature dimension `P`.
    pub feature_dim: usize,
}

impl FieldConfig {
    pub fn desk() -> Self {
        FieldConfig {
            levels: 8,
            features_per_level: 2,
            log2_table_size: 14,
            base_resolution: 16,
            per_level_scale: 1.3,
            wavelet_face_res: 16,
            rank: 16,
            feature_dim: 16,
        }
    }

    pub fn paper() -> Self {
        FieldConfig {
            levels: 32,
            features_per_level: 2,
            log2_table_size: 19,
            base_resolution: 16,
            per_level_scale: 1.3,
            wavelet_face_res: 64,
            rank: 64,
            feature_dim: 64,
        }
    }

    pub fn table_size(&self) -> usize {
        1usize << self.log2_table_size
    }

    pub fn grid_features(&self) -> usize {
        self.levels * self.features_per_level
    }

    pub fn wavelet_count(&self) -> usize {
        6 * self.wavelet_face_res * self.wavelet_face_res
    }

    /// Closed-form parameter count.
    pub fn param_budget(&self) -> usize {
        self.levels * self.table_size() * self.features_per_level
            + self.wavelet_count() * self.rank
            + self.rank * self.feature_dim
            + self.rank * self.grid_features()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("field config: {m}")));
        if self.levels == 0 || self.features_per_level == 0 || self.rank == 0 || self.feature_dim == 0 {
            return bad("levels, features_per_level, rank and feature_dim must be positive");
        }
        if !(1..=26).contains(&self.log2_table_size) {
            return bad("log2_table_size must be in 1..=26");
        }
        if self.base_resolution == 0 || !(self.per_level_scale >= 1.0) {
            return bad("base_resolution must be positive and per_level_scale >= 1");
        }
        if !self.wavelet_face_res.is_power_of_two() {
            return bad("wavelet_face_res must be a power of two");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Level {
    res: usize,
    dense: bool,
}

/// Corner rows and trilinear weights for one query, eight per level.
#[derive(Debug, Clone)]
pub struct GridLookup {
    rows: Vec<u32>,
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct HashGrid {
    levels: Vec<Level>,
    table_size: usize,
    features: usize,
}

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

impl HashGrid {
    pub fn new(cfg: &FieldConfig) -> Self {
        let table_size = cfg.table_size();
        let levels = (0..cfg.levels)
            .map(|l| {
                let res = ((cfg.base_resolution as f64 * cfg.per_level_scale.powi(l as i32)).floor() as usize).max(1);
                let side = res as u128 + 1;
                Level {
                    res,
                    dense: side * side * side <= table_size as u128,
                }
            })
            .collect();
        HashGrid {
            levels,
            table_size,
            features: cfg.features_per_level,
        }
    }

    pub fn level_resolution(&self, level: usize) -> usize {
        self.levels[level].res
    }

    pub fn is_dense(&self, level: usize) -> bool {
        self.levels[level].dense
    }

    pub fn output_len(&self) -> usize {
        self.levels.len() * self.features
    }

    /// Table row (within the level) holding a lattice corner.
    pub fn corner_row(&self, level: usize, c: [u32; 3]) -> usize {
        let lv = self.levels[level];
        if lv.dense {
            let s = lv.res + 1;
            c[0] as usize + s * (c[1] as usize + s * c[2] as usize)
        } else {
            let h = c[0].wrapping_mul(PRIMES[0]) ^ c[1].wrapping_mul(PRIMES[1]) ^ c[2].wrapping_mul(PRIMES[2]);
            h as usize % self.table_size
        }
    }

    pub fn lookup(&self, x: [f64; 3]) -> GridLookup {
        let mut p = x;
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
            if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
                log::warn!("feature query {x:?} outside the unit cube; clamping");
            }
            p = p.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        }
        let n = self.levels.len();
        let mut rows = Vec::with_capacity(8 * n);
        let mut weights = Vec::with_capacity(8 * n);
        for (l, lv) in self.levels.iter().enumerate() {
            let mut cell = [0u32; 3];
            let mut frac = [0.0; 3];
            for a in 0..3 {
                let q = p[a] * lv.res as f64;
                let i = (q.floor() as usize).min(lv.res - 1);
                cell[a] = i as u32;
                frac[a] = q - i as f64;
            }
            for corner in 0..8u32 {
                let mut c = cell;
                let mut w = 1.0;
                for a in 0..3 {
                    if corner >> a & 1 == 1 {
                        c[a] += 1;
                        w *= frac[a];
                    } else {
                        w *= 1.0 - frac[a];
                    }
                }
                rows.push((l * self.table_size + self.corner_row(l, c)) as u32);
                weights.push(w);
            }
        }
        GridLookup { rows, weights }
    }

    /// Blends the table into `out` (length `levels · features`).
    pub fn gather<T: Real>(&self, table: &[T], lk: &GridLookup, out: &mut [T]) {
        let f = self.features;
        out.fill(T::zero());
        for (i, (&row, &w)) in lk.rows.iter().zip(&lk.weights).enumerate() {
            let l = i / 8;
            let w = T::lit(w);
            let src = &table[row as usize * f..row as usize * f + f];
            for j in 0..f {
                out[l * f + j] += w * src[j];
            }
        }
    }

    /// Adds `weight · upstream` into the corner rows of `grad`.
    pub fn scatter<T: Real>(&self, grad: &mut [T], lk: &GridLookup, upstream: &[T]) {
        let f = self.features;
        for (i, (&row, &w)) in lk.rows.iter().zip(&lk.weights).enumerate() {
            let l = i / 8;
            let w = T::lit(w);
            let dst = &mut grad[row as usize * f..row as usize * f + f];
            for j in 0..f {
                dst[j] += w * upstream[l * f + j];
            }
        }
    }
}

/// Learnable tensors of the field. Also used as the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams<T> {
    /// `levels × table_size × features_per_level`.
    pub hash: Vec<T>,
    /// `wavelets × M`.
    pub wavelet: Vec<T>,
    /// `M × grid_features`.
    pub adapter: Vec<T>,
    /// `M × P`.
    pub projection: Vec<T>,
    shapes: [Vec<usize>; 4],
}

impl<T: Real> FieldParams<T> {
    pub fn zeros(cfg: &FieldConfig) -> Self {
        let shapes = [
            vec![cfg.levels, cfg.table_size(), cfg.features_per_level],
            vec![cfg.wavelet_count(), cfg.rank],
            vec![cfg.rank, cfg.grid_features()],
            vec![cfg.rank, cfg.feature_dim],
        ];
        let len = |s: &Vec<usize>| s.iter().product::<usize>();
        FieldParams {
            hash: vec![T::zero(); len(&shapes[0])],
            wavelet: vec![T::zero(); len(&shapes[1])],
            adapter: vec![T::zero(); len(&shapes[2])],
            projection: vec![T::zero(); len(&shapes[3])],
            shapes,
        }
    }
}

impl<T: Real> ParamSet<T> for FieldParams<T> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        vec![
            TensorRef { name: "field.hash", shape: self.shapes[0].clone(), data: &self.hash },
            TensorRef { name: "field.wavelet", shape: self.shapes[1].clone(), data: &self.wavelet },
            TensorRef { name: "field.adapter", shape: self.shapes[2].clone(), data: &self.adapter },
            TensorRef { name: "field.projection", shape: self.shapes[3].clone(), data: &self.projection },
        ]
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        vec![
            TensorMut { name: "field.hash", data: &mut self.hash },
            TensorMut { name: "field.wavelet", data: &mut self.wavelet },
            TensorMut { name: "field.adapter", data: &mut self.adapter },
            TensorMut { name: "field.projection", data: &mut self.projection },
        ]
    }
}

#[derive(Debug, Clone)]
pub struct FeatureField<T> {
    cfg: FieldConfig,
    grid: HashGrid,
    pub params: FieldParams<T>,
}

/// Intermediate values of a batched forward pass, kept for the backward pass.
pub struct FieldCache<T> {
    lookups: Vec<GridLookup>,
    grid_out: Vec<T>,
    spatial: Vec<T>,
    mixed: Vec<T>,
    wavelets: Vec<usize>,
}

impl<T: Real> FeatureField<T> {
    /// All parameters zero.
    pub fn zeros(cfg: FieldConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = HashGrid::new(&cfg);
        let params = FieldParams::zeros(&cfg);
        let field = FeatureField { cfg, grid, params };
        assert_eq!(field.params.param_count(), field.cfg.param_budget(), "parameter budget mismatch");
        Ok(field)
    }

    pub fn new(cfg: FieldConfig, seed: u64) -> Result<Self> {
        let mut f = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut f.params.hash {
            *v = T::lit(rng.random_range(-1e-4..1e-4));
        }
        let normal = |std: f64| Normal::new(0.0, std).expect("finite std");
        let w = normal(0.1);
        for v in &mut f.params.wavelet {
            *v = T::lit(w.sample(&mut rng));
        }
        let (m, g, p) = (f.cfg.rank, f.cfg.grid_features(), f.cfg.feature_dim);
        if m == g {
            for i in 0..m {
                f.params.adapter[i * g + i] = T::one();
            }
        } else {
            let a = normal(1.0 / (g as f64).sqrt());
            for v in &mut f.params.adapter {
                *v = T::lit(a.sample(&mut rng));
            }
        }
        let u = normal(1.0 / (m as f64).sqrt());
        for v in &mut f.params.projection[..m * p] {
            *v = T::lit(u.sample(&mut rng));
        }
        Ok(f)
    }

    pub fn config(&self) -> &FieldConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &HashGrid {
        &self.grid
    }

    /// Concatenated multiresolution grid features at `x`.
    pub fn hash_query(&self, x: [f64; 3]) -> Vec<T> {
        let mut out = vec![T::zero(); self.grid.output_len()];
        self.grid.gather(&self.params.hash, &self.grid.lookup(x), &mut out);
        out
    }

    fn check_wavelet(&self, k: usize) -> Result<()> {
        if k >= self.cfg.wavelet_count() {
            return Err(Error::OutOfRange(format!(
                "wavelet {k} out of range for {} wavelets",
                self.cfg.wavelet_count()
            )));
        }
        Ok(())
    }

    /// Feature vector for one point and one wavelet.
    pub fn eval(&self, x: [f64; 3], k: usize) -> Result<Vec<T>> {
        let (h, _) = self.forward(&[x], &[k])?;
        Ok(h)
    }

    /// Parameter gradients of `upstream · h_k(x)`.
    pub fn grad(&self, x: [f64; 3], k: usize, upstream: &[T]) -> Result<FieldParams<T>> {
        let (_, cache) = self.forward(&[x], &[k])?;
        let mut g = FieldParams::zeros(&self.cfg);
        self.backward(&cache, upstream, &mut g);
        Ok(g)
    }

    /// Features for every `(point, wavelet)` pair, point-major:
    /// row `i · wavelets.len() + j` holds `h_{wavelets[j]}(points[i])`.
    pub fn forward(&self, points: &[[f64; 3]], wavelets: &[usize]) -> Result<(Vec<T>, FieldCache<T>)> {
        for &k in wavelets {
            self.check_wavelet(k)?;
        }
        let (n, nk) = (points.len(), wavelets.len());
        let (m, p, g) = (self.cfg.rank, self.cfg.feature_dim, self.cfg.grid_features());
        let lookups: Vec<GridLookup> = points.iter().map(|&x| self.grid.lookup(x)).collect();
        let mut grid_out = vec![T::zero(); n * g];
        for (i, lk) in lookups.iter().enumerate() {
            self.grid.gather(&self.params.hash, lk, &mut grid_out[i * g..(i + 1) * g]);
        }
        let mut spatial = vec![T::zero(); n * m];
        gemm(
            T::one(),
            MatRef::new(&grid_out, n, g),
            MatRef::new(&self.params.adapter, m, g).t(),
            T::zero(),
            &mut spatial,
        );
        let mut mixed = vec![T::zero(); n * nk * m];
        for i in 0..n {
            let s = &spatial[i * m..(i + 1) * m];
            for (j, &k) in wavelets.iter().enumerate() {
                let w = &self.params.wavelet[k * m..(k + 1) * m];
                let row = &mut mixed[(i * nk + j) * m..(i * nk + j + 1) * m];
                for q in 0..m {
                    row[q] = s[q] * w[q];
                }
            }
        }
        let mut h = vec![T::zero(); n * nk * p];
        gemm(
            T::one(),
            MatRef::new(&mixed, n * nk, m),
            MatRef::new(&self.params.projection, m, p),
            T::zero(),
            &mut h,
        );
        Ok((
            h,
            FieldCache {
                lookups,
                grid_out,
                spatial,
                mixed,
                wavelets: wavelets.to_vec(),
            },
        ))
    }

    /// Accumulates parameter gradients for upstream `d_h` (same layout as
    /// the forward output) into `grads`.
    pub fn backward(&self, cache: &FieldCache<T>, d_h: &[T], grads: &mut FieldParams<T>) {
        let n = cache.lookups.len();
        let nk = cache.wavelets.len();
        let (m, p, g) = (self.cfg.rank, self.cfg.feature_dim, self.cfg.grid_features());
        if n == 0 || nk == 0 {
            return;
        }
        assert_eq!(d_h.len(), n * nk * p, "upstream gradient has the wrong length");
        gemm(
            T::one(),
            MatRef::new(&cache.mixed, n * nk, m).t(),
            MatRef::new(d_h, n * nk, p),
            T::one(),
            &mut grads.projection,
        );
        let mut d_mixed = vec![T::zero(); n * nk * m];
        gemm(
            T::one(),
            MatRef::new(d_h, n * nk, p),
            MatRef::new(&self.params.projection, m, p).t(),
            T::zero(),
            &mut d_mixed,
        );
        let mut d_spatial = vec![T::zero(); n * m];
        for i in 0..n {
            let s = &cache.spatial[i * m..(i + 1) * m];
            for (j, &k) in cache.wavelets.iter().enumerate() {
                let dm = &d_mixed[(i * nk + j) * m..(i * nk + j + 1) * m];
                let w = &self.params.wavelet[k * m..(k + 1) * m];
                let dw = &mut grads.wavelet[k * m..(k + 1) * m];
                for q in 0..m {
                    d_spatial[i * m + q] += dm[q] * w[q];
                    dw[q] += dm[q] * s[q];
                }
            }
        }
        gemm(
            T::one(),
            MatRef::new(&d_spatial, n, m).t(),
            MatRef::new(&cache.grid_out, n, g),
            T::one(),
            &mut grads.adapter,
        );
        let mut d_grid = vec![T::zero(); n * g];
        gemm(
            T::one(),
            MatRef::new(&d_spatial, n, m),
            MatRef::new(&self.params.adapter, m, g),
            T::zero(),
            &mut d_grid,
        );
        for (i, lk) in cache.lookups.iter().enumerate() {
            self.grid.scatter(&mut grads.hash, lk, &d_grid[i * g..(i + 1) * g]);
        }
    }

    pub fn cast<U: Real>(&self) -> FeatureField<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::lit(Real::to_f64(*x))).collect();
        FeatureField {
            cfg: self.cfg.clone(),
            grid: self.grid.clone(),
            params: FieldParams {
                hash: conv(&self.params.hash),
                wavelet: conv(&self.params.wavelet),
                adapter: conv(&self.params.adapter),
                projection: conv(&self.params.projection),
                shapes: self.params.shapes.clone(),
            },
        }
    }
}

/// Dense target tensor `H[point, wavelet, feature]` built from random
/// rank-one factors, for checking that the field can represent it.
#[derive(Debug, Clone)]
pub struct LowRankTarget {
    pub points: Vec<[f64; 3]>,
    pub wavelets: Vec<usize>,
    pub feature_dim: usize,
    pub rank: usize,
    pub values: Vec<f64>,
}

impl LowRankTarget {
    pub fn random(rank: usize, points: usize, wavelets: &[usize], feature_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..points).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let mut gauss = || -> f64 { Normal::new(0.0, 1.0).unwrap().sample(&mut rng) };
        let a: Vec<f64> = (0..points * rank).map(|_| gauss()).collect();
        let b: Vec<f64> = (0..wavelets.len() * rank).map(|_| gauss()).collect();
        let c: Vec<f64> = (0..rank * feature_dim).map(|_| gauss()).collect();
        let nk = wavelets.len();
        let mut values = vec![0.0; points * nk * feature_dim];
        for i in 0..points {
            for j in 0..nk {
                for r in 0..rank {
                    let s = a[i * rank + r] * b[j * rank + r];
                    for q in 0..feature_dim {
                        values[(i * nk + j) * feature_dim + q] += s * c[r * feature_dim + q];
                    }
                }
            }
        }
        LowRankTarget {
            points: pts,
            wavelets: wavelets.to_vec(),
            feature_dim,
            rank,
            values,
        }
    }
}

/// Fits a field to `target` by Adam on the squared error and returns it with
/// the final relative L2 error.
pub fn fit_lowrank_sanity(target: &LowRankTarget, cfg: FieldConfig, steps: usize, lr: f64, seed: u64) -> Result<(FeatureField<f64>, f64)> {
    use crate::train::adam::{cosine_schedule, Adam, AdamConfig};
    if cfg.feature_dim != target.feature_dim {
        return Err(Error::InvalidArgument("feature_dim differs from the target".into()));
    }
    let mut field = FeatureField::<f64>::new(cfg, seed)?;
    // Start the spatial factor away from zero so the product is not stuck at
    // a saddle.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for v in &mut field.params.hash {
        *v = rng.random_range(-0.5..0.5);
    }
    let adam_cfg = AdamConfig {
        lr_grid: lr,
        lr_mlp: lr,
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(&field.params, adam_cfg);
    let norm: f64 = target.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut grads = FieldParams::zeros(field.config());
    let mut rel = f64::INFINITY;
    for step in 0..=steps {
        let (h, cache) = field.forward(&target.points, &target.wavelets)?;
        let diff: Vec<f64> = h.iter().zip(&target.values).map(|(a, b)| a - b).collect();
        rel = diff.iter().map(|d| d * d).sum::<f64>().sqrt() / norm.max(1e-300);
        if step == steps {
            break;
        }
        let scale = 2.0 / diff.len() as f64;
        let d_h: Vec<f64> = diff.iter().map(|d| d * scale).collect();
        grads.fill_zero();
        field.backward(&cache, &d_h, &mut grads);
        adam.step(&mut field.params, &grads, cosine_schedule(step, steps, 0.01));
    }
    Ok((field, rel))
}
