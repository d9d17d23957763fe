//! Transport decoder: a small ReLU MLP mapping a wavelet feature vector and
//! per-pixel surface attributes to an RGB transport coefficient.
//!
//! Input layout, in order: feature vector `h` (P values), spherical
//! harmonics of the reflected view direction (25), shading normal (3),
//! diffuse albedo (3), specular albedo (3), warped roughness (1).
//!
//! The decoder output is multiplied by the mean texel solid angle of the
//! lighting cubemap. Lighting coefficients are raw radiance, so this keeps
//! the learned values near unit scale; per-wavelet variation of the solid
//! angle is still left to the network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brdf::BrdfParams;
use crate::error::{Error, Result};
use crate::feature_field::{FeatureField, FieldCache, FieldConfig, FieldParams};
use crate::math::Vec3;
use crate::param::{ParamSet, TensorMut, TensorRef};
use crate::real::{gemm, MatRef, Real};
use crate::scene::GBufferSample;
use crate::sh;

pub const PIXEL_ENCODING_LEN: usize = sh::SH_COUNT + 10;

/// Roughness warp giving more resolution to low roughness; maps 0→0, 1→1.
pub fn warp_roughness(sigma: f64) -> f64 {
    (25.0 * sigma + 1.0).ln() / 26f64.ln()
}

/// Per-pixel part of the decoder input.
pub fn encode_pixel(wr: Vec3, normal: Vec3, brdf: &BrdfParams) -> [f64; PIXEL_ENCODING_LEN] {
    let mut out = [0.0; PIXEL_ENCODING_LEN];
    let wr = wr.try_normalize().unwrap_or(Vec3::new(0.0, 1.0, 0.0));
    sh::eval_into(wr, &mut out[..sh::SH_COUNT]);
    let o = sh::SH_COUNT;
    out[o..o + 3].copy_from_slice(&normal.to_array());
    out[o + 3..o + 6].copy_from_slice(&brdf.kd);
    out[o + 6..o + 9].copy_from_slice(&brdf.ks);
    out[o + 9] = warp_roughness(brdf.roughness);
    out
}

/// Full decoder input for one G-buffer sample and feature vector.
pub fn encode(sample: &GBufferSample, h: &[f64]) -> Result<Vec<f64>> {
    let brdf = sample
        .brdf
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("cannot encode a pixel without a surface hit".into()))?;
    let mut v = h.to_vec();
    v.extend_from_slice(&encode_pixel(sample.wr, sample.normal, brdf));
    Ok(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub outputs: usize,
}

impl MlpConfig {
    pub fn for_features(feature_dim: usize) -> Self {
        MlpConfig {
            input_dim: feature_dim + PIXEL_ENCODING_LEN,
            hidden: 128,
            hidden_layers: 2,
            outputs: 3,
        }
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend(std::iter::repeat_n(self.hidden, self.hidden_layers));
        d.push(self.outputs);
        d
    }
}

const LAYER_NAMES: [(&str, &str); 8] = [
    ("mlp.w0", "mlp.b0"),
    ("mlp.w1", "mlp.b1"),
    ("mlp.w2", "mlp.b2"),
    ("mlp.w3", "mlp.b3"),
    ("mlp.w4", "mlp.b4"),
    ("mlp.w5", "mlp.b5"),
    ("mlp.w6", "mlp.b6"),
    ("mlp.w7", "mlp.b7"),
];

/// Layer `i` maps `dims[i]` to `dims[i+1]`; weights are `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    dims: Vec<usize>,
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Real> MlpParams<T> {
    pub fn zeros(cfg: &MlpConfig) -> Result<Self> {
        let dims = cfg.dims();
        if cfg.input_dim == 0 || cfg.hidden == 0 || cfg.outputs == 0 || dims.len() - 1 > LAYER_NAMES.len() {
            return Err(Error::InvalidArgument(format!("unsupported MLP shape {dims:?}")));
        }
        let layers = dims.len() - 1;
        Ok(MlpParams {
            weights: (0..layers).map(|i| vec![T::zero(); dims[i] * dims[i + 1]]).collect(),
            biases: (0..layers).map(|i| vec![T::zero(); dims[i + 1]]).collect(),
            dims,
        })
    }
}

impl<T: Real> ParamSet<T> for MlpParams<T> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut v = vec![];
        for i in 0..self.weights.len() {
            v.push(TensorRef {
                name: LAYER_NAMES[i].0,
                shape: vec![self.dims[i + 1], self.dims[i]],
                data: &self.weights[i],
            });
            v.push(TensorRef {
                name: LAYER_NAMES[i].1,
                shape: vec![self.dims[i + 1]],
                data: &self.biases[i],
            });
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut v = vec![];
        for (i, (w, b)) in self.weights.iter_mut().zip(self.biases.iter_mut()).enumerate() {
            v.push(TensorMut { name: LAYER_NAMES[i].0, data: w });
            v.push(TensorMut { name: LAYER_NAMES[i].1, data: b });
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct Mlp<T> {
    cfg: MlpConfig,
    pub params: MlpParams<T>,
}

/// Layer inputs of a batched forward pass.
pub struct MlpCache<T> {
    rows: usize,
    acts: Vec<Vec<T>>,
}

impl<T: Real> Mlp<T> {
    pub fn zeros(cfg: MlpConfig) -> Result<Self> {
        let params = MlpParams::zeros(&cfg)?;
        Ok(Mlp { cfg, params })
    }

    /// He-uniform hidden layers, Glorot-uniform output layer, zero biases.
    pub fn new(cfg: MlpConfig, seed: u64) -> Result<Self> {
        let mut mlp = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = mlp.params.dims.clone();
        let last = dims.len() - 2;
        for (i, w) in mlp.params.weights.iter_mut().enumerate() {
            let (fan_in, fan_out) = (dims[i] as f64, dims[i + 1] as f64);
            let limit = if i == last {
                (6.0 / (fan_in + fan_out)).sqrt()
            } else {
                (6.0 / fan_in).sqrt()
            };
            for v in w.iter_mut() {
                *v = T::lit(rng.random_range(-limit..limit));
            }
        }
        Ok(mlp)
    }

    pub fn config(&self) -> &MlpConfig {
        &self.cfg
    }

    /// `x` is `rows × input_dim`; returns `rows × outputs`.
    pub fn forward(&self, x: &[T], rows: usize) -> (Vec<T>, MlpCache<T>) {
        let dims = &self.params.dims;
        assert_eq!(x.len(), rows * dims[0], "input has the wrong length");
        let layers = self.params.weights.len();
        let mut acts = vec![x.to_vec()];
        for i in 0..layers {
            let (din, dout) = (dims[i], dims[i + 1]);
            let mut z = vec![T::zero(); rows * dout];
            for r in 0..rows {
                z[r * dout..(r + 1) * dout].copy_from_slice(&self.params.biases[i]);
            }
            gemm(
                T::one(),
                MatRef::new(&acts[i], rows, din),
                MatRef::new(&self.params.weights[i], dout, din).t(),
                T::one(),
                &mut z,
            );
            if i + 1 < layers {
                for v in &mut z {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            acts.push(z);
        }
        let out = acts.pop().expect("at least one layer");
        (out, MlpCache { rows, acts })
    }

    /// Accumulates weight gradients for upstream `d_out` into `grads`.
    /// Returns the gradient with respect to the input when requested.
    pub fn backward(&self, cache: &MlpCache<T>, d_out: &[T], grads: &mut MlpParams<T>, want_input_grad: bool) -> Option<Vec<T>> {
        let dims = &self.params.dims;
        let rows = cache.rows;
        let layers = self.params.weights.len();
        assert_eq!(d_out.len(), rows * dims[layers], "upstream gradient has the wrong length");
        let mut delta = d_out.to_vec();
        for i in (0..layers).rev() {
            let (din, dout) = (dims[i], dims[i + 1]);
            let input = &cache.acts[i];
            gemm(
                T::one(),
                MatRef::new(&delta, rows, dout).t(),
                MatRef::new(input, rows, din),
                T::one(),
                &mut grads.weights[i],
            );
            let db = &mut grads.biases[i];
            for r in 0..rows {
                for j in 0..dout {
                    db[j] += delta[r * dout + j];
                }
            }
            if i == 0 && !want_input_grad {
                return None;
            }
            let mut d_in = vec![T::zero(); rows * din];
            gemm(
                T::one(),
                MatRef::new(&delta, rows, dout),
                MatRef::new(&self.params.weights[i], dout, din),
                T::zero(),
                &mut d_in,
            );
            if i > 0 {
                for (d, a) in d_in.iter_mut().zip(input) {
                    if *a <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            delta = d_in;
        }
        Some(delta)
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        let conv = |v: &Vec<T>| v.iter().map(|x| U::lit(Real::to_f64(*x))).collect::<Vec<U>>();
        Mlp {
            cfg: self.cfg.clone(),
            params: MlpParams {
                dims: self.params.dims.clone(),
                weights: self.params.weights.iter().map(conv).collect(),
                biases: self.params.biases.iter().map(conv).collect(),
            },
        }
    }
}

/// Decoder input for one shaded pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelInput {
    pub position: [f64; 3],
    pub encoding: [f64; PIXEL_ENCODING_LEN],
}

impl PixelInput {
    pub fn from_sample(sample: &GBufferSample) -> Option<PixelInput> {
        let brdf = sample.brdf.as_ref()?;
        if !sample.hit {
            return None;
        }
        Some(PixelInput {
            position: sample.position_normalized.to_array(),
            encoding: encode_pixel(sample.wr, sample.normal, brdf),
        })
    }
}

/// Mean solid angle of one lighting texel, `4π / (6 N²)`.
pub fn output_scale(cfg: &FieldConfig) -> f64 {
    4.0 * std::f64::consts::PI / cfg.wavelet_count() as f64
}

/// Feature field and decoder together.
#[derive(Debug, Clone)]
pub struct TransportModel<T> {
    pub field: FeatureField<T>,
    pub mlp: Mlp<T>,
}

/// Gradient accumulator matching [`TransportModel`]'s parameters.
#[derive(Debug, Clone)]
pub struct ModelGrads<T> {
    pub field: FieldParams<T>,
    pub mlp: MlpParams<T>,
}

pub struct ModelCache<T> {
    field: FieldCache<T>,
    mlp: MlpCache<T>,
}

impl<T: Real> TransportModel<T> {
    pub fn new(field_cfg: FieldConfig, seed: u64) -> Result<Self> {
        let mlp_cfg = MlpConfig::for_features(field_cfg.feature_dim);
        Ok(TransportModel {
            field: FeatureField::new(field_cfg, crate::rng::mix(seed, 1, 0))?,
            mlp: Mlp::new(mlp_cfg, crate::rng::mix(seed, 2, 0))?,
        })
    }

    pub fn zeros(field_cfg: FieldConfig) -> Result<Self> {
        let mlp_cfg = MlpConfig::for_features(field_cfg.feature_dim);
        Ok(TransportModel {
            field: FeatureField::zeros(field_cfg)?,
            mlp: Mlp::zeros(mlp_cfg)?,
        })
    }

    pub fn zero_grads(&self) -> ModelGrads<T> {
        ModelGrads {
            field: FieldParams::zeros(self.field.config()),
            mlp: MlpParams::zeros(self.mlp.config()).expect("shape already validated"),
        }
    }

    /// Transport coefficients for every pixel and wavelet, pixel-major,
    /// three channels each.
    pub fn forward(&self, pixels: &[PixelInput], wavelets: &[usize]) -> Result<(Vec<T>, ModelCache<T>)> {
        let points: Vec<[f64; 3]> = pixels.iter().map(|p| p.position).collect();
        let (h, field_cache) = self.field.forward(&points, wavelets)?;
        let p = self.field.config().feature_dim;
        let nk = wavelets.len();
        let din = p + PIXEL_ENCODING_LEN;
        let rows = pixels.len() * nk;
        let mut x = vec![T::zero(); rows * din];
        for (i, px) in pixels.iter().enumerate() {
            let enc: Vec<T> = px.encoding.iter().map(|v| T::lit(*v)).collect();
            for j in 0..nk {
                let r = i * nk + j;
                x[r * din..r * din + p].copy_from_slice(&h[r * p..(r + 1) * p]);
                x[r * din + p..(r + 1) * din].copy_from_slice(&enc);
            }
        }
        let (mut out, mlp_cache) = self.mlp.forward(&x, rows);
        let scale = T::lit(output_scale(self.field.config()));
        for v in out.iter_mut() {
            *v = *v * scale;
        }
        Ok((
            out,
            ModelCache {
                field: field_cache,
                mlp: mlp_cache,
            },
        ))
    }

    pub fn backward(&self, cache: &ModelCache<T>, d_out: &[T], grads: &mut ModelGrads<T>) {
        let p = self.field.config().feature_dim;
        let din = p + PIXEL_ENCODING_LEN;
        let scale = T::lit(output_scale(self.field.config()));
        let d_out: Vec<T> = d_out.iter().map(|v| *v * scale).collect();
        let d_x = self
            .mlp
            .backward(&cache.mlp, &d_out, &mut grads.mlp, true)
            .expect("input gradient requested");
        let rows = cache.mlp.rows;
        let mut d_h = vec![T::zero(); rows * p];
        for r in 0..rows {
            d_h[r * p..(r + 1) * p].copy_from_slice(&d_x[r * din..r * din + p]);
        }
        self.field.backward(&cache.field, &d_h, &mut grads.field);
    }

    pub fn cast<U: Real>(&self) -> TransportModel<U> {
        TransportModel {
            field: self.field.cast(),
            mlp: self.mlp.cast(),
        }
    }
}

impl<T: Real> ParamSet<T> for TransportModel<T> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut v = self.field.params.tensors();
        v.extend(self.mlp.params.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut v = self.field.params.tensors_mut();
        v.extend(self.mlp.params.tensors_mut());
        v
    }
}

impl<T: Real> ParamSet<T> for ModelGrads<T> {
    fn tensors(&self) -> Vec<TensorRef<'_, T>> {
        let mut v = self.field.tensors();
        v.extend(self.mlp.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<TensorMut<'_, T>> {
        let mut v = self.field.tensors_mut();
        v.extend(self.mlp.tensors_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    fn tiny_cfg() -> MlpConfig {
        MlpConfig {
            input_dim: 6,
            hidden: 5,
            hidden_layers: 2,
            outputs: 3,
        }
    }

    fn random_input(rows: usize, dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Straightforward per-row reference.
    fn naive_forward(mlp: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        let n = mlp.params.weights.len();
        for i in 0..n {
            let din = a.len();
            let dout = mlp.params.biases[i].len();
            let mut z = mlp.params.biases[i].clone();
            for o in 0..dout {
                for j in 0..din {
                    z[o] += mlp.params.weights[i][o * din + j] * a[j];
                }
            }
            if i + 1 < n {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }

    #[test]
    fn roughness_warp_values() {
        assert_eq!(warp_roughness(0.0), 0.0);
        assert!((warp_roughness(1.0) - 1.0).abs() < 1e-15);
        assert!((warp_roughness(0.2) - 6f64.ln() / 26f64.ln()).abs() < 1e-15);
        assert!((warp_roughness(0.2) - 0.5499).abs() < 1e-4);
        let mut prev = -1.0;
        for i in 0..=100 {
            let w = warp_roughness(i as f64 / 100.0);
            assert!(w > prev);
            prev = w;
        }
    }

    #[test]
    fn encoding_layout() {
        let brdf = BrdfParams::new([0.1, 0.2, 0.3], [0.4, 0.5, 0.6], 0.2).unwrap();
        let sample = GBufferSample {
            hit: true,
            backface: false,
            position: Vec3::splat(0.0),
            position_normalized: Vec3::splat(0.5),
            normal: Vec3::new(0.0, 1.0, 0.0),
            wo: Vec3::new(0.0, 1.0, 0.0),
            wr: Vec3::new(0.0, 3.0, 0.0),
            brdf: Some(brdf),
        };
        let h = vec![7.0; 16];
        let e = encode(&sample, &h).unwrap();
        assert_eq!(e.len(), 16 + 35);
        assert!((e[16] - 0.28209479177387814).abs() < 1e-15);
        assert_eq!(&e[16 + 25..16 + 28], &[0.0, 1.0, 0.0]);
        assert_eq!(&e[16 + 28..16 + 31], &[0.1, 0.2, 0.3]);
        assert_eq!(&e[16 + 31..16 + 34], &[0.4, 0.5, 0.6]);
        assert!((e[16 + 34] - 0.5499).abs() < 1e-4);
        // Non-unit reflection direction is renormalized.
        let sh_unit = sh::eval(Vec3::new(0.0, 1.0, 0.0));
        assert!((e[16 + 2] - sh_unit[2]).abs() < 1e-15 && (e[16 + 1] - sh_unit[1]).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mlp = Mlp::<f64>::zeros(tiny_cfg()).unwrap();
        let (out, _) = mlp.forward(&random_input(4, 6, 1), 4);
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dead_first_layer_outputs_final_bias() {
        let mut mlp = Mlp::<f64>::new(tiny_cfg(), 2).unwrap();
        mlp.params.weights[0].fill(0.0);
        mlp.params.biases[0].fill(-1.0);
        mlp.params.biases[1].fill(-0.5);
        mlp.params.biases[2] = vec![0.25, -0.75, 1.5];
        let (out, _) = mlp.forward(&random_input(3, 6, 3), 3);
        for r in 0..3 {
            assert_eq!(&out[r * 3..r * 3 + 3], &[0.25, -0.75, 1.5]);
        }
    }

    #[test]
    fn batched_forward_matches_naive_reference() {
        let mut mlp = Mlp::<f64>::new(MlpConfig::for_features(16), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for b in &mut mlp.params.biases {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.1..0.1));
        }
        let rows = 7;
        let x = random_input(rows, 51, 6);
        let (out, _) = mlp.forward(&x, rows);
        for r in 0..rows {
            let o = naive_forward(&mlp, &x[r * 51..(r + 1) * 51]);
            for c in 0..3 {
                assert!((out[r * 3 + c] - o[c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mlp = Mlp::<f64>::new(tiny_cfg(), 7).unwrap();
        let (_, cache) = mlp.forward(&random_input(2, 6, 8), 2);
        let mut g = MlpParams::zeros(mlp.config()).unwrap();
        let dx = mlp.backward(&cache, &[0.0; 6], &mut g, true).unwrap();
        assert!(g.tensors().iter().all(|t| t.data.iter().all(|v| *v == 0.0)));
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut mlp = Mlp::<f64>::new(tiny_cfg(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for b in &mut mlp.params.biases {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.3..0.3));
        }
        let rows = 4;
        let x = random_input(rows, 6, 11);
        let up: Vec<f64> = (0..rows * 3).map(|i| (i as f64 * 0.7).sin()).collect();
        let obj = |m: &Mlp<f64>, xx: &[f64]| -> f64 {
            let (o, _) = m.forward(xx, rows);
            o.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = mlp.forward(&x, rows);
        let mut g = MlpParams::zeros(mlp.config()).unwrap();
        let dx = mlp.backward(&cache, &up, &mut g, true).unwrap();
        let eps = 1e-3;
        let check = |fd: f64, an: f64, what: &str| {
            let denom = fd.abs().max(an.abs()).max(1e-6);
            assert!((fd - an).abs() / denom < 1e-3, "{what}: fd {fd} analytic {an}");
        };
        let n_tensors = g.tensors().len();
        for ti in 0..n_tensors {
            let len = g.tensors()[ti].data.len();
            for idx in 0..len {
                let mut p = mlp.clone();
                p.params.tensors_mut()[ti].data[idx] += eps;
                let mut m = mlp.clone();
                m.params.tensors_mut()[ti].data[idx] -= eps;
                let fd = (obj(&p, &x) - obj(&m, &x)) / (2.0 * eps);
                check(fd, g.tensors()[ti].data[idx], &format!("tensor {ti}[{idx}]"));
            }
        }
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (obj(&mlp, &xp) - obj(&mlp, &xm)) / (2.0 * eps);
            check(fd, dx[idx], &format!("input {idx}"));
        }
    }

    #[test]
    fn model_parameter_order_is_stable() {
        let m = TransportModel::<f32>::zeros(FieldConfig::desk()).unwrap();
        let names: Vec<&str> = m.tensors().iter().map(|t| t.name).collect();
        assert_eq!(
            names,
            vec![
                "field.hash", "field.wavelet", "field.adapter", "field.projection", "mlp.w0", "mlp.b0", "mlp.w1", "mlp.b1", "mlp.w2",
                "mlp.b2"
            ]
        );
        let g = m.zero_grads();
        let gn: Vec<&str> = g.tensors().iter().map(|t| t.name).collect();
        assert_eq!(names, gn);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = TransportModel::<f32>::new(FieldConfig::desk(), 3).unwrap();
        let brdf = BrdfParams::new([0.5; 3], [0.1; 3], 0.3).unwrap();
        let px = PixelInput {
            position: [0.3, 0.4, 0.5],
            encoding: encode_pixel(Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 1.0, 0.0), &brdf),
        };
        let (a, _) = m.forward(&[px.clone()], &[0, 5, 100]).unwrap();
        let (b, _) = m.forward(&[px], &[0, 5, 100]).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| v.is_finite()));
    }
}
