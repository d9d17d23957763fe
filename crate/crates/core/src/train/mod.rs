//! Optimization of the feature field and decoder against path-traced
//! indirect images.

pub mod adam;
pub mod checkpoint;
pub mod sampling;
pub mod tonemap;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cubemap::Cubemap;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::feature_field::FieldConfig;
use crate::imageio::Image;
use crate::param::ParamSet;
use crate::real::Real;
use crate::render::{self, psnr, rel_l2};
use crate::rng;
use crate::transport::{ModelGrads, PixelInput, TransportModel};
use crate::wavelet::{self, SelectionMode, WaveletCoeffs};

use adam::{cosine_schedule, Adam, AdamConfig};
use checkpoint::CheckpointMeta;
use sampling::PixelSampler;
use tonemap::Tonemap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub wavelets_per_step: usize,
    /// Draws per importance strategy; a step uses four times this many pixels.
    pub pixels_per_strategy: usize,
    pub seed: u64,
    pub tonemap_mu: f64,
    pub tonemap_eps: f64,
    pub adam: AdamConfig,
    /// Final learning-rate fraction of the cosine schedule.
    pub lr_floor: f64,
    /// Held-out evaluation period in steps (0 disables it).
    pub eval_every: usize,
    pub eval_wavelets: usize,
    /// Checkpoint period in steps (0 saves only at the end).
    pub checkpoint_every: usize,
    pub field: FieldConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            steps: 5000,
            wavelets_per_step: 64,
            pixels_per_strategy: 128,
            seed: 0,
            tonemap_mu: tonemap::MU,
            tonemap_eps: tonemap::EPS,
            adam: AdamConfig::default(),
            lr_floor: 0.01,
            eval_every: 250,
            eval_wavelets: 64,
            checkpoint_every: 0,
            field: FieldConfig::desk(),
        }
    }

    pub fn paper() -> Self {
        TrainConfig {
            steps: 20000,
            wavelets_per_step: 300,
            pixels_per_strategy: 512,
            field: FieldConfig::paper(),
            ..TrainConfig::desk()
        }
    }

    pub fn pixels_per_step(&self) -> usize {
        4 * self.pixels_per_strategy
    }

    pub fn validate(&self) -> Result<()> {
        if self.wavelets_per_step == 0 || self.pixels_per_strategy == 0 {
            return Err(Error::InvalidArgument("wavelets_per_step and pixels_per_strategy must be positive".into()));
        }
        if !(self.tonemap_mu > 0.0 && self.tonemap_eps > 0.0) {
            return Err(Error::InvalidArgument("tonemap parameters must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_floor) {
            return Err(Error::InvalidArgument("lr_floor must lie in [0, 1]".into()));
        }
        self.field.validate()
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out_psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out_loss: Option<f64>,
}

/// Tonemapped squared error, averaged over pixels and channels, with its
/// gradient with respect to the transport outputs.
///
/// `t` is pixel-major `n · |K| · 3`. Returns the loss and `dL/dT`.
pub fn loss_and_output_grad<T: Real>(
    t: &[T],
    lighting: &[[f64; 3]],
    targets: &[[f64; 3]],
    tm: &Tonemap<f64>,
) -> (f64, Vec<T>) {
    let nk = lighting.len();
    let n = targets.len();
    assert_eq!(t.len(), n * nk * 3, "transport output has the wrong length");
    let scale = 1.0 / (3 * n.max(1)) as f64;
    let mut loss = 0.0;
    let mut d_t = vec![T::zero(); t.len()];
    for (i, target) in targets.iter().enumerate() {
        let mut pred = [0.0; 3];
        for (k, l) in lighting.iter().enumerate() {
            for c in 0..3 {
                pred[c] += l[c] * t[(i * nk + k) * 3 + c].to_f64();
            }
        }
        let mut d_pred = [0.0; 3];
        for c in 0..3 {
            let r = tm.apply(pred[c]) - tm.apply(target[c]);
            loss += r * r * scale;
            d_pred[c] = 2.0 * r * tm.grad(pred[c]) * scale;
        }
        for (k, l) in lighting.iter().enumerate() {
            for c in 0..3 {
                d_t[(i * nk + k) * 3 + c] = T::lit(l[c] * d_pred[c]);
            }
        }
    }
    (loss, d_t)
}

/// Loss and parameter gradients of one batch.
pub fn batch_loss_and_grads<T: Real>(
    model: &TransportModel<T>,
    pixels: &[PixelInput],
    wavelets: &[(usize, [f64; 3])],
    targets: &[[f64; 3]],
    tm: &Tonemap<f64>,
) -> Result<(f64, ModelGrads<T>)> {
    let indices: Vec<usize> = wavelets.iter().map(|w| w.0).collect();
    let lighting: Vec<[f64; 3]> = wavelets.iter().map(|w| w.1).collect();
    let (t, cache) = model.forward(pixels, &indices)?;
    let (loss, d_t) = loss_and_output_grad(&t, &lighting, targets, tm);
    let mut grads = model.zero_grads();
    model.backward(&cache, &d_t, &mut grads);
    Ok((loss, grads))
}

/// Everything needed to score the model on one image.
#[derive(Debug, Clone)]
pub struct EvalCase {
    pub name: String,
    pub inputs: Vec<Option<PixelInput>>,
    pub lighting: Cubemap,
    /// Ground-truth indirect image.
    pub target: Image,
    pub direct: Option<Image>,
}

impl EvalCase {
    pub fn from_dataset(ds: &Dataset, row: usize) -> EvalCase {
        let g = ds.gbuffer(row);
        EvalCase {
            name: ds.rows[row].image.clone(),
            inputs: (0..g.pixels.len()).map(|i| g.pixel_input(i)).collect(),
            lighting: ds.lighting(row),
            target: ds.images[row].clone(),
            direct: ds.directs[row].clone(),
        }
    }

    pub fn all(ds: &Dataset) -> Vec<EvalCase> {
        (0..ds.rows.len()).map(|r| EvalCase::from_dataset(ds, r)).collect()
    }

    pub fn hit_mask(&self) -> Vec<bool> {
        self.inputs.iter().map(|p| p.is_some()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub name: String,
    pub wavelets_used: usize,
    /// Indirect PSNR over surface pixels.
    pub psnr: f64,
    pub rel_l2: f64,
    /// Tonemapped squared error over surface pixels.
    pub loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub full_rel_l2: Option<f64>,
}

/// Predicted indirect image for a case; background pixels are zero to
/// match the ground truth, which holds no environment radiance.
pub fn predict_case(model: &TransportModel<f32>, case: &EvalCase, num_wavelets: Option<usize>, mode: SelectionMode) -> Result<(Image, usize)> {
    let selected = render::select_wavelets(&case.lighting, num_wavelets, mode)?;
    let shaded = render::shade_pixels(model, &case.inputs, &selected, None)?;
    let pixels = shaded.iter().map(|v| v.map_or([0.0; 3], |c| c.map(|x| x as f32))).collect();
    Ok((Image::from_pixels(case.target.width, case.target.height, pixels)?, selected.len()))
}

pub fn evaluate_case(
    model: &TransportModel<f32>,
    case: &EvalCase,
    num_wavelets: Option<usize>,
    mode: SelectionMode,
    tm: &Tonemap<f64>,
) -> Result<(Image, EvalMetrics)> {
    let (pred, used) = predict_case(model, case, num_wavelets, mode)?;
    let mask = case.hit_mask();
    let mut se = 0.0;
    let mut n = 0usize;
    for ((a, b), m) in pred.pixels.iter().zip(&case.target.pixels).zip(&mask) {
        if *m {
            for c in 0..3 {
                se += (tm.apply(a[c] as f64) - tm.apply(b[c] as f64)).powi(2);
                n += 1;
            }
        }
    }
    let (full_psnr, full_rel_l2) = match &case.direct {
        Some(d) => {
            let full = pred.add(d)?;
            let gt = case.target.add(d)?;
            (Some(psnr(&full, &gt, 1.0, Some(&mask))?), Some(rel_l2(&full, &gt, Some(&mask))?))
        }
        None => (None, None),
    };
    let metrics = EvalMetrics {
        name: case.name.clone(),
        wavelets_used: used,
        psnr: psnr(&pred, &case.target, 1.0, Some(&mask))?,
        rel_l2: rel_l2(&pred, &case.target, Some(&mask))?,
        loss: se / n.max(1) as f64,
        full_psnr,
        full_rel_l2,
    };
    Ok((pred, metrics))
}

struct Group {
    coeffs: WaveletCoeffs,
    sampler: PixelSampler,
}

/// Single-writer training loop over an in-memory dataset.
pub struct Trainer {
    cfg: TrainConfig,
    model: TransportModel<f32>,
    adam: Adam<f32>,
    tm: Tonemap<f64>,
    groups: Vec<Group>,
    /// Decoder inputs per row (shared per camera but cheap to keep per row).
    inputs: Vec<std::sync::Arc<Vec<Option<PixelInput>>>>,
    targets: Vec<Image>,
    scene_hash: String,
    step: usize,
}

impl Trainer {
    /// The field's wavelet resolution is taken from the dataset.
    pub fn new(ds: &Dataset, mut cfg: TrainConfig) -> Result<Trainer> {
        if cfg.field.wavelet_face_res != ds.meta.config.face_res {
            log::info!(
                "using the dataset's cubemap resolution {} for the wavelet factors",
                ds.meta.config.face_res
            );
            cfg.field.wavelet_face_res = ds.meta.config.face_res;
        }
        cfg.validate()?;
        if ds.rows.is_empty() {
            return Err(Error::InvalidArgument("dataset has no images".into()));
        }
        let mut per_gbuf: std::collections::BTreeMap<&str, std::sync::Arc<Vec<Option<PixelInput>>>> = Default::default();
        let inputs = ds
            .rows
            .iter()
            .map(|r| {
                per_gbuf
                    .entry(&r.gbuffer)
                    .or_insert_with(|| {
                        let g = &ds.gbuffers[&r.gbuffer];
                        std::sync::Arc::new((0..g.pixels.len()).map(|i| g.pixel_input(i)).collect())
                    })
                    .clone()
            })
            .collect();
        let mut groups = Vec::new();
        for (lighting, rows) in ds.lighting_groups() {
            let coeffs = wavelet::forward(&ds.lighting(rows[0]))?;
            let images: Vec<&Image> = rows.iter().map(|&r| &ds.images[r]).collect();
            let gbufs: Vec<_> = rows.iter().map(|&r| ds.gbuffer(r)).collect();
            let variance = sampling::view_variance_maps(&images, &gbufs);
            let mut entries = Vec::new();
            let mut maps: [Vec<f64>; 4] = Default::default();
            for (j, &r) in rows.iter().enumerate() {
                let g = gbufs[j];
                entries.extend((0..g.pixels.len()).map(|p| (r, p)));
                maps[0].extend(variance[j].iter().map(|v| v.to_f64()));
                maps[1].extend(sampling::high_frequency_map(images[j], g));
                maps[2].extend(sampling::specular_map(g));
                maps[3].extend(sampling::uniform_map(g));
            }
            if maps[3].iter().all(|w| *w == 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "no surface pixels under lighting {}",
                    crate::dataset::lighting_key(&lighting.env_id, lighting.rotation_deg)
                )));
            }
            groups.push(Group {
                coeffs,
                sampler: PixelSampler::new(entries, maps)?,
            });
        }
        let model = TransportModel::<f32>::new(cfg.field.clone(), cfg.seed)?;
        let adam = Adam::new(&model, cfg.adam.clone());
        Ok(Trainer {
            tm: Tonemap::new(cfg.tonemap_mu, cfg.tonemap_eps),
            cfg,
            model,
            adam,
            groups,
            inputs,
            targets: ds.images.clone(),
            scene_hash: ds.meta.scene_hash.clone(),
            step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &TransportModel<f32> {
        &self.model
    }

    pub fn steps_completed(&self) -> usize {
        self.step
    }

    pub fn tonemap(&self) -> &Tonemap<f64> {
        &self.tm
    }

    pub fn lr_scale(&self) -> f64 {
        cosine_schedule(self.step, self.cfg.steps, self.cfg.lr_floor)
    }

    /// Lighting groups are visited in a fresh random order every pass, so
    /// each group is seen equally often.
    fn group_for_step(&self, step: usize) -> usize {
        let n = self.groups.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng::stream(self.cfg.seed, (step / n) as u64, 1));
        order[step % n]
    }

    /// Runs one optimization step and returns its loss (before the update).
    pub fn step(&mut self) -> Result<f64> {
        let group = &self.groups[self.group_for_step(self.step)];
        let mut rng = rng::stream(self.cfg.seed, self.step as u64, 0);
        let count = self.cfg.wavelets_per_step.min(group.coeffs.len());
        let wavelets = sampling::sample_wavelets(&group.coeffs, count, &mut rng)?;
        let mut pixels = Vec::with_capacity(self.cfg.pixels_per_step());
        let mut targets = Vec::with_capacity(self.cfg.pixels_per_step());
        for (row, p) in group.sampler.sample(&mut rng, self.cfg.pixels_per_strategy) {
            if let Some(input) = &self.inputs[row][p] {
                pixels.push(input.clone());
                targets.push(self.targets[row].pixels[p].map(|c| c as f64));
            }
        }
        let (loss, grads) = batch_loss_and_grads(&self.model, &pixels, &wavelets, &targets, &self.tm)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail: format!(
                    "loss {loss}, {} pixels, {} wavelets, max |L| {:.3e}",
                    pixels.len(),
                    wavelets.len(),
                    wavelets.iter().flat_map(|w| w.1).fold(0.0f64, |a, b| a.max(b.abs()))
                ),
            });
        }
        let lr = self.lr_scale();
        self.adam.step(&mut self.model, &grads, lr);
        self.step += 1;
        Ok(loss)
    }

    /// Mean metrics over held-out cases at `eval_wavelets`, area-weighted.
    pub fn evaluate(&self, held_out: &[EvalCase]) -> Result<(f64, f64)> {
        let mut psnr_sum = 0.0;
        let mut loss_sum = 0.0;
        for case in held_out {
            let (_, m) = evaluate_case(&self.model, case, Some(self.cfg.eval_wavelets), SelectionMode::AreaWeighted, &self.tm)?;
            psnr_sum += m.psnr;
            loss_sum += m.loss;
        }
        let n = held_out.len().max(1) as f64;
        Ok((psnr_sum / n, loss_sum / n))
    }

    pub fn meta(&self) -> Result<CheckpointMeta> {
        let mut meta = CheckpointMeta::new(self.cfg.field.clone(), self.model.mlp.config().clone(), &self.scene_hash);
        meta.steps_completed = self.step;
        meta.train_config = serde_json::to_value(&self.cfg)?;
        Ok(meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &self.model, &self.meta()?)
    }

    /// Trains up to `cfg.steps`, writing one JSON line per step to `log`
    /// and checkpoints to `ckpt` at the configured cadence and at the end.
    pub fn run(&mut self, held_out: &[EvalCase], log: &mut dyn Write, ckpt: Option<&Path>) -> Result<Vec<LogRecord>> {
        let mut records = Vec::new();
        let io = |e| Error::io("training log", e);
        while self.step < self.cfg.steps {
            let lr = self.lr_scale();
            let loss = self.step()?;
            let mut rec = LogRecord {
                step: self.step,
                loss,
                lr,
                held_out_psnr: None,
                held_out_loss: None,
            };
            let last = self.step == self.cfg.steps;
            if !held_out.is_empty() && self.cfg.eval_every > 0 && (self.step % self.cfg.eval_every == 0 || last) {
                let (p, l) = self.evaluate(held_out)?;
                rec.held_out_psnr = Some(p);
                rec.held_out_loss = Some(l);
                log::info!("step {} loss {:.5} held-out psnr {:.2} dB", self.step, loss, p);
            }
            serde_json::to_writer(&mut *log, &rec)?;
            log.write_all(b"\n").map_err(io)?;
            if let Some(path) = ckpt {
                if self.cfg.checkpoint_every > 0 && self.step % self.cfg.checkpoint_every == 0 && !last {
                    self.save(path)?;
                }
            }
            records.push(rec);
        }
        log.flush().map_err(io)?;
        if let Some(path) = ckpt {
            self.save(path)?;
        }
        Ok(records)
    }
}

/// Moving average with window `w` (shorter at the start).
pub fn moving_average(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= values[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}
