//! Denoising score matching on patches, plus small-dataset fine-tuning.
//!
//! Each optimizer step draws one patch size, a batch of clean patches from
//! the padded training canvases, per-sample noise levels (log-uniform), and
//! minimizes the mean squared denoising error with Adam. Steps are keyed to
//! a counter-based RNG so a run resumed from a checkpoint is bit-identical
//! to the uninterrupted one.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Arch, Dropout, ModelParams, WeightSet};
use crate::patch;
use crate::phantoms::Dataset;
use crate::tensor::{adam_update, AdamHyperParams, AdamState, Graph, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub sigma_min: f32,
    pub sigma_max: f32,
    pub batch_size: usize,
    /// (patch size, probability); probabilities must sum to 1.
    pub patch_sizes: Vec<(usize, f32)>,
    pub lr: f32,
    pub steps: usize,
    /// EMA half-life measured in training images seen.
    pub ema_halflife_images: f64,
    pub dropout: f32,
    pub seed: u64,
    /// 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    /// Train on whole images without patch extraction.
    pub whole_image: bool,
    /// Padding used to build the training canvas; matches inference geometry.
    pub pad: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma_min: 0.002,
            sigma_max: 40.0,
            batch_size: 16,
            patch_sizes: vec![(16, 1.0)],
            lr: 1e-3,
            steps: 2000,
            ema_halflife_images: 10_000.0,
            dropout: 0.05,
            seed: 0,
            checkpoint_every: 0,
            whole_image: false,
            pad: 16,
        }
    }
}

impl TrainConfig {
    pub fn finetune_default() -> Self {
        TrainConfig {
            patch_sizes: vec![(16, 0.5), (12, 0.3), (8, 0.2)],
            lr: 1e-4,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min <= self.sigma_max) {
            return Err(Error::config("sigma range must be positive and ordered"));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::config("batch_size and steps must be positive"));
        }
        if self.patch_sizes.is_empty() {
            return Err(Error::config("patch_sizes must be nonempty"));
        }
        let total: f32 = self.patch_sizes.iter().map(|&(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-5 || self.patch_sizes.iter().any(|&(s, p)| s == 0 || p < 0.0) {
            return Err(Error::config("patch size probabilities must sum to 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Deterministic per-(seed, step, lane) stream.
fn step_rng(seed: u64, step: u64, lane: u64) -> ChaCha8Rng {
    let mut z = seed ^ 0x5851_f42d_4c95_7f2d;
    for v in [step, lane] {
        z = z.wrapping_add(v).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    ChaCha8Rng::seed_from_u64(z)
}

fn pick_patch_size(sizes: &[(usize, f32)], rng: &mut ChaCha8Rng) -> usize {
    let u: f32 = rng.random();
    let mut acc = 0.0;
    for &(s, p) in sizes {
        acc += p;
        if u < acc {
            return s;
        }
    }
    sizes.last().unwrap().0
}

fn log_uniform_sigma(cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> f32 {
    let lo = cfg.sigma_min.ln();
    let hi = cfg.sigma_max.ln();
    (lo + (hi - lo) * rng.random::<f32>()).exp()
}

/// Padded canvases plus positional planes, built once per dataset.
pub struct TrainingCanvas {
    pub padded: Vec<Tensor>,
    pub pos: patch::PositionalArrays,
    pub channels: usize,
    pub padded_size: usize,
}

impl TrainingCanvas {
    pub fn new(ds: &Dataset, pad: usize) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::config("training dataset is empty"));
        }
        let padded = ds
            .images
            .iter()
            .map(|img| patch::pad_image(img, pad))
            .collect::<Result<Vec<_>>>()?;
        let s = ds.meta.image_size + 2 * pad;
        Ok(TrainingCanvas {
            padded,
            pos: patch::positional_arrays(s),
            channels: ds.meta.channels,
            padded_size: s,
        })
    }

    /// Clean patch plus its positional window at a uniform location.
    pub fn sample_patch(&self, ps: usize, rng: &mut ChaCha8Rng) -> (Tensor, Tensor) {
        let img = &self.padded[rng.random_range(0..self.padded.len())];
        let s = self.padded_size;
        let r0 = rng.random_range(0..=s - ps);
        let c0 = rng.random_range(0..=s - ps);
        let c = self.channels;
        let mut clean = vec![0.0f32; c * ps * ps];
        for ch in 0..c {
            for r in 0..ps {
                let src = &img.data()[(ch * s + r0 + r) * s + c0..][..ps];
                clean[(ch * ps + r) * ps..][..ps].copy_from_slice(src);
            }
        }
        let mut pos = vec![0.0f32; 2 * ps * ps];
        for (pi, plane) in [&self.pos.x, &self.pos.y].into_iter().enumerate() {
            for r in 0..ps {
                let src = &plane.data()[(r0 + r) * s + c0..][..ps];
                pos[(pi * ps + r) * ps..][..ps].copy_from_slice(src);
            }
        }
        (
            Tensor::from_vec(vec![1, c, ps, ps], clean),
            Tensor::from_vec(vec![1, 2, ps, ps], pos),
        )
    }
}

fn add_noise_sample(clean: &Tensor, sigma: f32, rng: &mut ChaCha8Rng) -> Tensor {
    let mut noisy = clean.clone();
    for v in noisy.data_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += sigma * z as f32;
    }
    noisy
}

struct StepSummary {
    loss: f32,
    sigma_mean: f32,
    patch_size: usize,
}

/// One DSM optimizer step over a freshly sampled batch.
fn dsm_step(
    m: &mut ModelParams,
    adam: &mut AdamState,
    canvas: Option<&TrainingCanvas>,
    whole_images: Option<&[Tensor]>,
    cfg: &TrainConfig,
    step: u64,
) -> Result<StepSummary> {
    let mut rng = step_rng(cfg.seed, step, 0);
    let mut drop_rng = step_rng(cfg.seed, step, 1);
    let ps = if cfg.whole_image {
        whole_images.unwrap()[0].shape()[1]
    } else {
        pick_patch_size(&cfg.patch_sizes, &mut rng)
    };

    let mut g = Graph::new();
    let vars = model::param_vars(&mut g, m, WeightSet::Current);
    let mut total_loss = None;
    let mut sigma_sum = 0.0f32;
    let arch = m.arch.clone();
    let mut npix_total = 0usize;

    for _ in 0..cfg.batch_size {
        let (clean, pos) = match canvas {
            Some(cv) => {
                let (c, p) = cv.sample_patch(ps, &mut rng);
                (c, Some(p))
            }
            None => {
                let imgs = whole_images.unwrap();
                let img = &imgs[rng.random_range(0..imgs.len())];
                let sh = img.shape();
                (img.clone().reshape(vec![1, sh[0], sh[1], sh[2]])?, None)
            }
        };
        let sigma = log_uniform_sigma(cfg, &mut rng);
        sigma_sum += sigma;
        let noisy = add_noise_sample(&clean, sigma, &mut rng);
        npix_total += clean.len();

        let x = g.constant(noisy);
        let pos_var = pos.map(|p| g.constant(p));
        let dropout = (cfg.dropout > 0.0).then(|| Dropout {
            rng: &mut drop_rng,
            prob: cfg.dropout,
        });
        let d = model::denoise_graph(&mut g, &arch, &vars, x, pos_var, sigma, dropout)?;
        let target = g.constant(clean);
        let l = g.sq_dist(d, target)?;
        total_loss = Some(match total_loss {
            None => l,
            Some(t) => g.add(t, l)?,
        });
    }

    let total = total_loss.unwrap();
    let loss = g.scale(total, 1.0 / npix_total as f32);
    let grads = g.backward(loss)?;
    let grad_list: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v, &g)).collect();
    adam.hp.lr = cfg.lr;
    adam_update(&mut m.params, &grad_list, adam)?;
    m.step += 1;
    m.ema_halflife = (cfg.ema_halflife_images / cfg.batch_size as f64).max(1.0);
    m.ema_update();

    Ok(StepSummary {
        loss: g.value(loss).item(),
        sigma_mean: sigma_sum / cfg.batch_size as f32,
        patch_size: ps,
    })
}

/// Mean per-pixel DSM loss without updating anything. Uses the requested
/// weight set, no dropout.
pub fn dsm_eval(
    m: &ModelParams,
    ds: &Dataset,
    cfg: &TrainConfig,
    n_samples: usize,
    seed: u64,
    set: WeightSet,
) -> Result<f64> {
    let canvas = (!cfg.whole_image).then(|| TrainingCanvas::new(ds, cfg.pad)).transpose()?;
    let mut rng = step_rng(seed, u64::MAX, 2);
    let mut total = 0.0f64;
    let mut npix = 0usize;
    for _ in 0..n_samples {
        let ps = cfg.patch_sizes[0].0;
        let (clean, pos) = match &canvas {
            Some(cv) => {
                let (c, p) = cv.sample_patch(ps, &mut rng);
                (c, Some(p))
            }
            None => {
                let img = &ds.images[rng.random_range(0..ds.images.len())];
                let sh = img.shape();
                (img.clone().reshape(vec![1, sh[0], sh[1], sh[2]])?, None)
            }
        };
        let sigma = log_uniform_sigma(cfg, &mut rng);
        let noisy = add_noise_sample(&clean, sigma, &mut rng);
        let input = match &pos {
            Some(p) => concat_channels(&noisy, p),
            None => noisy.clone(),
        };
        let d = model::denoise(m, &input, sigma, set)?;
        total += d.sub(&clean).norm_sq();
        npix += clean.len();
    }
    Ok(total / npix as f64)
}

fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (sa, sb) = (a.shape(), b.shape());
    let (bs, ca, cb, h, w) = (sa[0], sa[1], sb[1], sa[2], sa[3]);
    let plane = h * w;
    let mut out = vec![0.0f32; bs * (ca + cb) * plane];
    for i in 0..bs {
        out[i * (ca + cb) * plane..][..ca * plane]
            .copy_from_slice(&a.data()[i * ca * plane..][..ca * plane]);
        out[i * (ca + cb) * plane + ca * plane..][..cb * plane]
            .copy_from_slice(&b.data()[i * cb * plane..][..cb * plane]);
    }
    Tensor::from_vec(vec![bs, ca + cb, h, w], out)
}

/// Runs the training loop from the model's current step. Writes a CSV log
/// and periodic checkpoints when `out_dir` is given. Returns per-step losses.
pub fn run_training(
    m: &mut ModelParams,
    adam: &mut AdamState,
    ds: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<f32>> {
    cfg.validate()?;
    if cfg.whole_image != !m.arch.positional {
        return Err(Error::config("whole_image flag disagrees with architecture"));
    }
    if ds.meta.channels != m.arch.image_channels {
        return Err(Error::config("dataset channels disagree with architecture"));
    }
    let canvas = if cfg.whole_image {
        None
    } else {
        Some(TrainingCanvas::new(ds, cfg.pad)?)
    };
    m.trained_sigma_range = (cfg.sigma_min, cfg.sigma_max);

    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("train_log.csv"))?);
            writeln!(f, "step,loss,sigma_mean,patch_size,wall_seconds")?;
            Some(f)
        }
        None => None,
    };
    let t0 = Instant::now();
    let mut losses = Vec::with_capacity(cfg.steps);
    let first = m.step;
    for _ in 0..cfg.steps {
        let step = m.step;
        let summary = dsm_step(
            m,
            adam,
            canvas.as_ref(),
            if cfg.whole_image { Some(&ds.images) } else { None },
            cfg,
            step,
        )?;
        losses.push(summary.loss);
        if let Some(f) = log.as_mut() {
            writeln!(
                f,
                "{},{},{},{},{:.3}",
                step,
                summary.loss,
                summary.sigma_mean,
                summary.patch_size,
                t0.elapsed().as_secs_f64()
            )?;
        }
        if let Some(dir) = out_dir {
            let done = m.step - first;
            if cfg.checkpoint_every > 0 && done as usize % cfg.checkpoint_every == 0 {
                model::save_checkpoint(m, Some(adam), dir.join(format!("ckpt_{:06}.ckpt", m.step)))?;
            }
        }
    }
    if let Some(mut f) = log {
        f.flush()?;
    }
    if let Some(dir) = out_dir {
        model::save_checkpoint(m, Some(adam), dir.join("ckpt_final.ckpt"))?;
    }
    Ok(losses)
}

/// Fresh model trained from scratch.
pub fn train(
    arch: &Arch,
    ds: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<(ModelParams, AdamState)> {
    let mut m = model::build_model(arch, cfg.seed)?;
    let mut adam = AdamState::new(&m.params, AdamHyperParams::with_lr(cfg.lr));
    run_training(&mut m, &mut adam, ds, cfg, out_dir)?;
    Ok((m, adam))
}

/// Continues training an existing model on a (typically small) dataset.
pub fn finetune(
    m: &mut ModelParams,
    adam: Option<AdamState>,
    ds: &Dataset,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<f32>> {
    let mut adam = adam.unwrap_or_else(|| AdamState::new(&m.params, AdamHyperParams::with_lr(cfg.lr)));
    run_training(m, &mut adam, ds, cfg, out_dir)
}
