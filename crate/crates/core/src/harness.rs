//! Experiment orchestration: task definitions, result tables, the
//! fine-tuning overfitting study, memorization probes, calibration sweeps,
//! and manifests that make every run replayable bit for bit.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{run_baseline, BaselineConfig, BaselineMethod};
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::model::{self, ModelParams};
use crate::operators::{add_noise, ForwardOperator, NoiseModel, OperatorKind};
use crate::phantoms::{load_dataset, Dataset};
use crate::solvers::{
    self, reconstruct_fixed_prior, reconstruct_self_supervised, write_pnm, NoiseConvention,
    ReconResult, SolverConfig,
};
use crate::tensor::{LinearMap, Tensor};
use crate::training::{self, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Ct20,
    Ct60,
    Deblur,
    Sr4,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ct20" => Task::Ct20,
            "ct60" => Task::Ct60,
            "deblur" => Task::Deblur,
            "sr4" => Task::Sr4,
            other => return Err(Error::config(format!("unknown task '{other}'"))),
        })
    }
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Ct20 => "ct20",
            Task::Ct60 => "ct60",
            Task::Deblur => "deblur",
            Task::Sr4 => "sr4",
        }
    }

    pub fn operator(&self, image_size: usize, channels: usize) -> Result<ForwardOperator> {
        match self {
            Task::Ct20 => ForwardOperator::radon(image_size, 20, image_size * 3 / 2),
            Task::Ct60 => ForwardOperator::radon(image_size, 60, image_size * 3 / 2),
            Task::Deblur => ForwardOperator::blur(image_size, channels, 9),
            Task::Sr4 => ForwardOperator::downsample(image_size, channels, 4),
        }
    }

    fn is_ct(&self) -> bool {
        matches!(self, Task::Ct20 | Task::Ct60)
    }

    /// Per-task solver defaults. The naive (no-refinement, mismatched prior)
    /// runs use a slightly smaller final noise level for CT.
    pub fn solver_config(&self, method: SolveMethod, seed: u64) -> SolverConfig {
        let (gamma, m_cg, sigma_max) = if self.is_ct() {
            (10.0, 5, 10.0)
        } else {
            (1.0, 1, 1.0)
        };
        let sigma_min = if self.is_ct() && method == SolveMethod::Naive {
            0.005
        } else {
            0.01
        };
        SolverConfig {
            t_steps: 200,
            sigma_max,
            sigma_min,
            eps_step: 1.0,
            gamma,
            m_cg,
            k_refine: 10,
            refine_iters: 5,
            refine_lr: 1e-5,
            noise_convention: NoiseConvention::PaperLiteral,
            patch: 16,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    /// Fixed prior with the naive schedule (mismatched prior, no refinement).
    Naive,
    /// Algorithm with per-measurement weight refinement.
    Ss,
    /// Fixed prior, default schedule.
    Fixed,
}

impl std::str::FromStr for SolveMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "naive" => SolveMethod::Naive,
            "ss" => SolveMethod::Ss,
            "fixed" => SolveMethod::Fixed,
            other => return Err(Error::config(format!("unknown method '{other}'"))),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PlanMethod {
    Baseline {
        label: String,
        method: BaselineMethod,
        #[serde(default)]
        config: Option<BaselineConfig>,
    },
    Solver {
        label: String,
        method: SolveMethod,
        checkpoint: PathBuf,
        #[serde(default)]
        config: Option<SolverConfig>,
        /// Ablation axis: override the number of refine Adam steps.
        #[serde(default)]
        refine_iters: Option<usize>,
    },
}

impl PlanMethod {
    pub fn label(&self) -> &str {
        match self {
            PlanMethod::Baseline { label, .. } => label,
            PlanMethod::Solver { label, .. } => label,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub task: Task,
    pub methods: Vec<PlanMethod>,
    /// Test image dataset (PT1 + sidecar).
    pub dataset: PathBuf,
    /// Cap on the number of test images; 0 means all.
    #[serde(default)]
    pub max_images: usize,
    #[serde(default)]
    pub noise_sigma: f32,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Write per-image reconstructions as PGM/PPM.
    #[serde(default)]
    pub save_images: bool,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("plan needs at least one method"));
        }
        let mut seen = std::collections::HashSet::new();
        for m in &self.methods {
            if !seen.insert(m.label().to_string()) {
                return Err(Error::config(format!("duplicate label '{}'", m.label())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultRow {
    pub label: String,
    pub image: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn mean_psnr(&self, label: &str) -> f64 {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.psnr)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    pub fn mean_ssim(&self, label: &str) -> f64 {
        let vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.label == label)
            .map(|r| r.ssim)
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.label) {
                out.push(r.label.clone());
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("label,image,psnr,ssim\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.label, r.image, r.psnr, r.ssim));
        }
        for label in self.labels() {
            s.push_str(&format!(
                "{},mean,{},{}\n",
                label,
                self.mean_psnr(&label),
                self.mean_ssim(&label)
            ));
        }
        s
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

fn hash_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(sha256_hex(serde_json::to_string(v)?.as_bytes()))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub plan: ExperimentPlan,
    pub config_hashes: Vec<(String, String)>,
    pub seed: u64,
    pub code_version: String,
    pub emitted_files: Vec<String>,
    /// Stand-ins for full-scale components are declared here.
    pub substitutions: Vec<String>,
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a.wrapping_add(b.wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn load_test_images(path: &Path, max_images: usize) -> Result<Dataset> {
    let mut ds = load_dataset(path)?;
    if max_images > 0 && ds.images.len() > max_images {
        ds.images.truncate(max_images);
        ds.meta.n_images = max_images;
    }
    Ok(ds)
}

/// Simulated measurement for one test image.
pub fn simulate_measurement(
    x: &Tensor,
    op: &ForwardOperator,
    noise_sigma: f32,
    seed: u64,
) -> Result<Tensor> {
    add_noise(
        &op.forward(x)?,
        NoiseModel {
            sigma_meas: noise_sigma,
            seed,
        },
    )
}

/// One reconstruction under a plan method. Exposed so callers can run single
/// cases with exactly the harness wiring.
pub fn reconstruct_case(
    method: &PlanMethod,
    y: &Tensor,
    op: &ForwardOperator,
    task: Task,
    seed: u64,
) -> Result<ReconResult> {
    match method {
        PlanMethod::Baseline { method, config, .. } => {
            let cfg = config
                .clone()
                .unwrap_or_else(|| BaselineConfig::preset(*method, &op.kind));
            let mut cfg = cfg;
            cfg.method = *method;
            // published RED stepsize assumes a normalized CT operator
            if matches!(op.kind, OperatorKind::Radon { .. })
                && *method == BaselineMethod::PnpRed
                && config.is_none()
            {
                cfg.mu = 5e-4;
            }
            run_baseline(y, op, &cfg)
        }
        PlanMethod::Solver {
            method,
            checkpoint,
            config,
            refine_iters,
            ..
        } => {
            let (m, _) = model::load_checkpoint(checkpoint)?;
            let mut cfg = config
                .clone()
                .unwrap_or_else(|| task.solver_config(*method, 0));
            cfg.seed = seed;
            if let Some(ri) = refine_iters {
                cfg.refine_iters = *ri;
            }
            let a: Arc<dyn LinearMap> = Arc::new(op.clone());
            match method {
                SolveMethod::Ss => reconstruct_self_supervised(y, &a, &m, &cfg),
                SolveMethod::Naive | SolveMethod::Fixed => {
                    reconstruct_fixed_prior(y, &a, &m, &cfg)
                }
            }
        }
    }
}

/// Runs every (method, image) cell of the plan, writes results.csv, optional
/// reconstruction images, and manifest.json into the output directory.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ResultsTable> {
    plan.validate()?;
    let ds = load_test_images(&plan.dataset, plan.max_images)?;
    std::fs::create_dir_all(&plan.output_dir)?;
    let mut rows = Vec::new();
    let mut emitted = Vec::new();
    let mut hashes = Vec::new();

    for method in &plan.methods {
        let label = method.label().to_string();
        match method {
            PlanMethod::Baseline { method: bm, config, .. } => {
                let cfg = config
                    .clone()
                    .unwrap_or_else(|| {
                        let op = plan
                            .task
                            .operator(ds.meta.image_size, ds.meta.channels)
                            .expect("plan operator");
                        BaselineConfig::preset(*bm, &op.kind)
                    });
                hashes.push((label.clone(), hash_json(&cfg)?));
            }
            PlanMethod::Solver { method: sm, config, .. } => {
                let cfg = config
                    .clone()
                    .unwrap_or_else(|| plan.task.solver_config(*sm, 0));
                hashes.push((label.clone(), hash_json(&cfg)?));
            }
        }
        for (i, x) in ds.images.iter().enumerate() {
            let op = plan.task.operator(ds.meta.image_size, ds.meta.channels)?;
            let y = simulate_measurement(x, &op, plan.noise_sigma, mix(plan.seed, i as u64))?;
            let seed = mix(plan.seed, mix(0x7ec0, i as u64));
            let r = reconstruct_case(method, &y, &op, plan.task, seed)?;
            let p = psnr(&r.image, x)?;
            let s = ssim(&r.image, x)?;
            rows.push(ResultRow {
                label: label.clone(),
                image: i,
                psnr: p,
                ssim: s,
            });
            if plan.save_images {
                let dir = plan.output_dir.join(&label);
                std::fs::create_dir_all(&dir)?;
                let ext = if ds.meta.channels == 3 { "ppm" } else { "pgm" };
                let file = dir.join(format!("img_{i:03}.{ext}"));
                write_pnm(&r.image.clamp01(), &file)?;
                emitted.push(file.to_string_lossy().to_string());
            }
        }
    }

    let table = ResultsTable { rows };
    let csv_path = plan.output_dir.join("results.csv");
    std::fs::write(&csv_path, table.to_csv())?;
    emitted.push(csv_path.to_string_lossy().to_string());

    let manifest = Manifest {
        plan: plan.clone(),
        config_hashes: hashes,
        seed: plan.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        emitted_files: emitted,
        substitutions: vec![
            "block-matching denoiser replaced by non-local means in PnP baselines".to_string(),
        ],
    };
    let mpath = plan.output_dir.join("manifest.json");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&mpath)?);
    serde_json::to_writer_pretty(&mut f, &manifest)?;
    f.flush()?;
    Ok(table)
}

/// Re-runs an experiment from its manifest; returns the fresh table and
/// whether the regenerated results.csv matches the existing one byte for byte.
pub fn replay_manifest(manifest_path: &Path) -> Result<(ResultsTable, bool)> {
    let manifest: Manifest = serde_json::from_reader(std::fs::File::open(manifest_path)?)?;
    let old_csv = std::fs::read(manifest.plan.output_dir.join("results.csv"))?;
    let table = run_experiment(&manifest.plan)?;
    let new_csv = std::fs::read(manifest.plan.output_dir.join("results.csv"))?;
    Ok((table, old_csv == new_csv))
}

#[derive(Clone, Debug, Serialize)]
pub struct CurvePoint {
    pub budget: usize,
    pub whole_image: bool,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

/// Fine-tunes a base checkpoint on a small dataset for each budget in the
/// grid and evaluates fixed-prior reconstruction on the test set. Run once
/// per model kind; budget 0 is the unmodified base model. Also returns the
/// model at the largest budget so memorization probes can reuse it.
pub fn overfitting_curve(
    base: &ModelParams,
    finetune_ds: &Dataset,
    test_ds: &Dataset,
    budgets: &[usize],
    task: Task,
    finetune_cfg: &TrainConfig,
    solver_cfg: &SolverConfig,
    seed: u64,
) -> Result<(Vec<CurvePoint>, ModelParams)> {
    let whole = !base.arch.positional;
    let mut out = Vec::new();
    // budgets are cumulative: keep training the same model between points
    let mut sorted: Vec<usize> = budgets.to_vec();
    sorted.sort_unstable();
    let mut m = base.clone();
    let mut adam = crate::tensor::AdamState::new(
        &m.params,
        crate::tensor::AdamHyperParams::with_lr(finetune_cfg.lr),
    );
    let mut trained = 0usize;
    for &budget in &sorted {
        if budget > trained {
            let mut cfg = finetune_cfg.clone();
            cfg.steps = budget - trained;
            cfg.whole_image = whole;
            training::run_training(&mut m, &mut adam, finetune_ds, &cfg, None)?;
            trained = budget;
        }
        let (mut psum, mut ssum) = (0.0, 0.0);
        for (i, x) in test_ds.images.iter().enumerate() {
            let op = task.operator(test_ds.meta.image_size, test_ds.meta.channels)?;
            let y = op.forward(x)?;
            let a: Arc<dyn LinearMap> = Arc::new(op);
            let mut cfg = solver_cfg.clone();
            cfg.seed = mix(seed, mix(budget as u64, i as u64));
            let r = reconstruct_fixed_prior(&y, &a, &m, &cfg)?;
            psum += psnr(&r.image, x)?;
            ssum += ssim(&r.image, x)?;
        }
        out.push(CurvePoint {
            budget,
            whole_image: whole,
            mean_psnr: psum / test_ds.images.len() as f64,
            mean_ssim: ssum / test_ds.images.len() as f64,
        });
    }
    Ok((out, m))
}

pub fn write_curve_csv(points: &[CurvePoint], path: &Path) -> Result<()> {
    let mut s = String::from("budget,whole_image,mean_psnr,mean_ssim\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{}\n",
            p.budget, p.whole_image, p.mean_psnr, p.mean_ssim
        ));
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Smallest L2 distance from each sample to any training image.
pub fn min_training_distances(samples: &[Tensor], training: &Dataset) -> Vec<f64> {
    samples
        .iter()
        .map(|s| {
            training
                .images
                .iter()
                .map(|t| s.sub(t).norm_sq().sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub eps_step: f32,
    pub gamma: f32,
    pub psnr: f64,
}

/// Calibration sweep for the unspecified step size (and optionally gamma):
/// fixed-prior reconstruction of one validation phantom per grid point.
pub fn sweep_eps_gamma(
    m: &ModelParams,
    task: Task,
    val_image: &Tensor,
    eps_grid: &[f32],
    gamma_grid: &[f32],
    base_cfg: &SolverConfig,
) -> Result<Vec<SweepPoint>> {
    let sh = val_image.shape();
    let op = task.operator(sh[1], sh[0])?;
    let y = op.forward(val_image)?;
    let a: Arc<dyn LinearMap> = Arc::new(op);
    let mut out = Vec::new();
    for &eps in eps_grid {
        for &gamma in gamma_grid {
            let mut cfg = base_cfg.clone();
            cfg.eps_step = eps;
            cfg.gamma = gamma;
            let p = match reconstruct_fixed_prior(&y, &a, m, &cfg) {
                Ok(r) => psnr(&r.image, val_image)?,
                Err(Error::Divergence(_)) => f64::NEG_INFINITY,
                Err(e) => return Err(e),
            };
            out.push(SweepPoint {
                eps_step: eps,
                gamma,
                psnr: p,
            });
        }
    }
    Ok(out)
}

pub fn write_sweep_csv(points: &[SweepPoint], path: &Path) -> Result<()> {
    let mut s = String::from("eps_step,gamma,psnr\n");
    for p in points {
        s.push_str(&format!("{},{},{}\n", p.eps_step, p.gamma, p.psnr));
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn best_sweep_point(points: &[SweepPoint]) -> Option<&SweepPoint> {
    points
        .iter()
        .max_by(|a, b| a.psnr.total_cmp(&b.psnr))
}

#[derive(Clone, Debug, Serialize)]
pub struct PairedRow {
    pub image: usize,
    pub psnr_without: f64,
    pub psnr_with: f64,
}

/// Paired per-image comparison: fixed-prior versus self-supervised on the
/// same simulated measurements; emits one row per image for a scatter plot.
pub fn paired_ss_study(
    m: &ModelParams,
    test_ds: &Dataset,
    task: Task,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<Vec<PairedRow>> {
    let mut rows = Vec::new();
    for (i, x) in test_ds.images.iter().enumerate() {
        let op = task.operator(test_ds.meta.image_size, test_ds.meta.channels)?;
        let y = op.forward(x)?;
        let a: Arc<dyn LinearMap> = Arc::new(op);
        let mut c = cfg.clone();
        c.seed = mix(seed, i as u64);
        let without = reconstruct_fixed_prior(&y, &a, m, &c)?;
        let with = reconstruct_self_supervised(&y, &a, m, &c)?;
        rows.push(PairedRow {
            image: i,
            psnr_without: psnr(&without.image, x)?,
            psnr_with: psnr(&with.image, x)?,
        });
    }
    Ok(rows)
}

pub fn write_paired_csv(rows: &[PairedRow], path: &Path) -> Result<()> {
    let mut s = String::from("image,psnr_without,psnr_with\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.image, r.psnr_without, r.psnr_with));
    }
    std::fs::write(path, s)?;
    Ok(())
}

/// Unconditional samples for the memorization probe.
pub fn sample_for_memorization(
    m: &ModelParams,
    task: Task,
    image_size: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<Tensor>> {
    let mut cfg = task.solver_config(SolveMethod::Fixed, seed);
    cfg.gamma = 0.0;
    solvers::sample_unconditional(m, &cfg, image_size, n)
}
