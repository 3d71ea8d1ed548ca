//! Throwaway pilot runs used to pick acceptance fixture constants.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use patchprior::harness::{self, SolveMethod, Task};
use patchprior::metrics::psnr;
use patchprior::model::{self, Arch};
use patchprior::phantoms::{generate_dataset, Dataset, Family, PhantomSpec};
use patchprior::solvers::{
    reconstruct_fixed_prior, reconstruct_self_supervised, sample_unconditional, SolverConfig,
};
use patchprior::tensor::{AdamHyperParams, AdamState, LinearMap};
use patchprior::training::{self, TrainConfig};
use patchprior::baselines::{run_baseline, BaselineConfig, BaselineMethod};
use patchprior::operators::add_noise;
use patchprior::operators::NoiseModel;

const DIR: &str = "/root/pilot";

fn patch_arch() -> Arch {
    Arch { image_channels: 1, positional: true, base_channels: 32, n_blocks: 4, sigma_data: 0.5 }
}

fn whole_arch() -> Arch {
    Arch { image_channels: 1, positional: false, base_channels: 32, n_blocks: 6, sigma_data: 0.5 }
}

fn ellipses(first: u64, n: usize) -> Dataset {
    let spec = PhantomSpec { seed: 100, ..Default::default() };
    generate_dataset(Family::Ellipse, &spec, first, n).unwrap()
}

fn ood(first: u64, n: usize) -> Dataset {
    let spec = PhantomSpec { seed: 200, ..Default::default() };
    generate_dataset(Family::Ood, &spec, first, n).unwrap()
}

fn ckpt(name: &str) -> PathBuf {
    Path::new(DIR).join(name)
}

fn main() {
    std::fs::create_dir_all(DIR).unwrap();
    let args: Vec<String> = std::env::args().collect();
    let stage = args.get(1).map(String::as_str).unwrap_or("help");
    let t0 = Instant::now();
    match stage {
        "train-patch" => {
            let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2000);
            let ds = ellipses(0, 200);
            let cfg = TrainConfig { steps, seed: 100, ..Default::default() };
            let (m, adam) = training::train(&patch_arch(), &ds, &cfg, None).unwrap();
            model::save_checkpoint(&m, Some(&adam), ckpt("patch_base.ckpt")).unwrap();
            println!("patch {} steps in {:.1}s", steps, t0.elapsed().as_secs_f64());
        }
        "train-whole" => {
            let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2000);
            let ds = ellipses(0, 200);
            let cfg = TrainConfig {
                steps,
                seed: 101,
                batch_size: 4,
                whole_image: true,
                ..Default::default()
            };
            let (m, adam) = training::train(&whole_arch(), &ds, &cfg, None).unwrap();
            model::save_checkpoint(&m, Some(&adam), ckpt("whole_base.ckpt")).unwrap();
            println!("whole {} steps in {:.1}s", steps, t0.elapsed().as_secs_f64());
        }
        "sweep" => {
            let (m, _) = model::load_checkpoint(ckpt("patch_base.ckpt")).unwrap();
            let val = ellipses(300, 1).images.remove(0);
            let base = Task::Ct60.solver_config(SolveMethod::Fixed, 7);
            let grid: Vec<f32> = args
                .get(2)
                .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
                .unwrap_or_else(|| vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2]);
            let pts = harness::sweep_eps_gamma(&m, Task::Ct60, &val, &grid, &[10.0], &base).unwrap();
            for p in pts {
                println!("eps {:e} gamma {} -> {:.2} dB", p.eps_step, p.gamma, p.psnr);
            }
            println!("sweep in {:.1}s", t0.elapsed().as_secs_f64());
        }
        "ss" => {
            let eps: f32 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2e-4);
            let n: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1);
            let (mp, _) = model::load_checkpoint(ckpt("patch_base.ckpt")).unwrap();
            let mw = model::load_checkpoint(ckpt("whole_base.ckpt")).ok().map(|(m, _)| m);
            let test = ood(0, n);
            for (i, x) in test.images.iter().enumerate() {
                let op = Task::Ct60.operator(64, 1).unwrap();
                let y = op.forward(x).unwrap();
                let a: Arc<dyn LinearMap> = Arc::new(op);
                let mut naive_cfg = Task::Ct60.solver_config(SolveMethod::Naive, 1 + i as u64);
                naive_cfg.eps_step = eps;
                let mut ss_cfg = Task::Ct60.solver_config(SolveMethod::Ss, 1 + i as u64);
                ss_cfg.eps_step = eps;
                let t1 = Instant::now();
                let naive = reconstruct_fixed_prior(&y, &a, &mp, &naive_cfg).unwrap();
                let t_naive = t1.elapsed().as_secs_f64();
                let t1 = Instant::now();
                let ss = reconstruct_self_supervised(&y, &a, &mp, &ss_cfg).unwrap();
                let t_ss = t1.elapsed().as_secs_f64();
                print!(
                    "img {i}: naive {:.2} ({t_naive:.0}s)  ss {:.2} ({t_ss:.0}s)",
                    psnr(&naive.image, x).unwrap(),
                    psnr(&ss.image, x).unwrap()
                );
                if let Some(mw) = &mw {
                    let t1 = Instant::now();
                    let ssw = reconstruct_self_supervised(&y, &a, mw, &ss_cfg).unwrap();
                    print!("  ss-whole {:.2} ({:.0}s)", psnr(&ssw.image, x).unwrap(), t1.elapsed().as_secs_f64());
                }
                println!();
            }
        }
        "train-oracle" => {
            let steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2000);
            let ds = ood(1000, 200);
            let cfg = TrainConfig { steps, seed: 102, ..Default::default() };
            let (m, adam) = training::train(&patch_arch(), &ds, &cfg, None).unwrap();
            model::save_checkpoint(&m, Some(&adam), ckpt("oracle_base.ckpt")).unwrap();
            println!("oracle {} steps in {:.1}s", steps, t0.elapsed().as_secs_f64());
        }
        "headroom" => {
            // prior-dependence headroom: naive OOD prior vs oracle prior
            let noise: f32 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.0);
            let views: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(60);
            let task = if views == 20 { Task::Ct20 } else { Task::Ct60 };
            let (mp, _) = model::load_checkpoint(ckpt("patch_base.ckpt")).unwrap();
            let (mo, _) = model::load_checkpoint(ckpt("oracle_base.ckpt")).unwrap();
            for (i, x) in ood(0, 2).images.iter().enumerate() {
                let op = task.operator(64, 1).unwrap();
                let y = add_noise(&op.forward(x).unwrap(), NoiseModel { sigma_meas: noise, seed: 40 + i as u64 }).unwrap();
                let a: Arc<dyn LinearMap> = Arc::new(op);
                let cfg = task.solver_config(SolveMethod::Naive, 60 + i as u64);
                let rn = reconstruct_fixed_prior(&y, &a, &mp, &cfg).unwrap();
                let ro = reconstruct_fixed_prior(&y, &a, &mo, &cfg).unwrap();
                println!(
                    "noise {noise} views {views} img {i}: naive-ood {:.2}  oracle {:.2}",
                    psnr(&rn.image, x).unwrap(),
                    psnr(&ro.image, x).unwrap()
                );
            }
            println!("headroom in {:.0}s", t0.elapsed().as_secs_f64());
        }
        "sstune" => {
            // refine-strength sweep on one image
            let noise: f32 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.0);
            let lrs: Vec<f32> = args
                .get(3)
                .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
                .unwrap_or_else(|| vec![1e-5, 1e-4, 1e-3]);
            let (mp, _) = model::load_checkpoint(ckpt("patch_base.ckpt")).unwrap();
            let x = &ood(0, 1).images[0];
            let op = Task::Ct60.operator(64, 1).unwrap();
            let y = add_noise(&op.forward(x).unwrap(), NoiseModel { sigma_meas: noise, seed: 40 }).unwrap();
            let a: Arc<dyn LinearMap> = Arc::new(op);
            for lr in lrs {
                let mut cfg = Task::Ct60.solver_config(SolveMethod::Ss, 60);
                cfg.refine_lr = lr;
                let r = reconstruct_self_supervised(&y, &a, &mp, &cfg).unwrap();
                let losses: Vec<f64> = r
                    .diagnostics
                    .iter()
                    .filter_map(|d| d.refine_loss)
                    .collect();
                println!(
                    "noise {noise} lr {lr:e}: ss {:.2} dB, refine losses {:?}",
                    psnr(&r.image, x).unwrap(),
                    losses.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
                );
            }
            println!("sstune in {:.0}s", t0.elapsed().as_secs_f64());
        }
        "keys" => {
            let ellipse_spec = PhantomSpec { seed: 100, ..Default::default() };
            let pcfg = TrainConfig { steps: 2000, seed: 100, ..Default::default() };
            let wcfg = TrainConfig {
                steps: 2000,
                seed: 101,
                batch_size: 4,
                whole_image: true,
                ..Default::default()
            };
            let short = |s: String| {
                harness::sha256_hex(s.as_bytes())[..16].to_string()
            };
            let pk = short(
                serde_json::to_string(&(patch_arch(), &pcfg, &ellipse_spec, 0u64, 200usize))
                    .unwrap(),
            );
            let wk = short(
                serde_json::to_string(&(whole_arch(), &wcfg, &ellipse_spec, 0u64, 200usize))
                    .unwrap(),
            );
            println!("patch-base-{pk}.ckpt");
            println!("whole-base-{wk}.ckpt");
        }
        "final" => {
            // error structure of the final iterate: does one more denoise +
            // data-consistency pass improve it?
            let t_steps: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(200);
            let sigma_min: f32 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.005);
            let (mp, _) = model::load_checkpoint(ckpt("patch_base.ckpt")).unwrap();
            let x = &ood(0, 1).images[0];
            let op = Task::Ct60.operator(64, 1).unwrap();
            let y = op.forward(x).unwrap();
            let a: Arc<dyn LinearMap> = Arc::new(op);
            let mut cfg = Task::Ct60.solver_config(SolveMethod::Naive, 60);
            cfg.t_steps = t_steps;
            cfg.sigma_min = sigma_min;
            let r = reconstruct_fixed_prior(&y, &a, &mp, &cfg).unwrap();
            let tail: Vec<f64> = r.diagnostics.iter().rev().take(5).filter_map(|d| d.residual).collect();
            let ynorm = y.norm_sq().sqrt();
            println!(
                "T={t_steps} smin={sigma_min}: x0 {:.2} dB, last residuals {:?} (||y||={ynorm:.1})",
                psnr(&r.image, x).unwrap(),
                tail.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
            );
            // one extra stochastic denoise at sigma_min, then heavy CG
            use patchprior::solvers::{cg_data_fidelity, denoise_image};
            use patchprior::model::WeightSet;
            let d = denoise_image(&mp, &r.image, sigma_min, 16, 7, WeightSet::Ema).unwrap();
            let dc = cg_data_fidelity(&d, &y, &a, cfg.gamma, 20);
            println!(
                "  denoised {:.2} dB, denoised+cg {:.2} dB",
                psnr(&d, x).unwrap(),
                psnr(&dc, x).unwrap()
            );
        }
        "baselines" => {
            let sigma: f32 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.05);
            let strength: f32 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.1);
            let test = ellipses(400, 5);
            let mut sums = [0.0f64; 3];
            for (i, x) in test.images.iter().enumerate() {
                let op = Task::Ct60.operator(64, 1).unwrap();
                let y = add_noise(&op.forward(x).unwrap(), NoiseModel { sigma_meas: sigma, seed: i as u64 }).unwrap();
                let fbp = run_baseline(&y, &op, &BaselineConfig::preset(BaselineMethod::Trivial, &op.kind)).unwrap();
                let tv = run_baseline(&y, &op, &BaselineConfig::preset(BaselineMethod::AdmmTv, &op.kind)).unwrap();
                let mut pc = BaselineConfig::preset(BaselineMethod::PnpAdmm, &op.kind);
                pc.denoiser_strength = strength;
                let pnp = run_baseline(&y, &op, &pc).unwrap();
                let ps = [
                    psnr(&fbp.image, x).unwrap(),
                    psnr(&tv.image, x).unwrap(),
                    psnr(&pnp.image, x).unwrap(),
                ];
                println!("img {i}: fbp {:.2} tv {:.2} pnp {:.2}", ps[0], ps[1], ps[2]);
                for (s, p) in sums.iter_mut().zip(ps) {
                    *s += p;
                }
            }
            println!(
                "means: fbp {:.2} tv {:.2} pnp {:.2} ({:.0}s)",
                sums[0] / 5.0,
                sums[1] / 5.0,
                sums[2] / 5.0,
                t0.elapsed().as_secs_f64()
            );
        }
        "overfit" => {
            // quick probe of the fine-tune trends at reduced budgets
            let which = args.get(2).map(String::as_str).unwrap_or("patch");
            let budgets: Vec<usize> = args
                .get(3)
                .map(|s| s.split(',').map(|v| v.parse().unwrap()).collect())
                .unwrap_or_else(|| vec![0, 500, 2000]);
            let ft = ood(100, 10);
            let test = ood(0, 3);
            let (base, _) = model::load_checkpoint(ckpt(if which == "patch" {
                "patch_base.ckpt"
            } else {
                "whole_base.ckpt"
            }))
            .unwrap();
            let whole = !base.arch.positional;
            let mut tcfg = TrainConfig {
                seed: 300,
                whole_image: whole,
                batch_size: if whole { 4 } else { 16 },
                ..TrainConfig::finetune_default()
            };
            if whole {
                tcfg.patch_sizes = vec![(16, 1.0)];
            }
            if let Some(lr) = args.get(5) {
                tcfg.lr = lr.parse().unwrap();
            }
            if let Some(dr) = args.get(6) {
                tcfg.dropout = dr.parse().unwrap();
            }
            if let Some(hl) = args.get(7) {
                tcfg.ema_halflife_images = hl.parse().unwrap();
            }
            let task = match args.get(8).map(String::as_str).unwrap_or("ct60") {
                "ct20" => Task::Ct20,
                "deblur" => Task::Deblur,
                "sr4" => Task::Sr4,
                _ => Task::Ct60,
            };
            let eps: f32 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2e-4);
            let mut scfg = task.solver_config(SolveMethod::Naive, 0);
            scfg.eps_step = eps;
            let (curve, m_final) = run_curve(&base, &ft, &test, &budgets, &tcfg, &scfg);
            for (b, p) in &curve {
                println!("{which} budget {b}: {:.2} dB", p);
            }
            model::save_checkpoint(&m_final, None, ckpt(&format!("{which}_ft.ckpt"))).unwrap();
            println!("overfit {which} in {:.0}s", t0.elapsed().as_secs_f64());
        }
        "fttest" => {
            // one aggressive whole-image fine-tune: does it memorize, and
            // does held-out reconstruction degrade?
            let lr: f32 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(3e-3);
            let halflife: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(100.0);
            let steps: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2000);
            let dropout: f32 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.0);
            let ft = ood(100, 10);
            let (base, _) = model::load_checkpoint(ckpt("whole_base.ckpt")).unwrap();
            let tcfg = TrainConfig {
                seed: 300,
                whole_image: true,
                batch_size: 4,
                patch_sizes: vec![(16, 1.0)],
                lr,
                dropout,
                ema_halflife_images: halflife,
                steps,
                ..TrainConfig::finetune_default()
            };
            let mut m = base.clone();
            training::finetune(&mut m, None, &ft, &tcfg, None).unwrap();
            model::save_checkpoint(&m, None, ckpt("whole_ft_aggr.ckpt")).unwrap();
            println!("fine-tuned {} steps lr {lr} halflife {halflife} in {:.0}s", steps, t0.elapsed().as_secs_f64());
            // reference scale: held-out phantoms vs the fine-tune set
            let held = ood(300, 5);
            let dref = harness::min_training_distances(&held.images, &ft);
            println!("reference held-out min distances {:?}", dref.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
            for (name, mm) in [("base", &base), ("ft", &m)] {
                let samples = harness::sample_for_memorization(mm, Task::Ct60, 64, 8, 9).unwrap();
                let d = harness::min_training_distances(&samples, &ft);
                let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
                println!("{name} samples: {:?} min {dmin:.3}", d.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
            }
            let test = ood(0, 3);
            for task in [Task::Ct20, Task::Ct60] {
                let op = task.operator(64, 1).unwrap();
                for (name, mm) in [("base", &base), ("ft", &m)] {
                    let mut tot = 0.0;
                    for (i, x) in test.images.iter().enumerate() {
                        let y = op.forward(x).unwrap();
                        let a: Arc<dyn LinearMap> = Arc::new(task.operator(64, 1).unwrap());
                        let mut cfg = task.solver_config(SolveMethod::Naive, 40 + i as u64);
                        cfg.eps_step = 1.0;
                        let r = reconstruct_fixed_prior(&y, &a, mm, &cfg).unwrap();
                        tot += psnr(&r.image, x).unwrap();
                    }
                    println!("{task:?} {name}: mean {:.2} dB", tot / test.images.len() as f64);
                }
            }
        }
        "evalft" => {
            // compare a fine-tuned checkpoint to its base on held-out recon
            let task = match args.get(2).map(String::as_str).unwrap_or("ct20") {
                "ct60" => Task::Ct60,
                "deblur" => Task::Deblur,
                "sr4" => Task::Sr4,
                _ => Task::Ct20,
            };
            let test = ood(0, 3);
            let op = task.operator(64, 1).unwrap();
            for name in ["whole_base.ckpt", "whole_ft.ckpt"] {
                let (m, _) = model::load_checkpoint(ckpt(name)).unwrap();
                let mut tot = 0.0;
                for (i, x) in test.images.iter().enumerate() {
                    let y = op.forward(x).unwrap();
                    let a: Arc<dyn LinearMap> = Arc::new(task.operator(64, 1).unwrap());
                    let mut cfg = task.solver_config(SolveMethod::Naive, 40 + i as u64);
                    cfg.eps_step = 1.0;
                    let r = reconstruct_fixed_prior(&y, &a, &m, &cfg).unwrap();
                    tot += psnr(&r.image, x).unwrap();
                }
                println!("{name}: mean {:.2} dB over {}", tot / test.images.len() as f64, test.images.len());
            }
        }
        "paired" => {
            // in-distribution ct20: does switching refinement on ever hurt?
            let (m, _) = model::load_checkpoint(ckpt("patch_base.ckpt")).unwrap();
            let test = ellipses(300, 10);
            let cfg = Task::Ct20.solver_config(SolveMethod::Ss, 0);
            let rows = harness::paired_ss_study(&m, &test, Task::Ct20, &cfg, 0x10aa).unwrap();
            for r in &rows {
                println!(
                    "img {}: without {:.2} with {:.2} delta {:+.2}",
                    r.image,
                    r.psnr_without,
                    r.psnr_with,
                    r.psnr_with - r.psnr_without
                );
            }
            println!("paired in {:.0}s", t0.elapsed().as_secs_f64());
        }
        "memorize" => {
            let n: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(4);
            let ft = ood(100, 10);
            for which in ["patch", "whole"] {
                let (m, _) = model::load_checkpoint(ckpt(&format!("{which}_ft.ckpt"))).unwrap();
                let samples = harness::sample_for_memorization(&m, Task::Ct60, 64, n, 9).unwrap();
                let d = harness::min_training_distances(&samples, &ft);
                let dmin = d.iter().cloned().fold(f64::INFINITY, f64::min);
                println!("{which}: per-sample {:?} min {dmin:.3}", d.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>());
            }
            println!("memorize in {:.0}s", t0.elapsed().as_secs_f64());
        }
        other => {
            eprintln!("unknown stage {other}");
        }
    }
}

fn run_curve(
    base: &model::ModelParams,
    ft: &Dataset,
    test: &Dataset,
    budgets: &[usize],
    tcfg: &TrainConfig,
    scfg: &SolverConfig,
) -> (Vec<(usize, f64)>, model::ModelParams) {
    let mut m = base.clone();
    let mut adam = AdamState::new(&m.params, AdamHyperParams::with_lr(tcfg.lr));
    let mut trained = 0usize;
    let mut out = Vec::new();
    for &b in budgets {
        if b > trained {
            let mut cfg = tcfg.clone();
            cfg.steps = b - trained;
            training::run_training(&mut m, &mut adam, ft, &cfg, None).unwrap();
            trained = b;
        }
        let mut sum = 0.0;
        for (i, x) in test.images.iter().enumerate() {
            let op = Task::Ct60.operator(64, 1).unwrap();
            let y = op.forward(x).unwrap();
            let a: Arc<dyn LinearMap> = Arc::new(op);
            let mut c = scfg.clone();
            c.seed = 1000 + (b * 31 + i) as u64;
            let r = reconstruct_fixed_prior(&y, &a, &m, &c).unwrap();
            sum += psnr(&r.image, x).unwrap();
        }
        out.push((b, sum / test.images.len() as f64));
    }
    let _ = sample_unconditional; // referenced stages may not all run
    (out, m)
}
