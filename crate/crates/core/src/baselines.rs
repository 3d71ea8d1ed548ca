//! Classical comparison methods: trivial per-task baselines, ADMM with
//! anisotropic total variation, plug-and-play ADMM and RED around a
//! non-local-means denoiser, and the denoiser itself.
//!
//! Everything here is deterministic: pure functions of (y, A, cfg).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{ForwardOperator, OperatorKind};
use crate::solvers::{ReconResult, StepDiag};
use crate::tensor::{LinearMap, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    Trivial,
    AdmmTv,
    PnpAdmm,
    PnpRed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub method: BaselineMethod,
    pub lambda_tv: f32,
    /// ADMM penalty weight, also the quadratic coupling in PnP-ADMM.
    pub rho: f32,
    /// PnP-RED stepsize.
    pub mu: f32,
    pub lambda_red: f32,
    pub denoiser_strength: f32,
    pub max_outer_iters: usize,
    pub inner_cg_iters: usize,
}

impl BaselineConfig {
    /// Published operating points, per task. Tuned for larger images in the
    /// original experiments, so sweeps may still improve them at this scale.
    pub fn preset(method: BaselineMethod, kind: &OperatorKind) -> BaselineConfig {
        let (lambda_tv, rho, mu, lambda_red, strength) = match kind {
            OperatorKind::Radon { n_views, .. } => {
                let s = if *n_views >= 60 { 0.02 } else { 0.05 };
                (0.001, 0.05, 0.01, 0.01, s)
            }
            OperatorKind::Blur { .. } => (0.002, 0.1, 1.0, 0.2, 0.05),
            OperatorKind::Downsample { .. } => (0.006, 0.1, 1.0, 0.2, 0.05),
        };
        BaselineConfig {
            method,
            lambda_tv,
            rho,
            mu,
            lambda_red,
            denoiser_strength: strength,
            max_outer_iters: 100,
            inner_cg_iters: 50,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_tv", self.lambda_tv),
            ("rho", self.rho),
            ("mu", self.mu),
            ("lambda_red", self.lambda_red),
            ("denoiser_strength", self.denoiser_strength),
        ] {
            if !(v >= 0.0) {
                return Err(Error::config(format!("{name} must be nonnegative")));
            }
        }
        if self.max_outer_iters == 0 || self.inner_cg_iters == 0 {
            return Err(Error::config("iteration caps must be at least 1"));
        }
        Ok(())
    }
}

/// Task-appropriate zero-learning reconstruction: filtered back-projection
/// for tomography, the measurement itself for deblurring, nearest-neighbor
/// upsampling for superresolution.
pub fn trivial_baseline(y: &Tensor, op: &ForwardOperator) -> Result<Tensor> {
    match op.kind {
        OperatorKind::Radon { .. } => op.fbp(y),
        OperatorKind::Blur { .. } => Ok(y.clone()),
        OperatorKind::Downsample { factor } => {
            let sh = y.shape();
            if sh.len() != 3 {
                return Err(Error::shape("expected (C, h, w) low-res image"));
            }
            let (c, h, w) = (sh[0], sh[1], sh[2]);
            let (hh, ww) = (h * factor, w * factor);
            let mut out = vec![0.0f32; c * hh * ww];
            for ch in 0..c {
                for r in 0..hh {
                    for col in 0..ww {
                        out[(ch * hh + r) * ww + col] =
                            y.data()[(ch * h + r / factor) * w + col / factor];
                    }
                }
            }
            Ok(Tensor::from_vec(vec![c, hh, ww], out))
        }
    }
}

/// CG on an arbitrary SPD map given as a closure; starts from x0.
fn cg_solve(
    apply: impl Fn(&Tensor) -> Tensor,
    b: &Tensor,
    x0: &Tensor,
    iters: usize,
) -> Tensor {
    let mut x = x0.clone();
    let mut r = b.sub(&apply(&x));
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    // stop once the residual is at f32 noise level relative to b, and guard
    // the curvature term: both can underflow to zero at exact convergence
    let tol = 1e-14 * b.dot(&b).max(1e-30);
    for _ in 0..iters {
        if rs <= tol {
            break;
        }
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = (rs / pap) as f32;
        x.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rs_new = r.dot(&r);
        let beta = (rs_new / rs) as f32;
        let mut pn = r.clone();
        pn.axpy(beta, &p);
        p = pn;
        rs = rs_new;
    }
    x
}

/// Forward-difference gradients with a zero last row/column (Neumann edge).
fn grad_xy(x: &Tensor) -> (Tensor, Tensor) {
    let sh = x.shape();
    let (c, h, w) = (sh[0], sh[1], sh[2]);
    let mut gx = vec![0.0f32; x.len()];
    let mut gy = vec![0.0f32; x.len()];
    let d = x.data();
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                let i = (ch * h + r) * w + col;
                if col + 1 < w {
                    gx[i] = d[i + 1] - d[i];
                }
                if r + 1 < h {
                    gy[i] = d[i + w] - d[i];
                }
            }
        }
    }
    (
        Tensor::from_vec(sh.to_vec(), gx),
        Tensor::from_vec(sh.to_vec(), gy),
    )
}

/// Adjoint of [`grad_xy`]: negative divergence.
fn div_adjoint(gx: &Tensor, gy: &Tensor) -> Tensor {
    let sh = gx.shape();
    let (c, h, w) = (sh[0], sh[1], sh[2]);
    let mut out = vec![0.0f32; gx.len()];
    let (dx, dy) = (gx.data(), gy.data());
    for ch in 0..c {
        for r in 0..h {
            for col in 0..w {
                let i = (ch * h + r) * w + col;
                if col + 1 < w {
                    out[i] -= dx[i];
                    out[i + 1] += dx[i];
                }
                if r + 1 < h {
                    out[i] -= dy[i];
                    out[i + w] += dy[i];
                }
            }
        }
    }
    Tensor::from_vec(sh.to_vec(), out)
}

pub fn tv_value(x: &Tensor) -> f64 {
    let (gx, gy) = grad_xy(x);
    gx.data().iter().map(|v| v.abs() as f64).sum::<f64>()
        + gy.data().iter().map(|v| v.abs() as f64).sum::<f64>()
}

fn soft_threshold(x: &Tensor, t: f32) -> Tensor {
    x.map(|v| v.signum() * (v.abs() - t).max(0.0))
}

#[cfg(test)]
fn data_objective(y: &Tensor, op: &ForwardOperator, x: &Tensor) -> f64 {
    0.5 * y.sub(&op.forward(x).unwrap_or_else(|_| y.clone())).norm_sq()
}

fn diag(t: usize, residual: f64) -> StepDiag {
    StepDiag {
        t,
        sigma: 0.0,
        residual: Some(residual),
        refine_loss: None,
    }
}

/// ADMM on 1/2 ||y - Ax||^2 + lambda TV(x) with anisotropic TV: the x-update
/// solves (AtA + rho DtD) x = At y + rho Dt(z - u) by CG, the gradient
/// variables shrink by soft thresholding.
pub fn admm_tv(y: &Tensor, op: &ForwardOperator, cfg: &BaselineConfig) -> Result<ReconResult> {
    cfg.validate()?;
    let rho = if cfg.rho > 0.0 { cfg.rho } else { 1.0 };
    let aty = op.transpose(y)?;
    let mut x = Tensor::zeros(&LinearMap::input_shape(op));
    let (mut zx, mut zy) = grad_xy(&x);
    let (mut ux, mut uy) = (Tensor::zeros(x.shape()), Tensor::zeros(x.shape()));
    let mut diags = Vec::new();
    let mut prev = x.clone();
    for it in 0..cfg.max_outer_iters {
        let mut b = aty.clone();
        b.axpy(rho, &div_adjoint(&zx.sub(&ux), &zy.sub(&uy)));
        let apply = |v: &Tensor| {
            let mut out = op.transpose(&op.forward(v).unwrap()).unwrap();
            let (gx, gy) = grad_xy(v);
            out.axpy(rho, &div_adjoint(&gx, &gy));
            out
        };
        x = cg_solve(apply, &b, &x, cfg.inner_cg_iters);
        let (gx, gy) = grad_xy(&x);
        zx = soft_threshold(&gx.add(&ux), cfg.lambda_tv / rho);
        zy = soft_threshold(&gy.add(&uy), cfg.lambda_tv / rho);
        ux = ux.add(&gx.sub(&zx));
        uy = uy.add(&gy.sub(&zy));

        let residual = y.sub(&op.forward(&x)?).norm_sq().sqrt();
        diags.push(diag(it, residual));
        let change = x.sub(&prev).norm_sq().sqrt();
        let scale = x.norm_sq().sqrt().max(1e-12);
        if it > 0 && change / scale < 1e-5 {
            break;
        }
        prev = x.clone();
    }
    if !x.all_finite() {
        return Err(Error::divergence("ADMM-TV produced non-finite values"));
    }
    Ok(ReconResult {
        image: x,
        diagnostics: diags,
        seed: 0,
    })
}

/// Non-local means: 3x3 patches compared within an 11x11 search window,
/// exponential weights with bandwidth proportional to strength. Channels are
/// denoised independently.
pub fn nlm_denoise(x: &Tensor, strength: f32) -> Tensor {
    if strength <= 0.0 {
        return x.clone();
    }
    let sh = x.shape();
    let (c, h, w) = (sh[0], sh[1], sh[2]);
    let half_win = 5isize;
    let half_p = 1isize;
    let inv_h2 = 1.0 / (2.0 * strength * strength);
    let d = x.data();
    let mut out = vec![0.0f32; x.len()];
    // clamped (replicated) border indexing for both patches and window
    let at = |ch: usize, r: isize, col: isize| -> f32 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let col = col.clamp(0, w as isize - 1) as usize;
        d[(ch * h + r) * w + col]
    };
    for ch in 0..c {
        for r in 0..h as isize {
            for col in 0..w as isize {
                let mut num = 0.0f64;
                let mut den = 0.0f64;
                for wr in -half_win..=half_win {
                    for wc in -half_win..=half_win {
                        let (qr, qc) = (r + wr, c as isize * 0 + col + wc);
                        let mut d2 = 0.0f32;
                        for pr in -half_p..=half_p {
                            for pc in -half_p..=half_p {
                                let a = at(ch, r + pr, col + pc);
                                let b = at(ch, qr + pr, qc + pc);
                                d2 += (a - b) * (a - b);
                            }
                        }
                        // classic noise compensation: expected distance of
                        // two equal patches under noise sigma is 2 sigma^2
                        let d2n = (d2 / 9.0 - 2.0 * strength * strength).max(0.0);
                        let wgt = (-d2n * inv_h2).exp() as f64;
                        num += wgt * at(ch, qr, qc) as f64;
                        den += wgt;
                    }
                }
                out[(ch * h + r as usize) * w + col as usize] = (num / den) as f32;
            }
        }
    }
    Tensor::from_vec(sh.to_vec(), out)
}

/// Plateau stop: once successive iterates agree above this PSNR, any image
/// metric moves well below the 0.005 dB/iteration level.
const PLATEAU_AGREEMENT_DB: f64 = 55.0;

fn iterate_agreement_db(a: &Tensor, b: &Tensor) -> f64 {
    let mse = a.sub(b).norm_sq() / a.len() as f64;
    if mse == 0.0 {
        100.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(100.0)
    }
}

/// Plug-and-play ADMM: CG x-update on (AtA + rho I), denoiser as the
/// z-proximal step, scaled dual ascent.
pub fn pnp_admm(y: &Tensor, op: &ForwardOperator, cfg: &BaselineConfig) -> Result<ReconResult> {
    cfg.validate()?;
    let aty = op.transpose(y)?;
    let mut x = trivial_baseline(y, op)?;
    let mut z = x.clone();
    let mut u = Tensor::zeros(x.shape());
    let mut diags = Vec::new();
    let r0 = y.sub(&op.forward(&x)?).norm_sq().sqrt();
    let r_cap = 10.0 * r0.max(0.01 * y.norm_sq().sqrt()).max(1e-6);
    for it in 0..cfg.max_outer_iters {
        let prev = x.clone();
        let mut b = aty.clone();
        b.axpy(cfg.rho, &z.sub(&u));
        let apply = |v: &Tensor| {
            let mut out = op.transpose(&op.forward(v).unwrap()).unwrap();
            out.axpy(cfg.rho, v);
            out
        };
        x = cg_solve(apply, &b, &x, cfg.inner_cg_iters);
        z = nlm_denoise(&x.add(&u), cfg.denoiser_strength);
        u = u.add(&x.sub(&z));

        let residual = y.sub(&op.forward(&x)?).norm_sq().sqrt();
        diags.push(diag(it, residual));
        if residual > r_cap {
            return Err(Error::divergence(format!(
                "PnP-ADMM residual grew 10x (rho={}, strength={})",
                cfg.rho, cfg.denoiser_strength
            )));
        }
        if it > 0 && iterate_agreement_db(&x, &prev) > PLATEAU_AGREEMENT_DB {
            break;
        }
    }
    if !x.all_finite() {
        return Err(Error::divergence("PnP-ADMM produced non-finite values"));
    }
    Ok(ReconResult {
        image: x,
        diagnostics: diags,
        seed: 0,
    })
}

/// Regularization-by-denoising update, applied in the descent direction:
/// x <- x + mu (At(y - Ax) - lambda (x - D(x))).
pub fn pnp_red(y: &Tensor, op: &ForwardOperator, cfg: &BaselineConfig) -> Result<ReconResult> {
    cfg.validate()?;
    let mut x = trivial_baseline(y, op)?;
    let mut diags = Vec::new();
    let r0 = y.sub(&op.forward(&x)?).norm_sq().sqrt();
    let r_cap = 10.0 * r0.max(0.01 * y.norm_sq().sqrt()).max(1e-6);
    for it in 0..cfg.max_outer_iters {
        let prev = x.clone();
        let grad_data = op.transpose(&y.sub(&op.forward(&x)?))?;
        let denoised = nlm_denoise(&x, cfg.denoiser_strength);
        let mut step = grad_data;
        step.axpy(-cfg.lambda_red, &x.sub(&denoised));
        x.axpy(cfg.mu, &step);

        let residual = y.sub(&op.forward(&x)?).norm_sq().sqrt();
        diags.push(diag(it, residual));
        if residual > r_cap {
            return Err(Error::divergence(format!(
                "PnP-RED residual grew 10x (mu={}, lambda={})",
                cfg.mu, cfg.lambda_red
            )));
        }
        if it > 0 && iterate_agreement_db(&x, &prev) > PLATEAU_AGREEMENT_DB {
            break;
        }
    }
    if !x.all_finite() {
        return Err(Error::divergence("PnP-RED produced non-finite values"));
    }
    Ok(ReconResult {
        image: x,
        diagnostics: diags,
        seed: 0,
    })
}

/// Dispatch by configured method.
pub fn run_baseline(y: &Tensor, op: &ForwardOperator, cfg: &BaselineConfig) -> Result<ReconResult> {
    match cfg.method {
        BaselineMethod::Trivial => Ok(ReconResult {
            image: trivial_baseline(y, op)?,
            diagnostics: Vec::new(),
            seed: 0,
        }),
        BaselineMethod::AdmmTv => admm_tv(y, op, cfg),
        BaselineMethod::PnpAdmm => pnp_admm(y, op, cfg),
        BaselineMethod::PnpRed => pnp_red(y, op, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{add_noise, NoiseModel};
    use crate::phantoms::{generate_ellipse_phantom, PhantomSpec};

    fn cfg(method: BaselineMethod) -> BaselineConfig {
        BaselineConfig {
            method,
            lambda_tv: 0.001,
            rho: 0.05,
            mu: 0.01,
            lambda_red: 0.01,
            denoiser_strength: 0.05,
            max_outer_iters: 100,
            inner_cg_iters: 50,
        }
    }

    fn phantom(n: usize, seed: u64) -> Tensor {
        let spec = PhantomSpec {
            image_size: n,
            seed,
            ..Default::default()
        };
        generate_ellipse_phantom(&spec, 0).unwrap()
    }

    fn psnr(a: &Tensor, b: &Tensor) -> f64 {
        let mse = a.sub(b).norm_sq() / a.len() as f64;
        10.0 * (1.0 / mse).log10()
    }

    #[test]
    fn trivial_sr_preserves_constants_and_blur_is_the_measurement() {
        let sr = ForwardOperator::downsample(32, 1, 4).unwrap();
        let c = Tensor::full(&[1, 8, 8], 0.7);
        let up = trivial_baseline(&c, &sr).unwrap();
        assert_eq!(up.shape(), [1, 32, 32]);
        assert!(up.data().iter().all(|&v| (v - 0.7).abs() < 1e-6));

        let blur = ForwardOperator::blur(32, 1, 9).unwrap();
        let y = phantom(32, 1);
        let y_blur = blur.forward(&y).unwrap();
        assert_eq!(trivial_baseline(&y_blur, &blur).unwrap().data(), y_blur.data());
    }

    #[test]
    fn trivial_ct_delegates_to_fbp() {
        let op = ForwardOperator::radon(32, 30, 48).unwrap();
        let y = op.forward(&phantom(32, 2)).unwrap();
        assert_eq!(
            trivial_baseline(&y, &op).unwrap().data(),
            op.fbp(&y).unwrap().data()
        );
    }

    #[test]
    fn gradient_and_divergence_are_adjoint() {
        let x = phantom(16, 3);
        let gx = Tensor::from_vec(vec![1, 16, 16], (0..256).map(|i| ((i * 37) % 11) as f32 / 11.0).collect());
        let gy = Tensor::from_vec(vec![1, 16, 16], (0..256).map(|i| ((i * 53) % 7) as f32 / 7.0).collect());
        let (dx, dy) = grad_xy(&x);
        let lhs = dx.dot(&gx) + dy.dot(&gy);
        let rhs = x.dot(&div_adjoint(&gx, &gy));
        assert!((lhs - rhs).abs() < 1e-3 * lhs.abs().max(1.0));
    }

    #[test]
    fn admm_tv_unregularized_identity_returns_the_data() {
        // identity forward model at zero lambda must reproduce y
        let op = ForwardOperator::blur(16, 1, 1).unwrap();
        let y = phantom(16, 4);
        let mut c = cfg(BaselineMethod::AdmmTv);
        c.lambda_tv = 0.0;
        let out = admm_tv(&y, &op, &c).unwrap();
        assert!(psnr(&out.image, &y) > 60.0, "psnr {}", psnr(&out.image, &y));
    }

    #[test]
    fn admm_tv_large_lambda_flattens_the_image() {
        let op = ForwardOperator::radon(32, 30, 48).unwrap();
        let y = op.forward(&phantom(32, 5)).unwrap();
        let mut c = cfg(BaselineMethod::AdmmTv);
        c.lambda_tv = 100.0;
        let out = admm_tv(&y, &op, &c).unwrap();
        let back = op.transpose(&y).unwrap();
        assert!(
            tv_value(&out.image) < 0.01 * tv_value(&back),
            "tv {} vs {}",
            tv_value(&out.image),
            tv_value(&back)
        );
    }

    #[test]
    fn admm_tv_objective_settles_monotonically() {
        let op = ForwardOperator::radon(16, 20, 24).unwrap();
        let x_true = phantom(16, 6);
        let y = op.forward(&x_true).unwrap();
        let mut c = cfg(BaselineMethod::AdmmTv);
        c.inner_cg_iters = 20;
        // rerun with growing iteration caps to observe the objective path
        let mut objs = Vec::new();
        for iters in 1..=14 {
            let mut cc = c.clone();
            cc.max_outer_iters = iters;
            let out = admm_tv(&y, &op, &cc).unwrap();
            objs.push(data_objective(&y, &op, &out.image) + c.lambda_tv as f64 * tv_value(&out.image));
        }
        // f32 arithmetic: allow ties up to 1e-4 relative
        for w in objs[5..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-4), "objective rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn admm_tv_beats_fbp_on_sixty_view_ct() {
        let op = ForwardOperator::radon(32, 60, 48).unwrap();
        let x_true = phantom(32, 7);
        let y = op.forward(&x_true).unwrap();
        let fbp = op.fbp(&y).unwrap();
        let out = admm_tv(&y, &op, &cfg(BaselineMethod::AdmmTv)).unwrap();
        assert!(
            psnr(&out.image, &x_true) > psnr(&fbp, &x_true),
            "admm {} vs fbp {}",
            psnr(&out.image, &x_true),
            psnr(&fbp, &x_true)
        );
    }

    #[test]
    fn nlm_constant_unchanged_and_small_strength_is_identity() {
        let c = Tensor::full(&[1, 16, 16], 0.3);
        let out = nlm_denoise(&c, 0.05);
        assert!(out.data().iter().all(|&v| (v - 0.3).abs() < 1e-6));

        let x = phantom(16, 8);
        let out = nlm_denoise(&x, 1e-6);
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn nlm_removes_most_gaussian_noise() {
        let x = phantom(32, 9);
        let noisy = add_noise(&x, NoiseModel { sigma_meas: 0.05, seed: 1 }).unwrap();
        let den = nlm_denoise(&noisy, 0.05);
        let mse_in = noisy.sub(&x).norm_sq();
        let mse_out = den.sub(&x).norm_sq();
        assert!(
            mse_out < 0.6 * mse_in,
            "gain too small: {mse_out} vs {mse_in}"
        );
    }

    #[test]
    fn pnp_red_with_identity_denoiser_is_gradient_descent() {
        let op = ForwardOperator::blur(16, 1, 9).unwrap();
        let y = op.forward(&phantom(16, 10)).unwrap();
        let mut c = cfg(BaselineMethod::PnpRed);
        c.denoiser_strength = 0.0; // identity denoiser
        c.mu = 0.5;
        c.max_outer_iters = 10;
        let out = pnp_red(&y, &op, &c).unwrap();

        // explicit gradient descent on the data term from the same start
        let mut x = trivial_baseline(&y, &op).unwrap();
        for _ in 0..out.diagnostics.len() {
            let g = op.transpose(&y.sub(&op.forward(&x).unwrap())).unwrap();
            x.axpy(c.mu, &g);
        }
        assert_eq!(out.image.data(), x.data());
    }

    #[test]
    fn pnp_admm_zero_strength_identity_converges_to_y() {
        let op = ForwardOperator::blur(16, 1, 1).unwrap();
        let y = phantom(16, 11);
        let mut c = cfg(BaselineMethod::PnpAdmm);
        c.denoiser_strength = 0.0;
        let out = pnp_admm(&y, &op, &c).unwrap();
        assert!(psnr(&out.image, &y) > 60.0, "psnr {}", psnr(&out.image, &y));
    }

    #[test]
    fn pnp_admm_beats_admm_tv_on_noisy_sixty_view_ct() {
        // noisy measurements so the denoiser prior matters; the denoiser
        // strength is the desk-scale swept value rather than the published one
        let op = ForwardOperator::radon(32, 60, 48).unwrap();
        let x_true = phantom(32, 12);
        let y = add_noise(
            &op.forward(&x_true).unwrap(),
            NoiseModel { sigma_meas: 0.05, seed: 2 },
        )
        .unwrap();
        let tv = admm_tv(&y, &op, &BaselineConfig::preset(BaselineMethod::AdmmTv, &op.kind)).unwrap();
        let mut pc = BaselineConfig::preset(BaselineMethod::PnpAdmm, &op.kind);
        pc.denoiser_strength = 0.1;
        let pnp = pnp_admm(&y, &op, &pc).unwrap();
        assert!(
            psnr(&pnp.image, &x_true) > psnr(&tv.image, &x_true),
            "pnp {} vs tv {}",
            psnr(&pnp.image, &x_true),
            psnr(&tv.image, &x_true)
        );
    }

    #[test]
    fn baselines_are_deterministic_and_finite_across_operators() {
        let x = phantom(32, 13);
        for op in [
            ForwardOperator::radon(32, 20, 48).unwrap(),
            ForwardOperator::blur(32, 1, 9).unwrap(),
            ForwardOperator::downsample(32, 1, 4).unwrap(),
        ] {
            let y = op.forward(&x).unwrap();
            for method in [
                BaselineMethod::Trivial,
                BaselineMethod::AdmmTv,
                BaselineMethod::PnpAdmm,
                BaselineMethod::PnpRed,
            ] {
                let mut c = BaselineConfig::preset(method, &op.kind);
                c.max_outer_iters = 5;
                // published RED stepsize assumes a normalized CT operator;
                // this radon scaling needs a smaller step to stay stable
                if matches!(op.kind, OperatorKind::Radon { .. }) {
                    c.mu = 5e-4;
                }
                let a = run_baseline(&y, &op, &c).unwrap();
                let b = run_baseline(&y, &op, &c).unwrap();
                assert!(a.image.all_finite());
                assert_eq!(a.image.data(), b.image.data());
            }
        }
    }
}
