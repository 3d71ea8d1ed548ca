//! Image quality metrics: PSNR against a [0,1] reference and windowed SSIM.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Peak signal-to-noise ratio in dB with peak 1.0, capped at 100 dB.
pub fn psnr(x: &Tensor, reference: &Tensor) -> Result<f64> {
    if x.shape() != reference.shape() {
        return Err(Error::shape("psnr arguments must share a shape"));
    }
    // accumulate in f64 so the result is reproducible to 1e-9
    let se: f64 = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum();
    let mse = se / x.len() as f64;
    Ok(if mse == 0.0 {
        100.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(100.0)
    })
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0f64; SSIM_WINDOW];
    let c = (SSIM_WINDOW - 1) as f64 / 2.0;
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Separable Gaussian filter, valid region only: (h, w) -> (h-10, w-10).
fn gauss_valid(img: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = gaussian_window();
    let wv = w - SSIM_WINDOW + 1;
    let hv = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0f64; h * wv];
    for r in 0..h {
        for c in 0..wv {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * img[r * w + c + j];
            }
            rows[r * wv + c] = acc;
        }
    }
    let mut out = vec![0.0f64; hv * wv];
    for r in 0..hv {
        for c in 0..wv {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * rows[(r + j) * wv + c];
            }
            out[r * wv + c] = acc;
        }
    }
    out
}

fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = gauss_valid(x, h, w);
    let my = gauss_valid(y, h, w);
    let mxx = gauss_valid(&xx, h, w);
    let myy = gauss_valid(&yy, h, w);
    let mxy = gauss_valid(&xy, h, w);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let vx = mxx[i] - mx[i] * mx[i];
        let vy = myy[i] - my[i] * my[i];
        let cov = mxy[i] - mx[i] * my[i];
        let num = (2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2);
        let den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
        total += num / den;
    }
    total / mx.len() as f64
}

/// Mean windowed SSIM (11x11 Gaussian, sigma 1.5, dynamic range 1.0).
/// Multichannel images average the per-channel scores.
pub fn ssim(x: &Tensor, reference: &Tensor) -> Result<f64> {
    if x.shape() != reference.shape() {
        return Err(Error::shape("ssim arguments must share a shape"));
    }
    let sh = x.shape();
    if sh.len() != 3 {
        return Err(Error::shape("ssim expects (C, H, W) images"));
    }
    let (c, h, w) = (sh[0], sh[1], sh[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape("image smaller than the 11x11 ssim window"));
    }
    let mut total = 0.0;
    for ch in 0..c {
        let plane = |t: &Tensor| -> Vec<f64> {
            t.data()[ch * h * w..(ch + 1) * h * w]
                .iter()
                .map(|&v| v as f64)
                .collect()
        };
        total += ssim_plane(&plane(x), &plane(reference), h, w);
    }
    Ok(total / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{add_noise, NoiseModel};
    use crate::phantoms::{generate_ellipse_phantom, PhantomSpec};

    fn phantom(n: usize, seed: u64) -> Tensor {
        let spec = PhantomSpec {
            image_size: n,
            seed,
            ..Default::default()
        };
        generate_ellipse_phantom(&spec, 0).unwrap()
    }

    #[test]
    fn psnr_identical_hits_the_cap() {
        let x = phantom(32, 1);
        assert_eq!(psnr(&x, &x).unwrap(), 100.0);
    }

    #[test]
    fn psnr_uniform_error_closed_form() {
        let a = Tensor::full(&[1, 16, 16], 0.5);
        let b = Tensor::full(&[1, 16, 16], 0.6);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-4, "psnr {p}");
    }

    #[test]
    fn psnr_matches_independent_reimplementation() {
        let x = phantom(32, 2);
        let y = phantom(32, 3);
        // straightforward restatement with a different accumulation order
        let mut se = 0.0f64;
        for (a, b) in x.data().iter().zip(y.data()) {
            se += ((*a as f64) - (*b as f64)).powi(2);
        }
        let expect = 10.0 * (x.len() as f64 / se).log10();
        assert!((psnr(&x, &y).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn psnr_and_ssim_are_symmetric() {
        let x = phantom(32, 4);
        let y = phantom(32, 5);
        assert_eq!(psnr(&x, &y).unwrap(), psnr(&y, &x).unwrap());
        assert!((ssim(&x, &y).unwrap() - ssim(&y, &x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ssim_identical_is_one() {
        let x = phantom(32, 6);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_negative_image_scores_low() {
        // high-contrast pattern against its negative: structure inverted
        let mut x = Tensor::zeros(&[1, 32, 32]);
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            let (r, c) = (i / 32, i % 32);
            *v = (((r / 4) + (c / 4)) % 2) as f32;
        }
        let neg = x.map(|v| 1.0 - v);
        let s = ssim(&x, &neg).unwrap();
        assert!(s < 0.3, "ssim vs negative: {s}");
    }

    #[test]
    fn noise_hurts_ssim_more_than_brightness() {
        // lift the background: on a black background the luminance term is
        // dominated by the stabilizer and overreacts to a small shift
        let x = phantom(32, 7).map(|v| 0.5 + 0.5 * v);
        let noisy = add_noise(&x, NoiseModel { sigma_meas: 0.05, seed: 1 }).unwrap();
        let bright = x.map(|v| v + 0.05);
        let s_noise = ssim(&x, &noisy).unwrap();
        let s_bright = ssim(&x, &bright).unwrap();
        assert!(
            s_noise < s_bright,
            "noise {s_noise} should hurt more than brightness {s_bright}"
        );
    }

    #[test]
    fn shape_and_size_errors() {
        let a = Tensor::zeros(&[1, 16, 16]);
        let b = Tensor::zeros(&[1, 16, 17]);
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
        let tiny = Tensor::zeros(&[1, 8, 8]);
        assert!(ssim(&tiny, &tiny).is_err());
    }
}
