//! Shared test helpers: seeded tensors and the central finite-difference
//! oracle used to check analytic gradients. The oracle only evaluates the
//! forward pass, so it stays independent of the backward implementation.

#![allow(dead_code)]

use patchprior::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r) as f32)
        .collect();
    Tensor::from_vec(shape.to_vec(), data)
}

pub fn rand_uniform(shape: &[usize], lo: f32, hi: f32, seed: u64) -> Tensor {
    let mut r = rng(seed);
    let dist = Uniform::new(lo, hi).unwrap();
    let n = shape.iter().product();
    let data = (0..n).map(|_| dist.sample(&mut r)).collect();
    Tensor::from_vec(shape.to_vec(), data)
}

/// Central finite differences of a scalar-valued function of one tensor.
pub fn finite_diff(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f32) -> Tensor {
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let fp = f(&xp);
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let fm = f(&xm);
        grad.data_mut()[i] = ((fp - fm) / (2.0 * h as f64)) as f32;
    }
    grad
}

/// Max relative error between an analytic gradient and a reference, with an
/// absolute floor so near-zero coordinates do not dominate.
pub fn max_rel_err(analytic: &Tensor, reference: &Tensor, floor: f32) -> f32 {
    assert_eq!(analytic.shape(), reference.shape());
    analytic
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, r)| (a - r).abs() / r.abs().max(floor))
        .fold(0.0f32, f32::max)
}

pub fn psnr_vs(x: &Tensor, r: &Tensor) -> f64 {
    let mse = x.sub(r).norm_sq() / x.len() as f64;
    if mse == 0.0 {
        100.0
    } else {
        (10.0 * (1.0 / mse).log10()).min(100.0)
    }
}
