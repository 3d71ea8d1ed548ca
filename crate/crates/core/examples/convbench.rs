use patchprior::tensor::conv::conv2d;
use patchprior::Tensor;
use std::time::Instant;

fn main() {
    let x = Tensor::full(&[25, 64, 16, 16], 0.5);
    let w = Tensor::full(&[64, 64, 3, 3], 0.01);
    let b = Tensor::full(&[64], 0.0);
    // warmup
    for _ in 0..5 { let _ = conv2d(&x, &w, Some(&b), 1); }
    let n = 50;
    let t0 = Instant::now();
    for _ in 0..n { let _ = std::hint::black_box(conv2d(&x, &w, Some(&b), 1)); }
    let dt = t0.elapsed().as_secs_f64() / n as f64;
    let flops = 2.0 * 25.0 * 64.0 * 64.0 * 9.0 * 256.0;
    println!("conv2d 25x64x16x16: {:.3} ms, {:.1} GFLOP/s", dt * 1e3, flops / dt / 1e9);
}
