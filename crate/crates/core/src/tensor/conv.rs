//! Direct 2D convolution via im2col and GEMM.
//!
//! Zero padding, stride 1. Images here are at most 96x96 so the buffers stay
//! small; the GEMM (matrixmultiply) does the heavy lifting.

use crate::tensor::Tensor;

/// Output spatial extent for stride-1 convolution.
pub fn out_extent(input: usize, kernel: usize, pad: usize) -> usize {
    input + 2 * pad + 1 - kernel
}

/// x: (B, IC, H, W), w: (OC, IC, KH, KW) -> (B, OC, Ho, Wo).
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, pad: usize) -> Tensor {
    let (bsz, ic, h, wd) = dims4(x);
    let (oc, icw, kh, kw) = dims4(w);
    assert_eq!(ic, icw, "conv2d channel mismatch");
    let ho = out_extent(h, kh, pad);
    let wo = out_extent(wd, kw, pad);
    let k = ic * kh * kw;
    let hw = ho * wo;

    let mut out = vec![0.0f32; bsz * oc * hw];
    let mut col = vec![0.0f32; k * hw];
    for b in 0..bsz {
        let xb = &x.data()[b * ic * h * wd..(b + 1) * ic * h * wd];
        im2col(xb, ic, h, wd, kh, kw, pad, ho, wo, &mut col);
        let ob = &mut out[b * oc * hw..(b + 1) * oc * hw];
        unsafe {
            matrixmultiply::sgemm(
                oc,
                k,
                hw,
                1.0,
                w.data().as_ptr(),
                k as isize,
                1,
                col.as_ptr(),
                hw as isize,
                1,
                0.0,
                ob.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        if let Some(bt) = bias {
            debug_assert_eq!(bt.len(), oc);
            for (c, &bv) in bt.data().iter().enumerate() {
                for v in &mut ob[c * hw..(c + 1) * hw] {
                    *v += bv;
                }
            }
        }
    }
    Tensor::from_vec(vec![bsz, oc, ho, wo], out)
}

/// Gradients of conv2d. Returns (dx, dw, db).
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    pad: usize,
    has_bias: bool,
) -> (Tensor, Tensor, Option<Tensor>) {
    let (bsz, ic, h, wd) = dims4(x);
    let (oc, _, kh, kw) = dims4(w);
    let ho = out_extent(h, kh, pad);
    let wo = out_extent(wd, kw, pad);
    let k = ic * kh * kw;
    let hw = ho * wo;
    debug_assert_eq!(dy.shape(), [bsz, oc, ho, wo]);

    let mut dx = vec![0.0f32; bsz * ic * h * wd];
    let mut dw = vec![0.0f32; oc * k];
    let mut db = if has_bias { vec![0.0f32; oc] } else { vec![] };
    let mut col = vec![0.0f32; k * hw];
    let mut dcol = vec![0.0f32; k * hw];

    for b in 0..bsz {
        let xb = &x.data()[b * ic * h * wd..(b + 1) * ic * h * wd];
        let dyb = &dy.data()[b * oc * hw..(b + 1) * oc * hw];
        im2col(xb, ic, h, wd, kh, kw, pad, ho, wo, &mut col);
        unsafe {
            // dW += dY * col^T
            matrixmultiply::sgemm(
                oc,
                hw,
                k,
                1.0,
                dyb.as_ptr(),
                hw as isize,
                1,
                col.as_ptr(),
                1,
                hw as isize,
                1.0,
                dw.as_mut_ptr(),
                k as isize,
                1,
            );
            // dcol = W^T * dY
            matrixmultiply::sgemm(
                k,
                oc,
                hw,
                1.0,
                w.data().as_ptr(),
                1,
                k as isize,
                dyb.as_ptr(),
                hw as isize,
                1,
                0.0,
                dcol.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        col2im_accum(
            &dcol,
            ic,
            h,
            wd,
            kh,
            kw,
            pad,
            ho,
            wo,
            &mut dx[b * ic * h * wd..(b + 1) * ic * h * wd],
        );
        if has_bias {
            for c in 0..oc {
                let s: f32 = dyb[c * hw..(c + 1) * hw].iter().sum();
                db[c] += s;
            }
        }
    }

    (
        Tensor::from_vec(vec![bsz, ic, h, wd], dx),
        Tensor::from_vec(w.shape().to_vec(), dw),
        if has_bias {
            Some(Tensor::from_vec(vec![oc], db))
        } else {
            None
        },
    )
}

fn dims4(t: &Tensor) -> (usize, usize, usize, usize) {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected rank-4 tensor, got {:?}", s);
    (s[0], s[1], s[2], s[3])
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &[f32],
    ic: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    col: &mut [f32],
) {
    let hw = ho * wo;
    for c in 0..ic {
        let xc = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut col[(c * kh * kw + ky * kw + kx) * hw..][..hw];
                for oy in 0..ho {
                    let iy = oy + ky;
                    let dest = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < pad || iy >= h + pad {
                        dest.fill(0.0);
                        continue;
                    }
                    let iy = iy - pad;
                    for (ox, d) in dest.iter_mut().enumerate() {
                        let ix = ox + kx;
                        *d = if ix < pad || ix >= w + pad {
                            0.0
                        } else {
                            xc[iy * w + (ix - pad)]
                        };
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_accum(
    col: &[f32],
    ic: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    x: &mut [f32],
) {
    let hw = ho * wo;
    for c in 0..ic {
        let xc = &mut x[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &col[(c * kh * kw + ky * kw + kx) * hw..][..hw];
                for oy in 0..ho {
                    let iy = oy + ky;
                    if iy < pad || iy >= h + pad {
                        continue;
                    }
                    let iy = iy - pad;
                    for ox in 0..wo {
                        let ix = ox + kx;
                        if ix < pad || ix >= w + pad {
                            continue;
                        }
                        xc[iy * w + (ix - pad)] += row[oy * wo + ox];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Nested-loop reference convolution.
    pub fn conv2d_naive(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, pad: usize) -> Tensor {
        let (bsz, ic, h, wd) = dims4(x);
        let (oc, _, kh, kw) = dims4(w);
        let ho = out_extent(h, kh, pad);
        let wo = out_extent(wd, kw, pad);
        let mut out = vec![0.0f32; bsz * oc * ho * wo];
        for b in 0..bsz {
            for o in 0..oc {
                for oy in 0..ho {
                    for ox in 0..wo {
                        // f64 accumulator: the reference should only expose
                        // rounding in the implementation under test.
                        let mut acc = bias.map(|t| t.data()[o] as f64).unwrap_or(0.0);
                        for c in 0..ic {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = oy + ky;
                                    let ix = ox + kx;
                                    if iy < pad || ix < pad || iy >= h + pad || ix >= wd + pad {
                                        continue;
                                    }
                                    let xv = x.data()
                                        [((b * ic + c) * h + (iy - pad)) * wd + (ix - pad)];
                                    let wv = w.data()[((o * ic + c) * kh + ky) * kw + kx];
                                    acc += xv as f64 * wv as f64;
                                }
                            }
                        }
                        out[((b * oc + o) * ho + oy) * wo + ox] = acc as f32;
                    }
                }
            }
        }
        Tensor::from_vec(vec![bsz, oc, ho, wo], out)
    }

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng) as f32)
            .collect();
        Tensor::from_vec(shape.to_vec(), data)
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = randn(&[1, 1, 8, 8], 3);
        let mut wdat = vec![0.0f32; 9];
        wdat[4] = 1.0; // centered delta
        let w = Tensor::from_vec(vec![1, 1, 3, 3], wdat);
        let y = conv2d(&x, &w, None, 1);
        assert_eq!(y.shape(), x.shape());
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gemm_conv_matches_naive() {
        let x = randn(&[2, 3, 8, 8], 11);
        let w = randn(&[4, 3, 3, 3], 12);
        let b = randn(&[4], 13);
        let fast = conv2d(&x, &w, Some(&b), 1);
        let slow = conv2d_naive(&x, &w, Some(&b), 1);
        for (a, c) in fast.data().iter().zip(slow.data()) {
            let denom = c.abs().max(1.0);
            assert!((a - c).abs() / denom < 1e-6, "{a} vs {c}");
        }
    }

    #[test]
    fn unpadded_valid_conv_shapes() {
        let x = randn(&[1, 2, 8, 8], 4);
        let w = randn(&[3, 2, 5, 5], 5);
        let y = conv2d(&x, &w, None, 0);
        assert_eq!(y.shape(), [1, 3, 4, 4]);
        let slow = conv2d_naive(&x, &w, None, 0);
        for (a, c) in y.data().iter().zip(slow.data()) {
            assert!((a - c).abs() < 1e-4);
        }
    }
}
