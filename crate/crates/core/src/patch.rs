//! Shifted-partition patch machinery.
//!
//! An N x N image is zero-padded by P on every side. For a shift index
//! i = (dx, dy) in {0..P-1}^2 the padded image is cut into a (k+1) x (k+1)
//! grid of disjoint P x P patches (k = N/P) starting at (dy, dx); whatever
//! the grid misses is the border region, which the denoiser treats as zero.
//! Every unpadded pixel is grid-covered for every shift, so randomizing i
//! across steps never leaves interior pixels unestimated.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct PatchLayout {
    pub image_size: usize,
    pub patch: usize,
    /// (dx, dy) with dx along columns, dy along rows.
    pub shift: (usize, usize),
    /// (row, col) of each grid patch in padded coordinates, row-major.
    pub origins: Vec<(usize, usize)>,
}

impl PatchLayout {
    pub fn padded_size(&self) -> usize {
        self.image_size + 2 * self.patch
    }

    pub fn n_patches(&self) -> usize {
        self.origins.len()
    }

    /// True for padded pixels not covered by any grid patch.
    pub fn border_mask(&self) -> Vec<bool> {
        let s = self.padded_size();
        let (dx, dy) = self.shift;
        let span = self.origins.len().isqrt() * self.patch;
        let mut mask = vec![true; s * s];
        for (r, row) in mask.chunks_mut(s).enumerate() {
            if r < dy || r >= dy + span {
                continue;
            }
            for (c, m) in row.iter_mut().enumerate() {
                if c >= dx && c < dx + span {
                    *m = false;
                }
            }
        }
        mask
    }
}

pub fn make_layout(image_size: usize, patch: usize, shift_index: usize) -> Result<PatchLayout> {
    if patch == 0 || image_size % patch != 0 {
        return Err(Error::config("patch size must divide the image size"));
    }
    if shift_index >= patch * patch {
        return Err(Error::config("shift index out of range"));
    }
    let dx = shift_index % patch;
    let dy = shift_index / patch;
    let k = image_size / patch;
    let mut origins = Vec::with_capacity((k + 1) * (k + 1));
    for a in 0..=k {
        for b in 0..=k {
            origins.push((dy + a * patch, dx + b * patch));
        }
    }
    Ok(PatchLayout {
        image_size,
        patch,
        shift: (dx, dy),
        origins,
    })
}

/// Linear coordinate ramps over the padded image, spanning [-1, 1] exactly.
#[derive(Clone, Debug)]
pub struct PositionalArrays {
    /// Varies along columns.
    pub x: Tensor,
    /// Varies along rows.
    pub y: Tensor,
}

pub fn positional_arrays(padded_size: usize) -> PositionalArrays {
    let s = padded_size;
    let ramp: Vec<f32> = (0..s)
        .map(|p| 2.0 * p as f32 / (s as f32 - 1.0) - 1.0)
        .collect();
    let mut x = vec![0.0f32; s * s];
    let mut y = vec![0.0f32; s * s];
    for r in 0..s {
        for c in 0..s {
            x[r * s + c] = ramp[c];
            y[r * s + c] = ramp[r];
        }
    }
    PositionalArrays {
        x: Tensor::from_vec(vec![s, s], x),
        y: Tensor::from_vec(vec![s, s], y),
    }
}

/// Zero-pads (C, N, N) to (C, N+2P, N+2P).
pub fn pad_image(x: &Tensor, p: usize) -> Result<Tensor> {
    let sh = x.shape();
    if sh.len() != 3 || sh[1] != sh[2] {
        return Err(Error::shape("pad_image expects a square (C, N, N) tensor"));
    }
    let (c, n) = (sh[0], sh[1]);
    let s = n + 2 * p;
    let mut out = vec![0.0f32; c * s * s];
    for ch in 0..c {
        for r in 0..n {
            let src = &x.data()[(ch * n + r) * n..(ch * n + r + 1) * n];
            let dst = &mut out[(ch * s + r + p) * s + p..][..n];
            dst.copy_from_slice(src);
        }
    }
    Ok(Tensor::from_vec(vec![c, s, s], out))
}

/// Crops (C, N+2P, N+2P) back to (C, N, N).
pub fn crop_image(xp: &Tensor, p: usize) -> Result<Tensor> {
    let sh = xp.shape();
    if sh.len() != 3 || sh[1] != sh[2] || sh[1] <= 2 * p {
        return Err(Error::shape("crop_image expects a square padded tensor"));
    }
    let (c, s) = (sh[0], sh[1]);
    let n = s - 2 * p;
    let mut out = vec![0.0f32; c * n * n];
    for ch in 0..c {
        for r in 0..n {
            let src = &xp.data()[(ch * s + r + p) * s + p..][..n];
            out[(ch * n + r) * n..(ch * n + r + 1) * n].copy_from_slice(src);
        }
    }
    Ok(Tensor::from_vec(vec![c, n, n], out))
}

/// Cuts out the grid patches and appends the matching positional-channel
/// windows. Returns (n_patches, C+2, P, P) in layout (row-major) order.
pub fn extract_patches(
    x_padded: &Tensor,
    layout: &PatchLayout,
    pos: &PositionalArrays,
) -> Result<Tensor> {
    let s = layout.padded_size();
    let sh = x_padded.shape();
    if sh.len() != 3 || sh[1] != s || sh[2] != s {
        return Err(Error::shape(format!(
            "extract_patches expects (C, {s}, {s}), got {:?}",
            sh
        )));
    }
    if pos.x.shape() != [s, s] {
        return Err(Error::shape("positional arrays do not match padded size"));
    }
    let c = sh[0];
    let p = layout.patch;
    let n = layout.n_patches();
    let mut out = vec![0.0f32; n * (c + 2) * p * p];
    for (pi, &(r0, c0)) in layout.origins.iter().enumerate() {
        let base = pi * (c + 2) * p * p;
        for ch in 0..c {
            for r in 0..p {
                let src = &x_padded.data()[(ch * s + r0 + r) * s + c0..][..p];
                out[base + (ch * p + r) * p..][..p].copy_from_slice(src);
            }
        }
        for (ch_extra, plane) in [&pos.x, &pos.y].into_iter().enumerate() {
            let ch = c + ch_extra;
            for r in 0..p {
                let src = &plane.data()[(r0 + r) * s + c0..][..p];
                out[base + (ch * p + r) * p..][..p].copy_from_slice(src);
            }
        }
    }
    Ok(Tensor::from_vec(vec![n, c + 2, p, p], out))
}

/// Writes (n_patches, C, P, P) back into a zeroed padded image; the border
/// region stays zero.
pub fn assemble_patches(patches: &Tensor, layout: &PatchLayout) -> Result<Tensor> {
    let sh = patches.shape();
    let p = layout.patch;
    if sh.len() != 4 || sh[0] != layout.n_patches() || sh[2] != p || sh[3] != p {
        return Err(Error::shape("assemble_patches input does not match layout"));
    }
    let c = sh[1];
    let s = layout.padded_size();
    let mut out = vec![0.0f32; c * s * s];
    for (pi, &(r0, c0)) in layout.origins.iter().enumerate() {
        let base = pi * c * p * p;
        for ch in 0..c {
            for r in 0..p {
                let src = &patches.data()[base + (ch * p + r) * p..][..p];
                out[(ch * s + r0 + r) * s + c0..][..p].copy_from_slice(src);
            }
        }
    }
    Ok(Tensor::from_vec(vec![c, s, s], out))
}

/// One-shift whole-image denoise: pad, cut the grid at shift `shift_index`,
/// run the batched patch denoiser, reassemble, crop. The denoiser maps
/// (n, C+2, P, P) to (n, C, P, P).
pub fn stochastic_denoise(
    x_t: &Tensor,
    patch: usize,
    shift_index: usize,
    denoiser: impl FnOnce(&Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    let sh = x_t.shape();
    if sh.len() != 3 || sh[1] != sh[2] {
        return Err(Error::shape("stochastic_denoise expects (C, N, N)"));
    }
    let layout = make_layout(sh[1], patch, shift_index)?;
    let pos = positional_arrays(layout.padded_size());
    let padded = pad_image(x_t, patch)?;
    let patches = extract_patches(&padded, &layout, &pos)?;
    let denoised = denoiser(&patches)?;
    let assembled = assemble_patches(&denoised, &layout)?;
    crop_image(&assembled, patch)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_origins() {
        let l = make_layout(64, 16, 0).unwrap();
        assert_eq!(l.n_patches(), 25);
        let expect: Vec<(usize, usize)> = (0..5)
            .flat_map(|a| (0..5).map(move |b| (a * 16, b * 16)))
            .collect();
        assert_eq!(l.origins, expect);
    }

    #[test]
    fn tiling_is_exact_for_all_shifts() {
        for i in 0..256 {
            let l = make_layout(64, 16, i).unwrap();
            let s = l.padded_size();
            let mask = l.border_mask();
            let covered = mask.iter().filter(|&&b| !b).count();
            assert_eq!(covered, l.n_patches() * 16 * 16, "shift {i}");
            assert_eq!(covered + mask.iter().filter(|&&b| b).count(), s * s);
            // grid patches are pairwise disjoint and land inside the mask
            let mut seen = vec![false; s * s];
            for &(r0, c0) in &l.origins {
                for r in r0..r0 + 16 {
                    for c in c0..c0 + 16 {
                        assert!(!seen[r * s + c], "overlap at shift {i}");
                        assert!(!mask[r * s + c], "grid pixel marked border");
                        seen[r * s + c] = true;
                    }
                }
            }
            // every unpadded pixel is covered
            for r in 16..16 + 64 {
                for c in 16..16 + 64 {
                    assert!(seen[r * s + c], "uncovered interior pixel, shift {i}");
                }
            }
        }
    }

    #[test]
    fn border_mask_matches_brute_force_complement() {
        let i = 8 * 16 + 8; // shift (8, 8)
        let l = make_layout(64, 16, i).unwrap();
        let s = l.padded_size();
        let mut union = vec![false; s * s];
        for &(r0, c0) in &l.origins {
            for r in r0..r0 + 16 {
                for c in c0..c0 + 16 {
                    union[r * s + c] = true;
                }
            }
        }
        let mask = l.border_mask();
        for p in 0..s * s {
            assert_eq!(mask[p], !union[p]);
        }
    }

    #[test]
    fn positional_arrays_span_unit_interval() {
        let s = 96;
        let pos = positional_arrays(s);
        assert_eq!(pos.x.data()[0], -1.0);
        assert_eq!(pos.x.data()[s - 1], 1.0);
        assert_eq!(pos.y.data()[0], -1.0);
        assert_eq!(pos.y.data()[(s - 1) * s], 1.0);
        // x constant down a column, y constant along a row
        assert_eq!(pos.x.data()[3], pos.x.data()[5 * s + 3]);
        assert_eq!(pos.y.data()[3 * s], pos.y.data()[3 * s + 7]);
    }

    fn ramp_image(c: usize, n: usize, seed: f32) -> Tensor {
        let data = (0..c * n * n).map(|i| (i as f32 * 0.001 + seed).sin()).collect();
        Tensor::from_vec(vec![c, n, n], data)
    }

    #[test]
    fn pad_crop_roundtrip() {
        let x = ramp_image(2, 64, 0.3);
        let padded = pad_image(&x, 16).unwrap();
        assert_eq!(padded.shape(), [2, 96, 96]);
        assert_eq!(padded.data()[0], 0.0);
        let back = crop_image(&padded, 16).unwrap();
        assert_eq!(back.data(), x.data());
    }

    #[test]
    fn extract_then_assemble_restores_grid_pixels() {
        let x = ramp_image(1, 64, 1.1);
        let padded = pad_image(&x, 16).unwrap();
        for i in [0usize, 7, 137, 255] {
            let l = make_layout(64, 16, i).unwrap();
            let pos = positional_arrays(l.padded_size());
            let patches = extract_patches(&padded, &l, &pos).unwrap();
            assert_eq!(patches.shape(), [25, 3, 16, 16]);
            // image channels only for reassembly
            let mut img_only = vec![0.0f32; 25 * 16 * 16];
            for pi in 0..25 {
                img_only[pi * 256..(pi + 1) * 256]
                    .copy_from_slice(&patches.data()[pi * 3 * 256..][..256]);
            }
            let img_only = Tensor::from_vec(vec![25, 1, 16, 16], img_only);
            let assembled = assemble_patches(&img_only, &l).unwrap();
            let mask = l.border_mask();
            for p in 0..96 * 96 {
                if mask[p] {
                    assert_eq!(assembled.data()[p], 0.0);
                } else {
                    assert_eq!(assembled.data()[p], padded.data()[p]);
                }
            }
        }
    }

    #[test]
    fn top_left_patch_positional_channel_starts_at_minus_one() {
        let x = ramp_image(1, 64, 0.0);
        let padded = pad_image(&x, 16).unwrap();
        let l = make_layout(64, 16, 0).unwrap();
        let pos = positional_arrays(96);
        let patches = extract_patches(&padded, &l, &pos).unwrap();
        // patch 0, channel 1 (X) starts at -1
        assert_eq!(patches.data()[1 * 256], -1.0);
        assert_eq!(patches.data()[2 * 256], -1.0);
    }

    #[test]
    fn identity_denoiser_reproduces_input() {
        let x = ramp_image(1, 64, 2.0);
        for i in [0usize, 100, 255] {
            let out = stochastic_denoise(&x, 16, i, |patches| {
                let n = patches.shape()[0];
                let mut img = vec![0.0f32; n * 256];
                for pi in 0..n {
                    img[pi * 256..(pi + 1) * 256]
                        .copy_from_slice(&patches.data()[pi * 3 * 256..][..256]);
                }
                Ok(Tensor::from_vec(vec![n, 1, 16, 16], img))
            })
            .unwrap();
            assert_eq!(out.data(), x.data(), "shift {i}");
        }
    }

    #[test]
    fn zero_denoiser_gives_zero_image() {
        let x = ramp_image(1, 64, 3.0);
        let out = stochastic_denoise(&x, 16, 42, |patches| {
            Ok(Tensor::zeros(&[patches.shape()[0], 1, 16, 16]))
        })
        .unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn placement_matches_naive_per_pixel_lookup() {
        // denoiser output is an arbitrary function of patch index and pixel
        let f = |pi: usize, ch: usize, r: usize, c: usize| {
            ((pi * 31 + ch * 7 + r * 3 + c) as f32 * 0.137).cos()
        };
        let x = ramp_image(2, 64, 4.0);
        let i = 200;
        let out = stochastic_denoise(&x, 16, i, |patches| {
            let n = patches.shape()[0];
            let mut d = vec![0.0f32; n * 2 * 256];
            for pi in 0..n {
                for ch in 0..2 {
                    for r in 0..16 {
                        for c in 0..16 {
                            d[((pi * 2 + ch) * 16 + r) * 16 + c] = f(pi, ch, r, c);
                        }
                    }
                }
            }
            Ok(Tensor::from_vec(vec![n, 2, 16, 16], d))
        })
        .unwrap();

        // naive oracle: for each output pixel find its covering patch
        let l = make_layout(64, 16, i).unwrap();
        for ch in 0..2 {
            for r in 0..64 {
                for c in 0..64 {
                    let (pr, pc) = (r + 16, c + 16);
                    let (pi, &(r0, c0)) = l
                        .origins
                        .iter()
                        .enumerate()
                        .find(|(_, &(r0, c0))| {
                            pr >= r0 && pr < r0 + 16 && pc >= c0 && pc < c0 + 16
                        })
                        .expect("interior pixel must be covered");
                    let want = f(pi, ch, pr - r0, pc - c0);
                    let got = out.data()[(ch * 64 + r) * 64 + c];
                    assert_eq!(got, want, "pixel ({ch},{r},{c})");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(make_layout(64, 12, 0).is_err());
        assert!(make_layout(64, 16, 256).is_err());
        let x = Tensor::zeros(&[1, 64, 32]);
        assert!(pad_image(&x, 16).is_err());
    }
}
