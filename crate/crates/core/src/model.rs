//! Patch denoiser network and checkpoint persistence.
//!
//! A fully convolutional residual net, size-agnostic so the same weights run
//! on any patch size. The noise level enters twice: through input/output
//! preconditioning and as a constant channel appended to the input. The
//! whole-image comparison model is the identical code path with the
//! positional channels switched off.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv, pt1, AdamHyperParams, AdamState, Graph, Tensor, Var};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Arch {
    pub image_channels: usize,
    /// Two positional coordinate channels appended to the input.
    pub positional: bool,
    pub base_channels: usize,
    pub n_blocks: usize,
    pub sigma_data: f32,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            image_channels: 1,
            positional: true,
            base_channels: 64,
            n_blocks: 6,
            sigma_data: 0.5,
        }
    }
}

impl Arch {
    pub fn whole_image(image_channels: usize) -> Self {
        Arch {
            image_channels,
            positional: false,
            ..Default::default()
        }
    }

    /// Channels the caller must supply: image plus positional.
    pub fn input_channels(&self) -> usize {
        self.image_channels + if self.positional { 2 } else { 0 }
    }

    /// First-layer channels: input plus the constant noise channel.
    fn net_in_channels(&self) -> usize {
        self.input_channels() + 1
    }

    fn validate(&self) -> Result<()> {
        if self.image_channels == 0 || self.base_channels == 0 || self.n_blocks == 0 {
            return Err(Error::config("architecture extents must be positive"));
        }
        if self.sigma_data <= 0.0 {
            return Err(Error::config("sigma_data must be positive"));
        }
        Ok(())
    }

    /// (name, shape) for every parameter, in storage order.
    pub fn layer_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let b = self.base_channels;
        let mut out = vec![
            ("conv_in.w".into(), vec![b, self.net_in_channels(), 3, 3]),
            ("conv_in.b".into(), vec![b]),
        ];
        for i in 0..self.n_blocks {
            for j in 1..=2 {
                out.push((format!("block{i}.conv{j}.w"), vec![b, b, 3, 3]));
                out.push((format!("block{i}.conv{j}.b"), vec![b]));
            }
        }
        out.push(("conv_out.w".into(), vec![self.image_channels, b, 3, 3]));
        out.push(("conv_out.b".into(), vec![self.image_channels]));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }
}

/// Noise-level preconditioning coefficients.
#[derive(Clone, Copy, Debug)]
pub struct Preconditioner {
    pub sigma_data: f32,
}

impl Preconditioner {
    pub fn c_skip(&self, sigma: f32) -> f32 {
        let sd2 = self.sigma_data * self.sigma_data;
        sd2 / (sigma * sigma + sd2)
    }

    pub fn c_out(&self, sigma: f32) -> f32 {
        let sd2 = self.sigma_data * self.sigma_data;
        sigma * self.sigma_data / (sigma * sigma + sd2).sqrt()
    }

    pub fn c_in(&self, sigma: f32) -> f32 {
        let sd2 = self.sigma_data * self.sigma_data;
        1.0 / (sigma * sigma + sd2).sqrt()
    }

    pub fn c_noise(&self, sigma: f32) -> f32 {
        sigma.ln() / 4.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightSet {
    Current,
    Ema,
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub arch: Arch,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    /// Exponential moving average shadow, used for inference.
    pub ema: Vec<Tensor>,
    pub step: u64,
    pub trained_sigma_range: (f32, f32),
    pub ema_halflife: f64,
}

impl ModelParams {
    pub fn weights(&self, set: WeightSet) -> &[Tensor] {
        match set {
            WeightSet::Current => &self.params,
            WeightSet::Ema => &self.ema,
        }
    }

    /// Folds current parameters into the EMA shadow with the decay implied
    /// by the configured half-life (in optimizer steps).
    pub fn ema_update(&mut self) {
        let decay = if self.ema_halflife <= 0.0 {
            0.0
        } else {
            (0.5f64).powf(1.0 / self.ema_halflife) as f32
        };
        for (s, p) in self.ema.iter_mut().zip(&self.params) {
            for (sv, &pv) in s.data_mut().iter_mut().zip(p.data()) {
                *sv = decay * *sv + (1.0 - decay) * pv;
            }
        }
    }

    pub fn precond(&self) -> Preconditioner {
        Preconditioner {
            sigma_data: self.arch.sigma_data,
        }
    }
}

/// He-style initialization, deterministic in the seed. The output layer
/// starts at zero so an untrained model is exactly the preconditioner skip.
pub fn build_model(arch: &Arch, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut names = Vec::new();
    let mut params = Vec::new();
    for (name, shape) in arch.layer_shapes() {
        let t = if name == "conv_out.w" || name == "conv_out.b" || name.ends_with(".b") {
            Tensor::zeros(&shape)
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            let dist = Normal::new(0.0, std).unwrap();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| dist.sample(&mut rng) as f32)
                .collect();
            Tensor::from_vec(shape, data)
        };
        names.push(name);
        params.push(t);
    }
    Ok(ModelParams {
        arch: arch.clone(),
        names,
        ema: params.clone(),
        params,
        step: 0,
        trained_sigma_range: (0.002, 40.0),
        ema_halflife: 500.0,
    })
}

// bit-identical to the graph op's rounding
fn silu(t: &Tensor) -> Tensor {
    t.map(|v| v * (1.0 / (1.0 + (-v).exp())))
}

fn check_input(arch: &Arch, x: &Tensor) -> Result<(usize, usize)> {
    let sh = x.shape();
    if sh.len() != 4 || sh[1] != arch.input_channels() || sh[2] != sh[3] {
        return Err(Error::shape(format!(
            "denoise expects (B, {}, P, P), got {:?}",
            arch.input_channels(),
            sh
        )));
    }
    Ok((sh[0], sh[2]))
}

/// Preconditioned denoise on a batch of patches (B, C_img+pos, P, P), no
/// dropout. Returns the clean-signal estimate (B, C_img, P, P).
pub fn denoise(m: &ModelParams, x: &Tensor, sigma: f32, set: WeightSet) -> Result<Tensor> {
    if sigma <= 0.0 {
        return Err(Error::config("denoise requires sigma > 0"));
    }
    let arch = &m.arch;
    let (bsz, p) = check_input(arch, x)?;
    let pc = m.precond();
    let c_img = arch.image_channels;
    let cx = arch.input_channels();

    let x_img = slice_channels(x, 0, c_img);
    // scale only the noisy image channels going into the net
    let mut net_in = vec![0.0f32; bsz * (cx + 1) * p * p];
    let plane = p * p;
    for b in 0..bsz {
        for ch in 0..cx {
            let src = &x.data()[(b * cx + ch) * plane..][..plane];
            let dst = &mut net_in[(b * (cx + 1) + ch) * plane..][..plane];
            if ch < c_img {
                let ci = pc.c_in(sigma);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = ci * s;
                }
            } else {
                dst.copy_from_slice(src);
            }
        }
        net_in[(b * (cx + 1) + cx) * plane..][..plane].fill(pc.c_noise(sigma));
    }
    let net_in = Tensor::from_vec(vec![bsz, cx + 1, p, p], net_in);

    let w = m.weights(set);
    let get = |name: &str| {
        let idx = m.names.iter().position(|n| n == name).unwrap();
        &w[idx]
    };
    let mut h = conv::conv2d(&net_in, get("conv_in.w"), Some(get("conv_in.b")), 1);
    for i in 0..arch.n_blocks {
        let a = silu(&h);
        let a = conv::conv2d(
            &a,
            get(&format!("block{i}.conv1.w")),
            Some(get(&format!("block{i}.conv1.b"))),
            1,
        );
        let a = silu(&a);
        let a = conv::conv2d(
            &a,
            get(&format!("block{i}.conv2.w")),
            Some(get(&format!("block{i}.conv2.b"))),
            1,
        );
        h = h.add(&a);
    }
    let f = conv::conv2d(&silu(&h), get("conv_out.w"), Some(get("conv_out.b")), 1);
    let mut out = x_img.scale(pc.c_skip(sigma));
    out.axpy(pc.c_out(sigma), &f);
    Ok(out)
}

fn slice_channels(x: &Tensor, from: usize, count: usize) -> Tensor {
    let sh = x.shape();
    let (bsz, c, h, w) = (sh[0], sh[1], sh[2], sh[3]);
    let plane = h * w;
    let mut out = vec![0.0f32; bsz * count * plane];
    for b in 0..bsz {
        let src = &x.data()[(b * c + from) * plane..][..count * plane];
        out[b * count * plane..(b + 1) * count * plane].copy_from_slice(src);
    }
    Tensor::from_vec(vec![bsz, count, h, w], out)
}

/// Per-parameter graph variables, aligned with `m.params` order.
pub fn param_vars(g: &mut Graph, m: &ModelParams, set: WeightSet) -> Vec<Var> {
    m.weights(set).iter().map(|t| g.param(t.clone())).collect()
}

/// Dropout configuration for training forward passes.
pub struct Dropout<'a> {
    pub rng: &'a mut ChaCha8Rng,
    pub prob: f32,
}

/// Graph forward of the preconditioned denoiser for training and
/// measurement-consistency refinement. `x_img` is (B, C_img, P, P); `pos`
/// must be given iff the architecture uses positional channels.
pub fn denoise_graph(
    g: &mut Graph,
    arch: &Arch,
    vars: &[Var],
    x_img: Var,
    pos: Option<Var>,
    sigma: f32,
    mut dropout: Option<Dropout>,
) -> Result<Var> {
    if sigma <= 0.0 {
        return Err(Error::config("denoise requires sigma > 0"));
    }
    arch.validate()?;
    if vars.len() != arch.layer_shapes().len() {
        return Err(Error::shape("parameter variable list does not match architecture"));
    }
    if arch.positional != pos.is_some() {
        return Err(Error::shape("positional channels disagree with architecture"));
    }
    let sh = g.value(x_img).shape().to_vec();
    if sh.len() != 4 || sh[1] != arch.image_channels || sh[2] != sh[3] {
        return Err(Error::shape(format!(
            "denoise_graph expects (B, {}, P, P), got {:?}",
            arch.image_channels, sh
        )));
    }
    let (bsz, p) = (sh[0], sh[2]);
    let pc = Preconditioner { sigma_data: arch.sigma_data };

    let noise_plane = g.constant(Tensor::full(&[bsz, 1, p, p], pc.c_noise(sigma)));
    let x_scaled = g.scale(x_img, pc.c_in(sigma));
    let mut parts = vec![x_scaled];
    if let Some(pv) = pos {
        parts.push(pv);
    }
    parts.push(noise_plane);
    let net_in = g.concat_ch(&parts)?;

    let names = arch.layer_shapes();
    let get = |name: &str| -> Var {
        let idx = names.iter().position(|(n, _)| n == name).unwrap();
        vars[idx]
    };

    let mut apply_dropout = |g: &mut Graph, h: Var| -> Result<Var> {
        if let Some(d) = dropout.as_mut() {
            if d.prob > 0.0 {
                let keep = 1.0 - d.prob;
                let shape = g.value(h).shape().to_vec();
                let mask: Vec<f32> = (0..shape.iter().product::<usize>())
                    .map(|_| {
                        if rand::Rng::random::<f32>(d.rng) < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let mask = g.constant(Tensor::from_vec(shape, mask));
                return g.mul(h, mask);
            }
        }
        Ok(h)
    };

    let mut h = g.conv2d(net_in, get("conv_in.w"), Some(get("conv_in.b")), 1)?;
    for i in 0..arch.n_blocks {
        let a = g.silu(h);
        let a = g.conv2d(
            a,
            get(&format!("block{i}.conv1.w")),
            Some(get(&format!("block{i}.conv1.b"))),
            1,
        )?;
        let a = g.silu(a);
        let a = apply_dropout(g, a)?;
        let a = g.conv2d(
            a,
            get(&format!("block{i}.conv2.w")),
            Some(get(&format!("block{i}.conv2.b"))),
            1,
        )?;
        h = g.add(h, a)?;
    }
    let f = g.silu(h);
    let f = g.conv2d(f, get("conv_out.w"), Some(get("conv_out.b")), 1)?;
    let skip = g.scale(x_img, pc.c_skip(sigma));
    let out = g.scale(f, pc.c_out(sigma));
    g.add(skip, out)
}

/// Score estimate from a denoised output: (D - x) / sigma^2.
pub fn score_from_denoised(d: &Tensor, x: &Tensor, sigma: f32) -> Result<Tensor> {
    if sigma <= 0.0 {
        return Err(Error::config("score requires sigma > 0"));
    }
    if !d.same_shape(x) {
        return Err(Error::shape("score shape mismatch"));
    }
    let mut out = d.sub(x);
    out = out.scale(1.0 / (sigma * sigma));
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    arch: Arch,
    names: Vec<String>,
    step: u64,
    trained_sigma_range: (f32, f32),
    ema_halflife: f64,
    adam: Option<AdamHeader>,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    hp: AdamHyperParams,
    step: u64,
}

/// One JSON header line, then PT1 tensors: params, ema, and if present the
/// optimizer's first and second moments. Round-trips bit-exactly.
pub fn save_checkpoint(
    m: &ModelParams,
    adam: Option<&AdamState>,
    path: impl AsRef<Path>,
) -> Result<()> {
    let header = CheckpointHeader {
        arch: m.arch.clone(),
        names: m.names.clone(),
        step: m.step,
        trained_sigma_range: m.trained_sigma_range,
        ema_halflife: m.ema_halflife,
        adam: adam.map(|a| AdamHeader { hp: a.hp, step: a.step }),
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(&mut f, &header)?;
    f.write_all(b"\n")?;
    for t in m.params.iter().chain(&m.ema) {
        pt1::write_tensor(&mut f, t)?;
    }
    if let Some(a) = adam {
        for t in a.m.iter().chain(&a.v) {
            pt1::write_tensor(&mut f, t)?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, Option<AdamState>)> {
    let f = std::fs::File::open(path)?;
    let mut r = std::io::BufReader::new(f);
    let mut line = String::new();
    r.read_line(&mut line)?;
    let header: CheckpointHeader = serde_json::from_str(line.trim_end())?;
    let shapes = header.arch.layer_shapes();
    if header.names.len() != shapes.len()
        || header.names.iter().zip(&shapes).any(|(n, (sn, _))| n != sn)
    {
        return Err(Error::format("checkpoint names do not match architecture"));
    }
    let n = shapes.len();
    let read_group = |r: &mut std::io::BufReader<std::fs::File>| -> Result<Vec<Tensor>> {
        let mut out = Vec::with_capacity(n);
        for (_, shape) in &shapes {
            let t = pt1::read_tensor(r)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::format("checkpoint tensor shape mismatch"));
            }
            out.push(t);
        }
        Ok(out)
    };
    let params = read_group(&mut r)?;
    let ema = read_group(&mut r)?;
    let adam = match header.adam {
        Some(ah) => {
            let m = read_group(&mut r)?;
            let v = read_group(&mut r)?;
            Some(AdamState { m, v, step: ah.step, hp: ah.hp })
        }
        None => None,
    };
    Ok((
        ModelParams {
            arch: header.arch,
            names: header.names,
            params,
            ema,
            step: header.step,
            trained_sigma_range: header.trained_sigma_range,
            ema_halflife: header.ema_halflife,
        },
        adam,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch() -> Arch {
        Arch {
            image_channels: 1,
            positional: true,
            base_channels: 8,
            n_blocks: 2,
            sigma_data: 0.5,
        }
    }

    fn rand_patches(arch: &Arch, bsz: usize, p: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = arch.input_channels();
        let data = (0..bsz * c * p * p)
            .map(|_| rand::Rng::random::<f32>(&mut rng) - 0.5)
            .collect();
        Tensor::from_vec(vec![bsz, c, p, p], data)
    }

    #[test]
    fn same_seed_identical_params() {
        let a = build_model(&Arch::default(), 7).unwrap();
        let b = build_model(&Arch::default(), 7).unwrap();
        for (x, y) in a.params.iter().zip(&b.params) {
            assert_eq!(x.data(), y.data());
        }
        let c = build_model(&Arch::default(), 8).unwrap();
        assert_ne!(a.params[0].data(), c.params[0].data());
    }

    #[test]
    fn param_count_matches_closed_form() {
        let arch = Arch::default();
        // first conv: 64 x (1+2+1) x 3 x 3 + 64; blocks: 6 x 2 x (64*64*9+64);
        // last conv: 1 x 64 x 9 + 1
        let expect = 64 * 4 * 9 + 64 + 6 * 2 * (64 * 64 * 9 + 64) + 64 * 9 + 1;
        assert_eq!(arch.param_count(), expect);
    }

    #[test]
    fn whole_image_model_drops_positional_channels() {
        let patch = Arch::default();
        let whole = Arch::whole_image(1);
        assert_eq!(patch.layer_shapes()[0].1, vec![64, 4, 3, 3]);
        assert_eq!(whole.layer_shapes()[0].1, vec![64, 2, 3, 3]);
        // all other layers identical
        for (a, b) in patch.layer_shapes().iter().zip(whole.layer_shapes()).skip(2) {
            assert_eq!(a.1, b.1);
        }
    }

    #[test]
    fn untrained_model_is_identity_at_tiny_sigma() {
        let arch = small_arch();
        let m = build_model(&arch, 1).unwrap();
        let x = rand_patches(&arch, 2, 8, 3);
        let d = denoise(&m, &x, 1e-4, WeightSet::Current).unwrap();
        // conv_out starts at zero, so D = c_skip * x exactly
        let c_skip = m.precond().c_skip(1e-4);
        for b in 0..2 {
            for i in 0..64 {
                let xv = x.data()[b * 3 * 64 + i];
                let dv = d.data()[b * 64 + i];
                assert!((dv - c_skip * xv).abs() < 1e-7);
            }
        }
        assert!((c_skip - 1.0).abs() < 1e-6);
    }

    #[test]
    fn outputs_finite_over_extreme_sigmas() {
        let arch = small_arch();
        let mut m = build_model(&arch, 2).unwrap();
        // give the output layer nonzero weights
        let idx = m.names.iter().position(|n| n == "conv_out.w").unwrap();
        m.params[idx] = m.params[idx].map(|_| 0.05);
        let x = rand_patches(&arch, 1, 8, 4);
        for sigma in [1e-4f32, 1e-2, 1.0, 10.0, 100.0] {
            let d = denoise(&m, &x, sigma, WeightSet::Current).unwrap();
            assert!(d.all_finite(), "sigma {sigma}");
        }
    }

    #[test]
    fn graph_forward_matches_plain_forward() {
        let arch = small_arch();
        let mut m = build_model(&arch, 5).unwrap();
        // nonzero output layer so the network branch participates
        for (n, t) in m.names.clone().iter().zip(m.params.iter_mut()) {
            if n == "conv_out.w" {
                *t = t.map(|_| 0.03);
            }
        }
        let x = rand_patches(&arch, 3, 8, 6);
        let sigma = 0.7;
        let plain = denoise(&m, &x, sigma, WeightSet::Current).unwrap();

        let mut g = Graph::new();
        let vars = param_vars(&mut g, &m, WeightSet::Current);
        let x_img = g.constant(slice_channels(&x, 0, 1));
        let pos = g.constant(slice_channels(&x, 1, 2));
        let out = denoise_graph(&mut g, &arch, &vars, x_img, Some(pos), sigma, None).unwrap();
        assert_eq!(g.value(out).data(), plain.data());
    }

    #[test]
    fn dropout_only_perturbs_when_enabled() {
        let arch = small_arch();
        let m = build_model(&arch, 5).unwrap();
        let x = rand_patches(&arch, 1, 8, 6);
        let run = |drop: bool, seed: u64| {
            let mut g = Graph::new();
            let vars = param_vars(&mut g, &m, WeightSet::Current);
            let x_img = g.constant(slice_channels(&x, 0, 1));
            let pos = g.constant(slice_channels(&x, 1, 2));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = drop.then_some(Dropout { rng: &mut rng, prob: 0.5 });
            let out = denoise_graph(&mut g, &arch, &vars, x_img, Some(pos), 0.5, d).unwrap();
            g.value(out).clone()
        };
        let off_a = run(false, 0);
        let off_b = run(false, 1);
        assert_eq!(off_a.data(), off_b.data());
        let on_a = run(true, 0);
        let on_b = run(true, 0);
        assert_eq!(on_a.data(), on_b.data(), "same dropout seed is deterministic");
    }

    #[test]
    fn score_identities_and_gaussian_oracle() {
        let x = Tensor::from_vec(vec![4], vec![0.1, -0.4, 0.9, 0.0]);
        let z = score_from_denoised(&x, &x, 0.3).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));

        // algebraic identity: sigma^2 * score + x = D
        let d = Tensor::from_vec(vec![4], vec![0.2, -0.1, 0.5, 0.3]);
        let s = score_from_denoised(&d, &x, 0.3).unwrap();
        for i in 0..4 {
            let back = 0.3f32 * 0.3 * s.data()[i] + x.data()[i];
            assert!((back - d.data()[i]).abs() < 1e-6);
        }

        // clean signal ~ N(mu, tau^2): the optimal denoiser is
        // (tau^2 x + sigma^2 mu)/(tau^2 + sigma^2) and the implied score is
        // (mu - x)/(tau^2 + sigma^2)
        let (mu, tau, sigma) = (0.3f32, 0.2f32, 0.5f32);
        let opt = x.map(|v| (tau * tau * v + sigma * sigma * mu) / (tau * tau + sigma * sigma));
        let s = score_from_denoised(&opt, &x, sigma).unwrap();
        for i in 0..4 {
            let closed = (mu - x.data()[i]) / (tau * tau + sigma * sigma);
            assert!((s.data()[i] - closed).abs() < 1e-6);
        }
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let dir = std::env::temp_dir().join("patchprior_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.ckpt");
        let arch = small_arch();
        let mut m = build_model(&arch, 9).unwrap();
        m.step = 123;
        m.trained_sigma_range = (0.01, 10.0);
        // perturb ema so it differs from params
        m.ema[0].data_mut()[0] += 0.25;
        let mut adam = AdamState::new(&m.params, AdamHyperParams::with_lr(1e-4));
        adam.step = 77;
        adam.m[1].data_mut()[0] = 0.5;
        save_checkpoint(&m, Some(&adam), &path).unwrap();

        let (m2, adam2) = load_checkpoint(&path).unwrap();
        assert_eq!(m2.arch, m.arch);
        assert_eq!(m2.step, 123);
        for (a, b) in m.params.iter().zip(&m2.params) {
            assert_eq!(a.data(), b.data());
        }
        for (a, b) in m.ema.iter().zip(&m2.ema) {
            assert_eq!(a.data(), b.data());
        }
        let adam2 = adam2.unwrap();
        assert_eq!(adam2.step, 77);
        assert_eq!(adam2.m[1].data()[0], 0.5);

        // truncation must error
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        assert!(load_checkpoint(&path).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn ema_update_moves_shadow_toward_params() {
        let arch = small_arch();
        let mut m = build_model(&arch, 3).unwrap();
        m.ema_halflife = 1.0; // decay 0.5 per step
        m.params[0].data_mut()[0] = 1.0;
        m.ema[0].data_mut()[0] = 0.0;
        m.ema_update();
        assert!((m.ema[0].data()[0] - 0.5).abs() < 1e-6);
    }
}
