//! Finite-difference check of the full denoiser gradient.

mod common;

use patchprior::model::{self, Arch, WeightSet};
use patchprior::tensor::Graph;
use patchprior::Tensor;

/// Loss(theta) = sum((D(x, sigma) - target)^2) evaluated without the tape.
fn loss_plain(m: &model::ModelParams, x: &Tensor, target: &Tensor, sigma: f32) -> f64 {
    let d = model::denoise(m, x, sigma, WeightSet::Current).unwrap();
    d.sub(target).norm_sq()
}

#[test]
fn denoiser_parameter_gradients_match_finite_differences() {
    let arch = Arch {
        image_channels: 1,
        positional: true,
        base_channels: 6,
        n_blocks: 2,
        sigma_data: 0.5,
    };
    let mut m = model::build_model(&arch, 11).unwrap();
    // keep magnitudes small so the f32 finite differences stay clean; give
    // the zero-initialized output layer signal so its path is exercised
    for t in m.params.iter_mut() {
        *t = t.map(|v| 0.2 * v);
    }
    let out_w = m.names.iter().position(|n| n == "conv_out.w").unwrap();
    m.params[out_w] = common::rand_uniform(&[1, 6, 3, 3], -0.1, 0.1, 5);

    let p = 8;
    let x = common::rand_uniform(&[1, 3, p, p], -0.4, 0.4, 6);
    let target = common::rand_uniform(&[1, 1, p, p], -0.3, 0.3, 7);
    let sigma = 0.6;

    // analytic gradients through the tape
    let mut g = Graph::new();
    let vars = model::param_vars(&mut g, &m, WeightSet::Current);
    let xi = {
        let mut img = vec![0.0f32; p * p];
        img.copy_from_slice(&x.data()[..p * p]);
        g.constant(Tensor::new(vec![1, 1, p, p], img).unwrap())
    };
    let pos = {
        let mut v = vec![0.0f32; 2 * p * p];
        v.copy_from_slice(&x.data()[p * p..]);
        g.constant(Tensor::new(vec![1, 2, p, p], v).unwrap())
    };
    let d = model::denoise_graph(&mut g, &arch, &vars, xi, Some(pos), sigma, None).unwrap();
    let t = g.constant(target.clone());
    let loss = g.sq_dist(d, t).unwrap();
    let grads = g.backward(loss).unwrap();

    // ~cbrt(f32 epsilon): balances truncation against f32 roundoff
    let h = 4e-3;
    for (pi, name) in m.names.clone().iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[pi], &g);
        let fd = {
            let mut m2 = m.clone();
            let base = m.params[pi].clone();
            common::finite_diff(
                |pt| {
                    m2.params[pi] = pt.clone();
                    loss_plain(&m2, &x, &target, sigma)
                },
                &base,
                h,
            )
        };
        let err = common::max_rel_err(&analytic, &fd, 0.05);
        assert!(err < 1e-3, "param {name}: max rel err {err}");
    }
}
