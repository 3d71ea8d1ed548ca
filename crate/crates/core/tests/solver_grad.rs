//! Finite-difference check of gradients through the unrolled conjugate
//! gradient solve used by the self-supervised refinement loss.

mod common;

use std::sync::Arc;

use patchprior::solvers::cg_data_fidelity_graph;
use patchprior::tensor::{Graph, LinearMap, Tensor};

/// Small dense map so the loss surface is nontrivial but well conditioned.
struct MatMap {
    m: Vec<f32>,
    rows: usize,
    cols: usize,
}

impl LinearMap for MatMap {
    fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = vec![0.0f32; self.rows];
        for r in 0..self.rows {
            out[r] = (0..self.cols)
                .map(|c| self.m[r * self.cols + c] * x.data()[c])
                .sum();
        }
        Tensor::from_vec(vec![self.rows], out)
    }
    fn adjoint(&self, y: &Tensor) -> Tensor {
        let mut out = vec![0.0f32; self.cols];
        for c in 0..self.cols {
            out[c] = (0..self.rows)
                .map(|r| self.m[r * self.cols + c] * y.data()[r])
                .sum();
        }
        Tensor::from_vec(vec![self.cols], out)
    }
    fn input_shape(&self) -> Vec<usize> {
        vec![self.cols]
    }
    fn output_shape(&self) -> Vec<usize> {
        vec![self.rows]
    }
}

fn loss_value(
    x_hat: &Tensor,
    y: &Tensor,
    a: &Arc<dyn LinearMap>,
    gamma: f32,
    m_cg: usize,
) -> f64 {
    let mut g = Graph::new();
    let xv = g.param(x_hat.clone());
    let yv = g.constant(y.clone());
    let out = cg_data_fidelity_graph(&mut g, xv, yv, a.clone(), gamma, m_cg).unwrap();
    let ay = g.apply_linop(out, a.clone()).unwrap();
    let yv2 = g.constant(y.clone());
    let loss = g.sq_dist(ay, yv2).unwrap();
    g.value(loss).item() as f64
}

#[test]
fn unrolled_cg_gradient_matches_finite_differences() {
    let n = 4;
    let a: Arc<dyn LinearMap> = Arc::new(MatMap {
        m: common::rand_uniform(&[n * n], -0.5, 0.5, 31).data().to_vec(),
        rows: n,
        cols: n,
    });
    let x_hat = common::rand_uniform(&[n], -0.5, 0.5, 32);
    let y = common::rand_uniform(&[n], -0.5, 0.5, 33);

    for m_cg in [1usize, 2, 3] {
        let gamma = 2.0;
        let mut g = Graph::new();
        let xv = g.param(x_hat.clone());
        let yv = g.constant(y.clone());
        let out = cg_data_fidelity_graph(&mut g, xv, yv, a.clone(), gamma, m_cg).unwrap();
        let ay = g.apply_linop(out, a.clone()).unwrap();
        let yv2 = g.constant(y.clone());
        let loss = g.sq_dist(ay, yv2).unwrap();
        let grads = g.backward(loss).unwrap();
        let analytic = grads.get_or_zeros(xv, &g);

        let fd = common::finite_diff(
            |xt| loss_value(xt, &y, &a, gamma, m_cg),
            &x_hat,
            4e-3,
        );
        let err = common::max_rel_err(&analytic, &fd, 0.05);
        assert!(err < 1e-2, "m_cg {m_cg}: max rel err {err}");
    }
}
