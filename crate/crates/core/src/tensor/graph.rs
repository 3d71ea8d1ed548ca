//! Define-by-run reverse-mode autodiff tape.
//!
//! A [`Graph`] is rebuilt per forward call. Values are computed eagerly as ops
//! are inserted; [`Graph::backward`] walks the tape once in reverse. The op
//! set is exactly what the denoiser network, the patch machinery, and the
//! unrolled conjugate-gradient loop need.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::conv::{conv2d, conv2d_backward, out_extent};
use crate::tensor::{LinearMap, Tensor};

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    Silu(Var),
    Reshape(Var),
    Sum(Var),
    Dot(Var, Var),
    MulScalar(Var, Var),
    DivScalar(Var, Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        pad: usize,
    },
    Pad2d {
        x: Var,
        pad: usize,
    },
    Crop2d {
        x: Var,
        top: usize,
        left: usize,
    },
    ConcatCh(Vec<Var>),
    GatherPatches {
        x: Var,
        origins: Arc<Vec<(usize, usize)>>,
        p: usize,
    },
    PlacePatches {
        x: Var,
        origins: Arc<Vec<(usize, usize)>>,
        h: usize,
        w: usize,
    },
    LinOp {
        x: Var,
        map: Arc<dyn LinearMap>,
    },
    LinOpAdjoint {
        y: Var,
        map: Arc<dyn LinearMap>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros when no path reached it.
    pub fn get_or_zeros(&self, v: Var, g: &Graph) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(g.value(v).shape()),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf (network parameter).
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn check_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "add")?;
        let v = self.value(a).add(self.value(b));
        Ok(self.push(v, Op::Add(a, b), self.rg(a) || self.rg(b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "sub")?;
        let v = self.value(a).sub(self.value(b));
        Ok(self.push(v, Op::Sub(a, b), self.rg(a) || self.rg(b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "mul")?;
        let v = Tensor::from_vec(
            self.value(a).shape().to_vec(),
            self.value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x * y)
                .collect(),
        );
        Ok(self.push(v, Op::Mul(a, b), self.rg(a) || self.rg(b)))
    }

    pub fn scale(&mut self, x: Var, a: f32) -> Var {
        let v = self.value(x).scale(a);
        let rg = self.rg(x);
        self.push(v, Op::Scale(x, a), rg)
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|t| t * sigmoid(t));
        let rg = self.rg(x);
        self.push(v, Op::Silu(x), rg)
    }

    /// Same data, new extents; element count must match.
    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(v, Op::Reshape(x), rg))
    }

    /// Reduction of all elements to a rank-0 scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum() as f32);
        let rg = self.rg(x);
        self.push(v, Op::Sum(x), rg)
    }

    /// Inner product of the flattened tensors, rank-0 result.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "dot")?;
        let v = Tensor::scalar(self.value(a).dot(self.value(b)) as f32);
        Ok(self.push(v, Op::Dot(a, b), self.rg(a) || self.rg(b)))
    }

    /// Tensor times a rank-0 scalar node.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::shape("mul_scalar: scalar operand is not rank-0"));
        }
        let sv = self.value(s).item();
        let v = self.value(x).scale(sv);
        Ok(self.push(v, Op::MulScalar(x, s), self.rg(x) || self.rg(s)))
    }

    /// Rank-0 division a / b.
    pub fn div_scalar(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).len() != 1 || self.value(b).len() != 1 {
            return Err(Error::shape("div_scalar: operands must be rank-0"));
        }
        let v = Tensor::scalar(self.value(a).item() / self.value(b).item());
        Ok(self.push(v, Op::DivScalar(a, b), self.rg(a) || self.rg(b)))
    }

    /// Batched convolution, x: (B, IC, H, W), w: (OC, IC, KH, KW).
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let xs = self.value(x).shape();
        let ws = self.value(w).shape();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape("conv2d expects rank-4 input and weight"));
        }
        if xs[1] != ws[1] {
            return Err(Error::shape(format!(
                "conv2d: input has {} channels, weight expects {}",
                xs[1], ws[1]
            )));
        }
        if out_extent(xs[2], ws[2], pad) == 0 || out_extent(xs[3], ws[3], pad) == 0 {
            return Err(Error::shape("conv2d: kernel larger than padded input"));
        }
        if let Some(bv) = b {
            if self.value(bv).len() != ws[0] {
                return Err(Error::shape("conv2d: bias length != out channels"));
            }
        }
        let v = conv2d(self.value(x), self.value(w), b.map(|bv| self.value(bv)), pad);
        let rg = self.rg(x) || self.rg(w) || b.map(|bv| self.rg(bv)).unwrap_or(false);
        Ok(self.push(v, Op::Conv2d { x, w, b, pad }, rg))
    }

    /// Zero-pads the last two dims of a rank-3 tensor by `pad` on each side.
    pub fn pad2d(&mut self, x: Var, pad: usize) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 3 {
            return Err(Error::shape("pad2d expects rank-3 (C,H,W)"));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let mut out = vec![0.0f32; c * hp * wp];
        for ch in 0..c {
            for y in 0..h {
                let src = &self.value(x).data()[(ch * h + y) * w..(ch * h + y + 1) * w];
                out[(ch * hp + y + pad) * wp + pad..(ch * hp + y + pad) * wp + pad + w]
                    .copy_from_slice(src);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_vec(vec![c, hp, wp], out),
            Op::Pad2d { x, pad },
            rg,
        ))
    }

    /// Crops a (C,H,W) tensor to (C, out_h, out_w) starting at (top, left).
    pub fn crop2d(&mut self, x: Var, top: usize, left: usize, out_h: usize, out_w: usize) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 3 {
            return Err(Error::shape("crop2d expects rank-3 (C,H,W)"));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        if top + out_h > h || left + out_w > w {
            return Err(Error::shape("crop2d window outside input"));
        }
        let mut out = vec![0.0f32; c * out_h * out_w];
        for ch in 0..c {
            for y in 0..out_h {
                let src =
                    &self.value(x).data()[(ch * h + top + y) * w + left..][..out_w];
                out[(ch * out_h + y) * out_w..(ch * out_h + y + 1) * out_w].copy_from_slice(src);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_vec(vec![c, out_h, out_w], out),
            Op::Crop2d { x, top, left },
            rg,
        ))
    }

    /// Concatenates along the channel dim: dim 0 for rank-3, dim 1 for rank-4.
    pub fn concat_ch(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_ch: empty input list"));
        }
        let first = self.value(parts[0]).shape().to_vec();
        let rank = first.len();
        if rank != 3 && rank != 4 {
            return Err(Error::shape("concat_ch expects rank-3 or rank-4 tensors"));
        }
        let cdim = rank - 3;
        let mut total_c = 0;
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != rank
                || s[..cdim] != first[..cdim]
                || s[cdim + 1..] != first[cdim + 1..]
            {
                return Err(Error::shape("concat_ch: incompatible shapes"));
            }
            total_c += s[cdim];
        }
        let mut shape = first.clone();
        shape[cdim] = total_c;
        let outer: usize = first[..cdim].iter().product();
        let inner: usize = first[cdim + 1..].iter().product();
        let mut out = vec![0.0f32; shape.iter().product()];
        for o in 0..outer {
            let mut coff = 0;
            for &p in parts {
                let pc = self.value(p).shape()[cdim];
                let src = &self.value(p).data()[o * pc * inner..(o + 1) * pc * inner];
                let dst = &mut out[(o * total_c + coff) * inner..][..pc * inner];
                dst.copy_from_slice(src);
                coff += pc;
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::from_vec(shape, out),
            Op::ConcatCh(parts.to_vec()),
            rg,
        ))
    }

    /// Gathers P x P patches at the given (row, col) origins from a (C,H,W)
    /// tensor into a (n, C, P, P) batch.
    pub fn gather_patches(
        &mut self,
        x: Var,
        origins: Arc<Vec<(usize, usize)>>,
        p: usize,
    ) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 3 {
            return Err(Error::shape("gather_patches expects rank-3 (C,H,W)"));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        for &(r0, c0) in origins.iter() {
            if r0 + p > h || c0 + p > w {
                return Err(Error::shape("gather_patches: patch outside image"));
            }
        }
        let n = origins.len();
        let mut out = vec![0.0f32; n * c * p * p];
        for (bi, &(r0, c0)) in origins.iter().enumerate() {
            for ch in 0..c {
                for y in 0..p {
                    let src = &self.value(x).data()[(ch * h + r0 + y) * w + c0..][..p];
                    out[((bi * c + ch) * p + y) * p..((bi * c + ch) * p + y + 1) * p]
                        .copy_from_slice(src);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_vec(vec![n, c, p, p], out),
            Op::GatherPatches { x, origins, p },
            rg,
        ))
    }

    /// Scatters a (n, C, P, P) batch into a zero (C,H,W) image at the given
    /// origins. Origins must be pairwise disjoint (the shifted grid is).
    pub fn place_patches(
        &mut self,
        x: Var,
        origins: Arc<Vec<(usize, usize)>>,
        h: usize,
        w: usize,
    ) -> Result<Var> {
        let s = self.value(x).shape();
        if s.len() != 4 || s[0] != origins.len() {
            return Err(Error::shape("place_patches expects (n,C,P,P) with n == origins"));
        }
        let (c, p) = (s[1], s[2]);
        if s[3] != p {
            return Err(Error::shape("place_patches: non-square patches"));
        }
        for &(r0, c0) in origins.iter() {
            if r0 + p > h || c0 + p > w {
                return Err(Error::shape("place_patches: patch outside output"));
            }
        }
        let mut out = vec![0.0f32; c * h * w];
        for (bi, &(r0, c0)) in origins.iter().enumerate() {
            for ch in 0..c {
                for y in 0..p {
                    let src = &self.value(x).data()
                        [((bi * c + ch) * p + y) * p..((bi * c + ch) * p + y + 1) * p];
                    out[(ch * h + r0 + y) * w + c0..(ch * h + r0 + y) * w + c0 + p]
                        .copy_from_slice(src);
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_vec(vec![c, h, w], out),
            Op::PlacePatches { x, origins, h, w },
            rg,
        ))
    }

    /// Applies a linear operator; the backward pass applies its adjoint.
    pub fn apply_linop(&mut self, x: Var, map: Arc<dyn LinearMap>) -> Result<Var> {
        if self.value(x).shape() != map.input_shape().as_slice() {
            return Err(Error::shape(format!(
                "apply_linop: input {:?}, operator expects {:?}",
                self.value(x).shape(),
                map.input_shape()
            )));
        }
        let v = map.apply(self.value(x));
        let rg = self.rg(x);
        Ok(self.push(v, Op::LinOp { x, map }, rg))
    }

    /// Applies the adjoint of a linear operator; backward applies the forward.
    pub fn apply_linop_adjoint(&mut self, y: Var, map: Arc<dyn LinearMap>) -> Result<Var> {
        if self.value(y).shape() != map.output_shape().as_slice() {
            return Err(Error::shape(format!(
                "apply_linop_adjoint: input {:?}, operator emits {:?}",
                self.value(y).shape(),
                map.output_shape()
            )));
        }
        let v = map.adjoint(self.value(y));
        let rg = self.rg(y);
        Ok(self.push(v, Op::LinOpAdjoint { y, map }, rg))
    }

    /// Convenience: squared L2 distance ||a - b||^2 as a rank-0 node.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.sub(a, b)?;
        self.dot(d, d)
    }

    /// Reverse pass from a rank-0 output. Visits the tape once in reverse;
    /// leaves unreachable from `output` get no gradient entry.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.value(output).len() != 1 {
            return Err(Error::shape("backward: output is not a scalar node"));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::from_vec(
            self.value(output).shape().to_vec(),
            vec![1.0],
        ));

        for idx in (0..=output.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    self.accum(&mut grads, *a, g.clone());
                    self.accum(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    self.accum(&mut grads, *a, g.clone());
                    self.accum(&mut grads, *b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    if self.rg(*a) {
                        let da = elementwise_mul(&g, self.value(*b));
                        self.accum(&mut grads, *a, da);
                    }
                    if self.rg(*b) {
                        let db = elementwise_mul(&g, self.value(*a));
                        self.accum(&mut grads, *b, db);
                    }
                }
                Op::Scale(x, a) => {
                    self.accum(&mut grads, *x, g.scale(*a));
                }
                Op::Silu(x) => {
                    let xd = self.value(*x).data();
                    let data = g
                        .data()
                        .iter()
                        .zip(xd)
                        .map(|(gv, &xv)| {
                            let s = sigmoid(xv);
                            gv * (s * (1.0 + xv * (1.0 - s)))
                        })
                        .collect();
                    self.accum(
                        &mut grads,
                        *x,
                        Tensor::from_vec(self.value(*x).shape().to_vec(), data),
                    );
                }
                Op::Reshape(x) => {
                    let back = g.reshape(self.value(*x).shape().to_vec()).expect("same length");
                    self.accum(&mut grads, *x, back);
                }
                Op::Sum(x) => {
                    let gv = g.item();
                    self.accum(&mut grads, *x, Tensor::full(self.value(*x).shape(), gv));
                }
                Op::Dot(a, b) => {
                    let gv = g.item();
                    if self.rg(*a) {
                        self.accum(&mut grads, *a, self.value(*b).scale(gv));
                    }
                    if self.rg(*b) {
                        self.accum(&mut grads, *b, self.value(*a).scale(gv));
                    }
                }
                Op::MulScalar(x, s) => {
                    let sv = self.value(*s).item();
                    if self.rg(*x) {
                        self.accum(&mut grads, *x, g.scale(sv));
                    }
                    if self.rg(*s) {
                        let ds = g.dot(self.value(*x)) as f32;
                        self.accum(&mut grads, *s, Tensor::scalar(ds));
                    }
                }
                Op::DivScalar(a, b) => {
                    let gv = g.item();
                    let av = self.value(*a).item();
                    let bv = self.value(*b).item();
                    if self.rg(*a) {
                        self.accum(&mut grads, *a, Tensor::scalar(gv / bv));
                    }
                    if self.rg(*b) {
                        self.accum(&mut grads, *b, Tensor::scalar(-gv * av / (bv * bv)));
                    }
                }
                Op::Conv2d { x, w, b, pad } => {
                    let (dx, dw, db) = conv2d_backward(
                        self.value(*x),
                        self.value(*w),
                        &g,
                        *pad,
                        b.is_some(),
                    );
                    if self.rg(*x) {
                        self.accum(&mut grads, *x, dx);
                    }
                    if self.rg(*w) {
                        self.accum(&mut grads, *w, dw);
                    }
                    if let (Some(bv), Some(db)) = (b, db) {
                        if self.rg(*bv) {
                            self.accum(&mut grads, *bv, db);
                        }
                    }
                }
                Op::Pad2d { x, pad } => {
                    let s = self.value(*x).shape();
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let wp = w + 2 * pad;
                    let hp = h + 2 * pad;
                    let mut dx = vec![0.0f32; c * h * w];
                    for ch in 0..c {
                        for y in 0..h {
                            let src =
                                &g.data()[(ch * hp + y + pad) * wp + pad..][..w];
                            dx[(ch * h + y) * w..(ch * h + y + 1) * w].copy_from_slice(src);
                        }
                    }
                    self.accum(&mut grads, *x, Tensor::from_vec(vec![c, h, w], dx));
                }
                Op::Crop2d { x, top, left } => {
                    let s = self.value(*x).shape();
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let gs = g.shape();
                    let (oh, ow) = (gs[1], gs[2]);
                    let mut dx = vec![0.0f32; c * h * w];
                    for ch in 0..c {
                        for y in 0..oh {
                            let src = &g.data()[(ch * oh + y) * ow..(ch * oh + y + 1) * ow];
                            dx[(ch * h + top + y) * w + left..(ch * h + top + y) * w + left + ow]
                                .copy_from_slice(src);
                        }
                    }
                    self.accum(&mut grads, *x, Tensor::from_vec(vec![c, h, w], dx));
                }
                Op::ConcatCh(parts) => {
                    let rank = g.rank();
                    let cdim = rank - 3;
                    let total_c = g.shape()[cdim];
                    let outer: usize = g.shape()[..cdim].iter().product();
                    let inner: usize = g.shape()[cdim + 1..].iter().product();
                    let mut coff = 0;
                    for &p in parts {
                        let ps = self.value(p).shape().to_vec();
                        let pc = ps[cdim];
                        if self.rg(p) {
                            let mut dp = vec![0.0f32; ps.iter().product()];
                            for o in 0..outer {
                                let src = &g.data()[(o * total_c + coff) * inner..][..pc * inner];
                                dp[o * pc * inner..(o + 1) * pc * inner].copy_from_slice(src);
                            }
                            self.accum(&mut grads, p, Tensor::from_vec(ps, dp));
                        }
                        coff += pc;
                    }
                }
                Op::GatherPatches { x, origins, p } => {
                    let s = self.value(*x).shape();
                    let (c, h, w) = (s[0], s[1], s[2]);
                    let mut dx = vec![0.0f32; c * h * w];
                    for (bi, &(r0, c0)) in origins.iter().enumerate() {
                        for ch in 0..c {
                            for y in 0..*p {
                                let src = &g.data()
                                    [((bi * c + ch) * p + y) * p..((bi * c + ch) * p + y + 1) * p];
                                for (xx, sv) in dx
                                    [(ch * h + r0 + y) * w + c0..(ch * h + r0 + y) * w + c0 + p]
                                    .iter_mut()
                                    .zip(src)
                                {
                                    *xx += sv;
                                }
                            }
                        }
                    }
                    self.accum(&mut grads, *x, Tensor::from_vec(vec![c, h, w], dx));
                }
                Op::PlacePatches { x, origins, h, w } => {
                    let s = self.value(*x).shape();
                    let (n, c, p) = (s[0], s[1], s[2]);
                    let mut dx = vec![0.0f32; n * c * p * p];
                    for (bi, &(r0, c0)) in origins.iter().enumerate() {
                        for ch in 0..c {
                            for y in 0..p {
                                let src = &g.data()[(ch * h + r0 + y) * w + c0..][..p];
                                dx[((bi * c + ch) * p + y) * p..((bi * c + ch) * p + y + 1) * p]
                                    .copy_from_slice(src);
                            }
                        }
                    }
                    self.accum(&mut grads, *x, Tensor::from_vec(vec![n, c, p, p], dx));
                }
                Op::LinOp { x, map } => {
                    self.accum(&mut grads, *x, map.adjoint(&g));
                }
                Op::LinOpAdjoint { y, map } => {
                    self.accum(&mut grads, *y, map.apply(&g));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accum(&self, grads: &mut [Option<Tensor>], v: Var, delta: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => {
                debug_assert!(t.same_shape(&delta));
                for (a, b) in t.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot => *slot = Some(delta),
        }
    }
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

fn elementwise_mul(a: &Tensor, b: &Tensor) -> Tensor {
    debug_assert!(a.same_shape(b));
    Tensor::from_vec(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
    )
}
