//! Reverse-mode automatic differentiation over NCHW tensors.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter
//! through [`Tape::param`], which returns the same variable each time it is
//! asked for the same [`ParamId`], so weight sharing (recurrent units)
//! accumulates gradients into a single leaf.

use std::collections::HashMap;

use ndarray::{Array2, Array4, ArrayView2, Axis};

use super::params::{ParamId, ParamStore};
use crate::imgops::reflect_index;

pub type Tensor = Array4<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Conv2d { x: Var, w: Var, b: Var },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    Mul(Var, Var),
    /// `x * gate` with a single-channel gate broadcast over channels.
    GateMul { x: Var, gate: Var },
    Concat(Vec<Var>),
    Channels { x: Var, start: usize },
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Upsample2(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Parameter gradients from one backward pass, indexed like the store.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.index()).and_then(|g| g.as_ref())
    }

    /// Adds `other` into `self` (used to accumulate across samples).
    pub fn accumulate(&mut self, other: &Gradients) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            match (mine.as_mut(), theirs) {
                (Some(m), Some(t)) => *m += t,
                (None, Some(t)) => *mine = Some(t.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            *g *= s;
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
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

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    /// Stride-1 convolution with reflect padding; output has the input's
    /// spatial size. `w` is `(cout, cin, k, k)` with odd `k`, `b` is `(1, cout, 1, 1)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let bv = self.value(b);
        let (n, cin, h, wd) = xv.dim();
        let (cout, wcin, k, k2) = wv.dim();
        assert_eq!(cin, wcin, "conv input channels");
        assert!(k == k2 && k % 2 == 1, "square odd kernel");
        let cols = im2col(xv, k);
        let wmat = wv.view().into_shape_with_order((cout, cin * k * k)).expect("contiguous weights");
        let out = wmat.dot(&cols);
        let mut y = Tensor::zeros((n, cout, h, wd));
        let hw = h * wd;
        {
            let ys = y.as_slice_mut().expect("standard layout");
            for co in 0..cout {
                let bias = bv[[0, co, 0, 0]];
                let row = out.row(co);
                let row = row.as_slice().expect("row contiguous");
                for ni in 0..n {
                    let dst = &mut ys[(ni * cout + co) * hw..(ni * cout + co + 1) * hw];
                    let src = &row[ni * hw..(ni + 1) * hw];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d = s + bias;
                    }
                }
            }
        }
        self.push(y, Op::Conv2d { x, w, b })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| if v < 0.0 { 0.0 } else { v });
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).mapv(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(y, Op::Sigmoid(x))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        self.push(y, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) * self.value(b);
        self.push(y, Op::Mul(a, b))
    }

    pub fn gate_mul(&mut self, x: Var, gate: Var) -> Var {
        let xv = self.value(x);
        let gv = self.value(gate);
        assert_eq!(gv.dim().1, 1, "gate is single-channel");
        let y = xv * gv;
        self.push(y, Op::GateMul { x, gate })
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = ndarray::concatenate(Axis(1), &views)
            .expect("matching shapes")
            .as_standard_layout()
            .into_owned();
        self.push(y, Op::Concat(parts.to_vec()))
    }

    /// Channels `start..start + len` of `x`.
    pub fn channels(&mut self, x: Var, start: usize, len: usize) -> Var {
        let y = self
            .value(x)
            .slice(ndarray::s![.., start..start + len, .., ..])
            .to_owned();
        self.push(y, Op::Channels { x, start })
    }

    pub fn max_pool2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "max_pool2 needs even spatial size, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let xv = xv.as_standard_layout();
        let xs = xv.as_slice().expect("standard layout");
        let mut y = Tensor::zeros((n, c, oh, ow));
        let mut argmax = vec![0usize; n * c * oh * ow];
        {
            let ys = y.as_slice_mut().unwrap();
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = base + 2 * oy * w + 2 * ox;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                            if xs[idx] > xs[best] {
                                best = idx;
                            }
                        }
                        let o = plane * oh * ow + oy * ow + ox;
                        ys[o] = xs[best];
                        argmax[o] = best;
                    }
                }
            }
        }
        self.push(y, Op::MaxPool2 { x, argmax })
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dim();
        let y = Tensor::from_shape_fn((n, c, 2 * h, 2 * w), |(a, b, yy, xx)| xv[[a, b, yy / 2, xx / 2]]);
        self.push(y, Op::Upsample2(x))
    }

    /// Back-propagates `seed` (the gradient of the objective with respect to
    /// `output`) and returns the gradients of every parameter that was used.
    pub fn backward(&self, output: Var, seed: Tensor, num_params: usize) -> Gradients {
        assert_eq!(seed.dim(), self.value(output).dim(), "seed shape");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        let mut param_grads: Vec<Option<Tensor>> = vec![None; num_params];

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(id) => param_grads[id.index()] = Some(g),
                Op::Conv2d { x, w, b } => {
                    let (dx, dw, db) = conv2d_backward(self.value(*x), self.value(*w), &g);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *w, dw);
                    accumulate(&mut grads, *b, db);
                }
                Op::Relu(x) => {
                    let mut dx = g;
                    dx.zip_mut_with(self.value(*x), |d, &v| {
                        if v <= 0.0 {
                            *d = 0.0
                        }
                    });
                    accumulate(&mut grads, *x, dx);
                }
                Op::Sigmoid(x) => {
                    let mut dx = g;
                    dx.zip_mut_with(&self.nodes[idx].value, |d, &s| *d *= s * (1.0 - s));
                    accumulate(&mut grads, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let da = &g * self.value(*b);
                    let db = &g * self.value(*a);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::GateMul { x, gate } => {
                    let gv = self.value(*gate);
                    let dx = &g * gv;
                    let dgate = (&g * self.value(*x)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gate, dgate);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let c = self.value(p).dim().1;
                        let part = g.slice(ndarray::s![.., start..start + c, .., ..]).to_owned();
                        accumulate(&mut grads, p, part);
                        start += c;
                    }
                }
                Op::Channels { x, start } => {
                    let mut dx = Tensor::zeros(self.value(*x).dim());
                    let c = g.dim().1;
                    dx.slice_mut(ndarray::s![.., *start..*start + c, .., ..]).assign(&g);
                    accumulate(&mut grads, *x, dx);
                }
                Op::MaxPool2 { x, argmax } => {
                    let mut dx = Tensor::zeros(self.value(*x).dim());
                    let dxs = dx.as_slice_mut().unwrap();
                    for (gv, &src) in g.iter().zip(argmax) {
                        dxs[src] += gv;
                    }
                    accumulate(&mut grads, *x, dx);
                }
                Op::Upsample2(x) => {
                    let (n, c, h, w) = self.value(*x).dim();
                    let mut dx = Tensor::zeros((n, c, h, w));
                    for ((a, b, yy, xx), gv) in g.indexed_iter() {
                        dx[[a, b, yy / 2, xx / 2]] += gv;
                    }
                    accumulate(&mut grads, *x, dx);
                }
            }
        }
        Gradients { grads: param_grads }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

fn reflect_tables(n: usize, k: usize) -> Vec<Vec<usize>> {
    let p = (k / 2) as isize;
    (0..k)
        .map(|d| (0..n).map(|i| reflect_index(i as isize + d as isize - p, n)).collect())
        .collect()
}

/// Unfolds reflect-padded `k x k` neighbourhoods into a
/// `(cin * k * k, n * h * w)` matrix.
fn im2col(x: &Tensor, k: usize) -> Array2<f64> {
    let (n, c, h, w) = x.dim();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("standard layout");
    let ry = reflect_tables(h, k);
    let rx = reflect_tables(w, k);
    let ncols = n * h * w;
    let mut out = vec![0.0; c * k * k * ncols];
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut out[row * ncols..(row + 1) * ncols];
                let xmap = &rx[kx];
                for ni in 0..n {
                    let base = (ni * c + ci) * h * w;
                    for y in 0..h {
                        let src = &xs[base + ry[ky][y] * w..base + ry[ky][y] * w + w];
                        let d = &mut dst[(ni * h + y) * w..(ni * h + y + 1) * w];
                        for (dv, &sx) in d.iter_mut().zip(xmap) {
                            *dv = src[sx];
                        }
                    }
                }
            }
        }
    }
    Array2::from_shape_vec((c * k * k, ncols), out).expect("sized")
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(cols: &ArrayView2<f64>, shape: (usize, usize, usize, usize), k: usize) -> Tensor {
    let (n, c, h, w) = shape;
    let ry = reflect_tables(h, k);
    let rx = reflect_tables(w, k);
    let ncols = n * h * w;
    let mut dx = Tensor::zeros(shape);
    let dxs = dx.as_slice_mut().unwrap();
    let cs = cols.as_slice().expect("contiguous columns");
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cs[row * ncols..(row + 1) * ncols];
                let xmap = &rx[kx];
                for ni in 0..n {
                    let base = (ni * c + ci) * h * w;
                    for y in 0..h {
                        let drow = base + ry[ky][y] * w;
                        let s = &src[(ni * h + y) * w..(ni * h + y + 1) * w];
                        for (sv, &sx) in s.iter().zip(xmap) {
                            dxs[drow + sx] += sv;
                        }
                    }
                }
            }
        }
    }
    dx
}

fn conv2d_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, cin, h, wd) = x.dim();
    let (cout, _, k, _) = w.dim();
    let hw = h * wd;
    let g = g.as_standard_layout();
    let gs = g.as_slice().expect("standard layout");
    let mut gmat = Array2::zeros((cout, n * hw));
    let mut db = Tensor::zeros((1, cout, 1, 1));
    for co in 0..cout {
        let mut row = gmat.row_mut(co);
        let row = row.as_slice_mut().unwrap();
        let mut acc = 0.0;
        for ni in 0..n {
            let src = &gs[(ni * cout + co) * hw..(ni * cout + co + 1) * hw];
            row[ni * hw..(ni + 1) * hw].copy_from_slice(src);
            acc += src.iter().sum::<f64>();
        }
        db[[0, co, 0, 0]] = acc;
    }
    let cols = im2col(x, k);
    let dwmat = gmat.dot(&cols.t());
    let dw = dwmat.into_shape_with_order((cout, cin, k, k)).expect("sized");
    let wmat = w.view().into_shape_with_order((cout, cin * k * k)).expect("contiguous weights");
    let dcols = wmat.t().dot(&gmat);
    let dx = col2im(&dcols.view(), (n, cin, h, wd), k);
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: (usize, usize, usize, usize), seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution with reflect padding.
    fn conv_reference(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let (n, cin, h, wd) = x.dim();
        let (cout, _, k, _) = w.dim();
        let p = (k / 2) as isize;
        Tensor::from_shape_fn((n, cout, h, wd), |(ni, co, y, xx)| {
            let mut acc = b[[0, co, 0, 0]];
            for ci in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let sy = reflect_index(y as isize + ky as isize - p, h);
                        let sx = reflect_index(xx as isize + kx as isize - p, wd);
                        acc += w[[co, ci, ky, kx]] * x[[ni, ci, sy, sx]];
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_matches_direct_loops() {
        for &k in &[1, 3, 5, 7] {
            let x = random((2, 3, 9, 8), 1);
            let w = random((4, 3, k, k), 2);
            let b = random((1, 4, 1, 1), 3);
            let mut tape = Tape::new();
            let (xv, wv, bv) = (tape.input(x.clone()), tape.input(w.clone()), tape.input(b.clone()));
            let y = tape.conv2d(xv, wv, bv);
            let expect = conv_reference(&x, &w, &b);
            let err = tape.value(y).iter().zip(&expect).fold(0.0f64, |m, (a, e)| m.max((a - e).abs()));
            assert!(err < 1e-12, "k = {k}: {err}");
        }
    }

    #[test]
    fn im2col_adjoint_identity() {
        // <im2col(x), c> == <x, col2im(c)>
        let x = random((2, 2, 6, 5), 4);
        let cols = im2col(&x, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = Array2::from_shape_fn(cols.dim(), |_| rng.random_range(-1.0..1.0));
        let lhs: f64 = (&cols * &c).sum();
        let rhs: f64 = (&x * &col2im(&c.view(), x.dim(), 5)).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn pool_and_upsample_shapes() {
        let mut tape = Tape::new();
        let x = tape.input(random((1, 2, 4, 6), 6));
        let p = tape.max_pool2(x);
        assert_eq!(tape.value(p).dim(), (1, 2, 2, 3));
        let u = tape.upsample2(p);
        assert_eq!(tape.value(u).dim(), (1, 2, 4, 6));
        let xv = tape.value(x);
        let pv = tape.value(p);
        assert_eq!(
            pv[[0, 1, 1, 2]],
            [xv[[0, 1, 2, 4]], xv[[0, 1, 2, 5]], xv[[0, 1, 3, 4]], xv[[0, 1, 3, 5]]]
                .into_iter()
                .fold(f64::MIN, f64::max)
        );
    }
}
