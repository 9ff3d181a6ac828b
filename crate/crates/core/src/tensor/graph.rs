//! Define-by-run reverse-mode autodiff over [`Array`] values.
//!
//! A [`Graph`] records every value computed during one forward pass. Node
//! indices are assigned in creation order, so reverse index order is a valid
//! topological order for the backward sweep.

use super::{Array, Real};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an op defined outside the engine.
///
/// `needs[i]` tells whether input `i` wants a gradient; implementations may
/// return `None` for inputs that do not.
pub trait Function<T: Real> {
    fn backward(
        &self,
        inputs: &[&Array<T>],
        output: &Array<T>,
        grad: &Array<T>,
        needs: &[bool],
    ) -> Vec<Option<Array<T>>>;
}

/// Kernel geometry of a square 2-d convolution over NHWC tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn output_size(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.pad;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

enum Value<'a, T> {
    Owned(Array<T>),
    Borrowed(&'a Array<T>),
}

enum Op<T: Real> {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Option<Array<T>>,
    },
    Relu(Var),
    MeanPool(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Array<T>,
    },
    Custom {
        inputs: Vec<Var>,
        func: Box<dyn Function<T>>,
    },
}

struct Node<'a, T: Real> {
    value: Value<'a, T>,
    op: Op<T>,
    requires_grad: bool,
}

/// One forward pass worth of recorded computation.
pub struct Graph<'a, T: Real> {
    nodes: Vec<Node<'a, T>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A graph that never tracks gradients (evaluation).
    pub fn inference() -> Self {
        Self {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        match &self.nodes[v.0].value {
            Value::Owned(a) => a,
            Value::Borrowed(a) => a,
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Array<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Array<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf input whose gradient is kept after [`Graph::backward`].
    pub fn input(&mut self, value: Array<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Borrowed leaf, typically a model parameter.
    pub fn param(&mut self, value: &'a Array<T>, trainable: bool) -> Var {
        self.nodes.push(Node {
            value: Value::Borrowed(value),
            op: Op::Leaf,
            requires_grad: trainable && self.grad_enabled,
        });
        Var(self.nodes.len() - 1)
    }

    /// `x (B x in) * w^T (in x out) + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(xv.ndim(), 2, "linear input must be 2-d, got {:?}", xv.shape());
        assert_eq!(wv.ndim(), 2, "linear weight must be 2-d");
        assert_eq!(xv.shape()[1], wv.shape()[1], "linear fan-in mismatch");
        let mut out = xv.matmul(wv, false, true);
        if let Some(b) = b {
            add_row_bias(&mut out, self.value(b));
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        self.push(out, Op::Linear { x, w, b }, rg)
    }

    /// Convolution over `x: B x H x W x Cin` with `w: Cout x k x k x Cin`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(xv.ndim(), 4, "conv2d input must be NHWC");
        assert_eq!(wv.ndim(), 4, "conv2d weight must be O x k x k x I");
        let [bsz, h, wd, cin] = [xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]];
        let cout = wv.shape()[0];
        assert_eq!(wv.shape()[1..], [geom.kernel, geom.kernel, cin], "conv2d weight shape");
        let ho = geom.output_size(h).expect("conv2d: kernel larger than input");
        let wo = geom.output_size(wd).expect("conv2d: kernel larger than input");
        let cols = im2col(xv, geom, ho, wo);
        let patch = geom.kernel * geom.kernel * cin;
        let n = bsz * ho * wo;
        let mut out = Array::zeros(&[bsz, ho, wo, cout]);
        T::gemm(
            false,
            true,
            n,
            patch,
            cout,
            T::one(),
            cols.data(),
            wv.data(),
            T::zero(),
            out.data_mut(),
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            for row in out.data_mut().chunks_exact_mut(cout) {
                for (o, &bb) in row.iter_mut().zip(bv) {
                    *o = *o + bb;
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.any_grad(&deps);
        let cols = if rg { Some(cols) } else { None };
        self.push(out, Op::Conv2d { x, w, b, geom, cols }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    /// Global average over the spatial axes of an NHWC tensor.
    pub fn mean_pool(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.ndim(), 4, "mean_pool expects NHWC");
        let (b, hw, c) = (xv.shape()[0], xv.shape()[1] * xv.shape()[2], xv.shape()[3]);
        let mut out = Array::zeros(&[b, c]);
        let inv = T::one() / T::lit(hw as f64);
        for i in 0..b {
            let src = xv.row(i);
            let dst = out.row_mut(i);
            for px in src.chunks_exact(c) {
                for (d, &s) in dst.iter_mut().zip(px) {
                    *d = *d + s;
                }
            }
            for d in dst.iter_mut() {
                *d = *d * inv;
            }
        }
        let rg = self.any_grad(&[x]);
        self.push(out, Op::MeanPool(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let out = Array::from_vec(av.shape(), data);
        let rg = self.any_grad(&[a, b]);
        self.push(out, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).scale(s);
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Scale(x, s), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| T::one() / (T::one() + (-v).exp()));
        let rg = self.any_grad(&[x]);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Var {
        let zv = self.value(logits);
        assert_eq!(zv.ndim(), 2, "cross_entropy expects B x C logits");
        assert_eq!(zv.rows(), labels.len(), "one label per row");
        let c = zv.row_len();
        let probs = super::softmax_rows(zv);
        let mut total = T::zero();
        for (i, &y) in labels.iter().enumerate() {
            assert!(y < c, "label {y} out of range for {c} classes");
            let row = zv.row(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            total = total + lse - row[y];
        }
        let n = T::lit(labels.len().max(1) as f64);
        let out = Array::scalar(total / n);
        let rg = self.any_grad(&[logits]);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Registers a node whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Array<T>, func: Box<dyn Function<T>>) -> Var {
        let rg = self.any_grad(inputs);
        self.push(
            output,
            Op::Custom {
                inputs: inputs.to_vec(),
                func,
            },
            rg,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Array<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Gradients { grads };
        }
        grads[loss.0] = Some(Array::full(self.value(loss).shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(idx, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Array<T>>], v: Var, g: Array<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(g.shape(), self.value(v).shape(), "gradient shape");
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&self, idx: usize, g: &Array<T>, grads: &mut [Option<Array<T>>]) {
        let out = self.value(Var(idx));
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs(*x) {
                    self.accumulate(grads, *x, g.matmul(wv, false, false));
                }
                if self.needs(*w) {
                    self.accumulate(grads, *w, g.matmul(xv, true, false));
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        self.accumulate(grads, *b, column_sums(g));
                    }
                }
            }
            Op::Conv2d { x, w, b, geom, cols } => {
                let cols = cols.as_ref().expect("conv2d cache present when grads are tracked");
                let (xv, wv) = (self.value(*x), self.value(*w));
                let cout = wv.shape()[0];
                let patch = wv.len() / cout;
                let n = g.len() / cout;
                if self.needs(*w) {
                    let mut gw = Array::zeros(wv.shape());
                    T::gemm(
                        true,
                        false,
                        cout,
                        n,
                        patch,
                        T::one(),
                        g.data(),
                        cols.data(),
                        T::zero(),
                        gw.data_mut(),
                    );
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let g2 = Array::from_vec(&[n, cout], g.data().to_vec());
                        self.accumulate(grads, *b, column_sums(&g2));
                    }
                }
                if self.needs(*x) {
                    let mut gcols = vec![T::zero(); n * patch];
                    T::gemm(
                        false,
                        false,
                        n,
                        cout,
                        patch,
                        T::one(),
                        g.data(),
                        wv.data(),
                        T::zero(),
                        &mut gcols,
                    );
                    let (ho, wo) = (g.shape()[1], g.shape()[2]);
                    self.accumulate(grads, *x, col2im(&gcols, xv.shape(), *geom, ho, wo));
                }
            }
            Op::Relu(x) => {
                let data = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &o)| if o > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, Array::from_vec(g.shape(), data));
            }
            Op::MeanPool(x) => {
                let xs = self.value(*x).shape().to_vec();
                let (hw, c) = (xs[1] * xs[2], xs[3]);
                let inv = T::one() / T::lit(hw as f64);
                let mut gx = Array::zeros(&xs);
                for i in 0..xs[0] {
                    let gi = g.row(i);
                    for px in gx.row_mut(i).chunks_exact_mut(c) {
                        for (d, &s) in px.iter_mut().zip(gi) {
                            *d = s * inv;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, Array::from_vec(g.shape(), d));
                }
                if self.needs(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, Array::from_vec(g.shape(), d));
                }
            }
            Op::Scale(x, s) => self.accumulate(grads, *x, g.scale(*s)),
            Op::Sigmoid(x) => {
                let d = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&gv, &y)| gv * y * (T::one() - y))
                    .collect();
                self.accumulate(grads, *x, Array::from_vec(g.shape(), d));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let scale = g.item() / T::lit(labels.len().max(1) as f64);
                let mut gz = probs.clone();
                for (i, &y) in labels.iter().enumerate() {
                    let row = gz.row_mut(i);
                    row[y] = row[y] - T::one();
                    for v in row.iter_mut() {
                        *v = *v * scale;
                    }
                }
                self.accumulate(grads, *logits, gz);
            }
            Op::Custom { inputs, func } => {
                let vals: Vec<&Array<T>> = inputs.iter().map(|&v| self.value(v)).collect();
                let needs: Vec<bool> = inputs.iter().map(|&v| self.needs(v)).collect();
                let gs = func.backward(&vals, out, g, &needs);
                assert_eq!(gs.len(), inputs.len(), "custom backward arity");
                for (&v, gi) in inputs.iter().zip(gs) {
                    if let Some(gi) = gi {
                        self.accumulate(grads, v, gi);
                    }
                }
            }
        }
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Array<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn add_row_bias<T: Real>(out: &mut Array<T>, bias: &Array<T>) {
    let n = bias.len();
    assert_eq!(out.row_len(), n, "bias width");
    for row in out.data_mut().chunks_exact_mut(n) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o = *o + b;
        }
    }
}

fn column_sums<T: Real>(g: &Array<T>) -> Array<T> {
    let c = g.row_len();
    let mut out = Array::zeros(&[c]);
    for row in g.data().chunks_exact(c) {
        for (o, &v) in out.data_mut().iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    out
}

fn im2col<T: Real>(x: &Array<T>, geom: ConvGeom, ho: usize, wo: usize) -> Array<T> {
    let [b, h, w, c] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let k = geom.kernel;
    let patch = k * k * c;
    let mut cols = Array::zeros(&[b * ho * wo, patch]);
    let src = x.data();
    let dst = cols.data_mut();
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((bi * ho + oy) * wo + ox) * patch;
                for ky in 0..k {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let s = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let d = row + (ky * k + kx) * c;
                        dst[d..d + c].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(gcols: &[T], shape: &[usize], geom: ConvGeom, ho: usize, wo: usize) -> Array<T> {
    let [b, h, w, c] = [shape[0], shape[1], shape[2], shape[3]];
    let k = geom.kernel;
    let patch = k * k * c;
    let mut gx = Array::zeros(shape);
    let dst = gx.data_mut();
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((bi * ho + oy) * wo + ox) * patch;
                for ky in 0..k {
                    let iy = (oy * geom.stride + ky) as isize - geom.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * geom.stride + kx) as isize - geom.pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let d = ((bi * h + iy as usize) * w + ix as usize) * c;
                        let s = row + (ky * k + kx) * c;
                        for (o, &v) in dst[d..d + c].iter_mut().zip(&gcols[s..s + c]) {
                            *o = *o + v;
                        }
                    }
                }
            }
        }
    }
    gx
}
