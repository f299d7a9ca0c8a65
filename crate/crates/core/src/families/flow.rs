//! Real-NVP coupling flow with hand-written reverse passes.
//!
//! The flow is `T` coupling layers, each made of two affine transitions. The
//! first transition of a layer conditions on coordinates `0..d` and updates
//! `d..D`; the second conditions on `d..D` and updates `0..d`, with
//! `d = ceil(D / 2)`. A transition that conditions on `a` coordinates and
//! updates `b` of them owns one network with layer sizes `[a, H, H, 2b]`:
//! leaky-ReLU (slope 0.01) hidden units, `s = tanh(out[..b])` and
//! `t = out[b..]`, giving
//!
//! ```text
//! y_B = x_B * exp(s(x_A)) + t(x_A),   log |det| = sum(s)
//! ```
//!
//! Per-transition parameter layout: `W1 (a x H)`, `b1 (H)`, `W2 (H x H)`,
//! `b2 (H)`, `W3 (H x 2b)`, `b3 (2b)`, all row-major with the input index
//! first. Batches are row-major, one sample per row, so every network layer
//! is a single GEMM over the batch.

use crate::linalg::{gemm, MatMut, MatRef};

const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct FlowLayout {
    pub dim: usize,
    pub layers: usize,
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
struct Transition {
    cond_start: usize,
    cond_len: usize,
    out_start: usize,
    out_len: usize,
    offset: usize,
}

impl Transition {
    fn w1(&self) -> usize {
        self.offset
    }
    fn b1(&self, h: usize) -> usize {
        self.w1() + self.cond_len * h
    }
    fn w2(&self, h: usize) -> usize {
        self.b1(h) + h
    }
    fn b2(&self, h: usize) -> usize {
        self.w2(h) + h * h
    }
    fn w3(&self, h: usize) -> usize {
        self.b2(h) + h
    }
    fn b3(&self, h: usize) -> usize {
        self.w3(h) + h * 2 * self.out_len
    }
    fn size(&self, h: usize) -> usize {
        self.b3(h) + 2 * self.out_len - self.offset
    }
}

impl FlowLayout {
    pub fn split(&self) -> usize {
        self.dim.div_ceil(2)
    }

    fn transitions(&self) -> Vec<Transition> {
        let d = self.split();
        let rest = self.dim - d;
        let mut offset = 0;
        let mut out = Vec::with_capacity(2 * self.layers);
        for _ in 0..self.layers {
            for (cond_start, cond_len, out_start, out_len) in [(0, d, d, rest), (d, rest, 0, d)] {
                let t = Transition { cond_start, cond_len, out_start, out_len, offset };
                offset += t.size(self.hidden);
                out.push(t);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.transitions().iter().map(|t| t.size(self.hidden)).sum()
    }
}

/// Activations of one network evaluation over a batch.
struct NetCache {
    a1: Vec<f64>,
    a2: Vec<f64>,
    /// `tanh` scale outputs, `n x b`.
    s: Vec<f64>,
}

/// Runs the conditioner network on `x[:, cond]`; returns activations and the
/// translation `t` (`n x b`).
fn net_forward(
    t: &Transition,
    h: usize,
    params: &[f64],
    x: &[f64],
    n: usize,
    dim: usize,
) -> (NetCache, Vec<f64>) {
    let (a, b) = (t.cond_len, t.out_len);
    let xa = MatRef::strided(&x[t.cond_start..], n, a, dim, 1);

    let mut a1 = bias_rows(&params[t.b1(h)..t.b1(h) + h], n);
    gemm(1.0, xa, MatRef::row_major(&params[t.w1()..t.b1(h)], a, h), 1.0, MatMut::row_major(&mut a1, n, h));
    a1.iter_mut().for_each(leaky);

    let mut a2 = bias_rows(&params[t.b2(h)..t.b2(h) + h], n);
    gemm(
        1.0,
        MatRef::row_major(&a1, n, h),
        MatRef::row_major(&params[t.w2(h)..t.b2(h)], h, h),
        1.0,
        MatMut::row_major(&mut a2, n, h),
    );
    a2.iter_mut().for_each(leaky);

    let mut out = bias_rows(&params[t.b3(h)..t.b3(h) + 2 * b], n);
    gemm(
        1.0,
        MatRef::row_major(&a2, n, h),
        MatRef::row_major(&params[t.w3(h)..t.b3(h)], h, 2 * b),
        1.0,
        MatMut::row_major(&mut out, n, 2 * b),
    );

    let mut s = vec![0.0; n * b];
    let mut shift = vec![0.0; n * b];
    for r in 0..n {
        for j in 0..b {
            s[r * b + j] = out[r * 2 * b + j].tanh();
            shift[r * b + j] = out[r * 2 * b + b + j];
        }
    }
    (NetCache { a1, a2, s }, shift)
}

/// Back-propagates cotangents on `(s, t)` through the network. Adds the
/// input cotangent into `xbar[:, cond]` and, when `grad` is given, the
/// parameter gradients.
#[allow(clippy::too_many_arguments)]
fn net_backward(
    t: &Transition,
    h: usize,
    params: &[f64],
    x: &[f64],
    cache: &NetCache,
    s_bar: &[f64],
    t_bar: &[f64],
    n: usize,
    dim: usize,
    xbar: &mut [f64],
    mut grad: Option<&mut [f64]>,
) {
    let (a, b) = (t.cond_len, t.out_len);
    // cotangent on the pre-tanh/linear output
    let mut out_bar = vec![0.0; n * 2 * b];
    for r in 0..n {
        for j in 0..b {
            let s = cache.s[r * b + j];
            out_bar[r * 2 * b + j] = s_bar[r * b + j] * (1.0 - s * s);
            out_bar[r * 2 * b + b + j] = t_bar[r * b + j];
        }
    }
    let out_bar_m = MatRef::row_major(&out_bar, n, 2 * b);

    if let Some(g) = grad.as_deref_mut() {
        gemm(
            1.0,
            MatRef::row_major(&cache.a2, n, h).t(),
            out_bar_m,
            1.0,
            MatMut::row_major(&mut g[t.w3(h)..t.b3(h)], h, 2 * b),
        );
        add_col_sums(&mut g[t.b3(h)..t.b3(h) + 2 * b], &out_bar, 2 * b);
    }

    let mut z2_bar = vec![0.0; n * h];
    gemm(
        1.0,
        out_bar_m,
        MatRef::row_major(&params[t.w3(h)..t.b3(h)], h, 2 * b).t(),
        0.0,
        MatMut::row_major(&mut z2_bar, n, h),
    );
    apply_leaky_grad(&mut z2_bar, &cache.a2);

    if let Some(g) = grad.as_deref_mut() {
        gemm(
            1.0,
            MatRef::row_major(&cache.a1, n, h).t(),
            MatRef::row_major(&z2_bar, n, h),
            1.0,
            MatMut::row_major(&mut g[t.w2(h)..t.b2(h)], h, h),
        );
        add_col_sums(&mut g[t.b2(h)..t.b2(h) + h], &z2_bar, h);
    }

    let mut z1_bar = vec![0.0; n * h];
    gemm(
        1.0,
        MatRef::row_major(&z2_bar, n, h),
        MatRef::row_major(&params[t.w2(h)..t.b2(h)], h, h).t(),
        0.0,
        MatMut::row_major(&mut z1_bar, n, h),
    );
    apply_leaky_grad(&mut z1_bar, &cache.a1);

    if let Some(g) = grad {
        gemm(
            1.0,
            MatRef::strided(&x[t.cond_start..], n, a, dim, 1).t(),
            MatRef::row_major(&z1_bar, n, h),
            1.0,
            MatMut::row_major(&mut g[t.w1()..t.b1(h)], a, h),
        );
        add_col_sums(&mut g[t.b1(h)..t.b1(h) + h], &z1_bar, h);
    }

    gemm(
        1.0,
        MatRef::row_major(&z1_bar, n, h),
        MatRef::row_major(&params[t.w1()..t.b1(h)], a, h).t(),
        1.0,
        MatMut::strided(&mut xbar[t.cond_start..], n, a, dim, 1),
    );
}

fn bias_rows(bias: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * bias.len());
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    out
}

fn leaky(v: &mut f64) {
    if *v < 0.0 {
        *v *= LEAKY_SLOPE;
    }
}

/// Multiplies by the leaky-ReLU derivative, read off the activation sign.
fn apply_leaky_grad(bar: &mut [f64], activation: &[f64]) {
    for (g, &a) in bar.iter_mut().zip(activation) {
        if a < 0.0 {
            *g *= LEAKY_SLOPE;
        }
    }
}

fn add_col_sums(dst: &mut [f64], m: &[f64], cols: usize) {
    for row in m.chunks_exact(cols) {
        for (d, v) in dst.iter_mut().zip(row) {
            *d += v;
        }
    }
}

/// Cached state of a forward pass `eps -> z`.
pub(crate) struct ForwardCache {
    /// Input of every transition, `n x D` each.
    inputs: Vec<Vec<f64>>,
    nets: Vec<NetCache>,
}

/// `z = T(eps)` and per-row `log |det dT/deps|`.
pub(crate) fn forward(layout: &FlowLayout, params: &[f64], eps: &[f64]) -> (Vec<f64>, Vec<f64>, ForwardCache) {
    let (dim, h) = (layout.dim, layout.hidden);
    let n = eps.len() / dim;
    let mut x = eps.to_vec();
    let mut log_det = vec![0.0; n];
    let transitions = layout.transitions();
    let mut inputs = Vec::with_capacity(transitions.len());
    let mut nets = Vec::with_capacity(transitions.len());
    for t in &transitions {
        let (net, shift) = net_forward(t, h, params, &x, n, dim);
        let mut y = x.clone();
        let b = t.out_len;
        for r in 0..n {
            for j in 0..b {
                let s = net.s[r * b + j];
                let c = r * dim + t.out_start + j;
                y[c] = x[c] * s.exp() + shift[r * b + j];
                log_det[r] += s;
            }
        }
        inputs.push(std::mem::replace(&mut x, y));
        nets.push(net);
    }
    (x, log_det, ForwardCache { inputs, nets })
}

/// Accumulates the parameter gradient of
/// `sum_n zbar_n . z_n + lambda_n * logdet_n` into `grad`.
pub(crate) fn backward(
    layout: &FlowLayout,
    params: &[f64],
    cache: &ForwardCache,
    zbar: &[f64],
    lambda: &[f64],
    grad: &mut [f64],
) {
    let (dim, h) = (layout.dim, layout.hidden);
    let n = lambda.len();
    let mut ybar = zbar.to_vec();
    let transitions = layout.transitions();
    for (k, t) in transitions.iter().enumerate().rev() {
        let x = &cache.inputs[k];
        let net = &cache.nets[k];
        let b = t.out_len;
        let mut xbar = ybar.clone();
        let mut s_bar = vec![0.0; n * b];
        let mut t_bar = vec![0.0; n * b];
        for r in 0..n {
            for j in 0..b {
                let c = r * dim + t.out_start + j;
                let e = net.s[r * b + j].exp();
                xbar[c] = ybar[c] * e;
                s_bar[r * b + j] = ybar[c] * x[c] * e + lambda[r];
                t_bar[r * b + j] = ybar[c];
            }
        }
        net_backward(t, h, params, x, net, &s_bar, &t_bar, n, dim, &mut xbar, Some(grad));
        ybar = xbar;
    }
}

/// Cached state of an inverse pass `z -> eps`.
pub(crate) struct InverseCache {
    /// Input of every inverse transition, indexed by transition.
    inputs: Vec<Vec<f64>>,
    /// Output of every inverse transition, indexed by transition.
    outputs: Vec<Vec<f64>>,
    nets: Vec<NetCache>,
}

/// `eps = T^{-1}(z)` and per-row `log |det dT^{-1}/dz|`.
pub(crate) fn inverse(layout: &FlowLayout, params: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>, InverseCache) {
    let (dim, h) = (layout.dim, layout.hidden);
    let n = z.len() / dim;
    let transitions = layout.transitions();
    let count = transitions.len();
    let mut inputs = vec![Vec::new(); count];
    let mut outputs = vec![Vec::new(); count];
    let mut nets: Vec<Option<NetCache>> = (0..count).map(|_| None).collect();
    let mut y = z.to_vec();
    let mut log_det = vec![0.0; n];
    for (k, t) in transitions.iter().enumerate().rev() {
        let (net, shift) = net_forward(t, h, params, &y, n, dim);
        let mut x = y.clone();
        let b = t.out_len;
        for r in 0..n {
            for j in 0..b {
                let s = net.s[r * b + j];
                let c = r * dim + t.out_start + j;
                x[c] = (y[c] - shift[r * b + j]) * (-s).exp();
                log_det[r] -= s;
            }
        }
        inputs[k] = std::mem::replace(&mut y, x);
        outputs[k] = y.clone();
        nets[k] = Some(net);
    }
    let nets = nets.into_iter().map(|c| c.expect("every transition visited")).collect();
    (y, log_det, InverseCache { inputs, outputs, nets })
}

/// Reverse pass through the inverse map. Given cotangents on `eps` and on
/// the per-row inverse log-determinant, returns `zbar`; accumulates the
/// parameter gradient into `grad` when given.
pub(crate) fn backward_inverse(
    layout: &FlowLayout,
    params: &[f64],
    cache: &InverseCache,
    eps_bar: &[f64],
    lambda: &[f64],
    mut grad: Option<&mut [f64]>,
) -> Vec<f64> {
    let (dim, h) = (layout.dim, layout.hidden);
    let n = lambda.len();
    let mut xbar = eps_bar.to_vec();
    let transitions = layout.transitions();
    // The inverse pass visited transitions last-to-first, so its reverse
    // pass visits them first-to-last.
    for (k, t) in transitions.iter().enumerate() {
        let y = &cache.inputs[k];
        let x = &cache.outputs[k];
        let net = &cache.nets[k];
        let b = t.out_len;
        let mut ybar = xbar.clone();
        let mut s_bar = vec![0.0; n * b];
        let mut t_bar = vec![0.0; n * b];
        for r in 0..n {
            for j in 0..b {
                let c = r * dim + t.out_start + j;
                let e = (-net.s[r * b + j]).exp();
                ybar[c] = xbar[c] * e;
                s_bar[r * b + j] = -xbar[c] * x[c] - lambda[r];
                t_bar[r * b + j] = -ybar[c];
            }
        }
        net_backward(t, h, params, y, net, &s_bar, &t_bar, n, dim, &mut ybar, grad.as_deref_mut());
        xbar = ybar;
    }
    xbar
}
