//! Dense building blocks with explicit backward passes.
//!
//! Every layer keeps its forward activations in a cache struct and exposes a
//! `backward` that accumulates parameter gradients into a same-shaped layer
//! value (the "gradient twin") and returns the input gradient. All arrays are
//! row-major with one row per token.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Flat views over every trainable tensor, in a fixed order.
pub trait Parameters {
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// A copy with every parameter set to zero (gradient accumulator).
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.fill(0.0);
        }
        z
    }

    fn add_assign_params(&mut self, other: &Self) {
        for (a, b) in self.params_mut().into_iter().zip(other.params()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }
}

pub(crate) fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}
pub(crate) fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}
pub(crate) fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}
pub(crate) fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

pub(crate) fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// `y = x W + b`, `W` stored as `[in, out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Gaussian weights with std `1/sqrt(in)`, zero bias.
    pub fn new<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        Linear {
            weight: normal_matrix(rng, input, output, 1.0 / (input as f64).sqrt()),
            bias: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.weight) + &self.bias
    }

    /// Accumulates into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &ArrayView2<f64>, dy: &ArrayView2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.weight += &x.t().dot(dy);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }
}

impl Parameters for Linear {
    fn params(&self) -> Vec<&[f64]> {
        vec![slice2(&self.weight), slice1(&self.bias)]
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![slice2_mut(&mut self.weight), slice1_mut(&mut self.bias)]
    }
}

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

pub struct LayerNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(width: usize) -> Self {
        LayerNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> (Array2<f64>, LayerNormCache) {
        let n = x.ncols() as f64;
        let mut xhat = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, istd) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row -= mean;
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            *istd = 1.0 / (var + LN_EPS).sqrt();
            row *= *istd;
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &ArrayView2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let n = dy.ncols() as f64;
        let dxhat = dy * &self.gamma;
        let mut dx = Array2::zeros(dy.raw_dim());
        for (((mut out, dh), xh), istd) in dx
            .rows_mut()
            .into_iter()
            .zip(dxhat.rows())
            .zip(cache.xhat.rows())
            .zip(cache.inv_std.iter())
        {
            let sum_dh = dh.sum();
            let sum_dh_xh = dh.dot(&xh);
            Zip::from(&mut out).and(&dh).and(&xh).for_each(|o, &d, &x| {
                *o = istd / n * (n * d - sum_dh - x * sum_dh_xh);
            });
        }
        dx
    }
}

impl Parameters for LayerNorm {
    fn params(&self) -> Vec<&[f64]> {
        vec![slice1(&self.gamma), slice1(&self.beta)]
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![slice1_mut(&mut self.gamma), slice1_mut(&mut self.beta)]
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Two-layer GELU MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

pub struct FeedForwardCache {
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl FeedForward {
    pub fn new<R: Rng>(rng: &mut R, width: usize, hidden: usize) -> Self {
        FeedForward {
            up: Linear::new(rng, width, hidden),
            down: Linear::new(rng, hidden, width),
        }
    }

    pub fn forward(&self, x: &ArrayView2<f64>) -> (Array2<f64>, FeedForwardCache) {
        let pre = self.up.forward(x);
        let act = pre.mapv(gelu);
        let y = self.down.forward(&act.view());
        (y, FeedForwardCache { pre, act })
    }

    pub fn backward(
        &self,
        x: &ArrayView2<f64>,
        cache: &FeedForwardCache,
        dy: &ArrayView2<f64>,
        grad: &mut FeedForward,
    ) -> Array2<f64> {
        let dact = self.down.backward(&cache.act.view(), dy, &mut grad.down);
        let dpre = dact * cache.pre.mapv(gelu_grad);
        self.up.backward(x, &dpre.view(), &mut grad.up)
    }
}

impl Parameters for FeedForward {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = self.up.params();
        v.extend(self.down.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.up.params_mut();
        v.extend(self.down.params_mut());
        v
    }
}

/// Multi-head scaled dot-product attention. Queries come from one sequence,
/// keys/values from another (identical for self-attention). Keys with
/// `mask == false` receive zero attention weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub n_heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

pub struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    context: Array2<f64>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(rng: &mut R, width: usize, n_heads: usize) -> Self {
        assert!(n_heads > 0 && width % n_heads == 0, "width must be divisible by n_heads");
        MultiHeadAttention {
            n_heads,
            query: Linear::new(rng, width, width),
            key: Linear::new(rng, width, width),
            value: Linear::new(rng, width, width),
            output: Linear::new(rng, width, width),
        }
    }

    fn head_dim(&self) -> usize {
        self.query.output_dim() / self.n_heads
    }

    pub fn forward(
        &self,
        xq: &ArrayView2<f64>,
        xkv: &ArrayView2<f64>,
        mask: &[bool],
    ) -> (Array2<f64>, AttentionCache) {
        debug_assert_eq!(mask.len(), xkv.nrows());
        let q = self.query.forward(xq);
        let k = self.key.forward(xkv);
        let v = self.value.forward(xkv);
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut context = Array2::zeros((xq.nrows(), self.query.output_dim()));
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            for mut row in scores.rows_mut() {
                masked_softmax_in_place(row.as_slice_mut().expect("contiguous row"), mask);
            }
            context.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let out = self.output.forward(&context.view());
        (
            out,
            AttentionCache {
                q,
                k,
                v,
                probs,
                context,
            },
        )
    }

    /// Returns `(dL/dxq, dL/dxkv)`.
    pub fn backward(
        &self,
        xq: &ArrayView2<f64>,
        xkv: &ArrayView2<f64>,
        cache: &AttentionCache,
        dy: &ArrayView2<f64>,
        grad: &mut MultiHeadAttention,
    ) -> (Array2<f64>, Array2<f64>) {
        let dcontext = self.output.backward(&cache.context.view(), dy, &mut grad.output);
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for h in 0..self.n_heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let p = &cache.probs[h];
            let dc = dcontext.slice(cols);
            let dp = dc.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dc));
            let mut ds = Array2::zeros(p.raw_dim());
            for ((mut out, prow), dprow) in ds.rows_mut().into_iter().zip(p.rows()).zip(dp.rows()) {
                let dot = prow.dot(&dprow);
                Zip::from(&mut out).and(&prow).and(&dprow).for_each(|o, &pi, &dpi| {
                    *o = pi * (dpi - dot) * scale;
                });
            }
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let dxq = self.query.backward(xq, &dq.view(), &mut grad.query);
        let dxkv = self.key.backward(xkv, &dk.view(), &mut grad.key)
            + self.value.backward(xkv, &dv.view(), &mut grad.value);
        (dxq, dxkv)
    }
}

impl Parameters for MultiHeadAttention {
    fn params(&self) -> Vec<&[f64]> {
        let mut v = self.query.params();
        v.extend(self.key.params());
        v.extend(self.value.params());
        v.extend(self.output.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.query.params_mut();
        v.extend(self.key.params_mut());
        v.extend(self.value.params_mut());
        v.extend(self.output.params_mut());
        v
    }
}

fn masked_softmax_in_place(row: &mut [f64], mask: &[bool]) {
    let max = row
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(v, _)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        row.fill(0.0);
        return;
    }
    let mut sum = 0.0;
    for (v, &m) in row.iter_mut().zip(mask) {
        *v = if m { (*v - max).exp() } else { 0.0 };
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}
