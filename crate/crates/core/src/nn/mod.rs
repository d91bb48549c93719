//! Minimal neural-network building blocks with hand-written backward
//! passes. Everything is generic over the float type so gradients can be
//! checked in f64 while training runs in f32.
//!
//! Activations are 2-D: rows are tokens (or pixels), columns are features.
//! Layers return whatever their backward pass needs; callers keep it.

mod attention;
mod conv;

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

pub use attention::{AttentionCache, EncoderBlock, EncoderCache, SelfAttention};
pub use conv::{Conv2d, ConvCache, ConvShape};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Debug
    + Default
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    fn c(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Uniform traversal of a module's parameter tensors in a fixed order.
/// Optimizers, serialization and gradient checks are written against it.
pub trait Params<T: Real> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a [T]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T]));

    fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.len());
        n
    }

    fn flatten(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        self.visit(&mut |p| out.extend_from_slice(p));
        out
    }

    /// Overwrite every parameter from a flat slice produced by `flatten`.
    fn load_flat(&mut self, flat: &[T]) -> Result<(), String> {
        let expected = self.n_params();
        if flat.len() != expected {
            return Err(format!(
                "expected {expected} parameters, got {}",
                flat.len()
            ));
        }
        let mut at = 0;
        self.visit_mut(&mut |p| {
            p.copy_from_slice(&flat[at..at + p.len()]);
            at += p.len();
        });
        Ok(())
    }

    fn fill_zero(&mut self) {
        self.visit_mut(&mut |p| p.fill(T::zero()));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |p| ok &= p.iter().all(|v| v.is_finite()));
        ok
    }
}

fn slice_mut<T, D: ndarray::Dimension>(a: &mut ndarray::Array<T, D>) -> &mut [T] {
    a.as_slice_mut().expect("parameters are contiguous")
}

fn slice<T, D: ndarray::Dimension>(a: &ndarray::Array<T, D>) -> &[T] {
    a.as_slice().expect("parameters are contiguous")
}

/// Cast every parameter between float widths (f32 weights into an f64
/// copy for checking, or back).
pub fn cast_params<A: Real, B: Real, M: Params<A>, N: Params<B>>(src: &M, dst: &mut N) {
    let flat: Vec<B> = src
        .flatten()
        .into_iter()
        .map(|v| B::from(v).expect("finite"))
        .collect();
    dst.load_flat(&flat).expect("same architecture");
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// (in, out)
    pub w: Array2<T>,
    pub b: Array1<T>,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("valid bound");
        Self {
            w: Array2::from_shape_simple_fn((inputs, outputs), || T::c(dist.sample(rng))),
            b: Array1::zeros(outputs),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((inputs, outputs)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.w.mapv_inplace(|v| v * T::c(s));
        self
    }

    pub fn forward(&self, x: &ArrayView2<T>) -> Array2<T> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `g` and returns dL/dx.
    pub fn backward(&self, x: &ArrayView2<T>, dy: &ArrayView2<T>, g: &mut Self) -> Array2<T> {
        self.backward_params(x, dy, g);
        dy.dot(&self.w.t())
    }

    pub fn backward_params(&self, x: &ArrayView2<T>, dy: &ArrayView2<T>, g: &mut Self) {
        ndarray::linalg::general_mat_mul(T::one(), &x.t(), dy, T::one(), &mut g.w);
        g.b += &dy.sum_axis(Axis(0));
    }
}

impl<T: Real> Params<T> for Linear<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a [T])) {
        f(slice(&self.w));
        f(slice(&self.b));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        f(slice_mut(&mut self.w));
        f(slice_mut(&mut self.b));
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// tanh approximation of GELU.
pub fn gelu<T: Real>(x: &Array2<T>) -> Array2<T> {
    let (k, c, half) = (T::c(GELU_K), T::c(GELU_C), T::c(0.5));
    x.mapv(|v| half * v * (T::one() + (k * (v + c * v * v * v)).tanh()))
}

pub fn gelu_backward<T: Real>(x: &Array2<T>, dy: &ArrayView2<T>) -> Array2<T> {
    let (k, c, half) = (T::c(GELU_K), T::c(GELU_C), T::c(0.5));
    let three = T::c(3.0);
    let mut out = x.clone();
    ndarray::Zip::from(&mut out).and(dy).for_each(|v, &g| {
        let x = *v;
        let th = (k * (x + c * x * x * x)).tanh();
        let dth = (T::one() - th * th) * k * (T::one() + three * c * x * x);
        *v = g * (half * (T::one() + th) + half * x * dth);
    });
    out
}

pub fn relu<T: Real>(x: &Array2<T>) -> Array2<T> {
    x.mapv(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Real>(x: &Array2<T>, dy: &ArrayView2<T>) -> Array2<T> {
    let mut out = dy.to_owned();
    ndarray::Zip::from(&mut out).and(x).for_each(|g, &v| {
        if v <= T::zero() {
            *g = T::zero();
        }
    });
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    xhat: Array2<T>,
    rstd: Array1<T>,
}

impl<T: Real> LayerNorm<T> {
    pub const EPS: f64 = 1e-5;

    pub fn new(d: usize) -> Self {
        Self {
            gamma: Array1::ones(d),
            beta: Array1::zeros(d),
        }
    }

    pub fn forward(&self, x: &ArrayView2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let d = T::from_usize(x.ncols()).expect("width");
        let mut xhat = x.to_owned();
        let mut rstd = Array1::zeros(x.nrows());
        for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / d;
            *r = T::one() / (var + T::c(Self::EPS)).sqrt();
            let s = *r;
            row.mapv_inplace(|v| v * s);
        }
        let y = &xhat * &self.gamma + &self.beta;
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward(
        &self,
        cache: &LayerNormCache<T>,
        dy: &ArrayView2<T>,
        g: &mut Self,
    ) -> Array2<T> {
        g.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        g.beta += &dy.sum_axis(Axis(0));
        let d = T::from_usize(dy.ncols()).expect("width");
        let mut dx = dy * &self.gamma;
        for ((mut row, xh), &r) in dx
            .rows_mut()
            .into_iter()
            .zip(cache.xhat.rows())
            .zip(cache.rstd.iter())
        {
            let sum = row.sum();
            let dot = row.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<T>();
            ndarray::Zip::from(&mut row).and(&xh).for_each(|v, &h| {
                *v = r * (*v - sum / d - h * dot / d);
            });
        }
        dx
    }
}

impl<T: Real> Params<T> for LayerNorm<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a [T])) {
        f(slice(&self.gamma));
        f(slice(&self.beta));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        f(slice_mut(&mut self.gamma));
        f(slice_mut(&mut self.beta));
    }
}

/// Two-layer perceptron with a GELU in between.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    x: Array2<T>,
    h: Array2<T>,
    a: Array2<T>,
}

impl<T: Real> Mlp<T> {
    pub fn new<R: Rng + ?Sized>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            fc1: Linear::new(inputs, hidden, rng),
            fc2: Linear::new(hidden, outputs, rng),
        }
    }

    pub fn forward(&self, x: &ArrayView2<T>) -> (Array2<T>, MlpCache<T>) {
        let h = self.fc1.forward(x);
        let a = gelu(&h);
        let y = self.fc2.forward(&a.view());
        (
            y,
            MlpCache {
                x: x.to_owned(),
                h,
                a,
            },
        )
    }

    pub fn infer(&self, x: &ArrayView2<T>) -> Array2<T> {
        self.fc2.forward(&gelu(&self.fc1.forward(x)).view())
    }

    pub fn backward(&self, c: &MlpCache<T>, dy: &ArrayView2<T>, g: &mut Self) -> Array2<T> {
        let da = self.fc2.backward(&c.a.view(), dy, &mut g.fc2);
        let dh = gelu_backward(&c.h, &da.view());
        self.fc1.backward(&c.x.view(), &dh.view(), &mut g.fc1)
    }

    /// Backward without the input gradient (first layer of a network).
    pub fn backward_params(&self, c: &MlpCache<T>, dy: &ArrayView2<T>, g: &mut Self) {
        let da = self.fc2.backward(&c.a.view(), dy, &mut g.fc2);
        let dh = gelu_backward(&c.h, &da.view());
        self.fc1
            .backward_params(&c.x.view(), &dh.view(), &mut g.fc1);
    }
}

impl<T: Real> Params<T> for Mlp<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a [T])) {
        self.fc1.visit(f);
        self.fc2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

pub fn randn<T: Real, R: Rng + ?Sized>(shape: (usize, usize), std: f64, rng: &mut R) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(rng);
        T::c(z * std)
    })
}

/// Sinusoidal features: row p holds sin/cos pairs of p at geometrically
/// spaced frequencies.
pub fn sinusoidal<T: Real>(positions: &[f64], d: usize) -> Array2<T> {
    let mut out = Array2::zeros((positions.len(), d));
    for (r, &p) in positions.iter().enumerate() {
        for j in 0..d / 2 {
            let freq = 10000f64.powf(-2.0 * j as f64 / d as f64);
            out[[r, 2 * j]] = T::c((p * freq).sin());
            out[[r, 2 * j + 1]] = T::c((p * freq).cos());
        }
    }
    out
}

/// Row-wise softmax cross-entropy, mean over rows. Returns the loss and
/// dL/dlogits.
pub fn softmax_cross_entropy<T: Real>(logits: &ArrayView2<T>, targets: &[usize]) -> (T, Array2<T>) {
    assert_eq!(logits.nrows(), targets.len());
    let n = T::from_usize(targets.len().max(1)).expect("count");
    let mut grad = softmax_rows(logits);
    let mut loss = T::zero();
    for (mut row, (&y, logit_row)) in grad
        .rows_mut()
        .into_iter()
        .zip(targets.iter().zip(logits.rows()))
    {
        let max = logit_row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let lse = max + logit_row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        loss += lse - logit_row[y];
        row[y] -= T::one();
        row.mapv_inplace(|v| v / n);
    }
    (loss / n, grad)
}

pub fn softmax_rows<T: Real>(x: &ArrayView2<T>) -> Array2<T> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 1.0,
        }
    }
}

/// Adam with global-norm clipping; moment buffers are flat and follow the
/// module's `Params` order.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    m: Vec<T>,
    v: Vec<T>,
    pub steps: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, n_params: usize) -> Self {
        Self {
            cfg,
            m: vec![T::zero(); n_params],
            v: vec![T::zero(); n_params],
            steps: 0,
        }
    }

    /// Applies one update and returns the pre-clip gradient norm.
    pub fn step<M: Params<T>>(&mut self, model: &mut M, grads: &M, lr: f64) -> f64 {
        let g = grads.flatten();
        assert_eq!(g.len(), self.m.len(), "optimizer built for another model");
        let norm = g
            .iter()
            .map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = if self.cfg.clip_norm > 0.0 && norm > self.cfg.clip_norm {
            self.cfg.clip_norm / norm
        } else {
            1.0
        };
        self.steps += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(self.steps as i32);
        let bc2 = 1.0 - b2.powi(self.steps as i32);
        let step = T::c(lr * bc2.sqrt() / bc1);
        let (b1t, b2t, eps, scale) = (
            T::c(b1),
            T::c(b2),
            T::c(self.cfg.eps * bc2.sqrt()),
            T::c(scale),
        );
        let (m, v) = (&mut self.m, &mut self.v);
        let mut at = 0;
        model.visit_mut(&mut |p| {
            for (k, w) in p.iter_mut().enumerate() {
                let i = at + k;
                let gi = g[i] * scale;
                m[i] = b1t * m[i] + (T::one() - b1t) * gi;
                v[i] = b2t * v[i] + (T::one() - b2t) * gi * gi;
                *w -= step * m[i] / (v[i].sqrt() + eps);
            }
            at += p.len();
        });
        norm
    }
}

/// Raw little-endian f32 weight blob with a small header.
pub mod blob {
    use super::{Params, Real};

    const MAGIC: &[u8; 4] = b"SFW1";

    pub fn encode<T: Real, M: Params<T>>(m: &M) -> Vec<u8> {
        let flat = m.flatten();
        let mut out = Vec::with_capacity(12 + 4 * flat.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
        for v in flat {
            out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
        out
    }

    pub fn decode<T: Real, M: Params<T>>(bytes: &[u8], m: &mut M) -> Result<(), String> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err("not a weight blob".into());
        }
        let n = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = &bytes[12..];
        if body.len() != 4 * n {
            return Err(format!(
                "blob declares {n} weights but holds {}",
                body.len() / 4
            ));
        }
        let flat: Vec<T> = body
            .chunks_exact(4)
            .map(|c| T::c(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        m.load_flat(&flat)
    }
}
