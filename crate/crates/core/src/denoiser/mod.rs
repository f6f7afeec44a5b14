//! Fully connected denoiser with sinusoidal time conditioning.
//!
//! ```text
//! h_in = z·W_in + b_in + emb(t)
//! h_l  = relu(h_{l-1}·W_l + b_l)      l = 1..4
//! out  = h_4·W_out + b_out
//! ```
//!
//! Gradients are written out by hand; [`Denoiser::backward`] consumes the
//! activations cached by [`Denoiser::forward`].

mod adam;
mod embedding;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use embedding::{TimeEmbedding, TIME_SCALE};

use std::fmt::{Debug, Display};
use std::ops::{AddAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Domain};
use crate::{Error, Result};

/// Scalar types the denoiser runs in (`f32` for training, `f64` for checks).
pub trait Real:
    LinalgScalar
    + Float
    + FromPrimitive
    + ToPrimitive
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Layer widths of the denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub d_in: usize,
    /// Width of the input projection and of the time embedding.
    pub d_t: usize,
    /// Output widths of the four hidden layers.
    pub hidden: [usize; 4],
    pub time_base: f64,
}

impl DenoiserConfig {
    /// Full-size network: `d_t = 1024`, hidden `[1024, 2048, 2048, 1024]`.
    pub fn full(d_in: usize) -> Self {
        Self::scaled(d_in, 1024)
    }

    /// Hidden widths `[d_t, 2·d_t, 2·d_t, d_t]`.
    pub fn scaled(d_in: usize, d_t: usize) -> Self {
        DenoiserConfig {
            d_in,
            d_t,
            hidden: [d_t, 2 * d_t, 2 * d_t, d_t],
            time_base: 10_000.0,
        }
    }

    pub fn embedding(&self) -> TimeEmbedding {
        TimeEmbedding {
            dim: self.d_t,
            base: self.time_base,
        }
    }

    /// `(fan_in, fan_out)` of each of the six affine layers.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let h = self.hidden;
        vec![
            (self.d_in, self.d_t),
            (self.d_t, h[0]),
            (h[0], h[1]),
            (h[1], h[2]),
            (h[2], h[3]),
            (h[3], self.d_in),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.d_t < 2 || self.d_t % 2 != 0 || self.hidden.contains(&0) {
            return Err(Error::invalid(format!("bad denoiser widths {self:?}")));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// One affine layer `x·w + b`, `w` stored fan_in × fan_out.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<A> {
    pub w: Array2<A>,
    pub b: Array1<A>,
}

/// Weights and biases of all six layers in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<A> {
    pub layers: Vec<Linear<A>>,
}

impl<A: Real> DenoiserParams<A> {
    /// Kaiming-uniform (fan-in) for the four ReLU layers, LeCun-uniform for
    /// the input and output projections, zero biases.
    pub fn init(config: &DenoiserConfig, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Domain::Init, 0);
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let layers = shapes
            .iter()
            .enumerate()
            .map(|(l, &(fan_in, fan_out))| {
                let gain = if l == 0 || l == last { 3.0 } else { 6.0 };
                let bound = (gain / fan_in as f64).sqrt();
                let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                    A::from_f64(rng.random_range(-bound..bound)).unwrap()
                });
                Linear {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        DenoiserParams { layers }
    }

    pub fn zeros_like(&self) -> Self {
        DenoiserParams {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
        }
    }

    /// Flat views in declaration order: `w0, b0, w1, b1, …`.
    pub fn tensors(&self) -> Vec<&[A]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice().expect("standard layout"), l.b.as_slice().expect("contiguous")])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [A]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w.as_slice_mut().expect("standard layout"),
                    l.b.as_slice_mut().expect("contiguous"),
                ]
            })
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn scale(&mut self, factor: A) {
        for l in &mut self.layers {
            l.w.mapv_inplace(|v| v * factor);
            l.b.mapv_inplace(|v| v * factor);
        }
    }

    pub fn cast<B: Real>(&self) -> DenoiserParams<B> {
        let c = |v: &A| B::from_f64(v.to_f64().unwrap()).unwrap();
        DenoiserParams {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    w: l.w.map(c),
                    b: l.b.map(c),
                })
                .collect(),
        }
    }

    /// Rebuild from flat tensors laid out as [`tensors`](Self::tensors).
    pub fn from_flat(config: &DenoiserConfig, flat: &[A]) -> Result<Self> {
        if flat.len() != config.n_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                config.n_params()
            )));
        }
        let mut at = 0;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(i, o)| {
                let w = Array2::from_shape_vec((i, o), flat[at..at + i * o].to_vec()).expect("sized");
                at += i * o;
                let b = Array1::from(flat[at..at + o].to_vec());
                at += o;
                Linear { w, b }
            })
            .collect();
        Ok(DenoiserParams { layers })
    }
}

/// Activations saved by the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<A> {
    /// Input of each layer: `z, h_in, h_1, h_2, h_3, h_4`.
    inputs: Vec<Array2<A>>,
}

/// Output of [`Denoiser::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<A> {
    pub params: DenoiserParams<A>,
    pub input: Array2<A>,
}

/// Network configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser<A> {
    pub config: DenoiserConfig,
    pub params: DenoiserParams<A>,
}

fn relu_inplace<A: Real>(x: &mut Array2<A>) {
    x.mapv_inplace(|v| if v > A::zero() { v } else { A::zero() });
}

impl<A: Real> Denoiser<A> {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = DenoiserParams::init(&config, seed);
        Ok(Denoiser { config, params })
    }

    pub fn from_params(config: DenoiserConfig, params: DenoiserParams<A>) -> Result<Self> {
        config.validate()?;
        let shapes: Vec<(usize, usize)> = params.layers.iter().map(|l| l.w.dim()).collect();
        if shapes != config.layer_shapes() || params.layers.iter().any(|l| l.b.len() != l.w.ncols()) {
            return Err(Error::Shape("parameter shapes do not match config".into()));
        }
        Ok(Denoiser { config, params })
    }

    /// Forward pass; `t` holds one time fraction in `[0, 1]` per row.
    pub fn forward(&self, z: ArrayView2<A>, t: &[f64]) -> Result<(Array2<A>, ForwardCache<A>)> {
        if z.ncols() != self.config.d_in || t.len() != z.nrows() {
            return Err(Error::Shape(format!(
                "input {}x{} with {} times, expected width {}",
                z.nrows(),
                z.ncols(),
                t.len(),
                self.config.d_in
            )));
        }
        let layers = &self.params.layers;
        let mut inputs = Vec::with_capacity(layers.len());
        let z = z.to_owned();
        let mut h = z.dot(&layers[0].w);
        h += &layers[0].b;
        h += &self.config.embedding().embed_batch::<A>(t);
        inputs.push(z);
        for layer in &layers[1..5] {
            let mut a = h.dot(&layer.w);
            a += &layer.b;
            relu_inplace(&mut a);
            inputs.push(std::mem::replace(&mut h, a));
        }
        let mut out = h.dot(&layers[5].w);
        out += &layers[5].b;
        inputs.push(h);
        Ok((out, ForwardCache { inputs }))
    }

    /// Forward pass without keeping activations.
    pub fn predict(&self, z: ArrayView2<A>, t: &[f64]) -> Result<Array2<A>> {
        self.forward(z, t).map(|(out, _)| out)
    }

    /// Exact gradients of `Σ upstream ⊙ forward(z, t)` with respect to every
    /// parameter and to `z`. `relu'(0)` is taken as 0.
    pub fn backward(&self, cache: &ForwardCache<A>, upstream: ArrayView2<A>) -> Result<Gradients<A>> {
        let layers = &self.params.layers;
        if cache.inputs.len() != layers.len() {
            return Err(Error::invalid("forward cache is incomplete"));
        }
        if upstream.dim() != (cache.inputs[0].nrows(), self.config.d_in) {
            return Err(Error::Shape("upstream gradient shape differs from output".into()));
        }
        let mut grads = Vec::with_capacity(layers.len());
        let mut delta = upstream.to_owned();
        for l in (0..layers.len()).rev() {
            let input = &cache.inputs[l];
            let mut dw = input.t().dot(&delta);
            if !dw.is_standard_layout() {
                dw = dw.as_standard_layout().into_owned();
            }
            let db = delta.sum_axis(Axis(0));
            let mut d_input = delta.dot(&layers[l].w.t());
            if (2..layers.len()).contains(&l) {
                // input of layer l is relu output of layer l-1
                ndarray::Zip::from(&mut d_input).and(input).for_each(|d, &h| {
                    if h <= A::zero() {
                        *d = A::zero();
                    }
                });
            }
            grads.push(Linear { w: dw, b: db });
            delta = d_input;
        }
        grads.reverse();
        Ok(Gradients {
            params: DenoiserParams { layers: grads },
            input: delta,
        })
    }
}
