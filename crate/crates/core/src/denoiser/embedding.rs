use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::Real;

/// Continuous time in `[0, 1]` is multiplied by this before embedding, so a
/// 1000-step DDPM sees its integer step index.
pub const TIME_SCALE: f64 = 1000.0;

/// Sinusoidal embedding `[sin(τω₀), cos(τω₀), sin(τω₁), …]` with
/// `τ = 1000·s` and `ω_i = base^(−2i/dim)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub dim: usize,
    pub base: f64,
}

impl TimeEmbedding {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 2 && dim % 2 == 0, "embedding dimension must be even");
        TimeEmbedding { dim, base: 10_000.0 }
    }

    pub fn frequency(&self, i: usize) -> f64 {
        self.base.powf(-2.0 * i as f64 / self.dim as f64)
    }

    /// Embed a time fraction `s ∈ [0, 1]` into `out`.
    pub fn embed_into<A: Real>(&self, s: f64, out: &mut [A]) {
        let tau = TIME_SCALE * s;
        for i in 0..self.dim / 2 {
            let arg = tau * self.frequency(i);
            out[2 * i] = A::from_f64(arg.sin()).unwrap();
            out[2 * i + 1] = A::from_f64(arg.cos()).unwrap();
        }
    }

    pub fn embed<A: Real>(&self, s: f64) -> Vec<A> {
        let mut out = vec![A::zero(); self.dim];
        self.embed_into(s, &mut out);
        out
    }

    /// Discrete step `t` of `T` mapped to `s = t / T`.
    pub fn embed_step<A: Real>(&self, t: usize, steps: usize) -> Vec<A> {
        self.embed(t as f64 / steps as f64)
    }

    /// One embedding row per entry of `s`.
    pub fn embed_batch<A: Real>(&self, s: &[f64]) -> Array2<A> {
        let mut out = Array2::zeros((s.len(), self.dim));
        if let Some(&first) = s.first() {
            if s.iter().all(|&v| v == first) {
                let row = self.embed::<A>(first);
                for mut r in out.outer_iter_mut() {
                    r.as_slice_mut().unwrap().copy_from_slice(&row);
                }
                return out;
            }
        }
        for (mut r, &v) in out.outer_iter_mut().zip(s) {
            self.embed_into(v, r.as_slice_mut().unwrap());
        }
        out
    }
}
