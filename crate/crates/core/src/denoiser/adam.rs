use serde::{Deserialize, Serialize};

use super::{DenoiserParams, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers congruent to the parameters.
#[derive(Debug, Clone)]
pub struct AdamState<A: Real> {
    pub config: AdamConfig,
    pub m: DenoiserParams<A>,
    pub v: DenoiserParams<A>,
    pub step: u64,
    /// Updates skipped because a gradient was not finite.
    pub skipped: u64,
}

impl<A: Real> AdamState<A> {
    pub fn new(params: &DenoiserParams<A>, config: AdamConfig) -> Self {
        AdamState {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
            skipped: 0,
        }
    }
}

/// Decoupled weight decay `θ ← θ − lr·wd·θ`, then a bias-corrected Adam step.
///
/// Returns `false` (and leaves everything untouched) when any gradient is
/// non-finite.
pub fn adam_step<A: Real>(params: &mut DenoiserParams<A>, grads: &DenoiserParams<A>, state: &mut AdamState<A>) -> bool {
    if !grads.all_finite() {
        state.skipped += 1;
        return false;
    }
    state.step += 1;
    let c = state.config;
    let f = |x: f64| A::from_f64(x).unwrap();
    let (b1, b2) = (f(c.beta1), f(c.beta2));
    let (one_b1, one_b2) = (f(1.0 - c.beta1), f(1.0 - c.beta2));
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    // lr·m̂/(√v̂+ε) = (lr/bc1)·m / (√v/√bc2 + ε)
    let step_size = f(c.lr / bc1);
    let inv_sqrt_bc2 = f(1.0 / bc2.sqrt());
    let eps = f(c.eps);
    let decay = f(1.0 - c.lr * c.weight_decay);

    let mut p = params.tensors_mut();
    let g = grads.tensors();
    let mut m = state.m.tensors_mut();
    let mut v = state.v.tensors_mut();
    for t in 0..p.len() {
        for (((pi, &gi), mi), vi) in p[t].iter_mut().zip(g[t]).zip(m[t].iter_mut()).zip(v[t].iter_mut()) {
            *pi = *pi * decay;
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            *pi = *pi - step_size * *mi / (vi.sqrt() * inv_sqrt_bc2 + eps);
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{DenoiserConfig, Linear};
    use ndarray::{Array1, Array2};

    fn scalar(theta: f64) -> DenoiserParams<f64> {
        DenoiserParams {
            layers: vec![Linear {
                w: Array2::from_elem((1, 1), theta),
                b: Array1::zeros(1),
            }],
        }
    }

    fn grad(g: f64) -> DenoiserParams<f64> {
        scalar(g)
    }

    #[test]
    fn constant_gradient_descends() {
        let mut p = scalar(0.0);
        let mut st = AdamState::new(&p, AdamConfig { weight_decay: 0.0, ..Default::default() });
        for _ in 0..100 {
            adam_step(&mut p, &grad(3.0), &mut st);
        }
        assert!(p.layers[0].w[[0, 0]] < 0.0);
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let cfg = DenoiserConfig::scaled(3, 4);
        let mut p = DenoiserParams::<f64>::init(&cfg, 1);
        let before = p.clone();
        let mut st = AdamState::new(&p, AdamConfig { weight_decay: 0.0, ..Default::default() });
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut st);
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_is_skipped() {
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&p, AdamConfig::default());
        assert!(!adam_step(&mut p, &grad(f64::NAN), &mut st));
        assert_eq!(st.skipped, 1);
        assert_eq!(st.step, 0);
        assert_eq!(p.layers[0].w[[0, 0]], 1.0);
    }

    /// Independent scalar re-implementation of the update rule.
    fn simulate_bowl(lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut th, mut m, mut v) = (1.0f64, 0.0, 0.0);
        for t in 1..=steps {
            let g = th;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            th -= lr * mh / (vh.sqrt() + eps);
        }
        th
    }

    #[test]
    fn quadratic_bowl_converges() {
        let oracle = simulate_bowl(1e-2, 5000);
        assert!(oracle.abs() < 1e-3, "oracle {oracle}");
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&p, AdamConfig { lr: 1e-2, weight_decay: 0.0, ..Default::default() });
        for _ in 0..5000 {
            let g = grad(p.layers[0].w[[0, 0]]);
            adam_step(&mut p, &g, &mut st);
        }
        let th = p.layers[0].w[[0, 0]];
        assert!(th.abs() < 1e-3, "{th}");
        assert!((th - oracle).abs() < 1e-9);
    }
}
