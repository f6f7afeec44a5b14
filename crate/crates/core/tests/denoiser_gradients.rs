use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tabsynth::denoiser::{Denoiser, DenoiserConfig, DenoiserParams};

/// Double-double value `hi + lo`, enough precision that a central difference
/// at h = 1e-6 is not swamped by rounding in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dd {
    hi: f64,
    lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn norm(s: f64, e: f64) -> Dd {
    let hi = s + e;
    Dd { hi, lo: e - (hi - s) }
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        norm(s, e + self.lo + o.lo)
    }

    fn mul(self, w: f64) -> Dd {
        let p = self.hi * w;
        let e = self.hi.mul_add(w, -p);
        norm(p, e + self.lo * w)
    }

    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    fn positive(self) -> bool {
        self.hi > 0.0 || (self.hi == 0.0 && self.lo > 0.0)
    }
}

/// Loop-based forward pass of `Σ up ⊙ net(z, t)` in double-double; also
/// returns the sign pattern of every hidden pre-activation.
fn naive_objective(p: &DenoiserParams<f64>, d_t: usize, z: &Array2<f64>, t: &[f64], up: &Array2<f64>) -> (Dd, Vec<bool>) {
    let mut pattern = Vec::new();
    let mut total = Dd::ZERO;
    for r in 0..z.nrows() {
        let mut h: Vec<Dd> = z.row(r).iter().map(|&v| Dd::from(v)).collect();
        for (l, layer) in p.layers.iter().enumerate() {
            let (fan_in, fan_out) = layer.w.dim();
            let mut next = vec![Dd::ZERO; fan_out];
            for o in 0..fan_out {
                let mut acc = Dd::from(layer.b[o]);
                for i in 0..fan_in {
                    acc = acc.add(h[i].mul(layer.w[[i, o]]));
                }
                if l == 0 {
                    let k = o / 2;
                    let arg = 1000.0 * t[r] * 10000f64.powf(-2.0 * k as f64 / d_t as f64);
                    acc = acc.add(Dd::from(if o % 2 == 0 { arg.sin() } else { arg.cos() }));
                } else if l < 5 {
                    pattern.push(acc.positive());
                    if !acc.positive() {
                        acc = Dd::ZERO;
                    }
                }
                next[o] = acc;
            }
            h = next;
        }
        for (j, v) in h.iter().enumerate() {
            total = total.add(v.mul(up[[r, j]]));
        }
    }
    (total, pattern)
}

#[test]
fn naive_forward_agrees_with_network() {
    let cfg = DenoiserConfig::scaled(4, 8);
    let net = Denoiser::<f64>::new(cfg, 11).unwrap();
    let z = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
    let t = [0.0, 0.37, 1.0];
    let fast = net.predict(z.view(), &t).unwrap();
    for r in 0..3 {
        for j in 0..4 {
            let mut up = Array2::zeros((3, 4));
            up[[r, j]] = 1.0;
            let (slow, _) = naive_objective(&net.params, 8, &z, &t, &up);
            assert!((fast[[r, j]] - slow.hi).abs() < 1e-12);
        }
    }
}

#[test]
fn gradients_match_central_differences() {
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut skipped = 0usize;
    let mut checked = 0usize;
    for case in 0..25u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let d_in = rng.random_range(1..=6);
        let d_t = 2 * rng.random_range(1..=8);
        let n = rng.random_range(1..=4);
        let cfg = DenoiserConfig::scaled(d_in, d_t);
        let mut net = Denoiser::<f64>::new(cfg, case).unwrap();
        for t in net.params.tensors_mut() {
            for v in t.iter_mut() {
                *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let z = Array2::from_shape_simple_fn((n, d_in), || rng.sample(StandardNormal));
        let up = Array2::from_shape_simple_fn((n, d_in), || rng.sample(StandardNormal));
        let t: Vec<f64> = (0..n).map(|_| rng.random()).collect();

        let (_, cache) = net.forward(z.view(), &t).unwrap();
        let grads = net.backward(&cache, up.view()).unwrap();
        let analytic: Vec<f64> = grads.params.tensors().concat();
        let (_, base_pattern) = naive_objective(&net.params, d_t, &z, &t, &up);

        let mut flat: Vec<f64> = net.params.tensors().concat();
        for k in 0..flat.len() {
            let orig = flat[k];
            let (xp, xm) = (orig + h, orig - h);
            flat[k] = xp;
            let (lp, pp) = naive_objective(&DenoiserParams::from_flat(&net.config, &flat).unwrap(), d_t, &z, &t, &up);
            flat[k] = xm;
            let (lm, pm) = naive_objective(&DenoiserParams::from_flat(&net.config, &flat).unwrap(), d_t, &z, &t, &up);
            flat[k] = orig;
            if pp != base_pattern || pm != base_pattern {
                // the difference straddles a ReLU kink
                skipped += 1;
                continue;
            }
            let diff = lp.add(lm.neg());
            let numeric = (diff.hi + diff.lo) / (xp - xm);
            let a = analytic[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    assert!(skipped * 100 < checked, "{skipped} kinks out of {checked}");
    assert!(worst < 1e-5, "max relative error {worst}");
}
