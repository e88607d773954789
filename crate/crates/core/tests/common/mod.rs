#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spadseg::neuralseg::{focal_tversky_loss, Tensor4, TverskyConfig, Unet};

/// Relative error with an absolute floor so gradients that are zero up to
/// rounding do not blow up the ratio.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor4<f64> {
    let data = (0..n * c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor4::from_vec(n, c, h, w, data).unwrap()
}

pub fn random_onehot(rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize) -> Tensor4<f64> {
    let mut t = Tensor4::zeros(n, c, h, w);
    for i in 0..n {
        for p in 0..h * w {
            let k = rng.random_range(0..c);
            t.image_mut(i)[k * h * w + p] = 1.0;
        }
    }
    t
}

pub fn net_loss(net: &Unet<f64>, x: &Tensor4<f64>, y: &Tensor4<f64>, cfg: &TverskyConfig) -> f64 {
    let p = net.forward(x).unwrap();
    focal_tversky_loss(&p, y, cfg).unwrap().0
}

/// Central differences with a relative step, skipping parameters whose
/// perturbation flips a ReLU or a pool argmax. Returns the worst relative
/// error and the number of coordinates compared.
pub fn check_network(
    net: &Unet<f64>,
    x: &Tensor4<f64>,
    y: &Tensor4<f64>,
    cfg: &TverskyConfig,
    per_layer: usize,
    seed: u64,
) -> (f64, usize) {
    let cache = net.forward_cached(x).unwrap();
    let pattern = cache.activation_pattern();
    let (_, dprobs) = focal_tversky_loss(&cache.probs, y, cfg).unwrap();
    let grads = net.backward(&cache, &dprobs).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for (li, g) in grads.iter().enumerate() {
        let n_w = net.convs[li].weight.len();
        let n_b = net.convs[li].bias.len();
        for _ in 0..per_layer {
            let j = rng.random_range(0..n_w + n_b);
            let (analytic, base) = if j < n_w {
                (g.dw[j], net.convs[li].weight[j])
            } else {
                (g.db[j - n_w], net.convs[li].bias[j - n_w])
            };
            let h = 1e-4 * base.abs().max(1e-2);
            let eval = |v: f64| {
                let mut m = net.clone();
                if j < n_w {
                    m.convs[li].weight[j] = v;
                } else {
                    m.convs[li].bias[j - n_w] = v;
                }
                let c = m.forward_cached(x).unwrap();
                let same = c.activation_pattern() == pattern;
                (focal_tversky_loss(&c.probs, y, cfg).unwrap().0, same)
            };
            let (lp, sp) = eval(base + h);
            let (lm, sm) = eval(base - h);
            if !(sp && sm) {
                continue;
            }
            let numeric = (lp - lm) / (2.0 * h);
            worst = worst.max(rel_err(analytic, numeric));
            compared += 1;
        }
    }
    (worst, compared)
}
