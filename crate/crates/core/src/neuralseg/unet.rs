use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    concat_channels, maxpool2_bwd, maxpool2_fwd, relu_bwd, relu_fwd, softmax_bwd, softmax_channels,
    split_channels, upsample_nearest2_bwd, upsample_nearest2_fwd, Conv2d, ConvGrads,
};
use super::tensor::{Scalar, Tensor4};
use crate::{Error, Result, N_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnetSpec {
    pub in_channels: usize,
    pub n_classes: usize,
    pub base_channels: usize,
    pub n_levels: usize,
}

impl Default for UnetSpec {
    fn default() -> Self {
        Self {
            in_channels: 16,
            n_classes: N_CLASSES,
            base_channels: 16,
            n_levels: 3,
        }
    }
}

impl UnetSpec {
    pub fn with_inputs(in_channels: usize) -> Self {
        Self {
            in_channels,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ![1, 2, 16].contains(&self.in_channels) {
            return Err(Error::InvalidConfig(format!(
                "in_channels must be 1, 2 or 16 (got {})",
                self.in_channels
            )));
        }
        if self.n_classes != N_CLASSES {
            return Err(Error::InvalidConfig(format!("n_classes must be {N_CLASSES}")));
        }
        if self.base_channels == 0 || self.n_levels == 0 || self.n_levels > 8 {
            return Err(Error::InvalidConfig(
                "base_channels must be > 0 and n_levels in 1..=8".into(),
            ));
        }
        Ok(())
    }

    /// Spatial dims must be divisible by this.
    pub fn stride(&self) -> usize {
        1 << (self.n_levels - 1)
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// `(name, in, out, k)` for every convolution in execution order.
    pub fn layers(&self) -> Vec<(String, usize, usize, usize)> {
        let mut out = Vec::new();
        let mut c_in = self.in_channels;
        for l in 0..self.n_levels {
            let c = self.level_channels(l);
            out.push((format!("enc{l}.conv1"), c_in, c, 3));
            out.push((format!("enc{l}.conv2"), c, c, 3));
            c_in = c;
        }
        for l in (0..self.n_levels - 1).rev() {
            let c = self.level_channels(l);
            out.push((format!("dec{l}.conv1"), c_in + c, c, 3));
            out.push((format!("dec{l}.conv2"), c, c, 3));
            c_in = c;
        }
        out.push(("head".to_string(), c_in, self.n_classes, 1));
        out
    }
}

/// Encoder/decoder segmentation network ending in a per-pixel softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Unet<T> {
    pub spec: UnetSpec,
    pub names: Vec<String>,
    pub convs: Vec<Conv2d<T>>,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    conv_in: Vec<Tensor4<T>>,
    conv_out: Vec<Tensor4<T>>,
    pools: Vec<(Vec<u32>, (usize, usize, usize, usize))>,
    pub probs: Tensor4<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Sign pattern of every ReLU and the argmax of every pool. Finite
    /// differences are only meaningful while this stays fixed.
    pub fn activation_pattern(&self) -> Vec<u32> {
        let relus = self.conv_out.len() - 1;
        let mut out: Vec<u32> = self.conv_out[..relus]
            .iter()
            .flat_map(|t| t.data.iter().map(|v| (*v > T::zero()) as u32))
            .collect();
        for (arg, _) in &self.pools {
            out.extend_from_slice(arg);
        }
        out
    }
}

/// Initial probability of class 0 (background) at every pixel. The head
/// bias starts at the matching log-odds; with all classes equally likely
/// the Tversky gradients collapse every object class within a few steps.
pub const BACKGROUND_PRIOR: f64 = 0.9;

pub fn build_unet(spec: UnetSpec, seed: u64) -> Result<Unet<f32>> {
    Unet::<f32>::build(spec, seed)
}

impl<T: Scalar> Unet<T> {
    /// He-uniform weights, zero biases except the head's background entry.
    pub fn build(spec: UnetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut convs = Vec::new();
        for (name, c_in, c_out, k) in spec.layers() {
            let mut conv = Conv2d::zeros(c_in, c_out, k);
            let bound = (6.0 / (c_in * k * k) as f64).sqrt();
            for w in conv.weight.iter_mut() {
                *w = T::from_f64(rng.random_range(-bound..bound));
            }
            names.push(name);
            convs.push(conv);
        }
        let others = (spec.n_classes - 1) as f64;
        let head = convs.last_mut().expect("head");
        head.bias[0] = T::from_f64((BACKGROUND_PRIOR * others / (1.0 - BACKGROUND_PRIOR)).ln());
        Ok(Self { spec, names, convs })
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(|c| c.n_params()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Unet<U> {
        Unet {
            spec: self.spec,
            names: self.names.clone(),
            convs: self.convs.iter().map(|c| c.cast()).collect(),
        }
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c != self.spec.in_channels {
            return Err(Error::KindMismatch(format!(
                "model expects {} input channels, got {}",
                self.spec.in_channels, x.c
            )));
        }
        let s = self.spec.stride();
        if x.h % s != 0 || x.w % s != 0 || x.h == 0 || x.w == 0 {
            return Err(Error::shape(
                format!("H, W divisible by {s}"),
                format!("{}x{}", x.h, x.w),
            ));
        }
        Ok(())
    }

    /// Class probabilities, `n×7×H×W`.
    pub fn forward(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.forward_cached(x)?.probs)
    }

    pub fn forward_cached(&self, x: &Tensor4<T>) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let levels = self.spec.n_levels;
        let mut conv_in = Vec::with_capacity(self.convs.len());
        let mut conv_out = Vec::with_capacity(self.convs.len());
        let mut pools = Vec::new();
        let mut idx = 0;
        let mut conv_relu = |input: Tensor4<T>, idx: &mut usize| -> Result<Tensor4<T>> {
            let mut y = self.convs[*idx].forward(&input)?;
            relu_fwd(&mut y);
            conv_in.push(input);
            conv_out.push(y.clone());
            *idx += 1;
            Ok(y)
        };

        let mut skips = Vec::with_capacity(levels);
        let mut cur = x.clone();
        for l in 0..levels {
            let a = conv_relu(cur, &mut idx)?;
            let b = conv_relu(a, &mut idx)?;
            if l + 1 < levels {
                let (p, arg) = maxpool2_fwd(&b)?;
                pools.push((arg, b.dims()));
                cur = p;
            } else {
                cur = b.clone();
            }
            skips.push(b);
        }
        for l in (0..levels - 1).rev() {
            let cat = concat_channels(&upsample_nearest2_fwd(&cur), &skips[l])?;
            let a = conv_relu(cat, &mut idx)?;
            cur = conv_relu(a, &mut idx)?;
        }
        let logits = self.convs[idx].forward(&cur)?;
        conv_in.push(cur);
        let probs = softmax_channels(&logits);
        conv_out.push(logits);
        Ok(ForwardCache {
            conv_in,
            conv_out,
            pools,
            probs,
        })
    }

    /// Parameter gradients (one entry per conv, `dx` empty) given the loss
    /// gradient with respect to the output probabilities.
    pub fn backward(&self, cache: &ForwardCache<T>, dprobs: &Tensor4<T>) -> Result<Vec<ConvGrads<T>>> {
        let levels = self.spec.n_levels;
        let n_convs = self.convs.len();
        let mut grads: Vec<Option<ConvGrads<T>>> = vec![None; n_convs];
        let mut step = |i: usize, dy: Tensor4<T>, relu: bool, need_dx: bool| -> Result<Option<Tensor4<T>>> {
            let mut dy = dy;
            if relu {
                relu_bwd(&cache.conv_out[i], &mut dy);
            }
            let mut g = self.convs[i].backward(&cache.conv_in[i], &dy, need_dx)?;
            let dx = g.dx.take();
            grads[i] = Some(g);
            Ok(dx)
        };

        let dlogits = softmax_bwd(&cache.probs, dprobs);
        let mut dcur = step(n_convs - 1, dlogits, false, true)?.expect("dx");
        let mut dskips: Vec<Option<Tensor4<T>>> = vec![None; levels];
        // decoder ran l = levels-2 .. 0, so unwind from l = 0 upward
        for l in 0..levels - 1 {
            let base = 2 * levels + 2 * (levels - 2 - l);
            let d = step(base + 1, dcur, true, true)?.expect("dx");
            let dcat = step(base, d, true, true)?.expect("dx");
            let up_c = dcat.c - self.spec.level_channels(l);
            let (du, dskip) = split_channels(&dcat, up_c);
            dskips[l] = Some(dskip);
            dcur = upsample_nearest2_bwd(&du)?;
        }
        for l in (0..levels).rev() {
            if let Some(ds) = dskips[l].take() {
                for (a, b) in dcur.data.iter_mut().zip(&ds.data) {
                    *a += *b;
                }
            }
            let d = step(2 * l + 1, dcur, true, true)?.expect("dx");
            let need = l > 0;
            let dx = step(2 * l, d, true, need)?;
            if l == 0 {
                break;
            }
            let (arg, dims) = &cache.pools[l - 1];
            dcur = maxpool2_bwd(&dx.expect("dx"), arg, *dims);
        }
        Ok(grads.into_iter().map(|g| g.expect("every conv visited")).collect())
    }
}
