use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::loss::{focal_tversky_loss, soft_counts, tversky_term, SoftCounts, TverskyConfig};
use super::tensor::{DenormalGuard, Tensor4};
use super::unet::Unet;
use crate::datakit::OneHotMask;
use crate::histproc::NetworkInput;
use crate::{Error, Grid, Result, N_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Mini-batch shuffling seed.
    pub seed: u64,
    pub loss: TverskyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            epochs: 100,
            batch_size: 32,
            patience: 8,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            seed: 0,
            loss: TverskyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidConfig("epochs, batch_size and patience must be > 0".into()));
        }
        let betas_ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !(self.learning_rate > 0.0 && self.eps > 0.0 && betas_ok) {
            return Err(Error::InvalidConfig(
                "learning_rate and eps must be > 0, betas in [0, 1)".into(),
            ));
        }
        self.loss.validate()
    }
}

/// Network inputs and one-hot targets stacked channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub inputs: Tensor4<f32>,
    pub targets: Tensor4<f32>,
}

impl Samples {
    pub fn new(inputs: &[NetworkInput], targets: &[OneHotMask]) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::shape(inputs.len(), targets.len()));
        }
        let first = inputs.first().ok_or(Error::Empty("sample set"))?;
        let (h, w, c) = (first.height, first.width, first.channels);
        let mut xs = Vec::with_capacity(inputs.len() * c * h * w);
        let mut ys = Vec::with_capacity(inputs.len() * N_CLASSES * h * w);
        for (x, y) in inputs.iter().zip(targets) {
            if (x.height, x.width, x.channels) != (h, w, c) {
                return Err(Error::shape(
                    format!("{h}x{w}x{c}"),
                    format!("{}x{}x{}", x.height, x.width, x.channels),
                ));
            }
            if (y.height, y.width) != (h, w) {
                return Err(Error::shape(format!("{h}x{w} mask"), format!("{}x{}", y.height, y.width)));
            }
            xs.extend(x.to_chw());
            ys.extend(y.to_chw_f32());
        }
        Ok(Self {
            inputs: Tensor4::from_vec(inputs.len(), c, h, w, xs)?,
            targets: Tensor4::from_vec(inputs.len(), N_CLASSES, h, w, ys)?,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize]) -> (Tensor4<f32>, Tensor4<f32>) {
        let pick = |t: &Tensor4<f32>| {
            let mut data = Vec::with_capacity(idx.len() * t.image_len());
            for &i in idx {
                data.extend_from_slice(t.image(i));
            }
            Tensor4 {
                n: idx.len(),
                c: t.c,
                h: t.h,
                w: t.w,
                data,
            }
        };
        (pick(&self.inputs), pick(&self.targets))
    }
}

/// Focal Tversky loss with soft counts pooled over the whole set, evaluated
/// in chunks of `batch` frames.
pub fn dataset_loss(model: &Unet<f32>, set: &Samples, cfg: &TverskyConfig, batch: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut total = [SoftCounts::default(); N_CLASSES];
    for start in (0..set.len()).step_by(batch.max(1)) {
        let end = (start + batch.max(1)).min(set.len());
        let probs = model.forward(&set.inputs.slice_batch(start, end))?;
        let counts = soft_counts(&probs, &set.targets.slice_batch(start, end))?;
        for (t, c) in total.iter_mut().zip(counts) {
            t.tp += c.tp;
            t.fn_ += c.fn_;
            t.fp += c.fp;
        }
    }
    let loss = total.iter().map(|c| tversky_term(c, cfg)).sum::<f64>() / N_CLASSES as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("validation loss = {loss}")));
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter; only a strictly lower loss counts as improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Unet<f32>,
    pub history: TrainHistory,
}

pub fn train(model: Unet<f32>, train_set: &Samples, val_set: &Samples, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if val_set.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let batch = cfg.batch_size;
    let loss_cfg = cfg.loss;
    train_with(model, train_set, cfg, |m, _| dataset_loss(m, val_set, &loss_cfg, batch))
}

/// Training loop with a caller-supplied validation loss (called once per
/// epoch with the current parameters and the 1-based epoch number).
pub fn train_with(
    mut model: Unet<f32>,
    train_set: &Samples,
    cfg: &TrainConfig,
    mut validate: impl FnMut(&Unet<f32>, usize) -> Result<f64>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let _ftz = DenormalGuard::new();
    let adam = cfg.adam();
    let mut state = AdamState::<f32>::for_shapes(
        model.convs.iter().flat_map(|c| [c.weight.len(), c.bias.len()]),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.clone();
    let mut records = Vec::new();
    let mut stopped_early = false;
    let mut t = 0u64;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let (x, y) = train_set.gather(idx);
            let cache = model.forward_cached(&x)?;
            let (loss, dprobs) = focal_tversky_loss(&cache.probs, &y, &cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("loss {loss} at epoch {epoch}, batch {b}")));
            }
            loss_sum += loss * idx.len() as f64;
            let grads = model.backward(&cache, &dprobs)?;
            if grads.iter().any(|g| g.dw.iter().chain(&g.db).any(|v| !v.is_finite())) {
                return Err(Error::NonFinite(format!("gradient at epoch {epoch}, batch {b}")));
            }
            t += 1;
            let mut params: Vec<&mut [f32]> = model
                .convs
                .iter_mut()
                .flat_map(|c| [&mut c.weight[..], &mut c.bias[..]])
                .collect();
            let grad_refs: Vec<&[f32]> = grads.iter().flat_map(|g| [&g.dw[..], &g.db[..]]).collect();
            adam_step(&mut params, &grad_refs, &mut state, t, &adam)?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let val_loss = validate(&model, epoch)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss {val_loss} at epoch {epoch}")));
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        match stopper.observe(epoch, val_loss) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: best,
        history: TrainHistory {
            epochs: records,
            best_epoch: stopper.best_epoch,
            best_val_loss: stopper.best,
            stopped_early,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// `7×H×W` class probabilities.
    pub probs: Tensor4<f32>,
    pub class_map: Grid<u8>,
}

/// Per-pixel argmax over channels, lowest index on ties.
pub fn argmax_map(probs: &Tensor4<f32>, i: usize) -> Grid<u8> {
    let hw = probs.h * probs.w;
    let img = probs.image(i);
    let data = (0..hw)
        .map(|p| {
            let mut best = 0;
            for c in 1..probs.c {
                if img[c * hw + p] > img[best * hw + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    Grid {
        width: probs.w,
        height: probs.h,
        data,
    }
}

pub fn predict(model: &Unet<f32>, input: &NetworkInput) -> Result<Prediction> {
    Ok(predict_batch(model, std::slice::from_ref(input))?.remove(0))
}

/// Runs the batch in one forward pass.
pub fn predict_batch(model: &Unet<f32>, inputs: &[NetworkInput]) -> Result<Vec<Prediction>> {
    let first = inputs.first().ok_or(Error::Empty("prediction batch"))?;
    if first.channels != model.spec.in_channels {
        return Err(Error::KindMismatch(format!(
            "model expects {} channels, `{}` input has {}",
            model.spec.in_channels, first.kind, first.channels
        )));
    }
    let mut data = Vec::with_capacity(inputs.len() * first.data.len());
    for x in inputs {
        if (x.kind, x.height, x.width) != (first.kind, first.height, first.width) {
            return Err(Error::KindMismatch("mixed input kinds in one batch".into()));
        }
        data.extend(x.to_chw());
    }
    let x = Tensor4::from_vec(inputs.len(), first.channels, first.height, first.width, data)?;
    let _ftz = DenormalGuard::new();
    let probs = model.forward(&x)?;
    Ok((0..inputs.len())
        .map(|i| Prediction {
            probs: probs.slice_batch(i, i + 1),
            class_map: argmax_map(&probs, i),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralseg::unet::{build_unet, UnetSpec};

    #[test]
    fn patience_rule() {
        let mut es = EarlyStopping::new(8);
        let seq = [0.9, 0.8, 0.7, 0.7, 0.75, 0.7, 0.71, 0.7, 0.7, 0.72, 0.7, 0.1];
        let mut stop = None;
        for (i, &l) in seq.iter().enumerate() {
            if es.observe(i + 1, l) == StopDecision::Stop {
                stop = Some(i + 1);
                break;
            }
        }
        assert_eq!(stop, Some(11));
        assert_eq!(es.best_epoch, 3);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn predict_contract() {
        let net = build_unet(UnetSpec::with_inputs(1), 11).unwrap();
        let mk = |s: f32| NetworkInput {
            kind: crate::histproc::InputKind::Depth,
            height: 8,
            width: 8,
            channels: 1,
            data: (0..64).map(|i| ((i as f32 + s) * 0.37).sin().abs()).collect(),
        };
        let inputs = [mk(0.0), mk(1.0), mk(2.0)];
        let batch = predict_batch(&net, &inputs).unwrap();
        let single = predict(&net, &inputs[1]).unwrap();
        for p in 0..64 {
            let s: f32 = (0..7).map(|c| single.probs.data[c * 64 + p]).sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
        for (a, b) in batch[1].probs.data.iter().zip(&single.probs.data) {
            assert!((a - b).abs() <= 1e-6);
        }
        assert_eq!(batch[1].class_map, single.class_map);

        let wrong = NetworkInput {
            channels: 2,
            data: vec![0.0; 128],
            kind: crate::histproc::InputKind::ActID,
            ..mk(0.0)
        };
        assert!(matches!(predict(&net, &wrong), Err(Error::KindMismatch(_))));
    }
}
