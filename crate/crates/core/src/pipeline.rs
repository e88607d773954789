//! Glue between the modules: frames to network samples, training on a
//! stored split, and scoring a model on a set of frames.

use rayon::prelude::*;

use crate::datakit::{augment_hflip, Dataset, Frame, OneHotMask};
use crate::evalkit::{evaluate_maps, DetectionOutcome};
use crate::histproc::{assemble_input, ComConfig, InputKind, NetworkInput};
use crate::neuralseg::{build_unet, predict_batch, train, Samples, TrainConfig, TrainOutcome, Unet, UnetSpec};
use crate::{Error, Grid, Result};

/// Frames of one inference batch in [`predict_and_match`].
const PREDICT_CHUNK: usize = 16;

/// Network input and one-hot target of every frame.
pub fn prepare(
    frames: &[Frame],
    kind: InputKind,
    calibration: Option<&Grid<f64>>,
    com: &ComConfig,
) -> Result<(Vec<NetworkInput>, Vec<OneHotMask>)> {
    frames
        .par_iter()
        .map(|f| {
            let x = assemble_input(kind, Some(&f.hist), Some(&f.spc), calibration, com)?;
            let y = f.onehot(kind.label_scale())?;
            Ok((x, y))
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

pub fn samples(
    frames: &[Frame],
    kind: InputKind,
    calibration: Option<&Grid<f64>>,
    com: &ComConfig,
) -> Result<Samples> {
    let (x, y) = prepare(frames, kind, calibration, com)?;
    Samples::new(&x, &y)
}

/// Training and validation frames of a dataset's recorded split, each
/// extended with its mirror images when `augment` is set.
pub fn split_frames(ds: &Dataset, augment: bool) -> Result<(Vec<Frame>, Vec<Frame>)> {
    let split = ds
        .split()
        .ok_or_else(|| Error::Format("dataset has no train/validation split".into()))?;
    let pick = |ids: &[usize]| ids.iter().map(|&i| ds.frame(i)).collect::<Result<Vec<_>>>();
    let (tr, va) = (pick(&split.train)?, pick(&split.val)?);
    if tr.is_empty() || va.is_empty() {
        return Err(Error::Empty("train or validation split"));
    }
    Ok(if augment {
        (augment_hflip(&tr), augment_hflip(&va))
    } else {
        (tr, va)
    })
}

/// Builds a U-net for `kind` from `model_seed` and trains it.
#[allow(clippy::too_many_arguments)]
pub fn train_kind(
    train_frames: &[Frame],
    val_frames: &[Frame],
    kind: InputKind,
    calibration: Option<&Grid<f64>>,
    com: &ComConfig,
    spec: UnetSpec,
    model_seed: u64,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let spec = UnetSpec {
        in_channels: kind.channels(),
        ..spec
    };
    let model = build_unet(spec, model_seed)?;
    let tr = samples(train_frames, kind, calibration, com)?;
    let va = samples(val_frames, kind, calibration, com)?;
    train(model, &tr, &va, cfg)
}

/// Predicted class maps of `frames`, matched against their ground truth.
pub fn predict_and_match(
    model: &Unet<f32>,
    frames: &[Frame],
    kind: InputKind,
    calibration: Option<&Grid<f64>>,
    com: &ComConfig,
    min_area: usize,
    iou_threshold: f64,
) -> Result<(Vec<Grid<u8>>, Vec<DetectionOutcome>)> {
    let (inputs, targets) = prepare(frames, kind, calibration, com)?;
    let chunks: Vec<_> = inputs
        .par_chunks(PREDICT_CHUNK)
        .map(|c| predict_batch(model, c))
        .collect::<Result<Vec<_>>>()?;
    let maps: Vec<Grid<u8>> = chunks.into_iter().flatten().map(|p| p.class_map).collect();
    let outcomes = maps
        .par_iter()
        .zip(&targets)
        .map(|(m, t)| evaluate_maps(m, &t.class_map(), min_area, iou_threshold))
        .collect::<Result<Vec<_>>>()?;
    Ok((maps, outcomes))
}
