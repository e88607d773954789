use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use spadseg::datakit::read_dataset;
use spadseg::neuralseg::{build_unet, dataset_loss, save_checkpoint, train_with, TrainHistory, TrainOutcome};
use spadseg::pipeline::{samples, split_frames};

use crate::config::{require, write_resolved, TrainRunConfig};
use crate::error::{with_path, CliError, CliResult, IoContext};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const HISTORY_FILE: &str = "history.toml";

pub fn run(cfg: &TrainRunConfig) -> CliResult<String> {
    let out = require(&cfg.out, "--out")?;
    let data = require(&cfg.data, "--data")?;
    write_resolved(out, cfg)?;
    let outcome = train_on(cfg, data, out)?;
    Ok(format!(
        "trained {} model: best epoch {} (val loss {:.5}), {} epochs{}\n",
        cfg.kind,
        outcome.history.best_epoch,
        outcome.history.best_val_loss,
        outcome.history.epochs.len(),
        if outcome.history.stopped_early { ", stopped early" } else { "" }
    ))
}

/// Trains on `data`'s stored split and writes checkpoint, history and log
/// under `out`.
pub fn train_on(cfg: &TrainRunConfig, data: &Path, out: &Path) -> CliResult<TrainOutcome> {
    let spec = spadseg::neuralseg::UnetSpec {
        in_channels: cfg.kind.channels(),
        ..cfg.model
    };
    spec.validate()?;
    cfg.train.validate()?;
    cfg.com.validate()?;
    let ds = with_path(read_dataset(data), data)?;
    let calib = ds.calibration()?;
    let (tr, va) = split_frames(&ds, cfg.augment)?;
    let tr = samples(&tr, cfg.kind, calib.as_ref(), &cfg.com)?;
    let va = samples(&va, cfg.kind, calib.as_ref(), &cfg.com)?;

    let model = build_unet(spec, cfg.model_seed)?;
    let loss_cfg = cfg.train.loss;
    let batch = cfg.train.batch_size;
    let mut log = String::new();
    let outcome = train_with(model, &tr, &cfg.train, |m, epoch| {
        let l = dataset_loss(m, &va, &loss_cfg, batch)?;
        let line = format!("epoch {epoch:>3} val_loss {l:.6}");
        eprintln!("{line}");
        let _ = writeln!(log, "{line}");
        Ok(l)
    })?;

    fs::create_dir_all(out).at(out)?;
    let meta = BTreeMap::from([
        ("kind".to_string(), cfg.kind.to_string()),
        ("best_epoch".to_string(), outcome.history.best_epoch.to_string()),
        ("best_val_loss".to_string(), outcome.history.best_val_loss.to_string()),
        ("dataset".to_string(), data.display().to_string()),
    ]);
    let ck = out.join(CHECKPOINT_DIR);
    with_path(save_checkpoint(&ck, &outcome.model, Some(cfg.kind), &meta), &ck)?;
    write_history(out, &outcome.history)?;
    let path = out.join("train.log");
    fs::write(&path, log).at(&path)?;
    Ok(outcome)
}

pub fn write_history(dir: &Path, h: &TrainHistory) -> CliResult<()> {
    let text = toml::to_string(h).map_err(|e| CliError::Usage(e.to_string()))?;
    let path = dir.join(HISTORY_FILE);
    fs::write(&path, text).at(&path)
}
