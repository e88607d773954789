use std::fs;

use serde::{Deserialize, Serialize};
use spadseg::datakit::container::{encode_group, GroupMeta, NamedTensor, TensorData};
use spadseg::datakit::{onehot_to_rgb, read_dataset, OneHotMask, DEFAULT_PALETTE};
use spadseg::histproc::assemble_input;
use spadseg::neuralseg::{load_checkpoint, predict};

use crate::config::{require, write_resolved, PredictConfig};
use crate::error::{with_path, CliError, CliResult, IoContext};

pub const MASKS_MANIFEST: &str = "masks.toml";
pub const MASKS_BLOB: &str = "masks.bin";

#[derive(Debug, Serialize, Deserialize)]
pub struct MaskRecord {
    /// Dataset record index.
    pub record: usize,
    pub frame: usize,
    pub group: GroupMeta,
}

/// Predicted one-hot masks, `u8 [H, W, 7]` per frame.
#[derive(Debug, Serialize, Deserialize)]
pub struct MaskManifest {
    pub kind: String,
    pub blob: String,
    pub records: Vec<MaskRecord>,
}

pub fn run(cfg: &PredictConfig) -> CliResult<String> {
    let out = require(&cfg.out, "--out")?;
    let data = require(&cfg.data, "--data")?;
    let ck_dir = require(&cfg.checkpoint, "--checkpoint")?;
    write_resolved(out, cfg)?;
    let ck = with_path(load_checkpoint(ck_dir), ck_dir)?;
    let kind = ck
        .kind
        .ok_or_else(|| CliError::Mismatch("checkpoint does not record its input kind".into()))?;
    let ds = with_path(read_dataset(data), data)?;
    let calib = ds.calibration()?;
    let records: Vec<usize> = if cfg.frames.is_empty() {
        (0..ds.len()).collect()
    } else {
        cfg.frames.clone()
    };
    if let Some(&bad) = records.iter().find(|&&i| i >= ds.len()) {
        return Err(CliError::Usage(format!("frame {bad} out of range (dataset has {})", ds.len())));
    }

    let mut blob = Vec::new();
    let mut manifest = MaskManifest {
        kind: kind.to_string(),
        blob: MASKS_BLOB.to_string(),
        records: Vec::new(),
    };
    for &r in &records {
        let f = ds.frame(r)?;
        let x = assemble_input(kind, Some(&f.hist), Some(&f.spc), calib.as_ref(), &cfg.com)?;
        let p = predict(&ck.model, &x)?;
        let mask = OneHotMask::from_class_map(&p.class_map);
        let t = NamedTensor::new(
            "mask",
            vec![mask.height, mask.width, spadseg::N_CLASSES],
            TensorData::U8(mask.data.clone()),
        );
        manifest.records.push(MaskRecord {
            record: r,
            frame: f.index,
            group: encode_group(&[t], &mut blob),
        });
        let ppm = out.join(format!("frame_{:05}.ppm", f.index));
        with_path(onehot_to_rgb(&mask, &DEFAULT_PALETTE).write_ppm(&ppm), &ppm)?;
    }
    let path = out.join(MASKS_BLOB);
    fs::write(&path, &blob).at(&path)?;
    let text = toml::to_string(&manifest).map_err(|e| CliError::Usage(e.to_string()))?;
    let path = out.join(MASKS_MANIFEST);
    fs::write(&path, text).at(&path)?;
    Ok(format!("wrote {} {} predictions to {}\n", records.len(), kind, out.display()))
}
