use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spadseg::datakit::{read_dataset, Dataset};
use spadseg::evalkit::{evaluate_maps, gt_classes, metrics_for, DetectionOutcome, MetricsReport};
use spadseg::histproc::InputKind;
use spadseg::neuralseg::load_checkpoint;
use spadseg::pipeline::predict_and_match;
use spadseg::simkit::class_catalog;

use crate::config::{require, write_resolved, EvaluateConfig, TrainRunConfig};
use crate::error::{with_path, CliError, CliResult, IoContext};
use crate::train::train_on;

pub const SCORES_FILE: &str = "fscores.toml";
pub const OUTCOMES_FILE: &str = "outcomes.json";

/// Per-run F-scores of one data type on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalScores {
    pub kind: InputKind,
    pub runs: usize,
    pub dataset: PathBuf,
    /// CRC32 over the test set's record checksums.
    pub dataset_fingerprint: String,
    pub n_frames: usize,
    pub classes: Vec<u8>,
    pub aggregate_f1: Vec<f64>,
    /// Keyed by class id.
    pub class_f1: BTreeMap<String, Vec<f64>>,
}

pub fn class_name(c: u8) -> String {
    class_catalog()
        .get(c as usize - 1)
        .map(|t| t.name.to_string())
        .unwrap_or_else(|| format!("class{c}"))
}

pub fn fingerprint(ds: &Dataset) -> String {
    let bytes: Vec<u8> = ds.checksums().iter().flat_map(|c| c.to_le_bytes()).collect();
    format!("{:08x}", crc32fast::hash(&bytes))
}

pub fn run_dir(out: &Path, r: usize) -> PathBuf {
    out.join(format!("run{r}"))
}

pub fn run(cfg: &EvaluateConfig) -> CliResult<String> {
    let out = require(&cfg.out, "--out")?;
    let data = require(&cfg.data, "--data")?;
    let modes = [cfg.oracle, cfg.checkpoint.is_some(), cfg.train_data.is_some()];
    if modes.iter().filter(|&&m| m).count() != 1 {
        return Err(CliError::Usage(
            "choose exactly one of --oracle, --checkpoint or --train-data".into(),
        ));
    }
    if cfg.runs == 0 {
        return Err(CliError::Usage("--runs must be > 0".into()));
    }
    if cfg.checkpoint.is_some() && cfg.runs != 1 {
        return Err(CliError::Usage("--runs needs --train-data".into()));
    }
    if !(0.0..1.0).contains(&cfg.iou_threshold) {
        return Err(CliError::Usage(format!("iou threshold {} outside [0, 1)", cfg.iou_threshold)));
    }
    write_resolved(out, cfg)?;
    let test = with_path(read_dataset(data), data)?;
    let calib = test.calibration()?;
    let frames = test.frames()?;

    let kind = cfg.kind;
    let mut per_run: Vec<Vec<DetectionOutcome>> = Vec::with_capacity(cfg.runs);
    for r in 0..cfg.runs {
        let dir = run_dir(out, r);
        fs::create_dir_all(&dir).at(&dir)?;
        let outcomes = if cfg.oracle {
            frames
                .iter()
                .map(|f| {
                    let gt = f.onehot(kind.label_scale())?.class_map();
                    evaluate_maps(&gt, &gt, cfg.min_area, cfg.iou_threshold)
                })
                .collect::<spadseg::Result<Vec<_>>>()?
        } else {
            let model = if let Some(ck_dir) = &cfg.checkpoint {
                let ck = with_path(load_checkpoint(ck_dir), ck_dir)?;
                if let Some(k) = ck.kind.filter(|&k| k != kind) {
                    return Err(CliError::Mismatch(format!(
                        "checkpoint was trained on `{k}`, evaluation asks for `{kind}`"
                    )));
                }
                ck.model
            } else {
                let train_cfg = TrainRunConfig {
                    data: cfg.train_data.clone(),
                    out: Some(dir.clone()),
                    kind: cfg.kind,
                    model_seed: cfg.seed.wrapping_add(r as u64),
                    augment: cfg.augment,
                    com: cfg.com,
                    model: cfg.model,
                    train: spadseg::neuralseg::TrainConfig {
                        seed: cfg.seed.wrapping_add(r as u64),
                        ..cfg.train
                    },
                };
                eprintln!("run {r}: training {} (seed {})", cfg.kind, train_cfg.model_seed);
                train_on(&train_cfg, cfg.train_data.as_deref().expect("checked"), &dir)?.model
            };
            predict_and_match(
                &model,
                &frames,
                kind,
                calib.as_ref(),
                &cfg.com,
                cfg.min_area,
                cfg.iou_threshold,
            )?
            .1
        };
        write_outcomes(&dir, &outcomes)?;
        per_run.push(outcomes);
    }

    // score every run on the classes present in the test ground truth
    let classes = {
        let c = gt_classes(&per_run[0]);
        if c.is_empty() {
            (1..=6).collect()
        } else {
            c
        }
    };
    let mut scores = EvalScores {
        kind,
        runs: cfg.runs,
        dataset: data.to_path_buf(),
        dataset_fingerprint: fingerprint(&test),
        n_frames: test.len(),
        classes: classes.clone(),
        aggregate_f1: Vec::new(),
        class_f1: classes.iter().map(|c| (c.to_string(), Vec::new())).collect(),
    };
    let mut report = String::new();
    for (r, outcomes) in per_run.iter().enumerate() {
        let m = metrics_for(outcomes, &classes)?;
        write_metrics(&run_dir(out, r), &m)?;
        scores.aggregate_f1.push(m.aggregate.f1);
        for (c, _, cm) in &m.classes {
            scores.class_f1.get_mut(&c.to_string()).expect("class row").push(cm.f1);
        }
        let _ = writeln!(report, "run {r} ({kind}, {} frames)", m.n_frames);
        report.push_str(&m.to_table(&class_name));
    }
    let mean = scores.aggregate_f1.iter().sum::<f64>() / scores.runs as f64;
    let _ = writeln!(report, "mean aggregate F1 over {} run(s): {mean:.4}", scores.runs);
    let text = toml::to_string(&scores).map_err(|e| CliError::Usage(e.to_string()))?;
    let path = out.join(SCORES_FILE);
    fs::write(&path, text).at(&path)?;
    let path = out.join("metrics.txt");
    fs::write(&path, &report).at(&path)?;
    Ok(report)
}

fn write_outcomes(dir: &Path, outcomes: &[DetectionOutcome]) -> CliResult<()> {
    let path = dir.join(OUTCOMES_FILE);
    let text = serde_json::to_string(outcomes).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::write(&path, text).at(&path)
}

pub fn read_outcomes(dir: &Path) -> CliResult<Vec<DetectionOutcome>> {
    let path = dir.join(OUTCOMES_FILE);
    let text = fs::read_to_string(&path).at(&path)?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Core(spadseg::Error::Format(format!("{}: {e}", path.display()))))
}

fn write_metrics(dir: &Path, m: &MetricsReport) -> CliResult<()> {
    let path = dir.join("metrics.txt");
    fs::write(&path, m.to_table(&class_name)).at(&path)?;
    let path = dir.join("metrics.toml");
    fs::write(&path, m.to_summary()).at(&path)
}
