use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;

use spadseg::datakit::read_dataset;
use spadseg::simkit::{sbr_from_frame, simulate_dataset, SbrCategory};

use crate::config::{num, require, write_resolved, SimulateConfig};
use crate::error::{with_path, CliError, CliResult, IoContext};

pub fn run(cfg: &SimulateConfig) -> CliResult<String> {
    let out = require(&cfg.out, "--out")?;
    if cfg.frames == 0 {
        return Err(CliError::Usage("--frames must be > 0".into()));
    }
    cfg.generator.validate()?;
    write_resolved(out, cfg)?;
    with_path(
        simulate_dataset(&cfg.generator, cfg.frames, cfg.seed, cfg.val_fraction, out),
        out,
    )?;
    let ds = with_path(read_dataset(out), out)?;
    let split = ds.split().cloned().expect("simulate always records a split");

    let mut report = String::new();
    let mut summary = String::new();
    let _ = writeln!(report, "dataset {} ({} frames)", out.display(), ds.len());
    let _ = writeln!(summary, "n_frames = {}", ds.len());
    for (name, ids) in [("train", &split.train), ("val", &split.val), ("all", &(0..ds.len()).collect())] {
        if ids.is_empty() {
            continue;
        }
        let mut expected = Vec::with_capacity(ids.len());
        let mut sampled = Vec::with_capacity(ids.len());
        let mut cats: BTreeMap<SbrCategory, usize> = BTreeMap::new();
        for &i in ids {
            let f = ds.frame(i)?;
            expected.push(f.sbr);
            sampled.push(sbr_from_frame(&f.hist)?);
            *cats.entry(SbrCategory::of(f.sbr)).or_default() += 1;
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (lo, hi) = expected
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let _ = writeln!(
            report,
            "  {name:<5} n={:<5} mean SBR {:.4} (min {:.4}, max {:.4}), estimated from counts {:.4}",
            ids.len(),
            mean(&expected),
            lo,
            hi,
            mean(&sampled)
        );
        let _ = writeln!(summary, "{name}_frames = {}", ids.len());
        let _ = writeln!(summary, "{name}_mean_sbr = {}", num(mean(&expected)));
        let _ = writeln!(summary, "{name}_mean_sbr_estimated = {}", num(mean(&sampled)));
        for cat in [SbrCategory::VeryLow, SbrCategory::Low, SbrCategory::Moderate] {
            let n = cats.get(&cat).copied().unwrap_or(0);
            let _ = writeln!(report, "        {:<26} {n}", cat.label());
            let _ = writeln!(summary, "{name}_{} = {n}", category_key(cat));
        }
    }
    let path = out.join("summary.toml");
    fs::write(&path, summary).at(&path)?;
    let path = out.join("simulate.log");
    fs::write(&path, &report).at(&path)?;
    Ok(report)
}

fn category_key(c: SbrCategory) -> &'static str {
    match c {
        SbrCategory::VeryLow => "very_low",
        SbrCategory::Low => "low",
        SbrCategory::Moderate => "moderate",
    }
}
